"""Answer generation gateway.

Two interchangeable backends produce answer samples for a question: a
scripted mock driven by a JSON scenario file (fully deterministic, used by
every test) and an HTTP client speaking the OpenAI-style completions
protocol. Callers only see :class:`GeneratorGateway` methods, so the pipeline
never knows which backend is wired in.

Sampling determinism: each sample index derives its own child seed from the
request seed, so results are bit-identical whether the indices are computed
sequentially, in any order, or concurrently.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import requests

from .errors import (
    BackendUnreachable,
    MalformedBackendResponse,
    MalformedScenario,
    ScenarioMissingQuestion,
)
from .seeding import derive_seed

logger = logging.getLogger(__name__)

DEFAULT_NUM_SAMPLES = 10
DEFAULT_SAMPLING_TEMPERATURE = 1.0
GREEDY_TEMPERATURE = 0.0

# Tolerance for scenario pool probabilities summing to one.
POOL_PROB_TOLERANCE = 1e-6
# Tolerance for a sample's total_logprob against the sum of its tokens.
TOTAL_LOGPROB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Question:
    """A single question to answer.

    Attributes:
        id: Stable identifier, unique within a dataset.
        text: The question itself; never empty.
        gold_answers: Acceptable reference answers; may be empty outside
            evaluation contexts.
    """

    id: str
    text: str
    gold_answers: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"question {self.id!r} has empty text")


@dataclass(frozen=True)
class AnswerSample:
    """One sampled answer with its token-level log-likelihood.

    Attributes:
        text: The answer string (may normalize to empty, e.g. "...").
        token_logprobs: Natural-log token probabilities, each <= 0.
        total_logprob: Sum of token_logprobs.
        token_count: len(token_logprobs), always >= 1.
    """

    text: str
    token_logprobs: tuple[float, ...]
    total_logprob: float
    token_count: int

    def __post_init__(self) -> None:
        if self.token_count < 1 or self.token_count != len(self.token_logprobs):
            raise ValueError(
                "token_count must equal len(token_logprobs) and be >= 1, "
                f"got {self.token_count} for {len(self.token_logprobs)} tokens"
            )
        for lp in self.token_logprobs:
            if lp > 0:
                raise ValueError(f"token logprob {lp} is positive")
        expected = math.fsum(self.token_logprobs)
        if abs(expected - self.total_logprob) > TOTAL_LOGPROB_TOLERANCE:
            raise ValueError(
                f"total_logprob {self.total_logprob} differs from token sum {expected}"
            )

    @classmethod
    def from_token_logprobs(cls, text: str, token_logprobs: list[float] | tuple[float, ...]) -> "AnswerSample":
        lps = tuple(float(lp) for lp in token_logprobs)
        return cls(
            text=text,
            token_logprobs=lps,
            total_logprob=math.fsum(lps),
            token_count=len(lps),
        )


@dataclass(frozen=True)
class GenerationRequest:
    """A sampling request.

    Attributes:
        question: The question being answered.
        context_documents: Retrieved passage texts, in retrieval order;
            empty for closed-book generation.
        num_samples: How many answers to draw; must be >= 1.
        temperature: Sampling temperature, >= 0. Zero collapses to greedy.
        seed: Seed for the backend sampler.
    """

    question: Question
    context_documents: tuple[str, ...] = ()
    num_samples: int = DEFAULT_NUM_SAMPLES
    temperature: float = DEFAULT_SAMPLING_TEMPERATURE
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_samples < 1:
            raise ValueError(f"num_samples must be >= 1, got {self.num_samples}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


DEFAULT_DEMO_QUESTION = "What is the capital of France?"
DEFAULT_DEMO_ANSWER = "Paris"
DEFAULT_CONTEXT_HEADER = "Context:"


def build_prompt(
    question_text: str,
    context_documents: tuple[str, ...] | list[str] = (),
    demo_question: str = DEFAULT_DEMO_QUESTION,
    demo_answer: str = DEFAULT_DEMO_ANSWER,
    context_header: str = DEFAULT_CONTEXT_HEADER,
) -> str:
    """Assemble the completion prompt.

    Layout: one task demonstration in "Q: ... A: ..." form, then the
    retrieved documents (one per line under the context header) when any are
    present, then the bare "Q: <question> A:" awaiting completion.
    """
    lines = [f"Q: {demo_question} A: {demo_answer}"]
    if context_documents:
        lines.append(context_header)
        lines.extend(context_documents)
    lines.append(f"Q: {question_text} A:")
    return "\n".join(lines)


class GeneratorBackend(Protocol):
    def sample_answers(self, request: GenerationRequest) -> list[AnswerSample]: ...

    def greedy_answer(
        self, question: Question, context_documents: tuple[str, ...]
    ) -> AnswerSample: ...


@dataclass(frozen=True)
class _PoolEntry:
    text: str
    probability: float
    token_logprobs: tuple[float, ...]

    def to_sample(self) -> AnswerSample:
        return AnswerSample.from_token_logprobs(self.text, self.token_logprobs)


def _synthesize_token_logprobs(text: str, probability: float) -> tuple[float, ...]:
    # Spread ln(p) evenly over whitespace tokens so sample likelihood matches
    # the scripted pool probability.
    tokens = text.split() or [text]
    per_token = math.log(probability) / len(tokens)
    return tuple(per_token for _ in tokens)


def _parse_pool(raw: object, where: str) -> tuple[_PoolEntry, ...]:
    if not isinstance(raw, list) or not raw:
        raise MalformedScenario(f"{where}: pool must be a non-empty list")
    entries = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict) or "text" not in item or "probability" not in item:
            raise MalformedScenario(
                f"{where}, entry {i}: expected an object with 'text' and 'probability'"
            )
        text = item["text"]
        prob = item["probability"]
        if not isinstance(text, str) or not text:
            raise MalformedScenario(f"{where}, entry {i}: 'text' must be a non-empty string")
        if not isinstance(prob, (int, float)) or not 0 < prob <= 1:
            raise MalformedScenario(f"{where}, entry {i}: probability {prob!r} not in (0, 1]")
        raw_lps = item.get("token_logprobs")
        if raw_lps is None:
            lps = _synthesize_token_logprobs(text, float(prob))
        else:
            if not isinstance(raw_lps, list) or not raw_lps:
                raise MalformedScenario(
                    f"{where}, entry {i}: token_logprobs must be a non-empty list"
                )
            lps = tuple(float(lp) for lp in raw_lps)
            if any(lp > 0 for lp in lps):
                raise MalformedScenario(f"{where}, entry {i}: positive token logprob")
        entries.append(_PoolEntry(text=text, probability=float(prob), token_logprobs=lps))
    total = math.fsum(e.probability for e in entries)
    if abs(total - 1.0) > POOL_PROB_TOLERANCE:
        raise MalformedScenario(f"{where}: pool probabilities sum to {total}, expected 1")
    return tuple(entries)


@dataclass(frozen=True)
class _ScenarioEntry:
    closed_book: tuple[_PoolEntry, ...]
    with_context: tuple[_PoolEntry, ...] | None = None

    def pool_for(self, has_context: bool) -> tuple[_PoolEntry, ...]:
        if has_context and self.with_context is not None:
            return self.with_context
        return self.closed_book


class MockGenerator:
    """Scripted generator driven by a scenario file.

    The scenario maps question ids to answer pools. A pool value is either a
    plain list of entries (used for any request) or an object with a
    ``closed_book`` pool and an optional ``with_context`` pool used whenever
    retrieved documents accompany the request. Entry fields: ``text``,
    ``probability`` (pool-wide sum must be 1 within 1e-6) and optional
    ``token_logprobs`` (synthesized from the probability when absent).

    Sampling draws each index independently with a child seed derived from
    (request seed, index), so any execution order yields the same list.
    Temperature reshapes the pool weights as p**(1/T); zero temperature and
    greedy_answer both collapse to the argmax entry with lexicographic
    tie-breaking on the text. The entry's scripted token_logprobs are
    reported unchanged; temperature only affects which entries are drawn.
    """

    def __init__(self, scenario: dict[str, object], source: str = "<memory>"):
        self._entries: dict[str, _ScenarioEntry] = {}
        self._source = source
        questions = scenario.get("questions")
        if not isinstance(questions, dict):
            raise MalformedScenario(f"{source}: top-level 'questions' object is required")
        for qid, raw in questions.items():
            where = f"{source}: question {qid!r}"
            if isinstance(raw, list):
                self._entries[qid] = _ScenarioEntry(closed_book=_parse_pool(raw, where))
            elif isinstance(raw, dict):
                if "closed_book" not in raw:
                    raise MalformedScenario(f"{where}: missing 'closed_book' pool")
                with_context = raw.get("with_context")
                self._entries[qid] = _ScenarioEntry(
                    closed_book=_parse_pool(raw["closed_book"], where),
                    with_context=(
                        _parse_pool(with_context, f"{where} (with_context)")
                        if with_context is not None
                        else None
                    ),
                )
            else:
                raise MalformedScenario(f"{where}: pool must be a list or an object")

    @classmethod
    def from_file(cls, path: str | Path) -> "MockGenerator":
        p = Path(path)
        if not p.is_file():
            raise MalformedScenario(f"scenario file not found: {p}")
        try:
            payload = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise MalformedScenario(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(payload, dict):
            raise MalformedScenario(f"{p}: top level must be an object")
        return cls(payload, source=str(p))

    def question_ids(self) -> list[str]:
        return sorted(self._entries)

    def _pool(self, question: Question, context: tuple[str, ...]) -> tuple[_PoolEntry, ...]:
        entry = self._entries.get(question.id)
        if entry is None:
            raise ScenarioMissingQuestion(
                f"{self._source}: no scripted pool for question {question.id!r}"
            )
        return entry.pool_for(bool(context))

    @staticmethod
    def _weights(pool: tuple[_PoolEntry, ...], temperature: float) -> list[float]:
        if temperature == 1.0:
            return [e.probability for e in pool]
        # p ** (1/T); the normalizing constant cancels in the cumulative draw.
        inv_t = 1.0 / temperature
        return [e.probability**inv_t for e in pool]

    @staticmethod
    def _argmax(pool: tuple[_PoolEntry, ...]) -> _PoolEntry:
        return min(pool, key=lambda e: (-e.probability, e.text))

    def _draw(self, pool: tuple[_PoolEntry, ...], weights: list[float], seed: int, index: int) -> _PoolEntry:
        rng = random.Random(derive_seed(seed, "sample", index))
        u = rng.random() * math.fsum(weights)
        acc = 0.0
        for entry, w in zip(pool, weights):
            acc += w
            if u < acc:
                return entry
        return pool[-1]

    def sample_answers(self, request: GenerationRequest) -> list[AnswerSample]:
        pool = self._pool(request.question, request.context_documents)
        if request.temperature == 0.0:
            best = self._argmax(pool)
            return [best.to_sample() for _ in range(request.num_samples)]
        weights = self._weights(pool, request.temperature)
        return [
            self._draw(pool, weights, request.seed, i).to_sample()
            for i in range(request.num_samples)
        ]

    def greedy_answer(
        self, question: Question, context_documents: tuple[str, ...] = ()
    ) -> AnswerSample:
        pool = self._pool(question, context_documents)
        return self._argmax(pool).to_sample()


class HttpGenerator:
    """OpenAI-style completions client.

    POSTs ``{model, prompt, n, temperature, logprobs: true, seed}`` to the
    configured endpoint and expects ``choices[*].text`` plus
    ``choices[*].logprobs.token_logprobs``. Missing log-probs are a hard
    error: entropy estimates silently degrade without them, so the client
    refuses to fabricate likelihoods.

    Network failures and 5xx responses are retried up to ``max_retries``
    times before raising BackendUnreachable; 4xx responses and contract
    violations raise MalformedBackendResponse without retrying.

    When ``max_n_per_request`` is positive, larger requests are split into
    batches issued concurrently (at most ``fan_out`` in flight) with child
    seeds derived per batch; responses are concatenated in batch order so the
    result is independent of scheduling.
    """

    def __init__(
        self,
        url: str,
        model: str = "default",
        timeout_s: float = 30.0,
        max_retries: int = 3,
        fan_out: int = 4,
        max_n_per_request: int = 0,
        api_key: str | None = None,
        demo_question: str = DEFAULT_DEMO_QUESTION,
        demo_answer: str = DEFAULT_DEMO_ANSWER,
        context_header: str = DEFAULT_CONTEXT_HEADER,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.model = model
        self.timeout_s = timeout_s
        self.max_retries = max(1, max_retries)
        self.fan_out = max(1, fan_out)
        self.max_n_per_request = max_n_per_request
        self.api_key = api_key
        self.demo_question = demo_question
        self.demo_answer = demo_answer
        self.context_header = context_header
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, body: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = self._session.post(
                    self.url, json=body, headers=self._headers(), timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_exc = exc
                logger.warning("generator request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_exc = BackendUnreachable(
                    f"generator returned {response.status_code}"
                )
                logger.warning(
                    "generator returned %d (attempt %d)", response.status_code, attempt + 1
                )
                continue
            if response.status_code >= 400:
                raise MalformedBackendResponse(
                    f"generator rejected the request: {response.status_code} {response.text[:200]}"
                )
            try:
                return response.json()
            except ValueError as exc:
                raise MalformedBackendResponse(f"generator sent non-JSON payload: {exc}") from exc
        raise BackendUnreachable(
            f"generator unreachable after {self.max_retries} attempts: {last_exc}"
        )

    @staticmethod
    def _parse_choice(choice: object) -> AnswerSample:
        if not isinstance(choice, dict) or "text" not in choice:
            raise MalformedBackendResponse("choice without 'text' field")
        text = choice["text"]
        if not isinstance(text, str):
            raise MalformedBackendResponse("choice 'text' is not a string")
        logprobs = choice.get("logprobs")
        token_lps = None if not isinstance(logprobs, dict) else logprobs.get("token_logprobs")
        if not isinstance(token_lps, list) or not token_lps or any(
            not isinstance(lp, (int, float)) for lp in token_lps
        ):
            raise MalformedBackendResponse(
                "choice is missing token log-probs; cannot score the sample"
            )
        cleaned = []
        for lp in token_lps:
            value = float(lp)
            if value > 0:
                if value > 1e-6:
                    raise MalformedBackendResponse(f"positive token logprob {value}")
                value = 0.0  # float dust from the backend
            cleaned.append(value)
        try:
            return AnswerSample.from_token_logprobs(text, cleaned)
        except ValueError as exc:
            raise MalformedBackendResponse(str(exc)) from exc

    def _request_samples(
        self, request: GenerationRequest, n: int, temperature: float, seed: int
    ) -> list[AnswerSample]:
        prompt = build_prompt(
            request.question.text,
            request.context_documents,
            demo_question=self.demo_question,
            demo_answer=self.demo_answer,
            context_header=self.context_header,
        )
        payload = self._post(
            {
                "model": self.model,
                "prompt": prompt,
                "n": n,
                "temperature": temperature,
                "logprobs": True,
                "seed": seed,
            }
        )
        choices = payload.get("choices")
        if not isinstance(choices, list) or len(choices) != n:
            got = len(choices) if isinstance(choices, list) else "none"
            raise MalformedBackendResponse(f"expected {n} choices, got {got}")
        return [self._parse_choice(c) for c in choices]

    def sample_answers(self, request: GenerationRequest) -> list[AnswerSample]:
        n = request.num_samples
        if self.max_n_per_request <= 0 or n <= self.max_n_per_request:
            return self._request_samples(request, n, request.temperature, request.seed)
        batch = self.max_n_per_request
        sizes = [batch] * (n // batch)
        if n % batch:
            sizes.append(n % batch)
        from concurrent.futures import ThreadPoolExecutor

        def fetch(args: tuple[int, int]) -> list[AnswerSample]:
            index, size = args
            return self._request_samples(
                request, size, request.temperature, derive_seed(request.seed, "batch", index)
            )

        with ThreadPoolExecutor(max_workers=self.fan_out) as pool:
            batches = list(pool.map(fetch, enumerate(sizes)))
        return [sample for chunk in batches for sample in chunk]

    def greedy_answer(
        self, question: Question, context_documents: tuple[str, ...] = ()
    ) -> AnswerSample:
        request = GenerationRequest(
            question=question,
            context_documents=tuple(context_documents),
            num_samples=1,
            temperature=GREEDY_TEMPERATURE,
            seed=0,
        )
        return self._request_samples(request, 1, GREEDY_TEMPERATURE, request.seed)[0]


@dataclass
class GeneratorGateway:
    """Backend-agnostic facade used by the pipeline."""

    backend: GeneratorBackend
    name: str = "mock"
    calls: int = field(default=0, repr=False)

    def sample_answers(self, request: GenerationRequest) -> list[AnswerSample]:
        self.calls += 1
        samples = self.backend.sample_answers(request)
        if len(samples) != request.num_samples:
            raise MalformedBackendResponse(
                f"backend produced {len(samples)} samples, expected {request.num_samples}"
            )
        return samples

    def greedy_answer(
        self, question: Question, context_documents: tuple[str, ...] = ()
    ) -> AnswerSample:
        self.calls += 1
        return self.backend.greedy_answer(question, tuple(context_documents))

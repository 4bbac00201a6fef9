"""End-to-end question answering pipeline.

For each question the pipeline samples answers closed-book, scores semantic
entropy, routes through the thresholds, and then answers:

    no_retrieval  greedy closed-book answer, zero retrieval steps
    single_step   one retrieval round, greedy answer over the documents
    multi_step    iterate retrieve -> draft -> re-score until the entropy
                  drops below tau_low or max_steps rounds have run

Multi-step queries append the previous draft to the question (the first
round uses the bare question); retrieved documents accumulate across rounds,
deduplicated by doc_id, and the final answer is always a fresh greedy
generation over the accumulated context.

Every backend interaction is recorded in an ordered trace, together with one
step record per retrieval round. Replaying a trace re-runs the full
orchestration against playback backends and must reproduce the original
result bit for bit; any divergence raises ReplayMismatch.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Sequence

from .config import RunConfig
from .entailment import EntailmentBackend, EntailmentGateway, EntailmentVerdict
from .entropy import EntropyReport, compute_entropy_report
from .errors import ConfigError, ReplayMismatch, SemrouteError
from .generator import AnswerSample, GenerationRequest, GeneratorBackend, Question
from .retriever import BM25Index, Document, ScoredDocument
from .router import RetrievalDecision, RetrievalMode, Thresholds, decide
from .seeding import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class PipelineResult:
    """Everything observed while answering one question.

    Attributes:
        question_id: Id of the question answered.
        answer: Final answer text.
        decision: Routing outcome (forced for baseline arms).
        entropy_report: Closed-book uncertainty assessment; None when the
            mode was forced and no assessment ran.
        retrieval_steps: 0 for no_retrieval, 1 for single_step, 1..max_steps
            for multi_step.
        retrieved_doc_ids: Doc ids per retrieval round, in rank order.
        wall_time_ms: Wall clock for the question; 0 unless timing is on.
        trace: Ordered event dicts: every backend call plus one step record
            per retrieval round.
    """

    question_id: str
    answer: str
    decision: RetrievalDecision
    entropy_report: EntropyReport | None
    retrieval_steps: int
    retrieved_doc_ids: list[list[str]]
    wall_time_ms: int
    trace: list[dict]

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "answer": self.answer,
            "decision": self.decision.to_dict(),
            "entropy_report": (
                self.entropy_report.to_dict() if self.entropy_report else None
            ),
            "retrieval_steps": self.retrieval_steps,
            "retrieved_doc_ids": [list(ids) for ids in self.retrieved_doc_ids],
            "wall_time_ms": self.wall_time_ms,
            "trace": self.trace,
        }


def _sample_to_dict(sample: AnswerSample) -> dict:
    return {"text": sample.text, "token_logprobs": list(sample.token_logprobs)}


def _sample_from_dict(raw: dict) -> AnswerSample:
    return AnswerSample.from_token_logprobs(raw["text"], raw["token_logprobs"])


class _Recorder:
    """Appends backend call events to the trace as they happen."""

    def __init__(self, trace: list[dict]):
        self.trace = trace

    def record_samples(self, request: GenerationRequest, samples: list[AnswerSample]) -> None:
        self.trace.append(
            {
                "kind": "call",
                "call": "sample_answers",
                "question_id": request.question.id,
                "context_doc_count": len(request.context_documents),
                "num_samples": request.num_samples,
                "temperature": request.temperature,
                "seed": request.seed,
                "latency_ms": 0,
                "samples": [_sample_to_dict(s) for s in samples],
            }
        )

    def record_greedy(
        self, question: Question, context_count: int, sample: AnswerSample
    ) -> None:
        self.trace.append(
            {
                "kind": "call",
                "call": "greedy_answer",
                "question_id": question.id,
                "context_doc_count": context_count,
                "latency_ms": 0,
                "sample": _sample_to_dict(sample),
            }
        )

    def record_entails(
        self, question_text: str, premise: str, hypothesis: str, verdict: EntailmentVerdict
    ) -> None:
        self.trace.append(
            {
                "kind": "call",
                "call": "entails",
                "question": question_text,
                "premise": premise,
                "hypothesis": hypothesis,
                "latency_ms": 0,
                "verdict": {"label": verdict.label, "score": verdict.score},
            }
        )

    def record_search(self, query: str, k: int, results: list[ScoredDocument]) -> None:
        self.trace.append(
            {
                "kind": "call",
                "call": "search",
                "query": query,
                "k": k,
                "latency_ms": 0,
                "results": [
                    {
                        "doc_id": r.document.doc_id,
                        "title": r.document.title,
                        "text": r.document.text,
                        "score": r.score,
                    }
                    for r in results
                ],
            }
        )

    def record_step(
        self,
        step: int,
        mode: RetrievalMode,
        query: str,
        retrieved_doc_ids: list[str],
        draft: str,
        entropy: float | None,
    ) -> None:
        self.trace.append(
            {
                "kind": "step",
                "step": step,
                "mode": mode.value,
                "query": query,
                "retrieved_doc_ids": list(retrieved_doc_ids),
                "draft": draft,
                "entropy": entropy,
            }
        )


class _RecordingEntailment:
    """Entailment backend adapter that logs every real (non-memoized) call."""

    def __init__(self, backend: EntailmentBackend, recorder: _Recorder):
        self._backend = backend
        self._recorder = recorder

    def entails(self, question_text: str, premise: str, hypothesis: str) -> EntailmentVerdict:
        verdict = self._backend.entails(question_text, premise, hypothesis)
        self._recorder.record_entails(question_text, premise, hypothesis, verdict)
        return verdict


class _TraceCursor:
    """Sequential reader over a recorded trace's call events."""

    def __init__(self, trace: Sequence[dict]):
        self._calls = [e for e in trace if e.get("kind") == "call"]
        self._next = 0

    def take(self, call: str, **expected: object) -> dict:
        if self._next >= len(self._calls):
            raise ReplayMismatch(f"trace exhausted, expected a {call!r} call")
        event = self._calls[self._next]
        self._next += 1
        if event.get("call") != call:
            raise ReplayMismatch(
                f"trace event {self._next} is {event.get('call')!r}, expected {call!r}"
            )
        for key, value in expected.items():
            if event.get(key) != value:
                raise ReplayMismatch(
                    f"trace event {self._next} field {key!r}: "
                    f"recorded {event.get(key)!r}, replayed {value!r}"
                )
        return event

    def assert_exhausted(self) -> None:
        if self._next != len(self._calls):
            raise ReplayMismatch(
                f"{len(self._calls) - self._next} recorded calls were never replayed"
            )


class _ReplayGenerator:
    def __init__(self, cursor: _TraceCursor):
        self._cursor = cursor

    def sample_answers(self, request: GenerationRequest) -> list[AnswerSample]:
        event = self._cursor.take(
            "sample_answers",
            question_id=request.question.id,
            context_doc_count=len(request.context_documents),
            num_samples=request.num_samples,
            temperature=request.temperature,
            seed=request.seed,
        )
        return [_sample_from_dict(s) for s in event["samples"]]

    def greedy_answer(
        self, question: Question, context_documents: tuple[str, ...]
    ) -> AnswerSample:
        event = self._cursor.take(
            "greedy_answer",
            question_id=question.id,
            context_doc_count=len(context_documents),
        )
        return _sample_from_dict(event["sample"])


class _ReplayEntailment:
    def __init__(self, cursor: _TraceCursor):
        self._cursor = cursor

    def entails(self, question_text: str, premise: str, hypothesis: str) -> EntailmentVerdict:
        event = self._cursor.take(
            "entails", question=question_text, premise=premise, hypothesis=hypothesis
        )
        verdict = event["verdict"]
        return EntailmentVerdict(label=verdict["label"], score=verdict["score"])


class _ReplaySearch:
    def __init__(self, cursor: _TraceCursor):
        self._cursor = cursor

    def search(self, query: str, k: int) -> list[ScoredDocument]:
        event = self._cursor.take("search", query=query, k=k)
        return [
            ScoredDocument(
                document=Document(
                    doc_id=r["doc_id"], title=r.get("title", ""), text=r["text"]
                ),
                score=r["score"],
            )
            for r in event["results"]
        ]


class Pipeline:
    """Adaptive-retrieval question answering over pluggable backends."""

    def __init__(
        self,
        config: RunConfig,
        generator: GeneratorBackend,
        entailment: EntailmentBackend,
        retriever: BM25Index | None = None,
    ):
        self.config = config
        self.generator = generator
        self.entailment = entailment
        self.retriever = retriever

    # --- public api ---------------------------------------------------------

    def answer_question(
        self, question: Question, force_mode: RetrievalMode | None = None
    ) -> PipelineResult:
        """Answer one question; see the module docstring for the flow.

        Args:
            question: The question to answer.
            force_mode: Skip uncertainty assessment and impose a mode; used
                by baseline evaluation arms.

        Raises:
            BackendError: Propagated from backends, with the partial trace
                attached as a ``partial_trace`` attribute.
        """
        searcher = self.retriever
        return self._run(
            question,
            generator=self.generator,
            entailment_backend=self.entailment,
            searcher=searcher,
            force_mode=force_mode,
        )

    def replay(
        self, question: Question, trace: Sequence[dict], force_mode: RetrievalMode | None = None
    ) -> PipelineResult:
        """Re-run a question purely from its recorded trace.

        The orchestration logic executes for real; only backend responses are
        read from the trace. The returned result must equal the original one
        bit for bit when the original ran with timing disabled.

        Raises:
            ReplayMismatch: The live call sequence diverged from the trace.
        """
        cursor = _TraceCursor(trace)
        result = self._run(
            question,
            generator=_ReplayGenerator(cursor),
            entailment_backend=_ReplayEntailment(cursor),
            searcher=_ReplaySearch(cursor),
            force_mode=force_mode,
        )
        cursor.assert_exhausted()
        return result

    # --- internals ----------------------------------------------------------

    def _search(self, searcher, recorder: _Recorder, query: str) -> list[ScoredDocument]:
        if searcher is None:
            raise ConfigError(
                "retrieval was requested but no index is configured "
                "(set retriever.index_dir and run ingest first)"
            )
        results = searcher.search(query, self.config.retriever.k)
        recorder.record_search(query, self.config.retriever.k, results)
        return results

    def _sample(
        self,
        generator: GeneratorBackend,
        recorder: _Recorder,
        question: Question,
        context: tuple[str, ...],
        label: str,
    ) -> list[AnswerSample]:
        request = GenerationRequest(
            question=question,
            context_documents=context,
            num_samples=self.config.sampling.n,
            temperature=self.config.sampling.temperature,
            seed=derive_seed(self.config.seed, question.id, label),
        )
        samples = generator.sample_answers(request)
        recorder.record_samples(request, samples)
        return samples

    def _greedy(
        self,
        generator: GeneratorBackend,
        recorder: _Recorder,
        question: Question,
        context: tuple[str, ...],
    ) -> AnswerSample:
        sample = generator.greedy_answer(question, context)
        recorder.record_greedy(question, len(context), sample)
        return sample

    def _assess(
        self,
        generator: GeneratorBackend,
        gateway: EntailmentGateway,
        recorder: _Recorder,
        question: Question,
        context: tuple[str, ...],
        label: str,
    ) -> EntropyReport:
        samples = self._sample(generator, recorder, question, context, label)
        return compute_entropy_report(
            question.text,
            samples,
            gateway.bidirectionally_equivalent,
            length_normalized=self.config.entropy.length_normalized,
        )

    def _signal(self, report: EntropyReport) -> float:
        if self.config.router.signal == "pe":
            return report.predictive_entropy
        return report.semantic_entropy

    def _run(
        self,
        question: Question,
        generator: GeneratorBackend,
        entailment_backend: EntailmentBackend,
        searcher,
        force_mode: RetrievalMode | None,
    ) -> PipelineResult:
        started = time.perf_counter()
        trace: list[dict] = []
        recorder = _Recorder(trace)
        # Fresh memo per question so cached verdicts never leak between runs
        # and every trace stays self-contained for replay.
        gateway = EntailmentGateway(
            _RecordingEntailment(entailment_backend, recorder)
        )
        thresholds = Thresholds(
            tau_low=self.config.router.tau_low, tau_high=self.config.router.tau_high
        )
        try:
            report: EntropyReport | None = None
            if force_mode is None:
                report = self._assess(
                    generator, gateway, recorder, question, (), "assess"
                )
                decision = decide(self._signal(report), thresholds)
            else:
                decision = RetrievalDecision(
                    mode=force_mode, entropy=None, thresholds=thresholds, forced=True
                )

            retrieved_doc_ids: list[list[str]] = []
            if decision.mode is RetrievalMode.NO_RETRIEVAL:
                answer = self._greedy(generator, recorder, question, ())
                steps = 0
            elif decision.mode is RetrievalMode.SINGLE_STEP:
                results = self._search(searcher, recorder, question.text)
                doc_ids = [r.document.doc_id for r in results]
                retrieved_doc_ids.append(doc_ids)
                context = tuple(r.document.text for r in results)
                answer = self._greedy(generator, recorder, question, context)
                recorder.record_step(
                    1, decision.mode, question.text, doc_ids, answer.text, None
                )
                steps = 1
            else:
                answer, steps, retrieved_doc_ids = self._multi_step(
                    generator, gateway, recorder, question, searcher
                )
        except SemrouteError as exc:
            exc.partial_trace = trace  # type: ignore[attr-defined]
            raise

        wall_ms = 0
        if self.config.runner.measure_time:
            wall_ms = int(round((time.perf_counter() - started) * 1000))
        return PipelineResult(
            question_id=question.id,
            answer=answer.text,
            decision=decision,
            entropy_report=report,
            retrieval_steps=steps,
            retrieved_doc_ids=retrieved_doc_ids,
            wall_time_ms=wall_ms,
            trace=trace,
        )

    def _multi_step(
        self,
        generator: GeneratorBackend,
        gateway: EntailmentGateway,
        recorder: _Recorder,
        question: Question,
        searcher,
    ) -> tuple[AnswerSample, int, list[list[str]]]:
        """Iterative retrieve -> draft -> re-score loop.

        The stop rule compares the configured routing signal (semantic
        entropy by default) against tau_low after every round.
        """
        max_steps = self.config.multistep.max_steps
        tau_low = self.config.router.tau_low
        accumulated: list[Document] = []
        seen_ids: set[str] = set()
        retrieved_doc_ids: list[list[str]] = []
        draft: AnswerSample | None = None
        steps = 0
        for step in range(1, max_steps + 1):
            if draft is None:
                query = question.text
            else:
                query = f"{question.text} {draft.text}"
            results = self._search(searcher, recorder, query)
            retrieved_doc_ids.append([r.document.doc_id for r in results])
            for scored in results:
                if scored.document.doc_id not in seen_ids:
                    seen_ids.add(scored.document.doc_id)
                    accumulated.append(scored.document)
            context = tuple(d.text for d in accumulated)
            draft = self._greedy(generator, recorder, question, context)
            steps = step
            step_report = self._assess(
                generator, gateway, recorder, question, context, f"step-{step}"
            )
            entropy = self._signal(step_report)
            recorder.record_step(
                step,
                RetrievalMode.MULTI_STEP,
                query,
                retrieved_doc_ids[-1],
                draft.text,
                entropy,
            )
            if entropy < tau_low:
                logger.debug(
                    "question %s converged at step %d (entropy %.4f)",
                    question.id,
                    step,
                    entropy,
                )
                break
        assert draft is not None
        return draft, steps, retrieved_doc_ids

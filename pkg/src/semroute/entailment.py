"""Entailment gateway.

Decides whether one sampled answer logically implies another, in the context
of the question being answered. Two answers belong to the same semantic
cluster when entailment holds in both directions.

The rule-based mock normalizes both answers (shared normalizer: lowercase,
punctuation stripped, articles dropped, whitespace collapsed) and treats them
as equivalent when the normalized forms become equal after alias
canonicalization. Alias tables are JSON lists of string lists, each inner
list one equivalence class; canonicalization rewrites any class member
appearing as a token subsequence into the class representative, repeatedly
until a fixed point, so "William Shakespeare" and "Shakespeare" compare equal
inside longer answers too. Contradictions are only ever produced by an
explicit antonym table (same file shape); it is empty by default.

The HTTP backend posts a premise/hypothesis pair to an NLI service. Both
strings are framed with the question ("<question> <answer>") so the service
judges answers in context.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

from .errors import BackendUnreachable, DataError, MalformedBackendResponse
from .text import normalize_text

logger = logging.getLogger(__name__)

ENTAILS = "entails"
NEUTRAL = "neutral"
CONTRADICTS = "contradicts"
LABELS = (ENTAILS, NEUTRAL, CONTRADICTS)

# Alias rewriting always terminates on sane tables; the cap guards against
# pathological ones that rewrite in circles.
_MAX_CANON_PASSES = 10


@dataclass(frozen=True)
class EntailmentVerdict:
    """Directional entailment judgment.

    Attributes:
        label: One of entails / neutral / contradicts.
        score: Backend confidence for the chosen label, in [0, 1].
    """

    label: str
    score: float

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"unknown entailment label {self.label!r}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def _load_table(path: str | Path, kind: str) -> list[list[str]]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{kind} table not found: {p}")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{kind} table {p}: invalid JSON ({exc})") from exc
    if not isinstance(payload, list) or any(
        not isinstance(group, list) or any(not isinstance(s, str) for s in group)
        for group in payload
    ):
        raise DataError(f"{kind} table {p}: expected a JSON list of string lists")
    return payload


class _AliasCanonicalizer:
    """Rewrites normalized token sequences into class-canonical form."""

    def __init__(self, classes: list[list[str]]):
        # Union overlapping classes so transitive alias chains land in one
        # group regardless of how the table was written.
        parent: dict[str, str] = {}

        def find(s: str) -> str:
            while parent[s] != s:
                parent[s] = parent[parent[s]]
                s = parent[s]
            return s

        normalized_groups = []
        for group in classes:
            members = [normalize_text(m) for m in group]
            members = [m for m in members if m]
            if len(members) < 2:
                continue
            normalized_groups.append(members)
            for m in members:
                parent.setdefault(m, m)
            root = find(members[0])
            for m in members[1:]:
                parent[find(m)] = root

        groups: dict[str, list[str]] = {}
        for group in normalized_groups:
            for m in group:
                groups.setdefault(find(m), []).append(m)

        # member token-tuple -> canonical token-tuple (the lexicographically
        # smallest member represents its class).
        self._rewrites: dict[tuple[str, ...], tuple[str, ...]] = {}
        self._max_len = 0
        for members in groups.values():
            canonical = min(sorted(set(members)))
            canon_tokens = tuple(canonical.split())
            for m in set(members):
                tokens = tuple(m.split())
                if tokens != canon_tokens:
                    self._rewrites[tokens] = canon_tokens
                    self._max_len = max(self._max_len, len(tokens))

    def canonicalize(self, normalized: str) -> str:
        if not self._rewrites:
            return normalized
        tokens = normalized.split()
        for _ in range(_MAX_CANON_PASSES):
            rewritten: list[str] = []
            i = 0
            changed = False
            while i < len(tokens):
                match = None
                limit = min(self._max_len, len(tokens) - i)
                for width in range(limit, 0, -1):
                    candidate = tuple(tokens[i : i + width])
                    if candidate in self._rewrites:
                        match = (width, self._rewrites[candidate])
                        break
                if match is None:
                    rewritten.append(tokens[i])
                    i += 1
                else:
                    width, replacement = match
                    rewritten.extend(replacement)
                    i += width
                    changed = True
            tokens = rewritten
            if not changed:
                break
        return " ".join(tokens)


class EntailmentBackend(Protocol):
    def entails(self, question_text: str, premise: str, hypothesis: str) -> EntailmentVerdict: ...


class MockEntailment:
    """Deterministic rule-based entailment.

    The verdict depends only on the two answers and the loaded tables; the
    question is accepted for interface parity but does not influence the
    rules, which keeps the relation trivially symmetric and reflexive.
    """

    def __init__(
        self,
        alias_classes: list[list[str]] | None = None,
        antonym_classes: list[list[str]] | None = None,
    ):
        self._aliases = _AliasCanonicalizer(alias_classes or [])
        self._antonyms: dict[str, int] = {}
        for idx, group in enumerate(antonym_classes or []):
            for member in group:
                normalized = normalize_text(member)
                if normalized:
                    self._antonyms[normalized] = idx

    @classmethod
    def from_files(
        cls,
        alias_table: str | Path | None = None,
        antonym_table: str | Path | None = None,
    ) -> "MockEntailment":
        aliases = _load_table(alias_table, "alias") if alias_table else []
        antonyms = _load_table(antonym_table, "antonym") if antonym_table else []
        return cls(aliases, antonyms)

    def _canonical(self, answer: str) -> str:
        return self._aliases.canonicalize(normalize_text(answer))

    def entails(self, question_text: str, premise: str, hypothesis: str) -> EntailmentVerdict:
        _check_inputs(question_text, premise, hypothesis)
        a = self._canonical(premise)
        b = self._canonical(hypothesis)
        if a == b:
            return EntailmentVerdict(label=ENTAILS, score=1.0)
        group_a = self._antonyms.get(normalize_text(premise))
        group_b = self._antonyms.get(normalize_text(hypothesis))
        if group_a is not None and group_a == group_b:
            return EntailmentVerdict(label=CONTRADICTS, score=1.0)
        return EntailmentVerdict(label=NEUTRAL, score=1.0)


class HttpEntailment:
    """Client for an NLI service.

    POSTs ``{premise, hypothesis}`` and expects ``{label, probabilities}``
    where probabilities has one entry per label and label is the argmax.
    """

    def __init__(
        self,
        url: str,
        timeout_s: float = 30.0,
        max_retries: int = 3,
        api_key: str | None = None,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.timeout_s = timeout_s
        self.max_retries = max(1, max_retries)
        self.api_key = api_key
        self._session = session or requests.Session()

    def entails(self, question_text: str, premise: str, hypothesis: str) -> EntailmentVerdict:
        _check_inputs(question_text, premise, hypothesis)
        body = {
            "premise": f"{question_text} {premise}",
            "hypothesis": f"{question_text} {hypothesis}",
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_exc: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                response = self._session.post(
                    self.url, json=body, headers=headers, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_exc = exc
                logger.warning("entailment request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code >= 500:
                last_exc = BackendUnreachable(f"entailment returned {response.status_code}")
                continue
            if response.status_code >= 400:
                raise MalformedBackendResponse(
                    f"entailment rejected the request: {response.status_code}"
                )
            try:
                payload = response.json()
            except ValueError as exc:
                raise MalformedBackendResponse(f"entailment sent non-JSON payload: {exc}") from exc
            return self._parse(payload)
        raise BackendUnreachable(
            f"entailment unreachable after {self.max_retries} attempts: {last_exc}"
        )

    @staticmethod
    def _parse(payload: object) -> EntailmentVerdict:
        if not isinstance(payload, dict):
            raise MalformedBackendResponse("entailment payload is not an object")
        label = payload.get("label")
        probabilities = payload.get("probabilities")
        if label not in LABELS or not isinstance(probabilities, dict):
            raise MalformedBackendResponse("entailment payload missing label or probabilities")
        try:
            probs = {name: float(probabilities[name]) for name in LABELS}
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedBackendResponse(f"bad probability map: {exc}") from exc
        score = probs[label]
        if not 0.0 <= score <= 1.0:
            raise MalformedBackendResponse(f"probability {score} outside [0, 1]")
        if score + 1e-9 < max(probs.values()):
            raise MalformedBackendResponse("label is not the probability argmax")
        return EntailmentVerdict(label=label, score=score)


def _check_inputs(question_text: str, premise: str, hypothesis: str) -> None:
    if not question_text.strip():
        raise ValueError("question text is empty")
    if not premise.strip() or not hypothesis.strip():
        raise ValueError("entailment inputs must be non-empty after trimming")


class EntailmentGateway:
    """Memoizing facade over an entailment backend.

    Verdicts are cached per (question, premise, hypothesis) for the lifetime
    of the gateway, which callers scope to a single pipeline run. The cache
    is lock-protected so concurrent clustering jobs can share one gateway.
    """

    def __init__(self, backend: EntailmentBackend, name: str = "mock"):
        self.backend = backend
        self.name = name
        self.backend_calls = 0
        self._cache: dict[tuple[str, str, str], EntailmentVerdict] = {}
        self._lock = threading.Lock()

    def entails(self, question_text: str, premise: str, hypothesis: str) -> EntailmentVerdict:
        key = (question_text, premise, hypothesis)
        with self._lock:
            cached = self._cache.get(key)
        if cached is not None:
            return cached
        verdict = self.backend.entails(question_text, premise, hypothesis)
        with self._lock:
            self._cache[key] = verdict
            self.backend_calls += 1
        return verdict

    def bidirectionally_equivalent(self, question_text: str, a: str, b: str) -> bool:
        """True when entailment holds in both directions."""
        if self.entails(question_text, a, b).label != ENTAILS:
            return False
        return self.entails(question_text, b, a).label == ENTAILS

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()

"""Answer scoring and batch evaluation.

Metrics follow the usual open-domain QA conventions. Answers are normalized
(lowercase, punctuation stripped, articles dropped, whitespace collapsed)
before comparison:

    em   1 when the normalized prediction equals any normalized gold
    f1   best token-multiset overlap F1 against any gold
    acc  1 when any normalized gold occurs as a contiguous token
         subsequence of the normalized prediction (order preserved), so
         "the Eiffel Tower in Paris" counts for gold "Eiffel Tower" but
         "tower eiffel" does not

By construction f1 >= em and acc >= em for every prediction.

The batch runner executes the pipeline over a JSONL dataset with bounded
parallelism, records one row per question in input order, never aborts on a
failed question (failures score zero and carry the error message), and
aggregates a report whose JSON serialization is deterministic.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import RunConfig, RouterConfig
from .errors import (
    ConfigError,
    DataError,
    DatasetNotFound,
    EmptyDataset,
    MalformedRecord,
    NoGoldAnswers,
    SemrouteError,
)
from .generator import Question
from .orchestrator import Pipeline, PipelineResult
from .router import RetrievalMode
from .text import normalize_text

logger = logging.getLogger(__name__)


def normalize_answer(text: str) -> str:
    """Normalize an answer for scoring; see the module docstring."""
    return normalize_text(text)


def _require_golds(gold_answers: Sequence[str]) -> None:
    if not gold_answers:
        raise NoGoldAnswers("cannot score against zero gold answers")


def exact_match(prediction: str, gold_answers: Sequence[str]) -> int:
    """1 when the normalized prediction equals any normalized gold."""
    _require_golds(gold_answers)
    normalized = normalize_answer(prediction)
    return int(any(normalized == normalize_answer(g) for g in gold_answers))


def _f1_single(prediction_tokens: list[str], gold_tokens: list[str]) -> float:
    if not prediction_tokens and not gold_tokens:
        return 1.0
    if not prediction_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(prediction_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(prediction_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1_score(prediction: str, gold_answers: Sequence[str]) -> float:
    """Best token-level F1 over the gold answers."""
    _require_golds(gold_answers)
    prediction_tokens = normalize_answer(prediction).split()
    return max(
        _f1_single(prediction_tokens, normalize_answer(g).split())
        for g in gold_answers
    )


def _contains_contiguous(haystack: list[str], needle: list[str]) -> bool:
    if not needle:
        return True
    for start in range(len(haystack) - len(needle) + 1):
        if haystack[start : start + len(needle)] == needle:
            return True
    return False


def accuracy(prediction: str, gold_answers: Sequence[str]) -> int:
    """1 when any gold appears contiguously, in order, in the prediction."""
    _require_golds(gold_answers)
    prediction_tokens = normalize_answer(prediction).split()
    return int(
        any(
            _contains_contiguous(prediction_tokens, normalize_answer(g).split())
            for g in gold_answers
        )
    )


# --- dataset io ---------------------------------------------------------------


def load_dataset(path: str | Path) -> list[Question]:
    """Read a JSONL dataset of {"id", "question", "answers": [...]} rows.

    Raises:
        DatasetNotFound: Path does not exist (usage error).
        MalformedRecord: Bad line, cited by line number.
        EmptyDataset: Zero questions.
    """
    p = Path(path)
    if not p.is_file():
        raise DatasetNotFound(f"dataset not found: {p}")
    questions: list[Question] = []
    seen: set[str] = set()
    with p.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if line.strip() == "":
                raise MalformedRecord(str(p), line_number, "blank line")
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(
                    str(p), line_number, f"invalid JSON ({exc.msg})"
                ) from exc
            if not isinstance(raw, dict):
                raise MalformedRecord(str(p), line_number, "expected a JSON object")
            qid = raw.get("id")
            text = raw.get("question")
            answers = raw.get("answers")
            if not isinstance(qid, str) or not qid:
                raise MalformedRecord(str(p), line_number, "missing or empty 'id'")
            if qid in seen:
                raise MalformedRecord(str(p), line_number, f"duplicate id {qid!r}")
            if not isinstance(text, str) or not text.strip():
                raise MalformedRecord(str(p), line_number, "missing or empty 'question'")
            if (
                not isinstance(answers, list)
                or not answers
                or any(not isinstance(a, str) or not a for a in answers)
            ):
                raise MalformedRecord(
                    str(p), line_number, "'answers' must be a non-empty list of strings"
                )
            seen.add(qid)
            questions.append(
                Question(id=qid, text=text, gold_answers=tuple(answers))
            )
    if not questions:
        raise EmptyDataset(f"dataset {p} contains no questions")
    return questions


# --- batch evaluation ----------------------------------------------------------


@dataclass
class EvalRecord:
    """Scored outcome for one question."""

    question_id: str
    prediction: str
    gold_answers: tuple[str, ...]
    em: int
    f1: float
    acc: int
    retrieval_steps: int
    wall_time_ms: int
    mode: str | None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "prediction": self.prediction,
            "gold_answers": list(self.gold_answers),
            "em": self.em,
            "f1": self.f1,
            "acc": self.acc,
            "retrieval_steps": self.retrieval_steps,
            "wall_time_ms": self.wall_time_ms,
            "mode": self.mode,
            "error": self.error,
        }


@dataclass
class EvalReport:
    """Aggregates over one dataset run; metric means are percentages."""

    dataset: str
    num_questions: int
    em: float
    f1: float
    acc: float
    mean_retrieval_steps: float
    mean_wall_time_ms: float
    mode_counts: dict[str, int]
    failed_questions: int
    relative_time: float | None = None

    def to_dict(self) -> dict:
        payload = {
            "dataset": self.dataset,
            "num_questions": self.num_questions,
            "em": self.em,
            "f1": self.f1,
            "acc": self.acc,
            "mean_retrieval_steps": self.mean_retrieval_steps,
            "mean_wall_time_ms": self.mean_wall_time_ms,
            "mode_counts": dict(self.mode_counts),
            "failed_questions": self.failed_questions,
        }
        if self.relative_time is not None:
            payload["relative_time"] = self.relative_time
        return payload


def score_result(question: Question, result: PipelineResult) -> EvalRecord:
    return EvalRecord(
        question_id=question.id,
        prediction=result.answer,
        gold_answers=question.gold_answers,
        em=exact_match(result.answer, question.gold_answers),
        f1=f1_score(result.answer, question.gold_answers),
        acc=accuracy(result.answer, question.gold_answers),
        retrieval_steps=result.retrieval_steps,
        wall_time_ms=result.wall_time_ms,
        mode=result.decision.mode.value,
    )


def _failure_record(question: Question, error: SemrouteError) -> EvalRecord:
    logger.warning("question %s failed: %s", question.id, error)
    return EvalRecord(
        question_id=question.id,
        prediction="",
        gold_answers=question.gold_answers,
        em=0,
        f1=0.0,
        acc=0,
        retrieval_steps=0,
        wall_time_ms=0,
        mode=None,
        error=f"{type(error).__name__}: {error}",
    )


def aggregate(
    dataset_name: str,
    records: Sequence[EvalRecord],
    baseline_report: dict | None = None,
) -> EvalReport:
    """Fold records into an EvalReport.

    Raises:
        EmptyDataset: Zero records.
        DataError: A baseline report without usable timing was supplied.
    """
    if not records:
        raise EmptyDataset("cannot aggregate zero records")
    n = len(records)
    mode_counts = {mode.value: 0 for mode in RetrievalMode}
    for record in records:
        if record.mode is not None:
            mode_counts[record.mode] += 1
    mean_wall = sum(r.wall_time_ms for r in records) / n
    relative_time = None
    if baseline_report is not None:
        baseline_wall = baseline_report.get("mean_wall_time_ms")
        if not isinstance(baseline_wall, (int, float)) or baseline_wall <= 0:
            raise DataError(
                "baseline report has no positive mean_wall_time_ms; "
                "was it produced with runner.measure_time enabled?"
            )
        if mean_wall <= 0:
            raise DataError(
                "current run has no timing data; enable runner.measure_time "
                "to compare against a baseline"
            )
        relative_time = mean_wall / baseline_wall
    return EvalReport(
        dataset=dataset_name,
        num_questions=n,
        em=100.0 * sum(r.em for r in records) / n,
        f1=100.0 * sum(r.f1 for r in records) / n,
        acc=100.0 * sum(r.acc for r in records) / n,
        mean_retrieval_steps=sum(r.retrieval_steps for r in records) / n,
        mean_wall_time_ms=mean_wall,
        mode_counts=mode_counts,
        failed_questions=sum(1 for r in records if r.error is not None),
        relative_time=relative_time,
    )


def run_eval(
    pipeline: Pipeline,
    questions: Sequence[Question],
    dataset_name: str,
    baseline_report: dict | None = None,
    force_mode: RetrievalMode | None = None,
) -> tuple[EvalReport, list[EvalRecord], list[PipelineResult | None]]:
    """Evaluate the pipeline over a question list.

    Questions run with bounded parallelism (runner.parallelism); records come
    back in input order regardless of scheduling. A question that fails with
    a package error is recorded with zero scores and the error string; the
    run continues.

    Returns:
        (report, records, results) where results holds the PipelineResult per
        question (None for failed ones) for trace logging.
    """
    if not questions:
        raise EmptyDataset("no questions to evaluate")

    def work(question: Question) -> tuple[EvalRecord, PipelineResult | None]:
        try:
            result = pipeline.answer_question(question, force_mode=force_mode)
        except SemrouteError as exc:
            return _failure_record(question, exc), None
        return score_result(question, result), result

    parallelism = max(1, pipeline.config.runner.parallelism)
    if parallelism == 1 or len(questions) == 1:
        outcomes = [work(q) for q in questions]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(work, questions))
    records = [record for record, _ in outcomes]
    results = [result for _, result in outcomes]
    report = aggregate(dataset_name, records, baseline_report=baseline_report)
    return report, records, results


# --- ablation -------------------------------------------------------------------


@dataclass
class AblationArm:
    """One row of the ablation comparison."""

    name: str
    em: float
    f1: float
    acc: float
    mean_retrieval_steps: float
    retrieval_count: int

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "em": self.em,
            "f1": self.f1,
            "acc": self.acc,
            "mean_retrieval_steps": self.mean_retrieval_steps,
            "retrieval_count": self.retrieval_count,
        }


@dataclass
class AblationReport:
    dataset: str
    num_questions: int
    arms: list[AblationArm]

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "num_questions": self.num_questions,
            "arms": [arm.to_dict() for arm in self.arms],
        }


def _arm_from_records(name: str, records: Sequence[EvalRecord]) -> AblationArm:
    n = len(records)
    return AblationArm(
        name=name,
        em=100.0 * sum(r.em for r in records) / n,
        f1=100.0 * sum(r.f1 for r in records) / n,
        acc=100.0 * sum(r.acc for r in records) / n,
        mean_retrieval_steps=sum(r.retrieval_steps for r in records) / n,
        retrieval_count=sum(1 for r in records if r.retrieval_steps > 0),
    )


def ablate(
    pipeline: Pipeline,
    questions: Sequence[Question],
    dataset_name: str,
    tau_se: float,
    tau_pe_list: Sequence[float],
) -> AblationReport:
    """Compare binary routing triggered by semantic vs predictive entropy.

    Arms, in report order: a no-retrieval baseline, an always-single-step
    baseline, one binary PE arm per threshold in tau_pe_list, and one binary
    SE arm at tau_se. Binary arms run with tau_low = tau_high = tau, so the
    triggered mode is a single retrieval round.

    Raises:
        ConfigError: Empty tau_pe_list.
    """
    if not tau_pe_list:
        raise ConfigError("ablation needs at least one PE threshold")

    def binary_config(tau: float, signal: str) -> RunConfig:
        return pipeline.config.replace(
            router=RouterConfig(tau_low=tau, tau_high=tau, signal=signal)
        )

    def run_arm(
        name: str, config: RunConfig, force_mode: RetrievalMode | None
    ) -> AblationArm:
        arm_pipeline = Pipeline(
            config, pipeline.generator, pipeline.entailment, pipeline.retriever
        )
        _, records, _ = run_eval(
            arm_pipeline, questions, dataset_name, force_mode=force_mode
        )
        return _arm_from_records(name, records)

    arms = [
        run_arm("no_retrieval", pipeline.config, RetrievalMode.NO_RETRIEVAL),
        run_arm("single_step", pipeline.config, RetrievalMode.SINGLE_STEP),
    ]
    for tau in tau_pe_list:
        arms.append(run_arm(f"pe@{tau:g}", binary_config(tau, "pe"), None))
    arms.append(run_arm(f"se@{tau_se:g}", binary_config(tau_se, "se"), None))
    return AblationReport(
        dataset=dataset_name, num_questions=len(questions), arms=arms
    )


# --- rendering ------------------------------------------------------------------


def report_to_json(report: EvalReport) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def render_report_table(report: EvalReport) -> str:
    """Aligned plain-text view of a report."""
    rows = [
        ("dataset", report.dataset),
        ("questions", str(report.num_questions)),
        ("em", f"{report.em:.2f}%"),
        ("f1", f"{report.f1:.2f}%"),
        ("acc", f"{report.acc:.2f}%"),
        ("mean retrieval steps", f"{report.mean_retrieval_steps:.4f}"),
        ("mean wall time (ms)", f"{report.mean_wall_time_ms:.2f}"),
        ("failed questions", str(report.failed_questions)),
    ]
    if report.relative_time is not None:
        rows.append(("relative time", f"{report.relative_time:.3f}"))
    for mode in RetrievalMode:
        rows.append((f"routed {mode.value}", str(report.mode_counts[mode.value])))
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label.ljust(width)}  {value}" for label, value in rows)


def render_ablation_table(report: AblationReport) -> str:
    header = ("arm", "acc", "mean_steps", "retrievals")
    rows = [
        (
            arm.name,
            f"{arm.acc:.2f}%",
            f"{arm.mean_retrieval_steps:.4f}",
            str(arm.retrieval_count),
        )
        for arm in report.arms
    ]
    table = [header, *rows]
    widths = [max(len(row[col]) for row in table) for col in range(len(header))]
    lines = []
    for row in table:
        lines.append("  ".join(cell.ljust(widths[col]) for col, cell in enumerate(row)))
    return "\n".join(lines)

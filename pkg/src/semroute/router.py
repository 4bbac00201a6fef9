"""Uncertainty-based retrieval routing.

Two thresholds split the entropy axis into three regimes:

    entropy <  tau_low              -> answer directly, no retrieval
    tau_low <= entropy < tau_high   -> one retrieval round
    entropy >= tau_high             -> iterative multi-step retrieval

Both boundaries belong to the higher-retrieval mode, so sitting exactly on a
threshold buys more evidence rather than less. Setting tau_low == tau_high
degenerates into a binary retrieve/don't-retrieve switch; the triggered mode
is then single_step, which is what the ablation arms use.

Thresholds are tuned by grid search under k-fold cross-validation against
records that carry, per question, the observed entropy and whether the
answer was correct without retrieval, with one round, and with multi-step.
"""

from __future__ import annotations

import enum
import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .errors import (
    DatasetNotFound,
    EmptyRecords,
    InvalidFolds,
    InvalidGrid,
    InvalidThresholds,
    MalformedRecord,
)
from .seeding import derive_seed

DEFAULT_BUCKET_WIDTH = 0.1
# Step cost assumed for a multi_step routing during calibration tie-breaks;
# matches the default multistep.max_steps.
DEFAULT_MULTI_STEP_COST = 3


class RetrievalMode(str, enum.Enum):
    NO_RETRIEVAL = "no_retrieval"
    SINGLE_STEP = "single_step"
    MULTI_STEP = "multi_step"

    @property
    def rank(self) -> int:
        return _MODE_RANK[self]


_MODE_RANK = {
    RetrievalMode.NO_RETRIEVAL: 0,
    RetrievalMode.SINGLE_STEP: 1,
    RetrievalMode.MULTI_STEP: 2,
}


@dataclass(frozen=True)
class Thresholds:
    """A valid (tau_low, tau_high) pair with 0 <= tau_low <= tau_high."""

    tau_low: float
    tau_high: float

    def __post_init__(self) -> None:
        if math.isnan(self.tau_low) or math.isnan(self.tau_high):
            raise InvalidThresholds("thresholds must be numbers")
        if self.tau_low < 0:
            raise InvalidThresholds(f"tau_low must be >= 0, got {self.tau_low}")
        if self.tau_low > self.tau_high:
            raise InvalidThresholds(
                f"tau_low > tau_high ({self.tau_low} > {self.tau_high})"
            )

    def to_dict(self) -> dict:
        return {"tau_low": self.tau_low, "tau_high": self.tau_high}


@dataclass(frozen=True)
class RetrievalDecision:
    """The routing outcome for one question.

    Attributes:
        mode: Chosen retrieval mode.
        entropy: The uncertainty value the decision was based on; None when
            the mode was forced (baseline arms skip the assessment phase).
        thresholds: The pair in force when deciding.
        forced: True when the mode was imposed rather than decided.
    """

    mode: RetrievalMode
    entropy: float | None
    thresholds: Thresholds
    forced: bool = False

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "entropy": self.entropy,
            "thresholds": self.thresholds.to_dict(),
            "forced": self.forced,
        }


def decide(entropy: float, thresholds: Thresholds) -> RetrievalDecision:
    """Route one question by its entropy.

    Args:
        entropy: Uncertainty estimate in nats, >= 0.
        thresholds: Validated threshold pair.

    Returns:
        The RetrievalDecision; deterministic in its inputs.
    """
    if math.isnan(entropy) or entropy < 0:
        raise ValueError(f"entropy must be a non-negative number, got {entropy}")
    if entropy < thresholds.tau_low:
        mode = RetrievalMode.NO_RETRIEVAL
    elif thresholds.tau_low == thresholds.tau_high:
        # Degenerate pair: a binary switch whose triggered mode is one round.
        mode = RetrievalMode.SINGLE_STEP
    elif entropy < thresholds.tau_high:
        mode = RetrievalMode.SINGLE_STEP
    else:
        mode = RetrievalMode.MULTI_STEP
    return RetrievalDecision(mode=mode, entropy=entropy, thresholds=thresholds)


@dataclass(frozen=True)
class CalibrationRecord:
    """Observed outcomes for one question under the three modes."""

    entropy: float
    correct_without_retrieval: bool
    correct_with_single: bool
    correct_with_multi: bool

    def correct_under(self, mode: RetrievalMode) -> bool:
        if mode is RetrievalMode.NO_RETRIEVAL:
            return self.correct_without_retrieval
        if mode is RetrievalMode.SINGLE_STEP:
            return self.correct_with_single
        return self.correct_with_multi

    def to_dict(self) -> dict:
        return {
            "entropy": self.entropy,
            "correct_without_retrieval": self.correct_without_retrieval,
            "correct_with_single": self.correct_with_single,
            "correct_with_multi": self.correct_with_multi,
        }


def default_grid(step: float = 0.1, upper: float = 2.0) -> list[Thresholds]:
    """All valid pairs over an even grid of tau values from 0 to upper."""
    ticks = round(upper / step)
    values = [round(i * step, 10) for i in range(ticks + 1)]
    return pairs_from_values(values)


def pairs_from_values(values: Sequence[float]) -> list[Thresholds]:
    """Every valid (low, high) combination of the given tau values."""
    ordered = sorted(set(values))
    return [
        Thresholds(tau_low=lo, tau_high=hi)
        for i, lo in enumerate(ordered)
        for hi in ordered[i:]
    ]


def _fold_assignment(n: int, k_folds: int, seed: int) -> list[list[int]]:
    indices = list(range(n))
    random.Random(derive_seed(seed, "calibration-folds")).shuffle(indices)
    folds = [indices[f::k_folds] for f in range(k_folds)]
    return folds


def _steps_for(mode: RetrievalMode, multi_step_cost: int) -> int:
    if mode is RetrievalMode.NO_RETRIEVAL:
        return 0
    if mode is RetrievalMode.SINGLE_STEP:
        return 1
    return multi_step_cost


def calibrate(
    records: Sequence[CalibrationRecord],
    grid: Sequence[Thresholds] | None = None,
    k_folds: int = 5,
    seed: int = 0,
    multi_step_cost: int = DEFAULT_MULTI_STEP_COST,
) -> Thresholds:
    """Pick the threshold pair maximizing mean cross-validated accuracy.

    Every grid pair is scored as the mean over folds of held-out accuracy,
    where a record counts as correct when its flag for the mode decide()
    selects is true. Ties fall to the pair with fewer expected retrieval
    steps (no/single/multi cost 0/1/multi_step_cost), then the smaller
    tau_low, then the smaller tau_high. Accuracy and step comparisons use
    exact rational arithmetic so ties are genuine, not float accidents.

    Args:
        records: Non-empty calibration records.
        grid: Candidate pairs; defaults to every pair over 0..2 step 0.1.
        k_folds: Cross-validation folds, 2 <= k_folds <= len(records).
        seed: Drives the deterministic fold shuffle.
        multi_step_cost: Step cost charged to a multi_step routing.

    Returns:
        The winning Thresholds pair.

    Raises:
        EmptyRecords: No records.
        InvalidFolds: Fold count out of range.
        InvalidGrid: Empty grid.
    """
    if not records:
        raise EmptyRecords("calibration needs at least one record")
    if grid is None:
        grid = default_grid()
    if not grid:
        raise InvalidGrid("calibration grid is empty")
    if not 2 <= k_folds <= len(records):
        raise InvalidFolds(
            f"k_folds must be between 2 and {len(records)}, got {k_folds}"
        )

    folds = _fold_assignment(len(records), k_folds, seed)

    best: tuple | None = None
    best_pair: Thresholds | None = None
    for pair in grid:
        modes = [decide(r.entropy, pair).mode for r in records]
        fold_accs = []
        for fold in folds:
            hits = sum(1 for i in fold if records[i].correct_under(modes[i]))
            fold_accs.append(Fraction(hits, len(fold)))
        cv_accuracy = sum(fold_accs, Fraction(0)) / len(fold_accs)
        expected_steps = Fraction(
            sum(_steps_for(m, multi_step_cost) for m in modes), len(records)
        )
        key = (-cv_accuracy, expected_steps, pair.tau_low, pair.tau_high)
        if best is None or key < best:
            best = key
            best_pair = pair
    assert best_pair is not None
    return best_pair


@dataclass(frozen=True)
class ProfileBucket:
    """One entropy interval [lower, upper) of the accuracy profile."""

    lower: float
    upper: float
    count: int
    accuracy: float
    retrieval_frequency: float

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "count": self.count,
            "accuracy": self.accuracy,
            "retrieval_frequency": self.retrieval_frequency,
        }


def load_calibration_records(path: str | Path) -> list[CalibrationRecord]:
    """Read calibration records from JSONL.

    Each line carries {"entropy", "correct_without_retrieval",
    "correct_with_single", "correct_with_multi"}.

    Raises:
        DatasetNotFound: Path does not exist (usage error).
        MalformedRecord: Bad line, cited by line number.
        EmptyRecords: Zero records.
    """
    p = Path(path)
    if not p.is_file():
        raise DatasetNotFound(f"records file not found: {p}")
    records: list[CalibrationRecord] = []
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
            entropy = raw.get("entropy")
            if not isinstance(entropy, (int, float)) or isinstance(entropy, bool) or entropy < 0:
                raise MalformedRecord(
                    str(p), line_number, "'entropy' must be a non-negative number"
                )
            flags = {}
            for name in (
                "correct_without_retrieval",
                "correct_with_single",
                "correct_with_multi",
            ):
                value = raw.get(name)
                if not isinstance(value, bool):
                    raise MalformedRecord(
                        str(p), line_number, f"{name!r} must be a boolean"
                    )
                flags[name] = value
            records.append(CalibrationRecord(entropy=float(entropy), **flags))
    if not records:
        raise EmptyRecords(f"records file {p} is empty")
    return records


def save_calibration_records(
    records: Sequence[CalibrationRecord], path: str | Path
) -> None:
    """Write records as JSONL, one object per line, keys sorted."""
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def entropy_accuracy_profile(
    records: Sequence[CalibrationRecord],
    thresholds: Thresholds,
    bucket_width: float = DEFAULT_BUCKET_WIDTH,
) -> list[ProfileBucket]:
    """Histogram entropy against no-retrieval accuracy.

    Accuracy per bucket is the share of records the generator got right on
    its own (the quantity thresholds are meant to predict); retrieval
    frequency is the share the given thresholds would send to retrieval.
    Empty buckets are omitted.

    Raises:
        EmptyRecords: No records.
        ValueError: Non-positive bucket width.
    """
    if not records:
        raise EmptyRecords("profile needs at least one record")
    if bucket_width <= 0:
        raise ValueError(f"bucket width must be positive, got {bucket_width}")
    grouped: dict[int, list[CalibrationRecord]] = {}
    for record in records:
        grouped.setdefault(int(record.entropy // bucket_width), []).append(record)
    buckets = []
    for index in sorted(grouped):
        members = grouped[index]
        accurate = sum(1 for r in members if r.correct_without_retrieval)
        retrieved = sum(
            1
            for r in members
            if decide(r.entropy, thresholds).mode is not RetrievalMode.NO_RETRIEVAL
        )
        buckets.append(
            ProfileBucket(
                lower=index * bucket_width,
                upper=(index + 1) * bucket_width,
                count=len(members),
                accuracy=accurate / len(members),
                retrieval_frequency=retrieved / len(members),
            )
        )
    return buckets

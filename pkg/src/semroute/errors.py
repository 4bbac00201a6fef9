"""Exception hierarchy shared across the package.

Every error that can surface through the CLI carries an ``exit_code`` so the
command layer can map failures onto the documented process exit codes:

    0  success
    2  configuration or usage error
    3  data error (malformed corpus, dataset, scenario, records)
    4  backend error (generator or entailment service failure)

Library-internal contract violations (for example calling an aggregate before
its inputs were attached) default to exit code 1; they indicate a programming
error rather than a user mistake.
"""

from __future__ import annotations


class SemrouteError(Exception):
    """Base class for all package-specific errors."""

    exit_code = 1


class ConfigError(SemrouteError):
    """Invalid configuration, thresholds, grids, or command usage."""

    exit_code = 2


class DataError(SemrouteError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class BackendError(SemrouteError):
    """A generator or entailment backend misbehaved."""

    exit_code = 4


# --- backend errors ---------------------------------------------------------


class BackendUnreachable(BackendError):
    """HTTP backend could not be reached after the configured retries."""


class MalformedBackendResponse(BackendError):
    """Backend replied, but the payload violates the wire contract."""


class ScenarioMissingQuestion(BackendError):
    """The mock scenario has no scripted pool for the requested question."""


# --- data errors ------------------------------------------------------------


class CorpusNotFound(ConfigError):
    """Corpus path does not exist.

    A missing path is treated as a usage error (exit 2); malformed content
    inside an existing file is a data error (exit 3).
    """


class DatasetNotFound(ConfigError):
    """Dataset path does not exist (usage error, exit 2)."""


class MalformedRecord(DataError):
    """A JSONL line could not be parsed or fails validation.

    The message always cites the 1-based line number.
    """

    def __init__(self, path: str, line_number: int, reason: str):
        self.path = path
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{path}, line {line_number}: {reason}")


class DuplicateDocId(DataError):
    """Two corpus records share a doc_id."""


class EmptyDataset(DataError):
    """An evaluation dataset contains no questions."""


class MalformedScenario(DataError):
    """Mock scenario file fails validation."""


class EmptyRecords(DataError):
    """Calibration was asked to run over zero records."""


class NoGoldAnswers(DataError):
    """A dataset question offers no gold answers to score against."""


# --- configuration errors ---------------------------------------------------


class InvalidThresholds(ConfigError):
    """Routing thresholds are negative or ordered incorrectly."""


class InvalidGrid(ConfigError):
    """Calibration grid is empty or contains an invalid pair."""


class InvalidFolds(ConfigError):
    """Cross-validation fold count is out of range for the record set."""


# --- library contract errors ------------------------------------------------


class EmptySampleSet(SemrouteError):
    """An entropy operation received zero samples."""


class LengthMismatch(SemrouteError):
    """Probability vector length disagrees with the clustering."""


class MissingClusterProbs(SemrouteError):
    """Semantic entropy requested before cluster probabilities were attached."""


class IndexNotBuilt(SemrouteError):
    """Search was attempted before any corpus was ingested."""


class ReplayMismatch(SemrouteError):
    """A recorded trace disagrees with the replayed call sequence."""

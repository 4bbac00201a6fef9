"""Adaptive retrieval routed by semantic uncertainty.

The library samples several answers from a generator, clusters them by
bidirectional entailment, and computes semantic entropy over the clusters.
Low entropy answers the question closed-book; higher entropy triggers one
or more BM25 retrieval steps before answering again.
"""

from .config import RunConfig, load_config
from .entailment import (
    CONTRADICTS,
    ENTAILS,
    NEUTRAL,
    EntailmentGateway,
    EntailmentVerdict,
    HttpEntailment,
    MockEntailment,
)
from .entropy import (
    Clustering,
    EntropyReport,
    SemanticCluster,
    cluster_samples,
    compute_entropy_report,
    predictive_entropy,
    semantic_entropy,
)
from .errors import BackendError, ConfigError, DataError, SemrouteError
from .evaluation import (
    EvalRecord,
    EvalReport,
    accuracy,
    exact_match,
    f1_score,
    load_dataset,
    normalize_answer,
    run_eval,
)
from .generator import (
    AnswerSample,
    GenerationRequest,
    GeneratorGateway,
    HttpGenerator,
    MockGenerator,
    Question,
)
from .orchestrator import Pipeline, PipelineResult
from .retriever import BM25Index, Document, ScoredDocument, ingest_corpus
from .router import (
    CalibrationRecord,
    RetrievalDecision,
    RetrievalMode,
    Thresholds,
    calibrate,
    decide,
    entropy_accuracy_profile,
)
from .seeding import derive_seed

__version__ = "0.1.0"

__all__ = [
    "AnswerSample",
    "BackendError",
    "BM25Index",
    "CalibrationRecord",
    "Clustering",
    "ConfigError",
    "CONTRADICTS",
    "DataError",
    "decide",
    "derive_seed",
    "Document",
    "ENTAILS",
    "EntailmentGateway",
    "EntailmentVerdict",
    "EntropyReport",
    "EvalRecord",
    "EvalReport",
    "GenerationRequest",
    "GeneratorGateway",
    "HttpEntailment",
    "HttpGenerator",
    "MockEntailment",
    "MockGenerator",
    "NEUTRAL",
    "Pipeline",
    "PipelineResult",
    "Question",
    "RetrievalDecision",
    "RetrievalMode",
    "RunConfig",
    "ScoredDocument",
    "SemanticCluster",
    "SemrouteError",
    "Thresholds",
    "accuracy",
    "calibrate",
    "cluster_samples",
    "compute_entropy_report",
    "entropy_accuracy_profile",
    "exact_match",
    "f1_score",
    "ingest_corpus",
    "load_config",
    "load_dataset",
    "normalize_answer",
    "predictive_entropy",
    "run_eval",
    "semantic_entropy",
    "__version__",
]

"""Readiness scoring for document collections.

Given a natural-language question and a corpus split into named sets,
this package trains a topic model, projects documents and the question
into topic space, and scores each set on two axes: relevance (mean cosine
similarity to the question) and coherence (reciprocal of the sets'
topic-distribution disparity). A perturbation harness measures how stable
those scores are under small edits to the question.
"""

from .corpus import (
    BowDocument,
    DocumentSet,
    EmptyCorpusError,
    IngestError,
    PreprocessConfig,
    RawDocument,
    Vocabulary,
    content_tokens,
    ingest,
    partition,
    preprocess,
    preprocess_query,
    tokenize,
)
from .lda import (
    GibbsConsistencyError,
    LdaConfig,
    TopicModel,
    UnprojectableDocumentError,
    derive_seed,
    project,
    spawn_rng,
    top_words,
    train,
)
from .metrics import (
    JrParams,
    SetScore,
    coherence,
    cosine,
    disparity,
    informationally_equivalent,
    jr_divergence,
    rank_sets,
    relevance,
    renyi_entropy,
)
from .pipeline import RunConfig, config_hash, load_run_config
from .sensitivity import (
    Perturbation,
    SensitivityResult,
    ZeroPerturbationError,
    perturb_query,
    s1_quotient,
    s2_quotient,
    sensitivity_report,
)

__version__ = "0.1.0"

__all__ = [
    "BowDocument",
    "DocumentSet",
    "EmptyCorpusError",
    "IngestError",
    "PreprocessConfig",
    "RawDocument",
    "Vocabulary",
    "content_tokens",
    "ingest",
    "partition",
    "preprocess",
    "preprocess_query",
    "tokenize",
    "GibbsConsistencyError",
    "LdaConfig",
    "TopicModel",
    "UnprojectableDocumentError",
    "derive_seed",
    "project",
    "spawn_rng",
    "top_words",
    "train",
    "JrParams",
    "SetScore",
    "coherence",
    "cosine",
    "disparity",
    "informationally_equivalent",
    "jr_divergence",
    "rank_sets",
    "relevance",
    "renyi_entropy",
    "RunConfig",
    "config_hash",
    "load_run_config",
    "Perturbation",
    "SensitivityResult",
    "ZeroPerturbationError",
    "perturb_query",
    "s1_quotient",
    "s2_quotient",
    "sensitivity_report",
    "__version__",
]

"""Few-shot nested span labeling with contrastive span representations.

The package trains a span encoder (BiLSTM + biaffine span interaction
with a residual word connection) on source-domain episodes using a
pairwise circle-style contrastive objective, then labels query spans in
a target episode by cosine similarity to support spans. No classifier
head is used anywhere; labels come from nearest neighbors, class
prototypes, or token-embedding matching baselines.
"""
from __future__ import annotations

__version__ = "0.1.0"

from ._util import derive_seed
from .autograd import (
    Adam,
    DimensionError,
    GradientError,
    Tensor,
    finite_diff_grad,
    no_grad,
)
from .corpus import (
    NON_ENTITY,
    CorpusFormatError,
    Episode,
    LabelSet,
    SamplingError,
    Sentence,
    SpanAnnotation,
    SpanValidationError,
    annotation_index,
    build_support_set,
    enumerate_spans,
    load_corpus,
    parse_corpus,
    sample_episode,
    serialize_corpus,
    write_corpus,
)
from .embeddings import (
    EmbeddedSentence,
    EmbeddingCorruptionError,
    EmbeddingError,
    EmbeddingFormatError,
    EmbeddingSource,
    FileEmbeddingSource,
    MissingEmbeddingError,
    SyntheticEmbeddingSource,
    read_embedding_file,
    validate_alignment,
    write_embedding_file,
)
from .evaluation import (
    EvalReport,
    EvaluationError,
    aggregate_runs,
    dump_representations,
    format_mean_std,
    span_prf1,
)
from .model import (
    CheckpointError,
    ModelConfig,
    ModelParams,
    SpanRep,
    biaffine_scores,
    bilstm_forward,
    load_checkpoint,
    model_forward,
    save_checkpoint,
    span_vector,
    word_dependency_features,
)
from .objective import (
    LossConfig,
    PairPolicy,
    PairSet,
    build_pairs,
    circle_loss,
    cosine_similarity,
    episode_loss,
)
from .protocol import (
    Prediction,
    ProtocolError,
    TrainPlan,
    TrainResult,
    default_finetune_steps,
    finetune_support,
    nn_predict,
    nnshot_predict,
    predict_episode,
    prototype_predict,
    train_source,
)

__all__ = [
    "__version__",
    "derive_seed",
    "Adam",
    "DimensionError",
    "GradientError",
    "Tensor",
    "finite_diff_grad",
    "no_grad",
    "NON_ENTITY",
    "CorpusFormatError",
    "Episode",
    "LabelSet",
    "SamplingError",
    "Sentence",
    "SpanAnnotation",
    "SpanValidationError",
    "annotation_index",
    "build_support_set",
    "enumerate_spans",
    "load_corpus",
    "parse_corpus",
    "sample_episode",
    "serialize_corpus",
    "write_corpus",
    "EmbeddedSentence",
    "EmbeddingCorruptionError",
    "EmbeddingError",
    "EmbeddingFormatError",
    "EmbeddingSource",
    "FileEmbeddingSource",
    "MissingEmbeddingError",
    "SyntheticEmbeddingSource",
    "read_embedding_file",
    "validate_alignment",
    "write_embedding_file",
    "EvalReport",
    "EvaluationError",
    "aggregate_runs",
    "dump_representations",
    "format_mean_std",
    "span_prf1",
    "CheckpointError",
    "ModelConfig",
    "ModelParams",
    "SpanRep",
    "biaffine_scores",
    "bilstm_forward",
    "load_checkpoint",
    "model_forward",
    "save_checkpoint",
    "span_vector",
    "word_dependency_features",
    "LossConfig",
    "PairPolicy",
    "PairSet",
    "build_pairs",
    "circle_loss",
    "cosine_similarity",
    "episode_loss",
    "Prediction",
    "ProtocolError",
    "TrainPlan",
    "TrainResult",
    "default_finetune_steps",
    "finetune_support",
    "nn_predict",
    "nnshot_predict",
    "predict_episode",
    "prototype_predict",
    "train_source",
]

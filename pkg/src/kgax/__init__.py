"""kgax: a knowledge-graph attention recommender with auxiliary fusion.

Collaborative graph construction, translational KG embedding with
per-relation projections, attentive multi-layer propagation, Hadamard
auxiliary fusion, alternating BPR training, and a full-ranking evaluation
harness.  Pure numpy math with optional numba-compiled kernels (select
with the KGAX_BACKEND environment variable: auto, numba, or numpy).
"""

from .config import ModelConfig, config_from_text
from .data import CollaborativeKG, LoadedData, load_dataset, split_interactions
from .errors import (
    BadMagicError,
    ConfigError,
    DataError,
    DivergenceError,
    KgaxError,
    ModelFormatError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .evaluation import (
    EvalReport,
    PopularityModel,
    RandomScorer,
    auc,
    evaluate,
    mf_baseline_train,
    ndcg_at_k,
    recall_at_k,
)
from .fixtures import generate_synthetic, gradcheck_fixture
from .model import (
    TrainedModel,
    bpr_pair_loss,
    init_parameters,
    load_model,
    predict_score,
    recommend_topk,
    save_model,
    train,
)
from .transr import kg_pair_loss, transr_score

__version__ = "0.1.0"

__all__ = [
    "BadMagicError",
    "CollaborativeKG",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "EvalReport",
    "KgaxError",
    "LoadedData",
    "ModelConfig",
    "ModelFormatError",
    "PopularityModel",
    "RandomScorer",
    "TrainedModel",
    "TruncatedPayloadError",
    "VersionMismatchError",
    "auc",
    "bpr_pair_loss",
    "config_from_text",
    "evaluate",
    "generate_synthetic",
    "gradcheck_fixture",
    "init_parameters",
    "kg_pair_loss",
    "load_dataset",
    "load_model",
    "mf_baseline_train",
    "ndcg_at_k",
    "predict_score",
    "recall_at_k",
    "recommend_topk",
    "save_model",
    "split_interactions",
    "train",
    "transr_score",
    "__version__",
]

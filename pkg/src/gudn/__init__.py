"""gudn: guide-network training for extreme multi-label text classification.

A compact transformer encoder feeds three heads: a guide network that aligns
text and label features during training, and a ranking classifier that alone
serves predictions.  Includes a synthetic corpus generator, label clustering
with dynamic negative sampling, XMTC ranking metrics, and an experiment CLI.
"""

from .corpus import (
    CLS_ID,
    PAD_ID,
    UNK_ID,
    DataError,
    DatasetBundle,
    LabelVocabulary,
    Sample,
    TokenVocabulary,
    gen_synthetic,
    load_dir,
    load_jsonl,
    tokenize,
)
from .encoder import EncoderConfig, TransformerEncoder, concat_cls
from .gradcheck import check_gradients
from .harness import (
    ConfigError,
    DivergenceError,
    RunRecord,
    TrainConfig,
    ablate,
    evaluate_checkpoint,
    evaluate_model,
    train,
)
from .metrics import MetricsReport, evaluate, ndcg_at_k, precision_at_k, propensities, psp_at_k
from .model import (
    AblationMode,
    Batch,
    GudnModel,
    LossBreakdown,
    ModelConfig,
    class_loss,
    feature_loss,
)
from .reinforce import ReinforceMode, build_label_input, reinforce_disordered, reinforce_ordered
from .sampling import ClusterIndex, build_clusters, label_bow, select_candidates, two_stage_predict

__version__ = "0.1.0"

__all__ = [
    "AblationMode",
    "Batch",
    "CLS_ID",
    "ClusterIndex",
    "ConfigError",
    "DataError",
    "DatasetBundle",
    "DivergenceError",
    "EncoderConfig",
    "GudnModel",
    "LabelVocabulary",
    "LossBreakdown",
    "MetricsReport",
    "ModelConfig",
    "PAD_ID",
    "ReinforceMode",
    "RunRecord",
    "Sample",
    "TokenVocabulary",
    "TrainConfig",
    "TransformerEncoder",
    "UNK_ID",
    "ablate",
    "build_clusters",
    "build_label_input",
    "check_gradients",
    "class_loss",
    "concat_cls",
    "evaluate",
    "evaluate_checkpoint",
    "evaluate_model",
    "feature_loss",
    "gen_synthetic",
    "label_bow",
    "load_dir",
    "load_jsonl",
    "ndcg_at_k",
    "precision_at_k",
    "propensities",
    "psp_at_k",
    "reinforce_disordered",
    "reinforce_ordered",
    "select_candidates",
    "tokenize",
    "train",
    "two_stage_predict",
    "__version__",
]

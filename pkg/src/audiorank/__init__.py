"""Learning-to-rank for text-based audio retrieval with graded caption relevances."""

from .dual_encoder import DualEncoder, ProjectionHead, backward, head_forward, init_model, score_matrix
from .estimator import ListwiseDualEncoder, loss_config_for
from .linalg import cosine_similarity, pairwise_cosine, stable_softmax
from .metrics import (
    MetricReport,
    average_precision_at_10,
    evaluate,
    paired_t_test,
    rank_items,
    recall_at_k,
    student_t_sf,
)
from .objectives import (
    LossConfig,
    LossResult,
    degenerate_equivalence_check,
    infonce_loss,
    listnet_direction_loss,
    listnet_loss,
    predicted_distribution,
    target_distribution,
)
from .relevance import (
    RelevanceTransform,
    RelevanceTransformer,
    logistic_transform,
    minmax_transform,
    relevance_matrix,
    textual_similarity,
)
from .trainer import TrainConfig, TrainHistory, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"

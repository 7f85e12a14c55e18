"""Ranked supervised contrastive learning on a small numpy autodiff engine."""
from .autodiff import Tensor, l2_normalize, no_grad
from .data import Dataset, SyntheticSpec, generate_blobs, load_cifar10_binary, sample_batch
from .evaluation import EvalReport, PrototypeBank, knn_accuracy, linear_probe, ood_score, project_2d, roc_auroc
from .losses import (LossBreakdown, cosine_similarity, ranked_contrastive_loss, ranked_level_loss,
                     similarity_matrix, softmax_ce_loss, supcon_loss)
from .model import SGD, EncoderModel, ModelConfig, load_checkpoint, save_checkpoint
from .ranking import NEGATIVE, RankingTable, TemperatureSchedule, default_schedule, parse_ranking, rank_of

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "l2_normalize",
    "no_grad",
    "Dataset",
    "SyntheticSpec",
    "generate_blobs",
    "load_cifar10_binary",
    "sample_batch",
    "EvalReport",
    "PrototypeBank",
    "knn_accuracy",
    "linear_probe",
    "ood_score",
    "project_2d",
    "roc_auroc",
    "LossBreakdown",
    "cosine_similarity",
    "ranked_contrastive_loss",
    "ranked_level_loss",
    "similarity_matrix",
    "softmax_ce_loss",
    "supcon_loss",
    "SGD",
    "EncoderModel",
    "ModelConfig",
    "load_checkpoint",
    "save_checkpoint",
    "NEGATIVE",
    "RankingTable",
    "TemperatureSchedule",
    "default_schedule",
    "parse_ranking",
    "rank_of",
]

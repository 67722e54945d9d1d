"""Learned feature masks that separate label-stable embedding coordinates
from domain-specific ones, with a synthetic benchmark to check recovery."""

from .data import LabeledBatch
from .embio import read_emb, write_emb
from .estimator import CausalMaskClassifier
from .independence import KernelConfig, hsic_biased, permutation_null
from .mask import MaskNet, NoiseSource, compute_mask, split_features
from .metrics import MetricsReport, accuracy, average_precision, mask_recovery
from .objective import LossBreakdown, LossWeights, evaluate_objective
from .synthgen import ScmSpec, domain_shift_report, make_benchmark, sample_batch
from .trainer import ModelBundle, TrainConfig, adversary_probe, fit, predict

__all__ = [
    "CausalMaskClassifier",
    "KernelConfig",
    "LabeledBatch",
    "LossBreakdown",
    "LossWeights",
    "MaskNet",
    "MetricsReport",
    "ModelBundle",
    "NoiseSource",
    "ScmSpec",
    "TrainConfig",
    "accuracy",
    "adversary_probe",
    "average_precision",
    "compute_mask",
    "domain_shift_report",
    "evaluate_objective",
    "fit",
    "hsic_biased",
    "make_benchmark",
    "mask_recovery",
    "permutation_null",
    "predict",
    "read_emb",
    "sample_batch",
    "split_features",
    "write_emb",
]

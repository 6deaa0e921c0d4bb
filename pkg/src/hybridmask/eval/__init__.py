"""Masking-effect, attack-effect and accuracy scoring."""

from .attack import AttackConfig, AttackModel, reconstruction_error, train_attacker
from .harness import MethodEvaluation, evaluate_method, masked_views
from .metrics import ms_ssim, msssim_distance
from .scores import (
    FeatureScore,
    MethodScores,
    ScoreCard,
    attack_scores,
    combined_score,
    feature_score,
    fuse_scores,
    normalize,
    privacy_raw,
    s1_visual,
    s2_feature,
    write_report,
)

__all__ = [
    "AttackConfig", "AttackModel", "FeatureScore", "MethodEvaluation", "MethodScores",
    "ScoreCard", "attack_scores", "combined_score", "evaluate_method", "feature_score",
    "fuse_scores", "masked_views", "ms_ssim", "msssim_distance", "normalize",
    "privacy_raw", "reconstruction_error", "s1_visual", "s2_feature", "train_attacker",
    "write_report",
]

"""GPS-supervised metric learning for loop-closure retrieval and pose-graph SLAM."""
from .config import RunConfig
from .core import Pose2, RngStream, se2_compose, se2_inverse, se2_relative, wrap_angle
from .estimator import SiameseEmbedding
from .evaluate import GroundTruthRule, compare_spaces, distance_histograms, pr_curve
from .exceptions import ConfigError, DataError, GeoloopError, NumericalError
from .index import KdIndex
from .network import EmbeddingModel, TrainConfig, train
from .posegraph import NoiseSpec, PoseGraph, ate_rmse, optimize, run_slam_experiment
from .supervision import KernelParams, LabelThresholds, PairSet, label_pairs, sample_batch
from .synthworld import WorldConfig, generate_session

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "EmbeddingModel", "GeoloopError", "GroundTruthRule", "KdIndex",
    "KernelParams", "LabelThresholds", "NoiseSpec", "NumericalError", "PairSet", "Pose2",
    "PoseGraph", "RngStream", "RunConfig", "SiameseEmbedding", "TrainConfig", "WorldConfig",
    "ate_rmse", "compare_spaces", "distance_histograms", "generate_session", "label_pairs",
    "optimize", "pr_curve", "run_slam_experiment", "sample_batch", "se2_compose",
    "se2_inverse", "se2_relative", "train", "wrap_angle",
]

from .evaluation import ALL_CLASSES, ConfusionMatrix, evaluate
from .sweep import AXES, REFERENCE_VALUES, SweepPoint, SweepReport, axis_points, point_configs, run_point, sweep
from .two_stage import (
    BoostResult,
    FeatureScaler,
    TwoStageConfig,
    TwoStageModel,
    boost,
    make_trainer,
    route,
    train_two_stage,
)

__all__ = [
    "ALL_CLASSES",
    "ConfusionMatrix",
    "evaluate",
    "AXES",
    "REFERENCE_VALUES",
    "SweepPoint",
    "SweepReport",
    "axis_points",
    "point_configs",
    "run_point",
    "sweep",
    "BoostResult",
    "FeatureScaler",
    "TwoStageConfig",
    "TwoStageModel",
    "boost",
    "make_trainer",
    "route",
    "train_two_stage",
]

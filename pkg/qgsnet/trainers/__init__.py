from .base_trainer import (
    BaseTrainer,
    TrainedModel,
    TrainingProvenance,
    accuracy,
    class_labels,
    stratified_split,
)
from .ebp_trainer import EbpConfig, EbpTrainer, train_ebp
from .ga_trainer import GaConfig, GaTrainer, train_ga
from .qgs_trainer import QgsTrainer, TrainConfig, bound_slacks, build_training_system, train_qgs

TRAINERS = {
    QgsTrainer.method: QgsTrainer,
    GaTrainer.method: GaTrainer,
    EbpTrainer.method: EbpTrainer,
}

__all__ = [
    "BaseTrainer",
    "TrainedModel",
    "TrainingProvenance",
    "accuracy",
    "class_labels",
    "stratified_split",
    "EbpConfig",
    "EbpTrainer",
    "train_ebp",
    "GaConfig",
    "GaTrainer",
    "train_ga",
    "QgsTrainer",
    "TrainConfig",
    "bound_slacks",
    "build_training_system",
    "train_qgs",
    "TRAINERS",
]

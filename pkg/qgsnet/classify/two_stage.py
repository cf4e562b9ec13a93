"""Two-stage event classifier.

Stage 1 separates the directly identifiable classes from a grouped set G;
events routed to G are resolved by stage 2.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..data import FeatureLayout, FeatureVector, LabeledFeatures, ScenarioConfig, feature_digest, to_sequences
from ..exceptions import ContractViolation, DigestMismatch, MissingClass
from ..network import NetworkShape, SequenceSample, StatePolicy, predict_outputs
from ..solver import MinimaSet, QgsSettings
from ..trainers import (
    TRAINERS,
    BaseTrainer,
    EbpConfig,
    GaConfig,
    QgsTrainer,
    TrainConfig,
    TrainedModel,
)
from ..utils.persistence import SCHEMA_VERSION, digest
from ..utils.seeding import derive_seed
from .evaluation import ALL_CLASSES, ConfusionMatrix, evaluate

logger = logging.getLogger(__name__)

STAGE2_SETS = ([5, 6, 7, 8, 9], [6, 7, 8, 9])


def _classification_qgs() -> QgsSettings:
    return QgsSettings(
        abs_tol=1e-6,
        rel_tol=1e-6,
        grad_tol=1e-4,
        max_time=1e3,
        max_steps=5000,
        keep_unconverged=True,
    )


class TwoStageConfig(BaseModel):
    """Hidden sizes, class partition and trainer choice for both stages"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    stage1_hidden: int = Field(8, ge=1)
    stage2_hidden: int = Field(6, ge=1)
    stage2_classes: List[int] = Field(default_factory=lambda: [5, 6, 7, 8, 9])
    trainer: str = "qgs"
    train: TrainConfig = Field(default_factory=lambda: TrainConfig(target_minima=3))
    qgs: QgsSettings = Field(default_factory=_classification_qgs)
    ga: GaConfig = Field(default_factory=GaConfig)
    ebp: EbpConfig = Field(default_factory=EbpConfig)
    policy: StatePolicy = Field(default_factory=StatePolicy)
    seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("stage2_classes")
    @classmethod
    def _known_partition(cls, value: List[int]) -> List[int]:
        if sorted(value) not in STAGE2_SETS:
            raise ValueError(f"stage2_classes must be one of {STAGE2_SETS}")
        return sorted(value)

    @field_validator("trainer")
    @classmethod
    def _registered(cls, value: str) -> str:
        if value not in TRAINERS:
            raise ValueError(f"unknown trainer {value!r}; choose from {sorted(TRAINERS)}")
        return value

    @property
    def direct_classes(self) -> List[int]:
        return [c for c in ALL_CLASSES if c not in self.stage2_classes]

    def trainer_config(self) -> BaseModel:
        return {"qgs": self.train, "ga": self.ga, "ebp": self.ebp}[self.trainer]


def make_trainer(config: TwoStageConfig, seed: int) -> BaseTrainer:
    """Trainer named by the config, seeded for one stage"""
    trainer_config = config.trainer_config().model_copy(update={"seed": seed})
    trainer_cls = TRAINERS[config.trainer]
    if trainer_cls is QgsTrainer:
        return QgsTrainer(trainer_config, config.qgs, config.policy)
    return trainer_cls(trainer_config, config.policy)


@dataclass(frozen=True)
class FeatureScaler:
    """Per-feature standardization followed by a 1/sqrt(width) input scale"""
    mean: np.ndarray
    std: np.ndarray
    factor: float

    @classmethod
    def fit(cls, features: np.ndarray, input_width: int) -> "FeatureScaler":
        std = features.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean=features.mean(axis=0), std=std, factor=1.0 / np.sqrt(input_width))

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std * self.factor

    def to_dict(self) -> Dict[str, Any]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "factor": float(self.factor)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FeatureScaler":
        return cls(mean=np.asarray(data["mean"], dtype=float), std=np.asarray(data["std"], dtype=float),
                   factor=float(data["factor"]))


def route(
    stage1_outputs: np.ndarray,
    direct_classes: Sequence[int],
    stage2_outputs_for,
    stage2_classes: Sequence[int],
) -> np.ndarray:
    """Class ids from stage-1 outputs; rows whose argmax is G go through stage 2.

    stage2_outputs_for(rows) returns stage-2 outputs for the given row indices
    and is only called when some row lands in G. np.argmax keeps the first
    maximum, so ties go to the lowest class id with G last.
    """
    winners = np.argmax(stage1_outputs, axis=1)
    predicted = np.asarray(direct_classes, dtype=int)[np.minimum(winners, len(direct_classes) - 1)]
    grouped = np.flatnonzero(winners == len(direct_classes))
    if grouped.size:
        second = np.argmax(stage2_outputs_for(grouped), axis=1)
        predicted[grouped] = np.asarray(stage2_classes, dtype=int)[second]
    return predicted


def _samples(inputs: np.ndarray, targets: np.ndarray, ids: Sequence[str]) -> List[SequenceSample]:
    return [SequenceSample(inputs=u, target=t, id=name) for u, t, name in zip(inputs, targets, ids)]


def _one_hot(labels: np.ndarray, classes: Sequence[int]) -> np.ndarray:
    position = {c: i for i, c in enumerate(classes)}
    targets = np.zeros((labels.size, len(classes)))
    targets[np.arange(labels.size), [position[int(c)] for c in labels]] = 1.0
    return targets


@dataclass(frozen=True)
class TwoStageModel:
    stage1: TrainedModel
    stage2: TrainedModel
    direct_classes: Tuple[int, ...]
    stage2_classes: Tuple[int, ...]
    scaler: FeatureScaler
    layout: FeatureLayout
    active_pmus: Tuple[int, ...]
    reporting_rate: int
    config_digest: str = ""
    # Minima sets found by QGS for each stage; not persisted with the model
    minima: Tuple[Optional[MinimaSet], Optional[MinimaSet]] = field(default=(None, None), compare=False, repr=False)

    def __post_init__(self):
        if self.stage1.shape.q != len(self.direct_classes) + 1:
            raise ContractViolation(f"stage 1 has {self.stage1.shape.q} outputs for {len(self.direct_classes)} classes + G")
        if self.stage2.shape.q != len(self.stage2_classes):
            raise ContractViolation(f"stage 2 has {self.stage2.shape.q} outputs for {len(self.stage2_classes)} classes")
        if self.stage1.shape.n != self.stage2.shape.n:
            raise ContractViolation("both stages must read the same inputs")

    @property
    def feature_digest(self) -> str:
        return feature_digest(self.layout, self.active_pmus, self.reporting_rate)

    def inputs(self, features: np.ndarray) -> np.ndarray:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        return to_sequences(self.scaler.transform(features), self.layout, len(self.active_pmus))

    def _outputs(self, stage: TrainedModel, inputs: np.ndarray) -> np.ndarray:
        dummy = np.zeros((len(inputs), stage.shape.q))
        return predict_outputs(stage.parameters, _samples(inputs, dummy, [""] * len(inputs)), stage.policy)

    def predict_many(self, features: np.ndarray) -> np.ndarray:
        inputs = self.inputs(features)
        if len(inputs) == 0:
            return np.zeros(0, dtype=int)
        return route(
            self._outputs(self.stage1, inputs),
            self.direct_classes,
            lambda rows: self._outputs(self.stage2, inputs[rows]),
            self.stage2_classes,
        )

    def predict(self, vector: FeatureVector) -> int:
        if vector.digest is None:
            raise ContractViolation("feature vector carries no reporting rate")
        if vector.digest != self.feature_digest or tuple(vector.pmus) != tuple(self.active_pmus):
            raise ContractViolation(
                f"feature vector (pmus {list(vector.pmus)}, {vector.reporting_rate} Hz) differs from the "
                f"features the model was trained on (pmus {list(self.active_pmus)}, {self.reporting_rate} Hz)"
            )
        return int(self.predict_many(vector.values[None, :])[0])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "feature_digest": self.feature_digest,
            "config_digest": self.config_digest,
            "layout": self.layout.model_dump(mode="json"),
            "active_pmus": list(self.active_pmus),
            "reporting_rate": self.reporting_rate,
            "direct_classes": list(self.direct_classes),
            "stage2_classes": list(self.stage2_classes),
            "scaler": self.scaler.to_dict(),
            "stage1": self.stage1.to_dict(self.feature_digest),
            "stage2": self.stage2.to_dict(self.feature_digest),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TwoStageModel":
        model = cls(
            stage1=TrainedModel.from_dict(data["stage1"]),
            stage2=TrainedModel.from_dict(data["stage2"]),
            direct_classes=tuple(data["direct_classes"]),
            stage2_classes=tuple(data["stage2_classes"]),
            scaler=FeatureScaler.from_dict(data["scaler"]),
            layout=FeatureLayout.model_validate(data["layout"]),
            active_pmus=tuple(data["active_pmus"]),
            reporting_rate=int(data["reporting_rate"]),
            config_digest=data.get("config_digest", ""),
        )
        if model.feature_digest != data.get("feature_digest"):
            raise DigestMismatch("stored feature digest does not match the stored layout")
        return model


def train_two_stage(
    train: LabeledFeatures,
    scenario: ScenarioConfig,
    config: TwoStageConfig,
    initial: Optional[TwoStageModel] = None,
) -> TwoStageModel:
    """Train stage 1 on all classes with the grouped set relabeled G, then stage 2 on the group"""
    present = set(train.classes)
    missing_direct = set(config.direct_classes) - present
    if missing_direct:
        raise MissingClass(sorted(missing_direct), stage="stage 1")
    missing_group = set(config.stage2_classes) - present
    if missing_group:
        raise MissingClass(sorted(missing_group), stage="stage 2")

    layout = scenario.layout
    n_pmus = len(scenario.active_pmus)
    input_width = n_pmus * layout.step_width if layout.sequence_mode == "sequence" else layout.length(n_pmus)
    scaler = FeatureScaler.fit(train.features, input_width)
    inputs = to_sequences(scaler.transform(train.features), layout, n_pmus)

    if initial is not None:
        expected = feature_digest(layout, scenario.active_pmus, scenario.reporting_rate)
        if initial.feature_digest != expected:
            raise DigestMismatch("resume model was trained on a different feature layout")

    # Stage 1: direct classes plus G as the last output
    stage1_labels = np.where(np.isin(train.labels, config.stage2_classes), 0, train.labels)
    stage1_outputs = [*config.direct_classes, 0]
    shape1 = NetworkShape(n=inputs.shape[2], hidden_m=config.stage1_hidden, q=len(stage1_outputs))
    logger.info(f"Training stage 1 ({config.trainer}) on {len(train)} events, shape {shape1.n}/{shape1.hidden_m}/{shape1.q}")
    trainer1 = make_trainer(config, derive_seed(config.seed, "stage1"))
    stage1 = trainer1.fit(
        _samples(inputs, _one_hot(stage1_labels, stage1_outputs), train.ids),
        shape1,
        initial.stage1.parameters if initial is not None else None,
    )

    # Stage 2: only the grouped classes
    grouped = np.isin(train.labels, config.stage2_classes)
    shape2 = NetworkShape(n=inputs.shape[2], hidden_m=config.stage2_hidden, q=len(config.stage2_classes))
    logger.info(f"Training stage 2 ({config.trainer}) on {int(grouped.sum())} events, shape {shape2.n}/{shape2.hidden_m}/{shape2.q}")
    trainer2 = make_trainer(config, derive_seed(config.seed, "stage2"))
    stage2 = trainer2.fit(
        _samples(inputs[grouped], _one_hot(train.labels[grouped], config.stage2_classes),
                 [name for name, keep in zip(train.ids, grouped) if keep]),
        shape2,
        initial.stage2.parameters if initial is not None else None,
    )

    return TwoStageModel(
        stage1=stage1,
        stage2=stage2,
        direct_classes=tuple(config.direct_classes),
        stage2_classes=tuple(config.stage2_classes),
        scaler=scaler,
        layout=layout,
        active_pmus=tuple(scenario.active_pmus),
        reporting_rate=scenario.reporting_rate,
        config_digest=digest(config.model_dump(mode="json")),
        minima=(getattr(trainer1, "minima", None), getattr(trainer2, "minima", None)),
    )


@dataclass(frozen=True)
class BoostResult:
    model: TwoStageModel
    train_sizes: Tuple[int, ...]
    misclassified: Tuple[int, ...]
    final_accuracy: float
    confusion: ConfusionMatrix

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "train_sizes": list(self.train_sizes),
            "misclassified": list(self.misclassified),
            "final_accuracy": self.final_accuracy,
            "confusion": self.confusion.to_dict(),
            "model_config_digest": self.model.config_digest,
        }


def boost(
    model: TwoStageModel,
    train: LabeledFeatures,
    batches: Sequence[LabeledFeatures],
    scenario: ScenarioConfig,
    config: TwoStageConfig,
    rounds: int = 3,
) -> BoostResult:
    """Feed misclassified events back into training for a number of rounds.

    Round r evaluates on batches[r]; batches[rounds] is held out for the
    final score and never touches training.
    """
    if rounds < 1:
        raise ContractViolation(f"boosting needs at least one round, got {rounds}")
    if len(batches) < rounds + 1:
        raise ContractViolation(f"boosting {rounds} rounds needs {rounds + 1} evaluation batches, got {len(batches)}")

    sizes = [len(train)]
    misclassified = []
    for r in range(rounds):
        batch = batches[r]
        wrong = model.predict_many(batch.features) != batch.labels if len(batch) else np.zeros(0, dtype=bool)
        misclassified.append(int(wrong.sum()))
        logger.info(f"boosting round {r + 1}: {misclassified[-1]} of {len(batch)} events misclassified")
        if wrong.any():
            train = train.concat(batch.subset(wrong))
            model = train_two_stage(train, scenario, config)
        sizes.append(len(train))

    final_accuracy, confusion = evaluate(model, batches[rounds])
    return BoostResult(
        model=model,
        train_sizes=tuple(sizes),
        misclassified=tuple(misclassified),
        final_accuracy=final_accuracy,
        confusion=confusion,
    )

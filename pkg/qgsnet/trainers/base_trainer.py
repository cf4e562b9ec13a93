import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..exceptions import ContractViolation, DegenerateSplit
from ..network import (
    NetworkShape,
    Parameters,
    SequenceSample,
    StatePolicy,
    as_batch,
    parameters_from_dict,
    parameters_to_dict,
    predict_outputs,
)

logger = logging.getLogger(__name__)


class TrainingProvenance(BaseModel):
    """Where a trained network came from"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    method: str
    config_digest: str
    seed: int
    minima_count: int = 0
    bound: float
    # False when the selected point is a budget-exhausted endpoint, not an equilibrium
    converged: bool = True


@dataclass(frozen=True)
class TrainedModel:
    """Parameters selected by a trainer plus their provenance"""
    parameters: Parameters
    shape: NetworkShape
    selected_minimum_cost: float
    validation_accuracy: float
    provenance: TrainingProvenance
    policy: StatePolicy = field(default_factory=StatePolicy)

    def __post_init__(self):
        if not 0.0 <= self.validation_accuracy <= 1.0:
            raise ContractViolation(f"validation accuracy {self.validation_accuracy} outside [0, 1]")

    def outputs(self, samples: Sequence[SequenceSample]) -> np.ndarray:
        return predict_outputs(self.parameters, samples, self.policy)

    def to_dict(self, feature_config_digest: Optional[str] = None) -> Dict[str, Any]:
        data = parameters_to_dict(self.parameters, self.policy, feature_config_digest)
        data["training"] = {
            **self.provenance.model_dump(mode="json"),
            "validation_accuracy": float(self.validation_accuracy),
            "selected_minimum_cost": float(self.selected_minimum_cost),
        }
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TrainedModel":
        params, policy = parameters_from_dict(data)
        training = dict(data["training"])
        validation_accuracy = training.pop("validation_accuracy")
        selected_cost = training.pop("selected_minimum_cost")
        return cls(
            parameters=params,
            shape=params.shape,
            selected_minimum_cost=float(selected_cost),
            validation_accuracy=float(validation_accuracy),
            provenance=TrainingProvenance.model_validate(training),
            policy=policy,
        )


def class_labels(samples: Sequence[SequenceSample]) -> np.ndarray:
    """Class index of each sample from its one-hot target"""
    return np.asarray([int(np.argmax(sample.target)) for sample in samples], dtype=int)


def accuracy(params: Parameters, samples: Sequence[SequenceSample], policy: StatePolicy) -> float:
    """Share of samples whose output argmax matches the target argmax"""
    if len(samples) == 0:
        return 0.0
    batch = as_batch(samples)
    predicted = np.argmax(predict_outputs(params, batch, policy), axis=1)
    return float(np.mean(predicted == np.argmax(batch.targets, axis=1)))


def stratified_split(
    samples: Sequence[SequenceSample], fraction: float, rng: np.random.Generator
) -> Tuple[List[SequenceSample], List[SequenceSample]]:
    """Hold out round(fraction * count) samples of every class"""
    labels = class_labels(samples)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ContractViolation("training data must represent at least two classes")

    held_out = np.zeros(len(samples), dtype=bool)
    for label in classes:
        members = np.flatnonzero(labels == label)
        count = int(round(fraction * members.size))
        if count >= members.size:
            count = members.size - 1
        held_out[rng.permutation(members)[:count]] = True

    train = [s for s, out in zip(samples, held_out) if not out]
    validation = [s for s, out in zip(samples, held_out) if out]
    if validation:
        missing = set(classes) - set(labels[held_out])
        if missing:
            raise DegenerateSplit(f"validation split lacks classes {sorted(int(c) for c in missing)}")
    return train, validation


class BaseTrainer(ABC):
    method = "base"

    def __init__(self, config: BaseModel, policy: Optional[StatePolicy] = None):
        self.config = config
        self.policy = policy or StatePolicy()

    def split(self, samples: Sequence[SequenceSample], rng: np.random.Generator):
        """Training part and the samples used to score candidates"""
        train, validation = stratified_split(samples, self.config.validation_fraction, rng)
        if not validation:
            logger.warning(
                f"validation split is empty for {len(samples)} samples; selecting on training data"
            )
            return train, train
        return train, validation

    def clip(self, theta: np.ndarray, quiet: bool = False) -> np.ndarray:
        """Project a parameter vector onto the box [-B, B]"""
        bound = self.config.bound
        clipped = np.clip(theta, -bound, bound)
        if not quiet and np.any(clipped != theta):
            logger.warning(f"{self.method}: clipped {int(np.sum(clipped != theta))} parameters to +/-{bound}")
        return clipped

    def initial_vector(self, shape: NetworkShape, rng: np.random.Generator) -> np.ndarray:
        """Zero-mean normal initializer with standard deviation init_sigma"""
        return rng.normal(0.0, self.config.init_sigma, shape.n_params)

    @abstractmethod
    def fit(
        self,
        samples: Sequence[SequenceSample],
        shape: NetworkShape,
        initial: Optional[Parameters] = None,
    ) -> TrainedModel:
        """Train a network of the given shape on the samples"""
        pass

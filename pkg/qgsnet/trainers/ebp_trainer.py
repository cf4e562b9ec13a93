import logging
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..exceptions import Diverged
from ..network import (
    NetworkShape,
    Parameters,
    SequenceSample,
    StatePolicy,
    as_batch,
    flatten,
    residual_gradient,
    residuals,
    unflatten,
)
from ..utils.persistence import digest
from ..utils.seeding import make_rng
from .base_trainer import BaseTrainer, TrainedModel, TrainingProvenance, accuracy

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e6


class EbpConfig(BaseModel):
    """Batch gradient descent with momentum"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(0.01, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    epochs: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    bound: float = Field(10.0, gt=0)
    validation_fraction: float = Field(0.2, gt=0, lt=1)
    init_sigma: float = Field(0.5, gt=0)
    # Average the gradient over samples instead of summing it
    normalize: bool = True


class EbpTrainer(BaseTrainer):
    method = "ebp"

    def __init__(self, config: EbpConfig, policy: Optional[StatePolicy] = None):
        super().__init__(config, policy)
        self.history: List[float] = []

    def fit(
        self,
        samples: Sequence[SequenceSample],
        shape: NetworkShape,
        initial: Optional[Parameters] = None,
    ) -> TrainedModel:
        config = self.config
        rng = make_rng(config.seed, 0)
        train, selection_set = self.split(samples, rng)
        batch = as_batch(train)
        scale = 1.0 / batch.size if config.normalize else 1.0

        theta = flatten(initial) if initial is not None else self.initial_vector(shape, rng)
        theta = self.clip(theta)
        velocity = np.zeros_like(theta)
        self.history = []
        initial_sse = None

        for epoch in range(config.epochs):
            params = unflatten(theta, shape)
            r = residuals(params, batch, self.policy)
            current = float(r @ r)
            if initial_sse is None:
                initial_sse = current
            elif initial_sse > 0.0 and current > DIVERGENCE_FACTOR * initial_sse:
                raise Diverged(f"sse {current:.6g} at epoch {epoch} exceeds {DIVERGENCE_FACTOR:g}x its initial value")
            self.history.append(current)

            grad = scale * residual_gradient(params, batch, self.policy, weights=r)
            velocity = config.momentum * velocity - config.learning_rate * grad
            theta = self.clip(theta + velocity, quiet=True)

        params = unflatten(theta, shape)
        final_sse = float(np.sum(residuals(params, batch, self.policy) ** 2))
        self.history.append(final_sse)
        score = accuracy(params, selection_set, self.policy)
        logger.info(f"EBP finished {config.epochs} epochs: sse {final_sse:.6g}, selection accuracy {score:.4f}")

        return TrainedModel(
            parameters=params,
            shape=shape,
            selected_minimum_cost=0.5 * final_sse,
            validation_accuracy=score,
            provenance=TrainingProvenance(
                method=self.method,
                config_digest=digest(config.model_dump(mode="json")),
                seed=config.seed,
                bound=config.bound,
            ),
            policy=self.policy,
        )


def train_ebp(
    samples: Sequence[SequenceSample],
    shape: NetworkShape,
    config: EbpConfig,
    policy: Optional[StatePolicy] = None,
    initial: Optional[Parameters] = None,
) -> TrainedModel:
    """Train by classical error backpropagation"""
    return EbpTrainer(config, policy).fit(samples, shape, initial)

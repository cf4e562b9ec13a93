import logging
import math
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..network import (
    NetworkShape,
    Parameters,
    SequenceSample,
    StatePolicy,
    as_batch,
    flatten,
    residual_gradient,
    residual_jacobian,
    residuals,
    unflatten,
)
from ..exceptions import ContractViolation
from ..solver import ConstraintSystem, MinimaSet, QgsSettings, ResidualMap, add_slack, enumerate_minima
from ..utils.persistence import digest
from ..utils.seeding import make_rng
from .base_trainer import BaseTrainer, TrainedModel, TrainingProvenance, accuracy

logger = logging.getLogger(__name__)


class TrainConfig(BaseModel):
    """QGS training settings"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    init_sigma: float = Field(0.5, gt=0)
    bound: float = Field(10.0, gt=0)
    target_minima: int = Field(15, ge=1)
    validation_fraction: float = Field(0.2, gt=0, lt=1)
    seed: int = Field(0, ge=0, lt=2**64)
    normalize_residuals: bool = True
    # Bounds as x_i / B - 1 < 0 (slacks near 1) rather than x_i - B < 0 (slacks near sqrt(B))
    normalize_bounds: bool = True
    selection: Literal["validation", "cost"] = "validation"

    @property
    def bound_divisor(self) -> float:
        return self.bound if self.normalize_bounds else 1.0


def _bound_map(n_params: int, bound: float, divisor: float) -> ResidualMap:
    """Inequalities (x_i - B) / d < 0 followed by (-x_i - B) / d < 0"""
    return ResidualMap(
        dim_in=n_params,
        dim_out=2 * n_params,
        evaluate=lambda theta: np.concatenate([theta - bound, -theta - bound]) / divisor,
        jacobian=lambda theta: np.vstack([np.eye(n_params), -np.eye(n_params)]) / divisor,
        vjp=lambda theta, r: (r[:n_params] - r[n_params:]) / divisor,
    )


def bound_slacks(theta: np.ndarray, config: TrainConfig) -> np.ndarray:
    """Slacks that zero every bound row at theta: sqrt((B - x_i) / d), then sqrt((B + x_i) / d)"""
    gaps = np.concatenate([config.bound - theta, config.bound + theta]) / config.bound_divisor
    return np.sqrt(np.maximum(gaps, 0.0))


def build_training_system(
    shape: NetworkShape,
    samples: Sequence[SequenceSample],
    policy: StatePolicy,
    config: TrainConfig,
) -> ConstraintSystem:
    """Network residuals as equalities plus slack-converted parameter bounds"""
    batch = as_batch(samples)
    if batch.size == 0:
        raise ContractViolation("cannot build a training system without samples")
    scale = 1.0 / math.sqrt(batch.size) if config.normalize_residuals else 1.0

    network_map = ResidualMap(
        dim_in=shape.n_params,
        dim_out=shape.q * batch.size,
        evaluate=lambda theta: scale * residuals(unflatten(theta, shape), batch, policy),
        jacobian=lambda theta: scale * residual_jacobian(unflatten(theta, shape), batch, policy),
        vjp=lambda theta, r: scale * residual_gradient(unflatten(theta, shape), batch, policy, weights=r),
    )
    return add_slack(_bound_map(shape.n_params, config.bound, config.bound_divisor), network_map)


class QgsTrainer(BaseTrainer):
    method = "qgs"

    def __init__(
        self,
        config: TrainConfig,
        settings: Optional[QgsSettings] = None,
        policy: Optional[StatePolicy] = None,
    ):
        super().__init__(config, policy)
        self.settings = settings or QgsSettings()
        self.minima: Optional[MinimaSet] = None

    def fit(
        self,
        samples: Sequence[SequenceSample],
        shape: NetworkShape,
        initial: Optional[Parameters] = None,
    ) -> TrainedModel:
        config = self.config
        n_params = shape.n_params
        rng = make_rng(config.seed, 0)
        train, selection_set = self.split(samples, rng)

        system = build_training_system(shape, train, self.policy, config)
        settings = self.settings.model_copy(update={"target_minima": config.target_minima, "seed": config.seed})
        theta0 = flatten(initial) if initial is not None else self.initial_vector(shape, rng)
        x0 = np.concatenate([theta0, bound_slacks(theta0, config)])

        def restart(restart_rng: np.random.Generator) -> np.ndarray:
            theta = self.initial_vector(shape, restart_rng)
            return np.concatenate([theta, bound_slacks(theta, config)])

        logger.info(
            f"QGS training shape (n={shape.n}, m={shape.hidden_m}, q={shape.q}) on {len(train)} samples, "
            f"dim_x={system.dim_x}, dim_h={system.dim_h}"
        )
        self.minima = enumerate_minima(system, x0, settings, restart)

        # Score every minimum and keep the best by the configured rule
        if not self.minima.converged:
            logger.warning("no equilibrium reached; selecting among unconverged endpoints")
        scored = []
        for item in self.minima.selectable:
            params = unflatten(self.clip(item.point[:n_params], quiet=True), shape)
            score = accuracy(params, selection_set, self.policy)
            scored.append((score, item))
            logger.info(f"minimum #{item.index}: cost {item.cost:.6g}, selection accuracy {score:.4f}")

        if config.selection == "validation":
            score, chosen = min(scored, key=lambda pair: (-pair[0], pair[1].cost, pair[1].index))
        else:
            score, chosen = min(scored, key=lambda pair: (pair[1].cost, pair[1].index))

        return TrainedModel(
            parameters=unflatten(self.clip(chosen.point[:n_params]), shape),
            shape=shape,
            selected_minimum_cost=chosen.cost,
            validation_accuracy=score,
            provenance=TrainingProvenance(
                method=self.method,
                config_digest=digest({"train": config.model_dump(mode="json"), "qgs": settings.model_dump(mode="json")}),
                seed=config.seed,
                minima_count=len(self.minima),
                bound=config.bound,
                converged=self.minima.converged,
            ),
            policy=self.policy,
        )


def train_qgs(
    samples: Sequence[SequenceSample],
    shape: NetworkShape,
    config: TrainConfig,
    settings: QgsSettings,
    policy: Optional[StatePolicy] = None,
    initial: Optional[Parameters] = None,
) -> Tuple[TrainedModel, MinimaSet]:
    """Train by QGS minima enumeration and keep the best-generalizing minimum"""
    trainer = QgsTrainer(config, settings, policy)
    model = trainer.fit(samples, shape, initial)
    return model, trainer.minima

import logging
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..exceptions import ContractViolation
from ..network import (
    NetworkShape,
    Parameters,
    SequenceSample,
    StatePolicy,
    as_batch,
    flatten,
    sse,
    unflatten,
)
from ..utils.persistence import digest
from ..utils.seeding import make_rng
from .base_trainer import BaseTrainer, TrainedModel, TrainingProvenance, accuracy

logger = logging.getLogger(__name__)


class GaConfig(BaseModel):
    """Real-valued genetic algorithm settings.

    The reference experiments evolved 10000 individuals; 200 keeps a run at
    desk scale.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    population_size: int = Field(200, ge=4)
    generations: int = Field(100, ge=1)
    elite_count: int = Field(2, ge=0)
    crossover_fraction: float = Field(0.8, ge=0, le=1)
    # Initial standard deviation of Gaussian mutation, shrinking linearly to zero
    mutation_scale: float = Field(0.5, ge=0)
    init_sigma: float = Field(0.5, gt=0)
    bound: float = Field(10.0, gt=0)
    validation_fraction: float = Field(0.2, gt=0, lt=1)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _elites_fit(self) -> "GaConfig":
        if self.elite_count >= self.population_size:
            raise ValueError("elite_count must be smaller than population_size")
        return self


def rank_scaled_probabilities(errors: np.ndarray) -> np.ndarray:
    """Roulette weights proportional to 1/sqrt(rank), rank 1 = lowest error"""
    order = np.argsort(errors, kind="stable")
    scaled = np.empty(errors.size)
    scaled[order] = 1.0 / np.sqrt(np.arange(1, errors.size + 1))
    return scaled / scaled.sum()


def roulette(probabilities: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Spin the wheel count times"""
    cumulative = np.cumsum(probabilities)
    picks = np.searchsorted(cumulative, rng.random(count) * cumulative[-1], side="right")
    return np.minimum(picks, probabilities.size - 1)


def mutation_schedule(scale: float, generation: int, generations: int) -> float:
    """Linearly shrink the mutation scale to zero over the run"""
    return scale * (1.0 - generation / generations)


class GaTrainer(BaseTrainer):
    method = "ga"

    def __init__(self, config: GaConfig, policy: Optional[StatePolicy] = None):
        super().__init__(config, policy)
        self.history: List[float] = []

    def fit(
        self,
        samples: Sequence[SequenceSample],
        shape: NetworkShape,
        initial: Optional[Parameters] = None,
        initial_population: Optional[np.ndarray] = None,
    ) -> TrainedModel:
        config = self.config
        rng = make_rng(config.seed, 0)
        train, selection_set = self.split(samples, rng)
        batch = as_batch(train)
        size = config.population_size

        if initial_population is not None:
            population = np.array(initial_population, dtype=float)
            if population.shape != (size, shape.n_params):
                raise ContractViolation(
                    f"initial population has shape {population.shape}, expected ({size}, {shape.n_params})"
                )
        else:
            population = rng.normal(0.0, config.init_sigma, (size, shape.n_params))
        if initial is not None:
            population[0] = flatten(initial)
        population = self.clip(population, quiet=True)

        def evaluate(individuals: np.ndarray) -> np.ndarray:
            return np.array([sse(unflatten(x, shape), batch, self.policy) for x in individuals])

        errors = evaluate(population)
        self.history = []
        n_children = size - config.elite_count
        n_crossover = int(round(config.crossover_fraction * n_children))
        n_mutation = n_children - n_crossover

        for generation in range(config.generations):
            order = np.argsort(errors, kind="stable")
            self.history.append(float(errors[order[0]]))
            elites = population[order[: config.elite_count]]
            elite_errors = errors[order[: config.elite_count]]

            # Scattered crossover: each gene from either parent with equal odds
            probabilities = rank_scaled_probabilities(errors)
            parents = roulette(probabilities, 2 * n_crossover + n_mutation, rng)
            first = population[parents[:n_crossover]]
            second = population[parents[n_crossover: 2 * n_crossover]]
            mask = rng.random(first.shape) < 0.5
            crossed = np.where(mask, first, second)

            scale = mutation_schedule(config.mutation_scale, generation, config.generations)
            mutated = population[parents[2 * n_crossover:]]
            mutated = mutated + scale * rng.standard_normal(mutated.shape)

            children = self.clip(np.vstack([crossed, mutated]), quiet=True)
            population = np.vstack([elites, children])
            errors = np.concatenate([elite_errors, evaluate(children)])
            logger.debug(f"generation {generation}: best sse {self.history[-1]:.6g}")

        self.history.append(float(errors.min()))

        # Final pick by selection accuracy, then training error, then position
        scores = [accuracy(unflatten(x, shape), selection_set, self.policy) for x in population]
        best = min(range(size), key=lambda i: (-scores[i], errors[i], i))
        logger.info(
            f"GA finished {config.generations} generations: best sse {self.history[-1]:.6g}, "
            f"selected sse {errors[best]:.6g}, selection accuracy {scores[best]:.4f}"
        )

        return TrainedModel(
            parameters=unflatten(population[best], shape),
            shape=shape,
            selected_minimum_cost=0.5 * float(errors[best]),
            validation_accuracy=scores[best],
            provenance=TrainingProvenance(
                method=self.method,
                config_digest=digest(config.model_dump(mode="json")),
                seed=config.seed,
                bound=config.bound,
            ),
            policy=self.policy,
        )


def train_ga(
    samples: Sequence[SequenceSample],
    shape: NetworkShape,
    config: GaConfig,
    policy: Optional[StatePolicy] = None,
    initial: Optional[Parameters] = None,
) -> TrainedModel:
    """Train by a genetic algorithm over flattened parameter vectors"""
    return GaTrainer(config, policy).fit(samples, shape, initial)

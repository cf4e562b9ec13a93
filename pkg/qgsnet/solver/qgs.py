"""Quotient gradient system: equilibria, escapes and minima enumeration.

Forward integration of ``dx/dt = -grad f(x)`` settles into a stable
equilibrium (a local minimum of f). Integrating the reversed field from a
perturbed equilibrium climbs out of its stability region; the endpoints seed
new forward runs, so repeating both directions visits several minima.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field as dataclass_field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..exceptions import (
    ContractViolation,
    EvaluationError,
    NoConvergence,
    NoMinimaFound,
    NumericalBlowup,
)
from ..utils.persistence import SCHEMA_VERSION
from ..utils.seeding import make_rng
from .constraints import ConstraintSystem, central_difference, cost
from .integrator import Step, dormand_prince

logger = logging.getLogger(__name__)

STABLE = "stable"
UNSTABLE = "unstable"
UNDETERMINED = "undetermined"
# Endpoint of a trajectory that ran out of budget; never an equilibrium
UNCONVERGED = "unconverged"

RestartSampler = Callable[[np.random.Generator], np.ndarray]
StepObserver = Callable[[Step], None]


class QgsSettings(BaseModel):
    """Integration, escape and enumeration settings"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    abs_tol: float = Field(1e-8, gt=0)
    rel_tol: float = Field(1e-8, gt=0)
    grad_tol: float = Field(1e-8, gt=0)
    max_time: float = Field(1e4, gt=0)
    target_minima: int = Field(1, ge=1)
    # None means 10 * target_minima
    max_attempts: Optional[int] = Field(None, ge=1)
    escape_eps: float = Field(0.5, ge=0)
    backward_horizon: float = Field(5.0, gt=0)
    # None means 1e-4 * sqrt(dim_x)
    dedup_dist: Optional[float] = Field(None, gt=0)
    seed: int = Field(0, ge=0, lt=2**64)
    max_steps: int = Field(100_000, ge=1)
    escape_directions: int = Field(4, ge=0)
    escape_radius: float = Field(2.0, gt=0)
    stability_max_dim: int = Field(400, ge=0)
    power_iterations: int = Field(50, ge=1)
    # Keep endpoints of trajectories that run out of budget as candidates
    keep_unconverged: bool = False

    @property
    def attempts_limit(self) -> int:
        return self.max_attempts if self.max_attempts is not None else 10 * self.target_minima

    def dedup_distance(self, dim_x: int) -> float:
        if self.dedup_dist is not None:
            return self.dedup_dist
        return 1e-4 * math.sqrt(dim_x)


@dataclass(frozen=True)
class Equilibrium:
    """A converged point of the forward flow"""
    point: np.ndarray
    cost: float
    grad_norm: float
    stability: str
    leading_eigenvalue: Optional[float] = None
    index: int = 0
    # Eigenvector of the leading eigenvalue, when a full Jacobian was formed
    leading_vector: Optional[np.ndarray] = dataclass_field(default=None, compare=False, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": [float(v) for v in self.point],
            "cost": float(self.cost),
            "grad_norm": float(self.grad_norm),
            "stability": {
                "tag": self.stability,
                "leading_eigenvalue": None if self.leading_eigenvalue is None else float(self.leading_eigenvalue),
            },
            "index": self.index,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Equilibrium":
        stability = data["stability"]
        return cls(
            point=np.asarray(data["point"], dtype=float),
            cost=float(data["cost"]),
            grad_norm=float(data["grad_norm"]),
            stability=stability["tag"],
            leading_eigenvalue=stability.get("leading_eigenvalue"),
            index=int(data.get("index", 0)),
        )


@dataclass(frozen=True)
class MinimaSet:
    """Distinct equilibria sorted by ascending cost.

    Only points whose gradient norm dropped below grad_tol are items.
    Budget-exhausted endpoints, kept when keep_unconverged is set, live in
    candidates and are tagged unconverged.
    """
    items: Tuple[Equilibrium, ...]
    attempts_used: int
    settings: QgsSettings
    candidates: Tuple[Equilibrium, ...] = ()

    def __post_init__(self):
        if not self.items and not self.candidates:
            raise ContractViolation("a minima set needs at least one equilibrium or candidate")

    @property
    def converged(self) -> bool:
        return bool(self.items)

    @property
    def best(self) -> Equilibrium:
        return self.items[0] if self.items else self.candidates[0]

    @property
    def selectable(self) -> Tuple[Equilibrium, ...]:
        """Equilibria when any were reached, otherwise the unconverged candidates"""
        return self.items if self.items else self.candidates

    def __len__(self) -> int:
        return len(self.items)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "settings": self.settings.model_dump(mode="json"),
            "items": [item.to_dict() for item in self.items],
            "candidates": [item.to_dict() for item in self.candidates],
            "attempts_used": self.attempts_used,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MinimaSet":
        return cls(
            items=tuple(Equilibrium.from_dict(item) for item in data["items"]),
            candidates=tuple(Equilibrium.from_dict(item) for item in data.get("candidates", [])),
            attempts_used=int(data["attempts_used"]),
            settings=QgsSettings.model_validate(data["settings"]),
        )


def _finite_start(sys: ConstraintSystem, x0: np.ndarray) -> np.ndarray:
    x0 = np.array(x0, dtype=float)
    if x0.shape != (sys.dim_x,):
        raise ContractViolation(f"start point has shape {x0.shape}, expected ({sys.dim_x},)")
    if not np.all(np.isfinite(x0)):
        raise ContractViolation("start point must be finite")
    return x0


def _flow(sys: ConstraintSystem, sign: float) -> Callable[[np.ndarray], np.ndarray]:
    def flow(x: np.ndarray) -> np.ndarray:
        try:
            return sign * sys.gradient(x)
        except EvaluationError as e:
            raise NumericalBlowup(str(e)) from e
    return flow


def _power_iteration(matvec: Callable[[np.ndarray], np.ndarray], v: np.ndarray, iterations: int) -> Tuple[float, bool]:
    """Dominant eigenvalue by power iteration; returns (estimate, converged)"""
    estimate = 0.0
    for _ in range(iterations):
        w = matvec(v)
        new_estimate = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, True
        v = w / norm
        if abs(new_estimate - estimate) <= 1e-6 * max(1.0, abs(new_estimate)):
            return new_estimate, True
        estimate = new_estimate
    return estimate, False


def classify_stability(
    sys: ConstraintSystem, x: np.ndarray, settings: QgsSettings
) -> Tuple[str, Optional[float], Optional[np.ndarray]]:
    """Tag an equilibrium by the largest eigenvalue of the field Jacobian"""
    flow = _flow(sys, -1.0)
    if sys.dim_x <= settings.stability_max_dim:
        jac = central_difference(flow, x)
        eigenvalues, eigenvectors = np.linalg.eigh(0.5 * (jac + jac.T))
        leading = float(eigenvalues[-1])
        band = max(settings.grad_tol, 1e-6 * max(1.0, float(np.abs(eigenvalues).max())))
        vector = eigenvectors[:, -1]
        converged = True
    else:
        # Matrix-free estimate from directional differences of the field
        eps = 1e-6 * max(1.0, float(np.linalg.norm(x)))

        def matvec(v: np.ndarray) -> np.ndarray:
            return (flow(x + eps * v) - flow(x - eps * v)) / (2.0 * eps)

        rng = make_rng(settings.seed, sys.dim_x, 1)
        start = rng.standard_normal(sys.dim_x)
        start /= np.linalg.norm(start)
        dominant, converged = _power_iteration(matvec, start, settings.power_iterations)
        if dominant >= 0.0:
            leading = dominant
        else:
            shifted, shifted_converged = _power_iteration(
                lambda v: matvec(v) - dominant * v, start, settings.power_iterations
            )
            leading = shifted + dominant
            converged = converged and shifted_converged
        band = max(settings.grad_tol, 1e-6 * max(1.0, abs(dominant)))
        vector = None

    if not converged:
        return UNDETERMINED, leading, vector
    if leading < -band:
        return STABLE, leading, vector
    if leading > band:
        return UNSTABLE, leading, vector
    return UNDETERMINED, leading, vector


def integrate_forward(
    sys: ConstraintSystem,
    x0: np.ndarray,
    settings: QgsSettings,
    observer: Optional[StepObserver] = None,
) -> Equilibrium:
    """Follow the gradient flow from x0 until the gradient norm drops below grad_tol"""
    x0 = _finite_start(sys, x0)
    last = None
    for step in dormand_prince(
        _flow(sys, -1.0), x0, settings.max_time, settings.rel_tol, settings.abs_tol, settings.max_steps
    ):
        if observer is not None:
            observer(step)
        last = step
        grad_norm = float(np.linalg.norm(step.dydt))
        if grad_norm < settings.grad_tol:
            tag, leading, vector = classify_stability(sys, step.y, settings)
            logger.debug(f"equilibrium at t={step.t:.6g} after {step.n_steps} steps ({tag})")
            return Equilibrium(
                point=step.y.copy(),
                cost=cost(sys, step.y),
                grad_norm=grad_norm,
                stability=tag,
                leading_eigenvalue=leading,
                leading_vector=vector,
            )

    raise NoConvergence(
        best_point=last.y.copy(),
        best_cost=cost(sys, last.y),
        grad_norm=float(np.linalg.norm(last.dydt)),
        time=last.t,
    )


def _reverse_endpoint(sys: ConstraintSystem, start: np.ndarray, origin: np.ndarray, settings: QgsSettings) -> np.ndarray:
    """Integrate the time-reversed flow from start, capped by horizon and radius"""
    radius = settings.escape_radius * math.sqrt(sys.dim_x)
    end = start
    for step in dormand_prince(
        _flow(sys, 1.0), start, settings.backward_horizon, settings.rel_tol, settings.abs_tol, settings.max_steps
    ):
        end = step.y
        if np.linalg.norm(end - origin) >= radius:
            break
    return end


def escape(
    sys: ConstraintSystem,
    eq: Equilibrium,
    settings: QgsSettings,
    rng: np.random.Generator,
) -> List[np.ndarray]:
    """Candidate start points outside the stability region of eq"""
    directions = []
    if eq.leading_vector is not None:
        directions.extend([eq.leading_vector, -eq.leading_vector])
    for _ in range(settings.escape_directions):
        d = rng.standard_normal(sys.dim_x)
        directions.append(d / np.linalg.norm(d))
    directions = directions[: settings.attempts_limit]

    candidates = []
    for direction in directions:
        if settings.escape_eps == 0.0:
            candidates.append(eq.point.copy())
            continue
        start = eq.point + settings.escape_eps * direction
        try:
            end = _reverse_endpoint(sys, start, eq.point, settings)
        except NumericalBlowup as e:
            logger.warning(f"escape trajectory skipped: {e}")
            continue
        away = end - eq.point
        distance = np.linalg.norm(away)
        if distance > 0.0:
            # Step past the exit point so the forward run leaves this region
            end = end + settings.escape_eps * away / distance
        candidates.append(np.array(end, dtype=float))
    return candidates


def _default_restart(x0: np.ndarray, settings: QgsSettings) -> RestartSampler:
    scale = max(settings.escape_eps, 1.0)

    def sample(rng: np.random.Generator) -> np.ndarray:
        return x0 + scale * rng.standard_normal(x0.size)
    return sample


def enumerate_minima(
    sys: ConstraintSystem,
    x0: np.ndarray,
    settings: QgsSettings,
    restart: Optional[RestartSampler] = None,
) -> MinimaSet:
    """Alternate forward integration and escapes until enough minima are found"""
    x0 = _finite_start(sys, x0)
    restart = restart or _default_restart(x0, settings)
    dedup = settings.dedup_distance(sys.dim_x)
    limit = settings.attempts_limit

    queue = deque([x0])
    items: List[Equilibrium] = []
    saddles: List[Equilibrium] = []
    candidates: List[Equilibrium] = []
    attempts = 0

    # Kept candidates count toward the target so a tight budget stays bounded
    while len(items) + len(candidates) < settings.target_minima and attempts < limit:
        if not queue:
            queue.append(np.asarray(restart(make_rng(settings.seed, attempts, 1)), dtype=float))
        start = queue.popleft()
        attempts += 1
        try:
            eq = integrate_forward(sys, start, settings)
        except NoConvergence as e:
            logger.info(f"attempt {attempts}: forward integration failed ({e})")
            if settings.keep_unconverged:
                candidates.append(Equilibrium(
                    point=e.best_point,
                    cost=e.best_cost,
                    grad_norm=e.grad_norm,
                    stability=UNCONVERGED,
                    index=attempts - 1,
                ))
            continue
        except NumericalBlowup as e:
            logger.info(f"attempt {attempts}: forward integration failed ({e})")
            continue
        eq = replace(eq, index=attempts - 1)

        seen = saddles if eq.stability == UNSTABLE else items
        if any(np.linalg.norm(eq.point - other.point) < dedup for other in seen):
            logger.debug(f"attempt {attempts}: revisited a known equilibrium")
            continue
        seen.append(eq)
        if eq.stability != UNSTABLE:
            logger.info(f"minimum {len(items)} found at attempt {attempts}: cost {eq.cost:.6g} ({eq.stability})")
        if len(items) + len(candidates) < settings.target_minima:
            queue.extend(escape(sys, eq, settings, make_rng(settings.seed, attempts)))

    if not items and not candidates:
        raise NoMinimaFound(f"no stable equilibrium found in {attempts} attempts")
    if not items:
        logger.warning(f"no equilibrium reached in {attempts} attempts; keeping {len(candidates)} unconverged endpoints")

    def ordered(found: List[Equilibrium]) -> Tuple[Equilibrium, ...]:
        return tuple(sorted(found, key=lambda item: (item.cost, item.index)))
    return MinimaSet(items=ordered(items), attempts_used=attempts, settings=settings, candidates=ordered(candidates))

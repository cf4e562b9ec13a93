"""Adaptive embedded Runge-Kutta 5(4) integrator (Dormand-Prince pair).

Integrates autonomous systems ``dy/dt = fun(y)`` and yields every accepted
step, so callers decide when a trajectory is done (equilibrium reached,
excursion limit hit, ...).
"""
import logging
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from ..exceptions import NumericalBlowup

logger = logging.getLogger(__name__)

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# Difference between the 5th and embedded 4th order weights (7 stages, FSAL)
E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERROR_EXPONENT = -1 / 5
# Accepted steps keep h * rho below this, rho being the local stiffness
# estimate; the real-axis stability limit of the pair is about 3.3
STIFFNESS_LIMIT = 2.0
STIFFNESS_DECAY = 0.98


@dataclass(frozen=True)
class Step:
    """One accepted integrator state"""
    t: float
    y: np.ndarray
    dydt: np.ndarray
    h: float
    n_steps: int


def _checked(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise NumericalBlowup(f"non-finite {what} during integration")
    return values


def _rms(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(values * values)))


def _stiffness(k: np.ndarray, y_new: np.ndarray, y_stage: np.ndarray) -> float:
    """Local Lipschitz estimate |f(y_new) - f(y_6)| / |y_new - y_6| from the last two stages"""
    gap = np.linalg.norm(y_new - y_stage)
    if gap <= 100 * np.finfo(float).eps * max(1.0, float(np.linalg.norm(y_new))):
        return 0.0
    return float(np.linalg.norm(k[6] - k[5]) / gap)


def initial_step(fun: Callable, y0: np.ndarray, f0: np.ndarray, rtol: float, atol: float) -> float:
    """Starting step size from the local scale of y and dy/dt"""
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = _checked(np.asarray(fun(y1), dtype=float), "derivative")
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def dormand_prince(
    fun: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    t_end: float,
    rtol: float,
    atol: float,
    max_steps: int,
) -> Iterator[Step]:
    """Yield the initial state and then every accepted step up to t_end"""
    y = _checked(np.array(y0, dtype=float), "initial state")
    f = _checked(np.asarray(fun(y), dtype=float), "derivative")
    t = 0.0
    n_steps = 0
    yield Step(t=t, y=y, dydt=f, h=0.0, n_steps=0)
    if t_end <= 0.0:
        return

    h = min(initial_step(fun, y, f, rtol, atol), t_end)
    k = np.empty((7, y.size))
    rho = 0.0
    while t < t_end and n_steps < max_steps:
        if t_end - t <= 10 * np.spacing(max(t, 1.0)):
            break
        h = min(h, t_end - t)
        if h <= 10 * np.spacing(max(t, 1.0)):
            raise NumericalBlowup(f"step size underflow at t={t:.6g}")

        k[0] = f
        for stage in range(1, 6):
            y_stage = y + h * (A[stage] @ k[:stage])
            k[stage] = fun(y_stage)
        y_new = _checked(y + h * (B @ k[:6]), "state")
        f_new = _checked(np.asarray(fun(y_new), dtype=float), "derivative")
        k[6] = f_new
        n_steps += 1

        scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
        error = _rms(h * (E @ k) / scale)

        if error <= 1.0:
            rho = max(_stiffness(k, y_new, y_stage), STIFFNESS_DECAY * rho)
            t += h
            y, f = y_new, f_new
            factor = MAX_FACTOR if error == 0.0 else min(MAX_FACTOR, SAFETY * error ** ERROR_EXPONENT)
            yield Step(t=t, y=y, dydt=f, h=h, n_steps=n_steps)
            h *= factor
            if rho > 0.0:
                h = min(h, STIFFNESS_LIMIT / rho)
        else:
            h *= max(MIN_FACTOR, SAFETY * error ** ERROR_EXPONENT)

    logger.debug(f"integration stopped at t={t:.6g} after {n_steps} steps")

"""Constraint-satisfaction problems recast as least squares.

A problem ``C_I(y) < 0, C_E(y) = 0`` becomes the residual map
``h(y, s) = [C_I(y) + s**2; C_E(y)]`` over the slack-augmented vector
``x = (y, s)``. Its cost is ``f(x) = 0.5 * |h(x)|**2`` and the quotient
gradient field is ``-Dh(x)^T h(x)``.
"""
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional, Tuple

import numpy as np

from ..exceptions import ContractViolation, EvaluationError

Vector = np.ndarray
Evaluator = Callable[[Vector], Vector]
VjpEvaluator = Callable[[Vector, Vector], Vector]


@dataclass(frozen=True)
class ResidualMap:
    """A smooth map R^dim_in -> R^dim_out with its Jacobian"""
    dim_in: int
    dim_out: int
    evaluate: Evaluator
    jacobian: Evaluator
    vjp: Optional[VjpEvaluator] = None

    def apply_vjp(self, y: Vector, r: Vector) -> Vector:
        """Jacobian-transpose product J(y)^T r"""
        if self.vjp is not None:
            return self.vjp(y, r)
        return self.jacobian(y).T @ r


@dataclass(frozen=True)
class ConstraintSystem:
    """Residual map h over the (slack-augmented) decision vector"""
    dim_x: int
    dim_h: int
    residual: Evaluator
    jacobian: Evaluator
    slack_map: Tuple[Tuple[int, int], ...] = ()
    vjp: Optional[VjpEvaluator] = dataclass_field(default=None, compare=False)

    def __post_init__(self):
        if self.dim_x < 1:
            raise ContractViolation(f"dim_x must be positive, got {self.dim_x}")
        if self.dim_h < 1:
            raise ContractViolation(f"dim_h must be positive, got {self.dim_h}")
        slack_indices = [slack for _, slack in self.slack_map]
        if len(set(slack_indices)) != len(slack_indices):
            raise ContractViolation("slack indices must be distinct")
        if any(not 0 <= slack < self.dim_x for slack in slack_indices):
            raise ContractViolation(f"slack indices must lie in [0, {self.dim_x})")

    def evaluate(self, x: Vector) -> Vector:
        """Residual h(x), rejecting non-finite components"""
        h = np.asarray(self.residual(x), dtype=float)
        if h.shape != (self.dim_h,):
            raise ContractViolation(f"residual has shape {h.shape}, expected ({self.dim_h},)")
        bad = np.flatnonzero(~np.isfinite(h))
        if bad.size:
            raise EvaluationError(int(bad[0]), float(h[bad[0]]))
        return h

    def gradient(self, x: Vector, h: Optional[Vector] = None) -> Vector:
        """Gradient of the cost, Dh(x)^T h(x)"""
        if h is None:
            h = self.evaluate(x)
        if self.vjp is not None:
            return np.asarray(self.vjp(x, h), dtype=float)
        return np.asarray(self.jacobian(x), dtype=float).T @ h


def _check_point(sys: ConstraintSystem, x: Vector) -> Vector:
    x = np.asarray(x, dtype=float)
    if x.shape != (sys.dim_x,):
        raise ContractViolation(f"point has shape {x.shape}, expected ({sys.dim_x},)")
    return x


def add_slack(
    inequalities: Optional[ResidualMap],
    equalities: Optional[ResidualMap],
) -> ConstraintSystem:
    """Turn C_I(y) < 0, C_E(y) = 0 into one residual map over (y, s)"""
    n_ineq = inequalities.dim_out if inequalities is not None else 0
    n_eq = equalities.dim_out if equalities is not None else 0
    if n_ineq == 0 and n_eq == 0:
        raise ContractViolation("empty problem: no inequality and no equality constraints")

    dims = {m.dim_in for m in (inequalities, equalities) if m is not None and m.dim_out > 0}
    if len(dims) != 1:
        raise ContractViolation(f"constraint maps disagree on the input dimension: {sorted(dims)}")
    dim_y = dims.pop()

    if n_ineq == 0:
        # Pure equality problem: the system is C_E itself
        return ConstraintSystem(
            dim_x=dim_y,
            dim_h=n_eq,
            residual=equalities.evaluate,
            jacobian=equalities.jacobian,
            vjp=equalities.apply_vjp,
        )

    dim_x = dim_y + n_ineq
    slack_map = tuple((i, dim_y + i) for i in range(n_ineq))

    def residual(x: Vector) -> Vector:
        y, s = x[:dim_y], x[dim_y:]
        parts = [np.asarray(inequalities.evaluate(y), dtype=float) + s * s]
        if n_eq:
            parts.append(np.asarray(equalities.evaluate(y), dtype=float))
        return np.concatenate(parts)

    def jacobian(x: Vector) -> Vector:
        y, s = x[:dim_y], x[dim_y:]
        jac = np.zeros((n_ineq + n_eq, dim_x))
        jac[:n_ineq, :dim_y] = inequalities.jacobian(y)
        jac[:n_ineq, dim_y:] = np.diag(2.0 * s)
        if n_eq:
            jac[n_ineq:, :dim_y] = equalities.jacobian(y)
        return jac

    def vjp(x: Vector, r: Vector) -> Vector:
        y, s = x[:dim_y], x[dim_y:]
        r_ineq = r[:n_ineq]
        grad_y = inequalities.apply_vjp(y, r_ineq)
        if n_eq:
            grad_y = grad_y + equalities.apply_vjp(y, r[n_ineq:])
        return np.concatenate([grad_y, 2.0 * s * r_ineq])

    return ConstraintSystem(
        dim_x=dim_x,
        dim_h=n_ineq + n_eq,
        residual=residual,
        jacobian=jacobian,
        slack_map=slack_map,
        vjp=vjp,
    )


def cost(sys: ConstraintSystem, x: Vector) -> float:
    """f(x) = 0.5 * |h(x)|^2"""
    h = sys.evaluate(_check_point(sys, x))
    return 0.5 * float(h @ h)


def field(sys: ConstraintSystem, x: Vector) -> Vector:
    """Quotient gradient vector field -Dh(x)^T h(x)"""
    return -sys.gradient(_check_point(sys, x))


def central_difference(fun: Callable[[Vector], object], x: Vector, step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of fun at x (gradient for scalar fun)"""
    x = np.asarray(x, dtype=float)
    columns = []
    for j in range(x.size):
        h = step * max(1.0, abs(x[j]))
        forward, backward = x.copy(), x.copy()
        forward[j] += h
        backward[j] -= h
        columns.append((np.asarray(fun(forward), dtype=float) - np.asarray(fun(backward), dtype=float)) / (2.0 * h))
    return np.stack(columns, axis=-1)

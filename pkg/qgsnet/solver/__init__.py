from .constraints import ConstraintSystem, ResidualMap, add_slack, central_difference, cost, field
from .qgs import (
    STABLE,
    UNCONVERGED,
    UNDETERMINED,
    UNSTABLE,
    Equilibrium,
    MinimaSet,
    QgsSettings,
    classify_stability,
    enumerate_minima,
    escape,
    integrate_forward,
)

__all__ = [
    "STABLE",
    "UNCONVERGED",
    "UNDETERMINED",
    "UNSTABLE",
    "ConstraintSystem",
    "ResidualMap",
    "add_slack",
    "central_difference",
    "cost",
    "field",
    "Equilibrium",
    "MinimaSet",
    "QgsSettings",
    "classify_stability",
    "enumerate_minima",
    "escape",
    "integrate_forward",
]

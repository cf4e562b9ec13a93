from typing import Optional

import numpy as np


class QgsNetError(Exception):
    """Base class for all package errors"""


class ContractViolation(QgsNetError, ValueError):
    """Raised when an argument breaks a dimension, length or layout contract"""


class EvaluationError(QgsNetError):
    """Raised when a residual evaluation produces a non-finite component"""

    def __init__(self, index: int, value: float):
        super().__init__(f"residual component {index} is not finite ({value})")
        self.index = index
        self.value = value


class NoConvergence(QgsNetError):
    """Raised when integration exhausts its budget above the gradient threshold"""

    def __init__(self, best_point: np.ndarray, best_cost: float, grad_norm: float, time: float):
        super().__init__(
            f"no equilibrium reached by t={time:.6g} "
            f"(best cost {best_cost:.6g}, gradient norm {grad_norm:.6g})"
        )
        self.best_point = best_point
        self.best_cost = best_cost
        self.grad_norm = grad_norm
        self.time = time


class NumericalBlowup(QgsNetError):
    """Raised when a trajectory leaves the finite floating point range"""


class NoMinimaFound(QgsNetError):
    """Raised when no forward integration converged during enumeration"""


class DegenerateSplit(QgsNetError):
    """Raised when the validation split lacks a class present in training"""


class Diverged(QgsNetError):
    """Raised when gradient descent blows the error up"""


class InsufficientData(QgsNetError):
    """Raised when a class has fewer events than the training quota"""


class MissingClass(QgsNetError):
    """Raised when a training set lacks a class a stage needs"""

    def __init__(self, missing: list, stage: Optional[str] = None):
        where = f" for {stage}" if stage else ""
        super().__init__(f"classes {sorted(missing)} missing from training data{where}")
        self.missing = sorted(missing)


class DigestMismatch(QgsNetError):
    """Raised when two artifacts disagree about the feature or config digest"""


class ArtifactError(QgsNetError):
    """Raised for malformed artifacts or unsupported schema versions"""

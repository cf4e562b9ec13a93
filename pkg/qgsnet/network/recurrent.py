"""Partially recurrent three-layer network.

    z(k) = tanh(W u(k) + P z(k-1)),   P = diag(p)
    y(k) = V z(k)

Every hidden node only feeds back into itself, so the sensitivities of z
with respect to W and p stay node-local: an (m, n) block and an (m,) vector.
"""
from dataclasses import dataclass
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..exceptions import ContractViolation
from ..utils.persistence import SCHEMA_VERSION


class NetworkShape(BaseModel):
    """Input, hidden and output sizes"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(ge=1)
    hidden_m: int = Field(ge=1)
    q: int = Field(ge=1)

    @property
    def n_params(self) -> int:
        return self.hidden_m * self.n + self.q * self.hidden_m + self.hidden_m


class StatePolicy(BaseModel):
    """How the hidden state is carried between samples"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    mode: Literal["reset_per_sample", "chained"] = "reset_per_sample"
    # None means the zero vector
    z0: Optional[List[float]] = None

    @field_validator("z0")
    @classmethod
    def _finite_z0(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and not np.all(np.isfinite(value)):
            raise ValueError("z0 must be finite")
        return value

    def initial_state(self, hidden_m: int) -> np.ndarray:
        if self.z0 is None:
            return np.zeros(hidden_m)
        z0 = np.asarray(self.z0, dtype=float)
        if z0.shape != (hidden_m,):
            raise ContractViolation(f"z0 has length {z0.size}, network has {hidden_m} hidden nodes")
        return z0


@dataclass(frozen=True)
class Parameters:
    """Network weights W (m x n), V (q x m) and the diagonal p of P"""
    W: np.ndarray
    V: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        m, n = np.shape(self.W)
        if np.shape(self.V)[1:] != (m,) or np.shape(self.p) != (m,):
            raise ContractViolation(
                f"inconsistent parameter shapes W{np.shape(self.W)} V{np.shape(self.V)} p{np.shape(self.p)}"
            )

    @property
    def shape(self) -> NetworkShape:
        return NetworkShape(n=self.W.shape[1], hidden_m=self.W.shape[0], q=self.V.shape[0])

    @classmethod
    def zeros(cls, shape: NetworkShape) -> "Parameters":
        return cls(
            W=np.zeros((shape.hidden_m, shape.n)),
            V=np.zeros((shape.q, shape.hidden_m)),
            p=np.zeros(shape.hidden_m),
        )


@dataclass(frozen=True)
class SequenceSample:
    """Input sequence u(1..T) with a target applied at the final step"""
    inputs: np.ndarray
    target: np.ndarray
    id: str = ""

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        target = np.asarray(self.target, dtype=float).ravel()
        if inputs.shape[0] < 1:
            raise ContractViolation(f"sample {self.id!r} has no input steps")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(target))):
            raise ContractViolation(f"sample {self.id!r} has non-finite values")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "target", target)


class SequenceBatch:
    """Samples stacked once for repeated evaluation"""

    def __init__(self, samples: Sequence[SequenceSample]):
        self.samples = list(samples)
        self.size = len(self.samples)
        if self.size:
            self.n = self.samples[0].inputs.shape[1]
            self.q = self.samples[0].target.size
            for sample in self.samples:
                if sample.inputs.shape[1] != self.n or sample.target.size != self.q:
                    raise ContractViolation(f"sample {sample.id!r} does not match the batch dimensions")
            self.targets = np.stack([sample.target for sample in self.samples])
        else:
            self.n = self.q = None
            self.targets = np.zeros((0, 0))

        # Group samples of equal length so reset mode can run them together
        by_length: Dict[int, List[int]] = {}
        for i, sample in enumerate(self.samples):
            by_length.setdefault(sample.inputs.shape[0], []).append(i)
        self.groups: List[Tuple[np.ndarray, np.ndarray]] = [
            (np.asarray(indices), np.stack([self.samples[i].inputs for i in indices]))
            for _, indices in sorted(by_length.items())
        ]

    def __len__(self) -> int:
        return self.size


SampleInput = Union[Sequence[SequenceSample], SequenceBatch]


def as_batch(samples: SampleInput) -> SequenceBatch:
    return samples if isinstance(samples, SequenceBatch) else SequenceBatch(samples)


def _check_batch(params: Parameters, batch: SequenceBatch) -> None:
    if batch.size and (batch.n != params.W.shape[1] or batch.q != params.V.shape[0]):
        raise ContractViolation(
            f"samples have n={batch.n}, q={batch.q}; network expects n={params.W.shape[1]}, q={params.V.shape[0]}"
        )


def activation(x):
    """Hidden-node nonlinearity tanh"""
    return np.tanh(x)


def step(params: Parameters, u: np.ndarray, z_prev: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One network step: new hidden state and linear output"""
    u = np.asarray(u, dtype=float)
    z_prev = np.asarray(z_prev, dtype=float)
    m, n = params.W.shape
    if u.shape != (n,) or z_prev.shape != (m,):
        raise ContractViolation(f"step expects u of length {n} and z_prev of length {m}")
    z = activation(params.W @ u + params.p * z_prev)
    return z, params.V @ z


def flatten(params: Parameters) -> np.ndarray:
    """Parameter vector (v_1..v_m, w_1..w_m, p); v_j is column j of V, w_j row j of W"""
    return np.concatenate([params.V.T.ravel(), params.W.ravel(), params.p])


def unflatten(x: np.ndarray, shape: NetworkShape) -> Parameters:
    """Inverse of flatten"""
    x = np.asarray(x, dtype=float)
    if x.shape != (shape.n_params,):
        raise ContractViolation(f"parameter vector has length {x.size}, shape needs {shape.n_params}")
    m, n, q = shape.hidden_m, shape.n, shape.q
    v_end = q * m
    w_end = v_end + m * n
    return Parameters(
        W=x[v_end:w_end].reshape(m, n).copy(),
        V=x[:v_end].reshape(m, q).T.copy(),
        p=x[w_end:].copy(),
    )


def final_states(params: Parameters, samples: SampleInput, policy: StatePolicy) -> np.ndarray:
    """Hidden state at the last step of every sample, shape (N, m)"""
    batch = as_batch(samples)
    _check_batch(params, batch)
    m = params.W.shape[0]
    z0 = policy.initial_state(m)
    states = np.zeros((batch.size, m))

    if policy.mode == "reset_per_sample":
        for indices, inputs in batch.groups:
            z = np.tile(z0, (len(indices), 1))
            for k in range(inputs.shape[1]):
                z = activation(inputs[:, k] @ params.W.T + z * params.p)
            states[indices] = z
    else:
        z = z0
        for i, sample in enumerate(batch.samples):
            for u in sample.inputs:
                z = activation(params.W @ u + params.p * z)
            states[i] = z
    return states


def predict_outputs(params: Parameters, samples: SampleInput, policy: StatePolicy) -> np.ndarray:
    """Final-step outputs, shape (N, q)"""
    return final_states(params, samples, policy) @ params.V.T


def residuals(params: Parameters, samples: SampleInput, policy: StatePolicy) -> np.ndarray:
    """Stacked h_i = y_hat(i) - y(i), sample-major"""
    batch = as_batch(samples)
    if batch.size == 0:
        return np.zeros(0)
    return (predict_outputs(params, batch, policy) - batch.targets).ravel()


def sse(params: Parameters, samples: SampleInput, policy: StatePolicy) -> float:
    """Sum of squared final-step errors"""
    h = residuals(params, samples, policy)
    return float(h @ h)


def _sensitivity_sweep(params: Parameters, batch: SequenceBatch, policy: StatePolicy):
    """Yield (i, z, dz/dW, dz/dp) at the final step of each sample, in order"""
    m, n = params.W.shape
    z0 = policy.initial_state(m)
    z, s_w, s_p = z0, np.zeros((m, n)), np.zeros(m)
    for i, sample in enumerate(batch.samples):
        if policy.mode == "reset_per_sample":
            z, s_w, s_p = z0, np.zeros((m, n)), np.zeros(m)
        for u in sample.inputs:
            z_prev = z
            z = activation(params.W @ u + params.p * z_prev)
            slope = 1.0 - z * z
            s_w = slope[:, None] * (u[None, :] + params.p[:, None] * s_w)
            s_p = slope * (z_prev + params.p * s_p)
        yield i, z, s_w, s_p


def residual_jacobian(params: Parameters, samples: SampleInput, policy: StatePolicy) -> np.ndarray:
    """Analytic Jacobian of residuals with respect to the flattened parameters"""
    batch = as_batch(samples)
    _check_batch(params, batch)
    shape = params.shape
    m, n, q = shape.hidden_m, shape.n, shape.q
    v_end = q * m
    w_end = v_end + m * n
    jac = np.zeros((q * batch.size, shape.n_params))
    eye = np.eye(q)
    for i, z, s_w, s_p in _sensitivity_sweep(params, batch, policy):
        rows = jac[i * q:(i + 1) * q]
        rows[:, :v_end] = np.einsum("ab,j->ajb", eye, z).reshape(q, v_end)
        rows[:, v_end:w_end] = (params.V[:, :, None] * s_w[None, :, :]).reshape(q, m * n)
        rows[:, w_end:] = params.V * s_p[None, :]
    return jac


def residual_gradient(
    params: Parameters,
    samples: SampleInput,
    policy: StatePolicy,
    weights: Optional[np.ndarray] = None,
) -> np.ndarray:
    """J^T r without forming J; r defaults to the residuals (gradient of sse / 2)"""
    batch = as_batch(samples)
    _check_batch(params, batch)
    shape = params.shape
    m, n, q = shape.hidden_m, shape.n, shape.q
    if batch.size == 0:
        return np.zeros(shape.n_params)
    if weights is None:
        weights = residuals(params, batch, policy)
    r = np.asarray(weights, dtype=float).reshape(batch.size, q)

    grad_v = np.zeros((q, m))
    grad_w = np.zeros((m, n))
    grad_p = np.zeros(m)

    if policy.mode == "reset_per_sample":
        # Backpropagation through time, batched over samples of equal length
        z0 = policy.initial_state(m)
        for indices, inputs in batch.groups:
            states = [np.tile(z0, (len(indices), 1))]
            for k in range(inputs.shape[1]):
                states.append(activation(inputs[:, k] @ params.W.T + states[-1] * params.p))
            r_group = r[indices]
            grad_v += r_group.T @ states[-1]
            dz = r_group @ params.V
            for k in reversed(range(inputs.shape[1])):
                da = dz * (1.0 - states[k + 1] ** 2)
                grad_w += da.T @ inputs[:, k]
                grad_p += np.sum(da * states[k], axis=0)
                dz = da * params.p
    else:
        for i, z, s_w, s_p in _sensitivity_sweep(params, batch, policy):
            back = params.V.T @ r[i]
            grad_v += np.outer(r[i], z)
            grad_w += back[:, None] * s_w
            grad_p += back * s_p

    return np.concatenate([grad_v.T.ravel(), grad_w.ravel(), grad_p])


def parameters_to_dict(
    params: Parameters,
    policy: StatePolicy,
    feature_config_digest: Optional[str] = None,
) -> Dict[str, Any]:
    shape = params.shape
    return {
        "schema_version": SCHEMA_VERSION,
        "shape": {"n": shape.n, "m": shape.hidden_m, "q": shape.q},
        "x": [float(v) for v in flatten(params)],
        "state_policy": policy.model_dump(mode="json"),
        "feature_config_digest": feature_config_digest,
    }


def parameters_from_dict(data: Dict[str, Any]) -> Tuple[Parameters, StatePolicy]:
    shape = NetworkShape(n=data["shape"]["n"], hidden_m=data["shape"]["m"], q=data["shape"]["q"])
    params = unflatten(np.asarray(data["x"], dtype=float), shape)
    return params, StatePolicy.model_validate(data["state_policy"])

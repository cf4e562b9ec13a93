import numpy as np
import pytest

from qgsnet.data import FeatureLayout, ScenarioConfig
from qgsnet.network import NetworkShape, Parameters, SequenceSample
from qgsnet.solver import QgsSettings, ResidualMap, add_slack


def equality_system(evaluate, jacobian, dim_in, dim_out):
    return add_slack(None, ResidualMap(dim_in=dim_in, dim_out=dim_out, evaluate=evaluate, jacobian=jacobian))


@pytest.fixture
def circle_line():
    """x1^2 + x2^2 - 1 = 0 and x1 - x2 = 0"""
    return equality_system(
        lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 1.0, x[0] - x[1]]),
        lambda x: np.array([[2.0 * x[0], 2.0 * x[1]], [1.0, -1.0]]),
        2,
        2,
    )


@pytest.fixture
def double_well():
    """f(x) = (x^2 - 1)^2 / 4 with minima at -1 and +1"""
    return equality_system(
        lambda x: np.array([(x[0] ** 2 - 1.0) / np.sqrt(2.0)]),
        lambda x: np.array([[2.0 * x[0] / np.sqrt(2.0)]]),
        1,
        1,
    )


@pytest.fixture
def scalar_params():
    return Parameters(W=np.array([[0.5]]), V=np.array([[2.0]]), p=np.array([0.3]))


@pytest.fixture
def xor_samples():
    samples = []
    for inputs, label in [((0.0, 0.0), 0), ((0.0, 1.0), 1), ((1.0, 0.0), 1), ((1.0, 1.0), 0)]:
        target = np.zeros(2)
        target[label] = 1.0
        samples.append(SequenceSample(inputs=np.array([inputs]), target=target, id=str(inputs)))
    return samples


@pytest.fixture
def xor_shape():
    return NetworkShape(n=2, hidden_m=4, q=2)


@pytest.fixture
def tiny_layout():
    return FeatureLayout(w_pre=3, w_dur=3)


@pytest.fixture
def tiny_scenario(tiny_layout):
    """Thirteen classes, six events each, one PMU, short windows"""
    return ScenarioConfig(
        experiments_per_class=6,
        train_per_class=4,
        active_pmus=[4],
        layout=tiny_layout,
        seed=7,
    )


@pytest.fixture
def quick_qgs():
    """Small budget that always yields candidates"""
    return QgsSettings(
        abs_tol=1e-4,
        rel_tol=1e-4,
        grad_tol=1e-3,
        max_time=50.0,
        max_steps=200,
        escape_directions=1,
        backward_horizon=0.5,
        keep_unconverged=True,
    )

import numpy as np
import pytest

from hmortar.harness.baseline import euler_gradient_norms, euler_rollout
from hmortar.nonlinearity import DissipativeModel, HamiltonianModel

from conftest import random_transformer


def test_euler_harmonic_step():
    out = euler_rollout(HamiltonianModel.harmonic(4.0), [1.0], [0.0], None, 0.1, 1)
    np.testing.assert_allclose(out[1], [1.0, -0.4])


def test_euler_is_unstable_for_oscillator():
    out = euler_rollout(HamiltonianModel.harmonic(), [1.0], [0.0], None, 0.1, 1000)
    e = 0.5 * out[:, 0] ** 2 + 0.5 * out[:, 1] ** 2
    assert e[-1] > 10 * e[0]


@pytest.mark.parametrize("model", [DissipativeModel(0.3), random_transformer(p=1)])
def test_forward_sensitivity_matches_fd(model):
    z = [0.4] if model.kind == "transformer" else None
    (_, norm), = euler_gradient_norms(model, [0.7], [0.1], z, 0.2, [15])

    def final(th):
        return euler_rollout(model.with_theta(th), [0.7], [0.1], z, 0.2, 15)[-1]

    jac = np.zeros((2, model.n_params))
    for p in range(model.n_params):
        e = np.zeros(model.n_params)
        e[p] = 1e-6
        jac[:, p] = (final(model.theta + e) - final(model.theta - e)) / 2e-6
    assert norm == pytest.approx(np.linalg.norm(jac, 2), rel=1e-5)

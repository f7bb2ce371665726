import numpy as np
import pytest

from hmortar.feec import assemble_blocks
from hmortar.nonlinearity import DissipativeModel, HamiltonianModel
from hmortar.transformer import LocalTransformer, LocalTransformerConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def blocks():
    return assemble_blocks(4, 0.05)


def random_transformer(d=1, p=0, seed=0, scale=0.3, **kw):
    """Transformer with a non-zero output head so that every path is exercised."""
    cfg = LocalTransformerConfig(model_dim=8, n_heads=2, d=d, p=p, seed=seed, **kw)
    model = LocalTransformer(cfg)
    theta = np.array(model.theta)
    r = np.random.default_rng(seed + 100)
    for name in ("out_w", "out_b"):
        pos, shape = model._offsets[name]
        n = int(np.prod(shape))
        theta[pos:pos + n] = scale * r.standard_normal(n)
    return model.with_theta(theta)


MODEL_FACTORIES = {
    "harmonic": lambda: HamiltonianModel.harmonic(1.7),
    "pendulum": lambda: HamiltonianModel.pendulum(0.9),
    "dissipative": lambda: DissipativeModel(0.4),
    "transformer": lambda: random_transformer(),
}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines, key=lambda s: s.split()[1]):
        terminalreporter.write_line(line)

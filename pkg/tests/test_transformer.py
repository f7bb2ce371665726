import numpy as np
import pytest

from hmortar.transformer import LocalTransformer, LocalTransformerConfig, init_theta

from conftest import random_transformer


def test_untrained_model_is_zero_field(rng):
    model = LocalTransformer(LocalTransformerConfig(d=2, p=1))
    out = model.evaluate(rng.standard_normal((4, 2)), rng.standard_normal((5, 2)), [0.3])
    assert np.all(out == 0.0)


def test_init_is_seeded():
    a = init_theta(LocalTransformerConfig(seed=3))
    b = init_theta(LocalTransformerConfig(seed=3))
    c = init_theta(LocalTransformerConfig(seed=4))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_hidden_init_bounds():
    cfg = LocalTransformerConfig(model_dim=16)
    model = LocalTransformer(cfg)
    P = model.params()
    assert np.abs(P["b0_wq"]).max() <= 1 / np.sqrt(16)
    assert np.all(P["b0_q_g"] == 1.0)
    assert P["b0_q_a"][0] == cfg.alpha_init


def test_cells_are_independent(rng):
    model = random_transformer(d=2)
    u = rng.standard_normal((5, 2))
    j = rng.standard_normal((6, 2))
    base = model.evaluate(u, j)
    u2 = u.copy()
    u2[3] += 1.0
    out = model.evaluate(u2, j)
    np.testing.assert_array_equal(np.delete(out, 3, axis=0), np.delete(base, 3, axis=0))


def test_same_weights_every_cell(rng):
    model = random_transformer()
    u = np.full((4, 1), 0.3)
    j = np.full((5, 1), -0.2)
    out = model.evaluate(u, j)
    np.testing.assert_allclose(out, np.broadcast_to(out[0], out.shape), rtol=0, atol=1e-15)


def test_batched_matches_unbatched(rng):
    model = random_transformer(p=2)
    u = rng.standard_normal((3, 4, 1))
    j = rng.standard_normal((3, 5, 1))
    z = rng.standard_normal((3, 2))
    out = model.evaluate(u, j, z)
    for b in range(3):
        np.testing.assert_allclose(out[b], model.evaluate(u[b], j[b], z[b]), atol=1e-15)


def test_conditioning_changes_output(rng):
    model = random_transformer(p=1)
    u = rng.standard_normal((3, 1))
    j = rng.standard_normal((4, 1))
    assert not np.allclose(model.evaluate(u, j, [0.1]), model.evaluate(u, j, [0.9]))


def test_output_bounded(rng):
    # dynamic-tanh before the head bounds the output independently of the inputs
    model = random_transformer()
    P = model.params()
    bound = np.abs(P["f_g"]).sum() * np.abs(P["out_w"]).max() + np.abs(P["f_b"] @ P["out_w"]).max() \
        + np.abs(P["out_b"]).max()
    out = model.evaluate(1e6 * rng.standard_normal((10, 1)), 1e6 * rng.standard_normal((11, 1)))
    assert np.abs(out).max() <= bound * model.config.out_scale + 1e-12


@pytest.mark.parametrize("n_blocks", [1, 2])
def test_theta_gradient_fd(n_blocks, rng):
    model = random_transformer(d=2, p=1, n_blocks=n_blocks)
    u = rng.standard_normal((3, 2))
    j = rng.standard_normal((4, 2))
    z = [0.4]
    cot = rng.standard_normal((3, 2))
    g = model.theta_vjp(u, j, z, cot)
    out, vjp = model.evaluate_with_vjp(u, j, z)
    np.testing.assert_array_equal(out, model.evaluate(u, j, z))
    np.testing.assert_allclose(vjp(cot), g, atol=1e-15)
    for p in rng.choice(model.n_params, 20, replace=False):
        e = np.zeros(model.n_params)
        e[p] = 1e-6
        f = lambda th: np.sum(cot * model.with_theta(th).evaluate(u, j, z))
        assert g[p] == pytest.approx((f(model.theta + e) - f(model.theta - e)) / 2e-6,
                                     rel=1e-5, abs=1e-9)


@pytest.mark.parametrize("kwargs", [dict(model_dim=10, n_heads=3), dict(d=0), dict(p=-1),
                                    dict(out_scale=0.0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        LocalTransformerConfig(**kwargs)


def test_wrong_state_dimension(rng):
    model = LocalTransformer(LocalTransformerConfig(d=2))
    with pytest.raises(ValueError):
        model.evaluate(np.zeros((3, 1)), np.zeros((4, 1)))


def test_wrong_conditioning_length():
    model = LocalTransformer(LocalTransformerConfig(p=2))
    with pytest.raises(ValueError):
        model.evaluate(np.zeros((3, 1)), np.zeros((4, 1)), [1.0])


def test_wrong_theta_size():
    with pytest.raises(ValueError):
        LocalTransformer(LocalTransformerConfig(), theta=np.zeros(3))

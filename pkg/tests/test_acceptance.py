"""Acceptance criteria, one test per criterion.

Each test records a single ``PASS``/``FAIL`` line (collected into the
terminal summary and echoed to stdout) and then asserts.  Tolerances and
runtime limits are fixed constants below.
"""
import time

import numpy as np
import pytest

from hmortar import diagnostics as dg
from hmortar.feec import assemble_blocks, poincare_eigenvalue
from hmortar.harness.baseline import euler_gradient_norms
from hmortar.harness.data import (
    damped_oscillator,
    generate_lorenz,
    generate_parametric_oscillator,
    Trajectory,
)
from hmortar.harness.stats import switching_statistics
from hmortar.harness.training import TrainConfig, forecast, train
from hmortar.mortar import InterfaceState, NewtonSettings, rollout, rollout_batch
from hmortar.nonlinearity import DissipativeModel, HamiltonianModel
from hmortar.sensitivity import LossSpec, gradient_norm_sweep, loss_and_cotangents, rollout_loss_and_grad
from hmortar.transformer import LocalTransformer, LocalTransformerConfig

RESULTS = []
TIGHT = NewtonSettings(rel_tol=1e-14, abs_tol=1e-15)

# oscillator family shared by the learning and gradient-growth criteria
OSC_OMEGA = 1.0
OSC_BETAS = np.linspace(0.1, 1.0, 10)
OSC_UNSEEN = (0.35, 0.55, 0.85)
OSC_STEPS = 2000

LYAPUNOV_TIME = 1.1
LORENZ_BOX = {"xy": 30.0, "z": (0.0, 55.0)}
LORENZ_STEPS = 2500


def record(number, name, passed, detail):
    line = f"criterion {number:>3} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
    RESULTS.append(line)
    print(line)
    return passed


# -- 1 -------------------------------------------------------------------------------

def test_c01_summation_by_parts():
    t0 = time.perf_counter()
    rows = dg.sbp_suite(n_cases=100, seed=2024, tol=1e-10)
    dt = time.perf_counter() - t0
    worst = max(abs(r) for _, r, _ in rows)
    ok = all(p for _, _, p in rows) and len(rows) == 100 and dt < 10
    assert record(1, "SBP identity", ok, f"max |residual| {worst:.2e} over 100 cases (< 1e-10), {dt:.1f}s (< 10s)")


# -- 2 -------------------------------------------------------------------------------

def test_c02_energy_preservation():
    t0 = time.perf_counter()
    blocks = assemble_blocks(4, 0.2 / 4)
    harm = HamiltonianModel.harmonic(1.0)
    states = rollout(InterfaceState.from_values([0.0], [1.0]), 10_000, harm, None, blocks)
    total = dg.energy_report(states, harm, blocks.h).total
    pend = HamiltonianModel.pendulum(1.0)
    pstates = rollout(InterfaceState.from_values([0.0], [2.0]), 10_000, pend, None, blocks, TIGHT)
    spread = float(np.ptp(dg.stieltjes_energy_series(pstates, pend, blocks.h)))
    ham = [0.5 * s.j[-1, 0] ** 2 - np.cos(s.lambda_out[0]) for s in pstates]
    dt = time.perf_counter() - t0
    ok = abs(total) < 1e-9 and spread < 1e-10 and dt < 60
    assert record(2, "energy preservation", ok,
                  f"harmonic |sum dE| {abs(total):.2e} (< 1e-9); pendulum discrete energy spread "
                  f"{spread:.2e} (< 1e-10), continuous H spread {np.ptp(ham):.2e}; {dt:.1f}s (< 60s)")


# -- 3 -------------------------------------------------------------------------------

def test_c03_dissipation():
    t0 = time.perf_counter()
    blocks = assemble_blocks(4, 0.2 / 4)
    worst = {}
    for beta in (0.1, 0.5, 2.0):
        model = DissipativeModel(beta)
        states = rollout(InterfaceState.from_values([0.0], [1.0]), 1000, model, None, blocks)
        worst[beta] = float(dg.energy_report(states, model, blocks.h).deltas.max())
    dt = time.perf_counter() - t0
    ok = all(v <= 1e-13 for v in worst.values()) and dt < 30
    detail = ", ".join(f"beta={b}: max dE {v:.2e}" for b, v in worst.items())
    assert record(3, "dissipation", ok, f"{detail} (<= 1e-13); {dt:.1f}s (< 30s)")


# -- 4 -------------------------------------------------------------------------------

def test_c04_explicit_inverse():
    t0 = time.perf_counter()
    grid = [(m, h) for m in (1, 2, 4, 8, 16, 32, 64) for h in (1.0, 0.1, 0.01)]
    printed = max(dg.check_j_inverse(m, h, "printed") for m, h in grid)
    exact = max(dg.check_j_inverse(m, h, "exact") for m, h in grid)
    map_err = max(np.abs(dg.interface_map_zero_model(m, h) - dg.printed_interface_map(h)).max()
                  for m, h in grid)
    dt = time.perf_counter() - t0
    ok = printed < 1e-12 and map_err < 1e-13 and dt < 5
    assert record(4, "explicit inverse", ok,
                  f"printed closed form max |J Jinv - I| {printed:.3f} (< 1e-12); "
                  f"max |P^T J^-1 Q - [[1,0],[1+2h/3,1]]| {map_err:.3f} (< 1e-13); "
                  f"corrected closed form residual {exact:.1e}; {dt:.2f}s")


# -- 5 -------------------------------------------------------------------------------

def test_c05_norm_scaling():
    t0 = time.perf_counter()
    slope, _ = dg.pt_jinv_slope([2.0 ** -k for k in range(2, 8)], delta_t=1.0)
    dt = time.perf_counter() - t0
    ok = abs(slope + 0.5) <= 0.1 and dt < 5
    assert record(5, "norm scaling", ok, f"slope {slope:.3f} (-0.5 +- 0.1); {dt:.2f}s (< 5s)")


# -- 6 -------------------------------------------------------------------------------

def _draw_model(kind, r):
    if kind == "hamiltonian":
        return HamiltonianModel.pendulum(r.uniform(0.5, 2.0)) if r.random() < 0.5 \
            else HamiltonianModel.harmonic(r.uniform(0.5, 2.0))
    if kind == "dissipative":
        return DissipativeModel(r.uniform(0.1, 2.0))
    cfg = LocalTransformerConfig(model_dim=16, n_heads=2, seed=int(r.integers(1 << 30)))
    model = LocalTransformer(cfg)
    theta = np.array(model.theta)
    pos, shape = model._offsets["out_w"]
    n = int(np.prod(shape))
    theta[pos:pos + n] = 0.5 * r.standard_normal(n)
    return model.with_theta(theta)


def _fd_relative_error(kind, r):
    model = _draw_model(kind, r)
    m, n = int(r.integers(2, 6)), int(r.integers(2, 5))
    blocks = assemble_blocks(m, r.uniform(0.05, 0.2))
    j0 = r.standard_normal((1, 1))
    l0 = r.standard_normal((1, 1))
    spec = LossSpec(r.standard_normal((1, n, m, 1)))
    _, grad, _ = rollout_loss_and_grad(j0, l0, model, None, blocks, spec, TIGHT)
    v = r.standard_normal(model.n_params)
    v /= np.linalg.norm(v)

    def loss(th):
        res = rollout_batch(j0, l0, n, model.with_theta(th), None, blocks, TIGHT)
        return loss_and_cotangents(res.u, spec)[0]

    eps = 1e-5
    fd = (loss(model.theta + eps * v) - loss(model.theta - eps * v)) / (2 * eps)
    ad = float(grad @ v)
    return abs(ad - fd) / max(abs(fd), 1e-12)


def test_c06_gradient_correctness():
    t0 = time.perf_counter()
    r = np.random.default_rng(6)
    errs = {k: [_fd_relative_error(k, r) for _ in range(20)]
            for k in ("hamiltonian", "dissipative", "transformer")}
    dt = time.perf_counter() - t0
    worst = {k: max(v) for k, v in errs.items()}
    ok = all(v < 1e-5 for v in worst.values()) and dt < 300
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    assert record(6, "gradient correctness", ok, f"max rel err over 20 draws: {detail} (< 1e-5); {dt:.1f}s")


# -- shared oscillator training ---------------------------------------------------------

@pytest.fixture(scope="module")
def oscillator_run():
    r = np.random.default_rng(9)
    trajs = []
    for beta in OSC_BETAS:
        for _ in range(3):
            ic = tuple(r.uniform(-1.5, 1.5, 2))
            trajs.append(generate_parametric_oscillator(OSC_OMEGA, beta, 30.0, 0.05, ic))
    cfg = TrainConfig(n_domains=5, m_cells=4, delta_t=0.4, lr=3e-3, steps=OSC_STEPS, batch_size=32,
                      alignment="midpoint", probe_interval=500, probe_size=64, seed=0,
                      model={"kind": "transformer", "config": {"model_dim": 32}})
    t0 = time.perf_counter()
    ck, recs = train(cfg, trajs)
    return cfg, ck, recs, time.perf_counter() - t0


# -- 7 -------------------------------------------------------------------------------

def test_c07_gradient_boundedness(oscillator_run):
    _, ck, _, _ = oscillator_run
    model = ck.model()
    beta, delta_t, m = 0.5, 0.8, 8
    n_list = [10, 50, 100, 500, 1000]
    t0 = time.perf_counter()
    mortar = dict(gradient_norm_sweep(model, [beta], assemble_blocks(m, delta_t / m),
                                      InterfaceState.from_values([0.0], [1.0]), n_list))
    euler = dict(euler_gradient_norms(model, [1.0], [0.0], [beta], delta_t, n_list))
    dt = time.perf_counter() - t0
    tail = [mortar[n] for n in n_list if n >= 100]
    band = max(tail) / min(tail)
    growth = euler[100] / euler[10]
    ok = band <= 2.0 and growth > 10.0 and dt < 600
    assert record(7, "gradient boundedness", ok,
                  f"mortar norms {[round(mortar[n], 4) for n in n_list]} band {band:.3f} (<= 2); "
                  f"euler growth N=10->100 {growth:.1f}x (> 10); {dt:.1f}s")


# -- 8 -------------------------------------------------------------------------------

def test_c08_poincare_constant():
    t0 = time.perf_counter()
    vals = [poincare_eigenvalue(assemble_blocks(int(round(1.0 / h)), h)) for h in (0.1, 0.05, 0.025)]
    dt = time.perf_counter() - t0
    ratio = max(vals) / min(vals)
    ok = ratio < 2.0 and dt < 5
    assert record(8, "Poincare constant", ok,
                  f"eigenvalues {[round(v, 4) for v in vals]} ratio {ratio:.4f} (< 2); {dt:.2f}s")


# -- 9 -------------------------------------------------------------------------------

def test_c09_desk_scale_learning(oscillator_run):
    cfg, ck, recs, train_time = oscillator_run
    probes = [r["probe_loss"] for r in recs if "probe_loss" in r]
    drop = probes[0] / probes[-1]
    horizon = cfg.n_domains * cfg.delta_t
    n_dom = int(round(5 * horizon / cfg.delta_t))
    errs = {}
    for beta in OSC_UNSEEN:
        t, u = forecast(ck, ([1.0], [0.0]), [beta], n_dom, cfg.m_cells, cfg.delta_t)
        exact, _ = damped_oscillator(t, OSC_OMEGA, beta, 1.0, 0.0)
        errs[beta] = float(np.linalg.norm(u[:, 0] - exact) / np.linalg.norm(exact))
    ok = drop >= 10 and max(errs.values()) < 0.1 and train_time < 1800
    detail = ", ".join(f"beta={b}: {e:.3f}" for b, e in errs.items())
    assert record(9, "desk-scale learning", ok,
                  f"probe loss drop {drop:.0f}x in {cfg.steps} steps (>= 10); relative error over "
                  f"{5 * horizon:.0f} time units {detail} (< 0.1); training {train_time:.0f}s (< 1800s)")


# -- 10 ------------------------------------------------------------------------------

def _in_box(u):
    return (np.all(np.isfinite(u)) and np.abs(u[:, :2]).max() < LORENZ_BOX["xy"]
            and u[:, 2].min() > LORENZ_BOX["z"][0] and u[:, 2].max() < LORENZ_BOX["z"][1])


def test_c10a_lorenz_forecast_stability():
    ref = generate_lorenz(t_final=220.0, dt=0.01)
    keep = slice(1000, None)
    data = Trajectory(ref.t[keep], ref.u[keep], rates=ref.rates[keep])
    cfg = TrainConfig(n_domains=11, m_cells=10, delta_t=0.1, lr=2e-3, steps=LORENZ_STEPS,
                      batch_size=16, probe_interval=0, seed=0,
                      model={"kind": "transformer",
                             "config": {"model_dim": 32, "u_scale": 10.0, "j_scale": 50.0,
                                        "out_scale": 300.0}})
    t0 = time.perf_counter()
    ck, recs = train(cfg, data)
    train_time = time.perf_counter() - t0
    skipped = sum(r.get("skipped", 0) for r in recs)
    n_dom = int(round(100 * LYAPUNOV_TIME / cfg.delta_t))
    try:
        _, u = forecast(ck, (data.u[0], data.rates[0]), None, n_dom, cfg.m_cells, cfg.delta_t)
        inside, failure = _in_box(u), "none"
    except Exception as exc:  # any solver failure fails the criterion
        inside, failure, u = False, f"{type(exc).__name__}: {exc}", None
    ok = inside and train_time < 7200
    extent = "n/a" if u is None else (f"|x|max {np.abs(u[:, 0]).max():.1f}, |y|max "
                                      f"{np.abs(u[:, 1]).max():.1f}, z in [{u[:, 2].min():.1f}, "
                                      f"{u[:, 2].max():.1f}], late-half std of x "
                                      f"{u[u.shape[0] // 2:, 0].std():.2f}")
    assert record("10a", "Lorenz forecast stability", ok,
                  f"{n_dom} domains ({100 * LYAPUNOV_TIME:.0f} time units): {extent}; failures: "
                  f"{failure}; skipped training windows {skipped}; training {train_time:.0f}s (< 7200s)")


def test_c10b_switching_statistics_reference():
    ref = generate_lorenz(t_final=10_000.0, dt=0.01)
    st = switching_statistics(ref.t, ref.u[:, 0], threshold=LYAPUNOV_TIME)
    ok = st.passes(0.01)
    assert record("10b", "switching statistics on reference", ok,
                  f"one-sided KS D={st.ks_statistic:.4f}, p={st.ks_pvalue:.2e} (> 0.01) on "
                  f"{st.n_fit} intervals >= {LYAPUNOV_TIME}; fitted rate {st.rate:.3f}")

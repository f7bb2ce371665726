"""Numerical certificates for solved rollouts.

Energy bookkeeping follows the discrete Riemann-Stieltjes form

    dE_i = [ |J|^2 / 2 ]_{t_i}^{t_{i+1}} - sum_k V'(u_{i,k}) (w_{k+1} - w_k)

where ``w`` is the displacement trace on the nodes of domain ``i``:
``w_0 = lambda_in`` and ``w_{k+1} - w_k = int_{cell k} J dt``.  For a solved
domain ``w_M = lambda_out``.  The older bookkeeping that differences the
cell values themselves (``u_{k+1} - u_k`` with ``u_M := lambda_out``) is
available as ``increments="cell_values"``; it is not conserved by the
scheme and is reported for comparison only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feec import LinearBlocks, assemble_blocks, sbp_residual
from .mortar import DomainState, constant_jacobian, interface_selectors


@dataclass
class EnergyReport:
    deltas: np.ndarray
    total: float
    kinetic_endpoints: tuple

    def as_dict(self) -> dict:
        return {"deltas": self.deltas.tolist(), "total": self.total,
                "kinetic_endpoints": list(self.kinetic_endpoints),
                "max_delta": float(np.max(self.deltas)) if self.deltas.size else 0.0}


def displacement_increments(state: DomainState, h: float, increments: str = "trace") -> np.ndarray:
    """Per-cell increments ``(M, d)`` used in the potential-energy sum."""
    j = np.asarray(state.j, dtype=float)
    if increments == "trace":
        return 0.5 * h * (j[1:] + j[:-1])
    if increments == "cell_values":
        u = np.asarray(state.u, dtype=float)
        ext = np.concatenate([u, np.asarray(state.lambda_out, dtype=float)[None]], axis=0)
        return ext[1:] - ext[:-1]
    raise ValueError(f"unknown increments {increments!r}")


def discrete_energy_delta(state: DomainState, potential, h: float | None = None,
                          increments: str = "trace") -> float:
    """Energy change ``dE_i`` over one solved domain.

    ``potential`` maps cell values ``(M, d)`` to the conservative force term
    ``V'(u)`` (the part of ``N`` that depends on ``u`` only), either as a
    callable or as a model exposing ``potential_force``.  ``h`` is the cell
    width of the mesh the state was solved on.
    """
    if h is None:
        raise ValueError("cell width h is required")
    force = potential.potential_force if hasattr(potential, "potential_force") else potential
    j = np.asarray(state.j, dtype=float)
    vp = np.asarray(force(np.asarray(state.u, dtype=float)), dtype=float)
    kin = 0.5 * (np.dot(j[-1], j[-1]) - np.dot(j[0], j[0]))
    return float(kin - np.sum(vp * displacement_increments(state, h, increments)))


def energy_report(states, potential, h: float, increments: str = "trace") -> EnergyReport:
    deltas = np.array([discrete_energy_delta(s, potential, h, increments) for s in states])
    j_first = np.asarray(states[0].j[0]) if states else np.zeros(1)
    j_last = np.asarray(states[-1].j[-1]) if states else np.zeros(1)
    kin = (0.5 * float(j_first @ j_first), 0.5 * float(j_last @ j_last))
    return EnergyReport(deltas, float(deltas.sum()), kin)


def stieltjes_energy_series(states, potential, h: float, increments: str = "trace") -> np.ndarray:
    """``E_n = |J(t_n)|^2/2 - sum_{i<n} sum_k V'(u_{i,k}) dw``; constant if conserved."""
    force = potential.potential_force if hasattr(potential, "potential_force") else potential
    e = [0.5 * float(np.dot(states[0].j[0], states[0].j[0]))]
    pot = 0.0
    for s in states:
        pot += float(np.sum(np.asarray(force(s.u)) * displacement_increments(s, h, increments)))
        e.append(0.5 * float(np.dot(s.j[-1], s.j[-1])) - pot)
    return np.array(e)


# -- explicit inverse of the constant Jacobian -------------------------------

def explicit_inverse(m: int, h: float, variant: str = "printed") -> np.ndarray:
    """Closed-form inverse of the ``N = 0`` Jacobian (one component).

    Block layout (rows: J, u, lambda_out, lambda_in; columns: the four
    equation groups)::

        [  0    L1   1    0 ]
        [  L2   L3   h1   1 ]
        [ -1^T  h2^T c    1 ]
        [  0^T  0^T  0    1 ]

    ``variant="printed"`` uses ``h1 = h(1..M) - h/6``, ``h2 = h(M..1) - h/6``
    and ``c = 1 + 2h/3``.  ``variant="exact"`` uses ``h1 = h(1..M) - h/2``,
    ``h2 = h(M..1) - h/2`` and ``c = M h``, which is the true inverse.
    """
    if variant not in ("printed", "exact"):
        raise ValueError(f"unknown variant {variant!r}")
    n = 2 * m + 3
    inv = np.zeros((n, n))
    l1 = np.tril(np.ones((m + 1, m)), -1)
    l2 = -np.tril(np.ones((m, m + 1)))
    i, k = np.indices((m, m))
    l3 = np.where(i > k, (i - k) * h, 0.0) + np.where(i == k, h / 6.0, 0.0)
    shift = h / 6.0 if variant == "printed" else h / 2.0
    h1 = h * np.arange(1, m + 1) - shift
    h2 = h * np.arange(m, 0, -1) - shift
    corner = 1.0 + 2.0 * h / 3.0 if variant == "printed" else m * h
    a, b = m + 1, 2 * m + 1
    inv[:a, a:b] = l1
    inv[:a, b] = 1.0
    inv[a:b, :a] = l2
    inv[a:b, a:b] = l3
    inv[a:b, b] = h1
    inv[a:b, b + 1] = 1.0
    inv[b, :a] = -1.0
    inv[b, a:b] = h2
    inv[b, b] = corner
    inv[b, b + 1] = 1.0
    inv[b + 1, b + 1] = 1.0
    return inv


def check_j_inverse(m: int, h: float, variant: str = "printed") -> float:
    """``max |J J_explicit^{-1} - I|`` for the ``N = 0`` Jacobian."""
    jac = constant_jacobian(assemble_blocks(m, h))
    return float(np.max(np.abs(jac @ explicit_inverse(m, h, variant) - np.eye(2 * m + 3))))


def printed_interface_map(h: float) -> np.ndarray:
    """The 2x2 ``P^T J^{-1} Q`` in its printed closed form ``[[1, 0], [1 + 2h/3, 1]]``."""
    return np.array([[1.0, 0.0], [1.0 + 2.0 * h / 3.0, 1.0]])


def interface_map_zero_model(m: int, h: float) -> np.ndarray:
    """``P^T J^{-1} Q`` computed from the assembled ``N = 0`` Jacobian."""
    jac = constant_jacobian(assemble_blocks(m, h))
    p, q = interface_selectors(m, 1)
    return p.T @ np.linalg.solve(jac, q)


def pt_jinv_zero_model(m: int, h: float) -> np.ndarray:
    jac = constant_jacobian(assemble_blocks(m, h))
    p, _ = interface_selectors(m, 1)
    return np.linalg.solve(jac.T, p).T


def printed_pt_jinv(m: int, h: float) -> np.ndarray:
    """Rows 1 and 3 of the printed closed-form inverse, i.e. its ``P^T J^{-1}``."""
    inv = explicit_inverse(m, h, "printed")
    return inv[[m, 2 * m + 1]]


def pt_jinv_slope(hs, delta_t: float = 1.0) -> tuple[float, np.ndarray]:
    """Log-log slope of ``||P^T J^{-1}||_2`` against ``h`` at fixed domain length."""
    hs = np.asarray(hs, dtype=float)
    norms = []
    for h in hs:
        m = int(round(delta_t / h))
        norms.append(np.linalg.norm(pt_jinv_zero_model(m, delta_t / m), 2))
    norms = np.array(norms)
    slope = np.polyfit(np.log(hs), np.log(norms), 1)[0]
    return float(slope), norms


# -- summation by parts -------------------------------------------------------

def sbp_suite(n_cases: int = 100, seed: int = 0, tol: float = 1e-10):
    """Random solved rollouts against random global test functions.

    Returns a list of ``(case, residual, passed)`` rows.
    """
    from .mortar import InterfaceState, rollout
    from .nonlinearity import DissipativeModel, HamiltonianModel

    rng = np.random.default_rng(seed)
    rows = []
    for case in range(n_cases):
        m = int(rng.integers(1, 9))
        n = int(rng.integers(1, 6))
        dim = int(rng.integers(1, 3))
        h = float(rng.uniform(0.01, 0.3))
        blocks: LinearBlocks = assemble_blocks(m, h)
        kind = case % 3
        if kind == 0:
            model = HamiltonianModel.harmonic(float(rng.uniform(0.2, 4.0)))
        elif kind == 1:
            model = HamiltonianModel.pendulum(float(rng.uniform(0.2, 2.0)))
        else:
            model = DissipativeModel(float(rng.uniform(0.0, 2.0)))
        y0 = InterfaceState.from_values(rng.standard_normal(dim), rng.standard_normal(dim))
        states = rollout(y0, n, model, None, blocks)
        v = rng.standard_normal((n * m + 1, dim))
        r = sbp_residual(states, v, blocks)
        rows.append((case, r, abs(r) < tol))
    return rows

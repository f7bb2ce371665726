"""Lowest-order 1D de Rham complex on a rollout domain.

Nodal piecewise-linear fields (``P1``) carry the rate ``J`` and cellwise
constants (``dgP0``) carry the state ``u``.  Every operator here acts
identically on each state component; fields are stored as ``(nodes, d)`` or
``(cells, d)`` arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeMesh:
    """Uniform partition of ``[t0, t0 + n_domains * delta_t]``.

    Each rollout domain is split into ``m_cells`` cells of width ``h``.
    """

    n_domains: int
    m_cells: int
    delta_t: float
    t0: float = 0.0

    def __post_init__(self):
        if int(self.n_domains) != self.n_domains or self.n_domains < 1:
            raise ValueError(f"n_domains must be a positive integer, got {self.n_domains!r}")
        if int(self.m_cells) != self.m_cells or self.m_cells < 1:
            raise ValueError(f"m_cells must be a positive integer, got {self.m_cells!r}")
        if not np.isfinite(self.delta_t) or self.delta_t <= 0:
            raise ValueError(f"delta_t must be positive, got {self.delta_t!r}")
        if not np.isfinite(self.t0):
            raise ValueError("t0 must be finite")

    @property
    def h(self) -> float:
        return self.delta_t / self.m_cells

    @property
    def span(self) -> float:
        return self.n_domains * self.delta_t

    def node_times(self, domain: int | None = None) -> np.ndarray:
        """Node times of one domain, or of the whole mesh when ``domain`` is None."""
        if domain is None:
            k = np.arange(self.n_domains * self.m_cells + 1)
            return self.t0 + k * self.h
        k = np.arange(self.m_cells + 1)
        return self.t0 + domain * self.delta_t + k * self.h

    def cell_midpoints(self, domain: int) -> np.ndarray:
        t = self.node_times(domain)
        return 0.5 * (t[:-1] + t[1:])


@dataclass(frozen=True)
class LinearBlocks:
    """Assembled matrices of one rollout domain (scalar, per component)."""

    h: float
    mass_v: np.ndarray
    mass_q: np.ndarray
    incidence: np.ndarray
    strong_deriv: np.ndarray
    proj_v_to_q: np.ndarray
    e_first: np.ndarray
    e_last: np.ndarray

    def __post_init__(self):
        for a in (self.mass_v, self.mass_q, self.incidence, self.strong_deriv,
                  self.proj_v_to_q, self.e_first, self.e_last):
            a.setflags(write=False)

    @property
    def m_cells(self) -> int:
        return self.incidence.shape[0]

    @property
    def delta_t(self) -> float:
        return self.h * self.m_cells


def assemble_blocks(mesh: TimeMesh | int, h: float | None = None) -> LinearBlocks:
    """Assemble the mass, incidence and projection matrices for one domain.

    Accepts either a :class:`TimeMesh` or a pair ``(m_cells, h)``.
    """
    if isinstance(mesh, TimeMesh):
        m, h = mesh.m_cells, mesh.h
    else:
        m = int(mesh)
        if h is None or h <= 0:
            raise ValueError("cell width h must be positive")
        if m < 1:
            raise ValueError("need at least one cell")

    # exact hat-function products on each cell: (h/6) [[2, 1], [1, 2]]
    mass_v = np.zeros((m + 1, m + 1))
    idx = np.arange(m)
    mass_v[idx, idx] += 2.0
    mass_v[idx + 1, idx + 1] += 2.0
    mass_v[idx, idx + 1] += 1.0
    mass_v[idx + 1, idx] += 1.0
    mass_v *= h / 6.0

    incidence = np.zeros((m, m + 1))
    incidence[idx, idx] = -1.0
    incidence[idx, idx + 1] = 1.0

    proj = np.zeros((m, m + 1))
    proj[idx, idx] = 0.5
    proj[idx, idx + 1] = 0.5

    e_first = np.zeros(m + 1)
    e_first[0] = 1.0
    e_last = np.zeros(m + 1)
    e_last[-1] = 1.0

    return LinearBlocks(
        h=float(h),
        mass_v=mass_v,
        mass_q=h * np.eye(m),
        incidence=incidence,
        strong_deriv=incidence / h,
        proj_v_to_q=proj,
        e_first=e_first,
        e_last=e_last,
    )


def _as_field(values, rows: int, what: str) -> np.ndarray:
    a = np.asarray(values, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] != rows:
        raise ValueError(f"{what} must have {rows} rows, got shape {np.shape(values)}")
    return a


def strong_derivative(j, blocks: LinearBlocks) -> np.ndarray:
    """Exact time derivative of a nodal field: cellwise ``(J[k+1] - J[k]) / h``."""
    j = _as_field(j, blocks.m_cells + 1, "nodal field")
    return (j[1:] - j[:-1]) / blocks.h


def project_v_to_q(j, blocks: LinearBlocks) -> np.ndarray:
    """L2 projection of a nodal field onto cell constants (cell averages)."""
    j = _as_field(j, blocks.m_cells + 1, "nodal field")
    return 0.5 * (j[1:] + j[:-1])


def assemble_hodge_laplacian(blocks: LinearBlocks) -> np.ndarray:
    """Discrete Hodge Laplacian ``delta M_V^{-1} delta^T`` on cell constants (``M x M``)."""
    try:
        c = np.linalg.cholesky(blocks.mass_v)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("mass_v is not positive definite") from exc
    w = np.linalg.solve(c, blocks.incidence.T)
    lap = w.T @ w
    return 0.5 * (lap + lap.T)


def poincare_eigenvalue(blocks: LinearBlocks) -> float:
    """Smallest generalized eigenvalue of ``(L, M_Q)``.

    Its reciprocal is the sharp constant in ``u^T M_Q u <= C u^T L u``.
    """
    from scipy.linalg import eigh

    lap = assemble_hodge_laplacian(blocks)
    return float(eigh(lap, blocks.mass_q, eigvals_only=True)[0])


def sbp_residual(states, v, blocks: LinearBlocks) -> float:
    """Defect of the global discrete summation-by-parts identity.

    For a chain of solved domains and any global piecewise-linear ``v``
    (nodal values on the global mesh, shape ``(N*M + 1,)`` or
    ``(N*M + 1, d)``)::

        sum_i [ int_{Omega_i} J v dt + sum_k u_{i,k} (v(t_{i,k+1}) - v(t_{i,k})) ]
            = lambda_{N-1,N} v(T) - lambda_{0,0} v(t_0)

    Interior mortar contributions telescope through the continuity rows.
    Returns LHS - RHS summed over components.
    """
    n = len(states)
    if n == 0:
        return 0.0
    m = blocks.m_cells
    v = np.asarray(v, dtype=float)
    d = np.asarray(states[0].u).shape[-1]
    if v.ndim == 1:
        v = np.repeat(v[:, None], d, axis=1)
    if v.shape != (n * m + 1, d):
        raise ValueError(f"test function needs shape {(n * m + 1, d)}, got {v.shape}")

    lhs = 0.0
    for i, s in enumerate(states):
        j = np.asarray(s.j, dtype=float)
        u = np.asarray(s.u, dtype=float)
        if j.shape != (m + 1, d) or u.shape != (m, d):
            raise ValueError(f"domain {i} is inconsistent with the mesh")
        vi = v[i * m:(i + 1) * m + 1]
        lhs += float(np.sum(vi * (blocks.mass_v @ j)))
        lhs += float(np.sum(u * (vi[1:] - vi[:-1])))
    rhs = float(np.sum(np.asarray(states[-1].lambda_out) * v[-1])
                - np.sum(np.asarray(states[0].lambda_in) * v[0]))
    return lhs - rhs

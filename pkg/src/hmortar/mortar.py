"""Per-domain nonlinear solves chained through mortar interface conditions.

On each rollout domain the unknowns are, per state component,
``Y = (J_0..J_M, u_0..u_{M-1}, lambda_out, lambda_in)`` (``2M + 3`` rows) and
the residual is::

    M_V J + delta^T u - e_last lambda_out + e_first lambda_in
    delta J - M_Q N(u, J; theta)
    J_0 - j_end_prev
    lambda_in - lambda_out_prev

Vectors stack the components one after the other (component-major), so the
linear blocks are block-diagonal and only ``N`` couples components.

The solver core works on a leading batch axis; the single-domain functions
are thin wrappers around it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feec import LinearBlocks
from .nonlinearity import NonlinearityModel


class NonConvergence(RuntimeError):
    """Newton iteration budget exhausted or line search stalled."""

    def __init__(self, message, residual_norm=float("nan"), domain=None, iterations=0):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.domain = domain
        self.iterations = iterations


class SingularJacobian(RuntimeError):
    def __init__(self, message, domain=None):
        super().__init__(message)
        self.domain = domain


@dataclass(frozen=True)
class NewtonSettings:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_iters: int = 50
    damping_halvings: int = 10

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1 or self.damping_halvings < 0:
            raise ValueError("invalid iteration budget")


@dataclass(frozen=True)
class MortarPair:
    lambda_in: np.ndarray
    lambda_out: np.ndarray


@dataclass(frozen=True)
class InterfaceState:
    """Carrier between domains: end-node rate and outgoing mortar."""

    j_end: np.ndarray
    lambda_out: np.ndarray

    @classmethod
    def from_values(cls, j_end, lambda_out) -> "InterfaceState":
        j_end = np.atleast_1d(np.asarray(j_end, dtype=float))
        lam = np.atleast_1d(np.asarray(lambda_out, dtype=float))
        if j_end.shape != lam.shape or j_end.ndim != 1:
            raise ValueError("j_end and lambda_out must be vectors of equal length")
        if not (np.all(np.isfinite(j_end)) and np.all(np.isfinite(lam))):
            raise ValueError("interface state must be finite")
        return cls(j_end, lam)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.j_end, self.lambda_out])


@dataclass(frozen=True)
class DomainState:
    j: np.ndarray
    u: np.ndarray
    mortars: MortarPair

    @property
    def lambda_in(self) -> np.ndarray:
        return self.mortars.lambda_in

    @property
    def lambda_out(self) -> np.ndarray:
        return self.mortars.lambda_out

    @property
    def m_cells(self) -> int:
        return self.u.shape[0]

    @property
    def dim(self) -> int:
        return self.u.shape[1]

    def to_vector(self) -> np.ndarray:
        return _pack(self.j[None], self.u[None], self.lambda_out[None], self.lambda_in[None])[0]

    @classmethod
    def from_vector(cls, x, m_cells: int, dim: int) -> "DomainState":
        j, u, lo, li = _unpack(np.asarray(x, dtype=float)[None], m_cells, dim)
        return cls(j[0], u[0], MortarPair(li[0], lo[0]))

    @classmethod
    def zeros(cls, m_cells: int, dim: int) -> "DomainState":
        return cls(np.zeros((m_cells + 1, dim)), np.zeros((m_cells, dim)),
                   MortarPair(np.zeros(dim), np.zeros(dim)))


# -- packing ------------------------------------------------------------------

def _pack(j, u, lo, li):
    """Batched fields -> ``(B, d * (2M + 3))`` component-major vectors."""
    y = np.concatenate([j, u, lo[:, None, :], li[:, None, :]], axis=1)
    return np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(y.shape[0], -1)


def _unpack(x, m, d):
    y = x.reshape(x.shape[0], d, 2 * m + 3).transpose(0, 2, 1)
    return y[:, :m + 1], y[:, m + 1:2 * m + 1], y[:, 2 * m + 1], y[:, 2 * m + 2]


def _row(m, c, r):
    """Flat index of row ``r`` of component ``c``."""
    return c * (2 * m + 3) + r


def constant_jacobian(blocks: LinearBlocks, dim: int = 1) -> np.ndarray:
    """Jacobian of the residual for ``N = 0`` (one component, then kron over ``dim``)."""
    m = blocks.m_cells
    n = 2 * m + 3
    a = np.zeros((n, n))
    a[:m + 1, :m + 1] = blocks.mass_v
    a[:m + 1, m + 1:2 * m + 1] = blocks.incidence.T
    a[m, 2 * m + 1] = -1.0
    a[0, 2 * m + 2] = 1.0
    a[m + 1:2 * m + 1, :m + 1] = blocks.incidence
    a[2 * m + 1, 0] = 1.0
    a[2 * m + 2, 2 * m + 2] = 1.0
    return np.kron(np.eye(dim), a)


def interface_selectors(m: int, dim: int):
    """``P`` (unknowns -> (J_M, lambda_out)) and ``Q`` (interface -> coupling rows).

    Both are ``(d(2M+3), 2d)``; interface vectors are ordered
    ``(J_end[0..d-1], lambda_out[0..d-1])``.
    """
    n = dim * (2 * m + 3)
    p = np.zeros((n, 2 * dim))
    q = np.zeros((n, 2 * dim))
    for c in range(dim):
        p[_row(m, c, m), c] = 1.0
        p[_row(m, c, 2 * m + 1), dim + c] = 1.0
        q[_row(m, c, 2 * m + 1), c] = 1.0
        q[_row(m, c, 2 * m + 2), dim + c] = 1.0
    return p, q


# -- batched residual / Jacobian ---------------------------------------------

def _residual_batch(x, j_prev, lam_prev, model, z, blocks, dim, evaluate=None):
    m = blocks.m_cells
    j, u, lo, li = _unpack(x, m, dim)
    nl = (evaluate or model._evaluate)(u, j, z)
    r1 = np.einsum("ab,Bbc->Bac", blocks.mass_v, j) + np.einsum("ba,Bbc->Bac", blocks.incidence, u)
    r1[:, -1] -= lo
    r1[:, 0] += li
    r2 = (j[:, 1:] - j[:, :-1]) - blocks.h * nl
    r3 = j[:, 0] - j_prev
    r4 = li - lam_prev
    y = np.concatenate([r1, r2, r3[:, None], r4[:, None]], axis=1)
    return np.ascontiguousarray(y.transpose(0, 2, 1)).reshape(x.shape[0], -1)


def _jacobian_batch(x, model, z, blocks, dim, jconst=None):
    m = blocks.m_cells
    j, u, _, _ = _unpack(x, m, dim)
    if jconst is None:
        jconst = constant_jacobian(blocks, dim)
    jac = np.broadcast_to(jconst, (x.shape[0],) + jconst.shape).copy()
    du, djl, djr = model.local_partials(u, j, z)
    k = np.arange(m)[:, None, None]
    c = np.arange(dim)[None, :, None]
    cp = np.arange(dim)[None, None, :]
    rows = np.broadcast_to(_row(m, c, m + 1 + k), (m, dim, dim))
    col_u = np.broadcast_to(_row(m, cp, m + 1 + k), (m, dim, dim))
    col_l = np.broadcast_to(_row(m, cp, k), (m, dim, dim))
    col_r = np.broadcast_to(_row(m, cp, k + 1), (m, dim, dim))
    h = blocks.h
    jac[:, rows, col_u] -= h * du
    jac[:, rows, col_l] -= h * djl
    jac[:, rows, col_r] -= h * djr
    return jac


def _solve_batch(a, b):
    try:
        return np.linalg.solve(a, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        bad = [i for i in range(a.shape[0]) if np.linalg.matrix_rank(a[i]) < a.shape[1]]
        raise SingularJacobian(f"singular Jacobian in batch members {bad}") from None


def _safe_residual(x, j_prev, lam_prev, model, z, blocks, dim):
    with np.errstate(all="ignore"):
        try:
            r = _residual_batch(x, j_prev, lam_prev, model, z, blocks, dim)
        except FloatingPointError:
            r = np.full_like(x, np.inf)
    norms = np.linalg.norm(r, axis=1)
    norms[~np.isfinite(norms)] = np.inf
    return r, norms


def _take_z(z, idx):
    z = np.asarray(z, dtype=float)
    return z[idx] if z.ndim == 2 else z


def newton_batch(x0, j_prev, lam_prev, model, z, blocks, settings: NewtonSettings, dim):
    """Damped Newton on a batch of independent domain systems.

    Returns ``(x, converged, residual_norms, iterations)``; members that fail
    keep their last iterate and are flagged in ``converged``.
    """
    x = np.array(x0, dtype=float)
    bsz = x.shape[0]
    jconst = constant_jacobian(blocks, dim)
    r, norms = _safe_residual(x, j_prev, lam_prev, model, z, blocks, dim)
    target = np.maximum(settings.abs_tol, settings.rel_tol * norms)
    active = norms > target
    failed = ~np.isfinite(norms)
    active &= ~failed
    iters = np.zeros(bsz, dtype=int)
    for _ in range(settings.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        za = _take_z(z, idx)
        jac = _jacobian_batch(x[idx], model, za, blocks, dim, jconst)
        step = _solve_batch(jac, -r[idx])
        t = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        x_new = x[idx].copy()
        r_new = r[idx].copy()
        n_new = norms[idx].copy()
        for _ in range(settings.damping_halvings + 1):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            sub = idx[todo]
            trial = x[sub] + t[todo, None] * step[todo]
            rt, nt = _safe_residual(trial, j_prev[sub], lam_prev[sub], model,
                                    _take_z(z, sub), blocks, dim)
            ok = nt < norms[sub]
            acc = todo[ok]
            x_new[acc] = trial[ok]
            r_new[acc] = rt[ok]
            n_new[acc] = nt[ok]
            accepted[acc] = True
            t[todo[~ok]] *= 0.5
        iters[idx] += 1
        x[idx] = x_new
        r[idx] = r_new
        norms[idx] = n_new
        stalled = idx[~accepted]
        failed[stalled] = True
        active[stalled] = False
        active[idx] &= norms[idx] > target[idx]
    failed |= active
    return x, ~failed, norms, iters


def initial_guess(j_prev, lam_prev, m):
    """Constant extension of the incoming interface state (batched)."""
    bsz, dim = j_prev.shape
    j = np.repeat(j_prev[:, None, :], m + 1, axis=1)
    u = np.repeat(lam_prev[:, None, :], m, axis=1)
    return _pack(j, u, lam_prev, lam_prev)


# -- single-domain API ---------------------------------------------------------

def _z_vec(z):
    return np.zeros(0) if z is None else np.asarray(z, dtype=float)


def assemble_residual(state: DomainState, y_prev: InterfaceState, model: NonlinearityModel,
                      z, blocks: LinearBlocks) -> np.ndarray:
    """Residual vector of length ``d(2M+3)``."""
    _check_state(state, blocks)
    x = state.to_vector()[None]
    r = _residual_batch(x, y_prev.j_end[None], y_prev.lambda_out[None], model,
                        _z_vec(z), blocks, state.dim, evaluate=model.evaluate)
    return r[0]


def assemble_jacobian(state: DomainState, y_prev: InterfaceState, model: NonlinearityModel,
                      z, blocks: LinearBlocks) -> np.ndarray:
    _check_state(state, blocks)
    return _jacobian_batch(state.to_vector()[None], model, _z_vec(z), blocks, state.dim)[0]


def _check_state(state, blocks):
    m = blocks.m_cells
    if state.j.shape[0] != m + 1 or state.u.shape[0] != m:
        raise ValueError("domain state does not match the mesh")


def newton_solve_domain(y_prev: InterfaceState, model: NonlinearityModel, z, blocks: LinearBlocks,
                        settings: NewtonSettings | None = None,
                        guess: DomainState | None = None) -> DomainState:
    settings = settings or NewtonSettings()
    m, dim = blocks.m_cells, y_prev.j_end.size
    jp, lp = y_prev.j_end[None], y_prev.lambda_out[None]
    x0 = guess.to_vector()[None] if guess is not None else initial_guess(jp, lp, m)
    x, ok, norms, iters = newton_batch(x0, jp, lp, model, _z_vec(z), blocks, settings, dim)
    if not ok[0]:
        raise NonConvergence(f"Newton failed: residual {norms[0]:.3e} after {iters[0]} iterations",
                             residual_norm=float(norms[0]), iterations=int(iters[0]))
    return DomainState.from_vector(x[0], m, dim)


def restrict(state: DomainState) -> InterfaceState:
    return InterfaceState(state.j[-1].copy(), state.lambda_out.copy())


def interface_map(y_prev: InterfaceState, model, z, blocks, settings=None) -> InterfaceState:
    """One autoregressive step ``y_i = restrict(solve(y_{i-1}))``."""
    return restrict(newton_solve_domain(y_prev, model, z, blocks, settings))


@dataclass
class BatchRollout:
    """Stacked rollout results: ``j`` is ``(B, N, M+1, d)``, ``u`` ``(B, N, M, d)``."""

    j: np.ndarray
    u: np.ndarray
    lambda_out: np.ndarray
    lambda_in: np.ndarray
    converged: np.ndarray
    failed_domain: np.ndarray

    @property
    def n_domains(self) -> int:
        return self.u.shape[1]

    def states(self, b: int = 0) -> list[DomainState]:
        return [DomainState(self.j[b, i], self.u[b, i],
                            MortarPair(self.lambda_in[b, i], self.lambda_out[b, i]))
                for i in range(self.n_domains)]


def rollout_batch(j0, lam0, n_domains: int, model, z, blocks: LinearBlocks,
                  settings: NewtonSettings | None = None) -> BatchRollout:
    """Roll out ``B`` independent initial conditions (``j0``, ``lam0``: ``(B, d)``).

    A member whose solve fails is dropped from later domains; its entries
    from the failing domain on are NaN.
    """
    settings = settings or NewtonSettings()
    j0 = np.atleast_2d(np.asarray(j0, dtype=float))
    lam0 = np.atleast_2d(np.asarray(lam0, dtype=float))
    bsz, dim = j0.shape
    m = blocks.m_cells
    z = _z_vec(z)
    out_j = np.full((bsz, n_domains, m + 1, dim), np.nan)
    out_u = np.full((bsz, n_domains, m, dim), np.nan)
    out_lo = np.full((bsz, n_domains, dim), np.nan)
    out_li = np.full((bsz, n_domains, dim), np.nan)
    alive = np.ones(bsz, dtype=bool)
    failed_domain = np.full(bsz, -1)
    jp, lp = j0.copy(), lam0.copy()
    for i in range(n_domains):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x0 = initial_guess(jp[idx], lp[idx], m)
        try:
            x, ok, _, _ = newton_batch(x0, jp[idx], lp[idx], model, _take_z(z, idx),
                                       blocks, settings, dim)
        except SingularJacobian as exc:
            exc.domain = i
            raise
        j, u, lo, li = _unpack(x, m, dim)
        good = idx[ok]
        out_j[good, i], out_u[good, i] = j[ok], u[ok]
        out_lo[good, i], out_li[good, i] = lo[ok], li[ok]
        jp[good], lp[good] = j[ok, -1], lo[ok]
        bad = idx[~ok]
        alive[bad] = False
        failed_domain[bad] = i
    return BatchRollout(out_j, out_u, out_lo, out_li, alive, failed_domain)


def rollout(y0: InterfaceState, n_domains: int, model: NonlinearityModel, z, blocks: LinearBlocks,
            settings: NewtonSettings | None = None) -> list[DomainState]:
    """Solve ``n_domains`` consecutive domains starting from ``y0``."""
    if not (np.all(np.isfinite(y0.j_end)) and np.all(np.isfinite(y0.lambda_out))):
        raise ValueError("initial interface state must be finite")
    res = rollout_batch(y0.j_end[None], y0.lambda_out[None], n_domains, model, z, blocks, settings)
    if not res.converged[0]:
        i = int(res.failed_domain[0])
        raise NonConvergence(f"Newton failed in domain {i}", domain=i)
    return res.states(0)

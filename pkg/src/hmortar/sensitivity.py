"""Parameter gradients through chained domain solves.

Each domain solve ``H(Y_i; y_{i-1}, theta) = 0`` is differentiated
implicitly.  Losses use a reverse sweep: for ``i = N-1 .. 0`` solve
``J_i^T w_i = dL/dY_i + (lifted interface cotangent)``, accumulate
``-w_i^T dH/dtheta`` and hand ``w_i``'s coupling rows to domain ``i-1``.
The interface Jacobian ``d y_N / d theta`` is accumulated forward for the
norm sweeps.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .feec import LinearBlocks
from .mortar import (
    BatchRollout,
    InterfaceState,
    NewtonSettings,
    NonConvergence,
    SingularJacobian,
    _jacobian_batch,
    _pack,
    _row,
    _unpack,
    _z_vec,
    constant_jacobian,
    initial_guess,
    interface_selectors,
    newton_batch,
    newton_solve_domain,
    rollout_batch,
)


@dataclass
class LossSpec:
    """Targets for the cell states of every domain.

    ``targets`` is ``(N, M, d)`` or batched ``(B, N, M, d)``.  ``j_targets``
    (nodal, same layout with ``M+1``) adds a rate term scaled by ``j_weight``.
    ``weights`` optionally scales each domain.
    """

    targets: np.ndarray
    kind: str = "mse"
    weights: np.ndarray | None = None
    j_targets: np.ndarray | None = None
    j_weight: float = 0.0

    def __post_init__(self):
        if self.kind not in ("mse", "l1"):
            raise ValueError(f"unsupported loss kind {self.kind!r}")


def _pointwise(diff, kind):
    if kind == "mse":
        return diff * diff, 2.0 * diff
    return np.abs(diff), np.sign(diff)


def loss_and_cotangents(u, spec: LossSpec, j=None):
    """Loss value and its gradients with respect to ``u`` (and ``j``).

    ``u`` is ``(N, M, d)`` or ``(B, N, M, d)`` matching ``spec.targets``.
    The loss is the mean over every (domain, cell, component) entry.
    Returns ``(loss, cot_u, cot_j)``; ``cot_j`` is None without a rate term.
    """
    u = np.asarray(u, dtype=float)
    tgt = np.asarray(spec.targets, dtype=float)
    if u.shape != tgt.shape:
        raise ValueError(f"state shape {u.shape} does not match targets {tgt.shape}")
    val, der = _pointwise(u - tgt, spec.kind)
    w = 1.0
    if spec.weights is not None:
        w = np.asarray(spec.weights, dtype=float)[..., :, None, None]
    loss = float(np.sum(w * val) / u.size)
    cot_u = w * der / u.size
    cot_j = None
    if spec.j_targets is not None and spec.j_weight:
        if j is None:
            raise ValueError("rate targets given but no rates supplied")
        jv, jd = _pointwise(np.asarray(j, dtype=float) - spec.j_targets, spec.kind)
        loss += spec.j_weight * float(np.sum(w * jv) / jv.size)
        cot_j = spec.j_weight * w * jd / jv.size
    return loss, np.broadcast_to(cot_u, u.shape).copy(), cot_j


@dataclass
class AdjointWorkspace:
    """Output of :func:`backward`."""

    grad_theta: np.ndarray
    grad_y0: np.ndarray
    multipliers: list = field(default_factory=list)


def backward(rollout: BatchRollout, model, z, blocks: LinearBlocks, cot_u,
             cot_j=None, cot_final=None, keep_multipliers: bool = False) -> AdjointWorkspace:
    """Reverse sweep for a converged batched rollout.

    ``cot_u`` is ``(B, N, M, d)``; ``cot_j`` optionally ``(B, N, M+1, d)``;
    ``cot_final`` optionally ``(B, 2d)`` on the last interface state
    ``(J_end, lambda_out)``.  Gradients are summed over the batch.
    ``grad_y0`` is ``(B, 2d)``.
    """
    if not np.all(rollout.converged):
        raise ValueError("backward needs a fully converged rollout")
    bsz, n_dom, m, dim = rollout.u.shape
    z = _z_vec(z)
    n = 2 * m + 3
    jconst = constant_jacobian(blocks, dim)
    cot_u = np.asarray(cot_u, dtype=float).reshape(bsz, n_dom, m, dim)
    rows_jm = [_row(m, c, m) for c in range(dim)]
    rows_lo = [_row(m, c, 2 * m + 1) for c in range(dim)]
    rows_j0 = [_row(m, c, 2 * m + 1) for c in range(dim)]
    rows_li = [_row(m, c, 2 * m + 2) for c in range(dim)]
    carry = np.zeros((bsz, dim * n))
    if cot_final is not None:
        cf = np.asarray(cot_final, dtype=float).reshape(bsz, 2 * dim)
        carry[:, rows_jm] += cf[:, :dim]
        carry[:, rows_lo] += cf[:, dim:]
    grad = np.zeros(model.n_params)
    mults = []
    for i in reversed(range(n_dom)):
        j, u = rollout.j[:, i], rollout.u[:, i]
        x = _pack(j, u, rollout.lambda_out[:, i], rollout.lambda_in[:, i])
        zero_j = np.zeros_like(j)
        g = _pack(zero_j if cot_j is None else np.asarray(cot_j)[:, i], cot_u[:, i],
                  np.zeros((bsz, dim)), np.zeros((bsz, dim))) + carry
        jac = _jacobian_batch(x, model, z, blocks, dim, jconst)
        try:
            w = np.linalg.solve(np.swapaxes(jac, 1, 2), g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            raise SingularJacobian("singular transposed Jacobian", domain=i) from None
        wy = w.reshape(bsz, dim, n).transpose(0, 2, 1)
        w_dyn = wy[:, m + 1:2 * m + 1]
        if model.n_params:
            # dH/dtheta on the dynamics rows is -h dN/dtheta
            grad += blocks.h * model.theta_vjp(u, j, z, w_dyn)
        carry = np.zeros_like(carry)
        carry[:, rows_jm] = w[:, rows_j0]
        carry[:, rows_lo] = w[:, rows_li]
        if keep_multipliers:
            mults.append(w)
    grad_y0 = np.concatenate([carry[:, rows_jm], carry[:, rows_lo]], axis=1)
    if keep_multipliers:
        mults.reverse()
    return AdjointWorkspace(grad, grad_y0, mults)


def rollout_loss_and_grad(j0, lam0, model, z, blocks, spec: LossSpec,
                          settings: NewtonSettings | None = None):
    """Loss and ``dL/dtheta`` for a batch of windows (all must converge)."""
    n_dom = np.shape(spec.targets)[-3]
    res = rollout_batch(j0, lam0, n_dom, model, z, blocks, settings)
    if not np.all(res.converged):
        i = int(res.failed_domain[~res.converged][0])
        raise NonConvergence(f"rollout failed in domain {i}", domain=i)
    u = res.u
    tgt = np.asarray(spec.targets)
    if tgt.ndim == 3:
        u = u[0]
    loss, cu, cj = loss_and_cotangents(u, spec, res.j if tgt.ndim == 4 else res.j[0])
    if tgt.ndim == 3:
        cu = cu[None]
        cj = None if cj is None else cj[None]
    ws = backward(res, model, z, blocks, cu, cj)
    return loss, ws.grad_theta, res


def interface_jacobians(state_vec, model, z, blocks: LinearBlocks, dim: int):
    """``P^T J^{-1} Q`` and ``P^T J^{-1}`` at one solved domain."""
    m = blocks.m_cells
    jac = _jacobian_batch(np.asarray(state_vec)[None], model, _z_vec(z), blocks, dim)[0]
    p, q = interface_selectors(m, dim)
    pt_jinv = np.linalg.solve(jac.T, p).T
    return pt_jinv @ q, pt_jinv


def interface_jacobian_norms(model, z, blocks: LinearBlocks, y_samples, settings=None):
    """Spectral norms of ``P^T J_i^{-1} Q`` and ``P^T J_i^{-1}`` at solved samples.

    ``y_samples`` is an iterable of :class:`InterfaceState`.  Returns a list of
    dicts with keys ``pjq``, ``pj``, ``norm_pjq``, ``norm_pj``.
    """
    table = []
    for y in y_samples:
        st = newton_solve_domain(y, model, z, blocks, settings)
        pjq, pj = interface_jacobians(st.to_vector(), model, z, blocks, st.dim)
        table.append({"pjq": pjq, "pj": pj,
                      "norm_pjq": float(np.linalg.norm(pjq, 2)),
                      "norm_pj": float(np.linalg.norm(pj, 2))})
    return table


def gradient_norm_sweep(model, z, blocks: LinearBlocks, y0: InterfaceState, n_list,
                        settings: NewtonSettings | None = None, return_jacobians: bool = False):
    """``||d y_N / d theta||_2`` for each ``N`` in ``n_list`` along one rollout.

    Uses the forward recurrence
    ``G_i = (P^T J_i^{-1} Q) G_{i-1} - P^T J_i^{-1} R_i`` with ``G_0 = 0``;
    ``P^T J_i^{-1} R_i`` is formed row by row through ``theta_vjp``.
    """
    settings = settings or NewtonSettings()
    n_list = sorted(int(n) for n in n_list)
    dim = y0.j_end.size
    m = blocks.m_cells
    z = _z_vec(z)
    p, q = interface_selectors(m, dim)
    g = np.zeros((2 * dim, model.n_params))
    out = []
    jacs = {}
    j_prev, lam_prev = y0.j_end[None].copy(), y0.lambda_out[None].copy()
    jconst = constant_jacobian(blocks, dim)
    for i in range(1, n_list[-1] + 1):
        x, ok, norm, _ = newton_batch(initial_guess(j_prev, lam_prev, m), j_prev, lam_prev,
                                      model, z, blocks, settings, dim)
        if not ok[0]:
            raise NonConvergence(f"Newton failed in domain {i - 1}", residual_norm=float(norm[0]),
                                 domain=i - 1)
        jac = _jacobian_batch(x, model, z, blocks, dim, jconst)[0]
        pt_jinv = np.linalg.solve(jac.T, p).T
        j, u, lo, _ = _unpack(x, m, dim)
        rows = pt_jinv.reshape(2 * dim, dim, 2 * m + 3).transpose(0, 2, 1)[:, m + 1:2 * m + 1]
        if model.n_params:
            # -P^T J^{-1} R = h * P^T J^{-1}|_dyn dN/dtheta
            b = np.stack([blocks.h * model.theta_vjp(u, j, z, rows[r][None])
                          for r in range(2 * dim)])
            g = (pt_jinv @ q) @ g + b
        j_prev, lam_prev = j[:, -1].copy(), lo.copy()
        if i in n_list:
            out.append((i, float(np.linalg.norm(g, 2)) if g.size else 0.0))
            if return_jacobians:
                jacs[i] = g.copy()
    if return_jacobians:
        return out, jacs
    return out

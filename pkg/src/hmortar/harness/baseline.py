"""Explicit-Euler reference integrator over the same nonlinearity interface.

The state is ``(u, J)`` and one step of size ``dt`` is::

    u <- u + dt * J
    J <- J + dt * N(u, [J, J], z)

i.e. a single cell whose two nodal rates coincide.
"""
from __future__ import annotations

import numpy as np


def _cell(u, j):
    return u[None, None, :], np.stack([j, j])[None]


def euler_rollout(model, u0, j0, z, dt: float, n_steps: int) -> np.ndarray:
    """States ``(n_steps + 1, 2d)`` laid out as ``(u, J)``."""
    u = np.atleast_1d(np.asarray(u0, dtype=float)).copy()
    j = np.atleast_1d(np.asarray(j0, dtype=float)).copy()
    out = [np.concatenate([u, j])]
    for _ in range(n_steps):
        uc, jc = _cell(u, j)
        acc = model.evaluate(uc, jc, z)[0, 0]
        u, j = u + dt * j, j + dt * acc
        out.append(np.concatenate([u, j]))
    return np.array(out)


def euler_gradient_norms(model, u0, j0, z, dt: float, n_list):
    """``||d (u_n, J_n) / d theta||_2`` by forward sensitivity, for ``n`` in ``n_list``.

    Non-finite states stop the sweep; remaining entries are ``inf``.
    """
    n_list = sorted(int(n) for n in n_list)
    u = np.atleast_1d(np.asarray(u0, dtype=float)).copy()
    j = np.atleast_1d(np.asarray(j0, dtype=float)).copy()
    d = u.size
    z = np.zeros(0) if z is None else np.asarray(z, dtype=float)
    su = np.zeros((d, model.n_params))
    sj = np.zeros((d, model.n_params))
    out = []
    eye = np.eye(d)
    for n in range(1, n_list[-1] + 1):
        uc, jc = _cell(u, j)
        try:
            acc = model.evaluate(uc, jc, z)[0, 0]
        except FloatingPointError:
            out.extend((k, float("inf")) for k in n_list if k >= n)
            return out
        du, djl, djr = (blk[0, 0] for blk in model.local_partials(uc, jc, z))
        dth = np.stack([model.theta_vjp(uc, jc, z, eye[c][None, None]) for c in range(d)])
        su, sj = su + dt * sj, sj + dt * (du @ su + (djl + djr) @ sj + dth)
        u, j = u + dt * j, j + dt * acc
        if n in n_list:
            g = np.vstack([sj, su])
            norm = float(np.linalg.norm(g, 2)) if np.all(np.isfinite(g)) else float("inf")
            out.append((n, norm))
    return out

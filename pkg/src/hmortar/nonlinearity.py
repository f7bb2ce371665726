"""Cellwise nonlinearities ``N(u, J, z; theta)`` for the mixed scheme.

A model maps cell states ``u`` (``(..., M, d)``), nodal rates ``J``
(``(..., M+1, d)``) and a conditioning vector ``z`` to cell accelerations
(``(..., M, d)``).  All models shipped here are local: cell ``k`` only sees
``u[k]``, ``J[k]``, ``J[k+1]`` and ``z``.  The Newton and adjoint code only
relies on :meth:`NonlinearityModel.local_partials` and
:meth:`NonlinearityModel.theta_vjp`.
"""
from __future__ import annotations

from typing import Callable

import numpy as np


class NonlinearityModel:
    """Base class.  Subclasses provide ``_evaluate``, ``local_partials``, ``theta_vjp``."""

    kind = "base"

    def __init__(self, theta=()):
        theta = np.array(theta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta has non-finite entries")
        theta.setflags(write=False)
        self._theta = theta

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @property
    def n_params(self) -> int:
        return self._theta.size

    def with_theta(self, theta) -> "NonlinearityModel":
        """Copy of this model with new parameters."""
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {theta.size}")
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        NonlinearityModel.__init__(new, theta)
        return new

    def evaluate(self, u, j, z=None) -> np.ndarray:
        u, j, z = self._check(u, j, z)
        out = self._evaluate(u, j, z)
        if not np.all(np.isfinite(out)):
            raise FloatingPointError("nonlinearity produced non-finite values")
        return out

    def partials(self, u, j, z=None):
        """Dense ``(dN/du, dN/dJ)`` of shapes ``(M*d, M*d)`` and ``(M*d, (M+1)*d)``.

        Rows and columns are ordered ``(cell, component)``.  Only defined for
        a single (unbatched) domain.
        """
        u, j, z = self._check(u, j, z)
        if u.ndim != 2:
            raise ValueError("partials expects a single domain")
        m, d = u.shape
        du, djl, djr = self.local_partials(u, j, z)
        pu = np.zeros((m, d, m, d))
        pj = np.zeros((m, d, m + 1, d))
        k = np.arange(m)
        pu[k, :, k, :] = du
        pj[k, :, k, :] += djl
        pj[k, :, k + 1, :] += djr
        return pu.reshape(m * d, m * d), pj.reshape(m * d, (m + 1) * d)

    def local_partials(self, u, j, z):
        """Per-cell blocks ``dN_k/du_k``, ``dN_k/dJ_k``, ``dN_k/dJ_{k+1}``, each ``(..., M, d, d)``."""
        raise NotImplementedError

    def theta_vjp(self, u, j, z, cotangent) -> np.ndarray:
        """``sum(cotangent * dN/dtheta)`` over all leading axes and cells."""
        raise NotImplementedError

    def _evaluate(self, u, j, z):
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} cannot be serialized")

    def _check(self, u, j, z):
        u = np.asarray(u, dtype=float)
        j = np.asarray(j, dtype=float)
        if u.ndim < 2 or j.shape[:-2] != u.shape[:-2] or j.shape[-2] != u.shape[-2] + 1 \
                or j.shape[-1] != u.shape[-1]:
            raise ValueError(f"inconsistent shapes u{u.shape} J{j.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(j))):
            raise FloatingPointError("non-finite input to nonlinearity")
        z = np.zeros(0) if z is None else np.asarray(z, dtype=float)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("non-finite conditioning vector")
        return u, j, z


def _diag_blocks(values):
    """``(..., M, d)`` -> ``(..., M, d, d)`` with ``values`` on the diagonal."""
    d = values.shape[-1]
    return values[..., :, None] * np.eye(d)


class HamiltonianModel(NonlinearityModel):
    """Conservative force ``N = F(u; theta)`` applied componentwise.

    ``force(u, theta)``, ``force_du(u, theta)`` and ``force_dtheta(u, theta)``
    (the last returning ``(..., n_params)``) are elementwise callables.
    """

    kind = "hamiltonian"

    def __init__(self, force: Callable, force_du: Callable,
                 force_dtheta: Callable | None = None, theta=(), name: str | None = None):
        super().__init__(theta)
        self.force = force
        self.force_du = force_du
        self.force_dtheta = force_dtheta
        self.name = name

    @classmethod
    def harmonic(cls, omega2: float = 1.0) -> "HamiltonianModel":
        """Linear spring ``N = -omega2 * u``; ``theta = (omega2,)``."""
        return cls(
            force=lambda u, th: -th[0] * u,
            force_du=lambda u, th: np.full_like(u, -th[0]),
            force_dtheta=lambda u, th: -u[..., None],
            theta=[omega2],
            name="harmonic",
        )

    @classmethod
    def pendulum(cls, g: float = 1.0) -> "HamiltonianModel":
        """Pendulum ``N = -g sin(u)``; ``theta = (g,)``."""
        return cls(
            force=lambda u, th: -th[0] * np.sin(u),
            force_du=lambda u, th: -th[0] * np.cos(u),
            force_dtheta=lambda u, th: -np.sin(u)[..., None],
            theta=[g],
            name="pendulum",
        )

    def potential_force(self, u) -> np.ndarray:
        """``V'(u)`` at cell values, used by the energy diagnostics."""
        return self.force(np.asarray(u, dtype=float), self.theta)

    def _evaluate(self, u, j, z):
        return self.force(u, self.theta)

    def local_partials(self, u, j, z):
        u = np.asarray(u, dtype=float)
        zero = np.zeros(u.shape + (u.shape[-1],))
        return _diag_blocks(self.force_du(u, self.theta)), zero, zero.copy()

    def theta_vjp(self, u, j, z, cotangent):
        if self.n_params == 0:
            return np.zeros(0)
        g = self.force_dtheta(np.asarray(u, dtype=float), self.theta)
        cot = np.asarray(cotangent, dtype=float)
        return g.reshape(-1, self.n_params).T @ cot.reshape(-1)

    def to_config(self):
        if self.name not in ("harmonic", "pendulum"):
            super().to_config()
        return {"kind": self.name, "theta": self.theta.tolist()}


class DissipativeModel(NonlinearityModel):
    """Damped dynamics ``N = V'(u) - beta * pi(J)``; ``theta = (beta,)``.

    ``pi`` is the cell average of the nodal rate.  The potential part is held
    fixed (its parameters are not trained).
    """

    kind = "dissipative"

    def __init__(self, beta: float = 0.5, potential: HamiltonianModel | None = None):
        super().__init__([beta])
        self.potential = potential if potential is not None else HamiltonianModel.harmonic(1.0)

    @property
    def beta(self) -> float:
        return float(self.theta[0])

    def potential_force(self, u):
        return self.potential.potential_force(u)

    def _evaluate(self, u, j, z):
        avg = 0.5 * (j[..., 1:, :] + j[..., :-1, :])
        return self.potential._evaluate(u, j, z) - self.beta * avg

    def local_partials(self, u, j, z):
        du, _, _ = self.potential.local_partials(u, j, z)
        half = _diag_blocks(np.full(np.shape(u), -0.5 * self.beta))
        return du, half, half.copy()

    def theta_vjp(self, u, j, z, cotangent):
        j = np.asarray(j, dtype=float)
        avg = 0.5 * (j[..., 1:, :] + j[..., :-1, :])
        return np.array([-np.sum(np.asarray(cotangent) * avg)])

    def to_config(self):
        return {"kind": "dissipative", "theta": self.theta.tolist(),
                "potential": self.potential.to_config()}


class ZeroModel(NonlinearityModel):
    """``N = 0``: free motion, constant rate."""

    kind = "zero"

    def __init__(self):
        super().__init__(())

    def _evaluate(self, u, j, z):
        return np.zeros_like(u)

    def local_partials(self, u, j, z):
        u = np.asarray(u, dtype=float)
        zero = np.zeros(u.shape + (u.shape[-1],))
        return zero, zero.copy(), zero.copy()

    def theta_vjp(self, u, j, z, cotangent):
        return np.zeros(0)

    def to_config(self):
        return {"kind": "zero", "theta": []}


def dyt(x, alpha, gamma, beta):
    """Dynamic tanh normalization ``gamma * tanh(alpha * x) + beta``."""
    return np.asarray(gamma) * np.tanh(alpha * np.asarray(x)) + np.asarray(beta)


def model_from_config(config: dict) -> NonlinearityModel:
    """Rebuild a model from :meth:`NonlinearityModel.to_config` output."""
    kind = config.get("kind")
    theta = config.get("theta", [])
    if kind == "harmonic":
        return HamiltonianModel.harmonic(*theta)
    if kind == "pendulum":
        return HamiltonianModel.pendulum(*theta)
    if kind == "dissipative":
        pot = model_from_config(config["potential"]) if "potential" in config else None
        return DissipativeModel(theta[0], pot)
    if kind == "zero":
        return ZeroModel()
    if kind == "transformer":
        from .transformer import LocalTransformer, LocalTransformerConfig

        cfg = LocalTransformerConfig(**config["config"])
        return LocalTransformer(cfg, theta=np.asarray(theta, dtype=float))
    raise ValueError(f"unknown model kind {kind!r}")

"""Synthetic trajectories, CSV storage and training-window sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

LORENZ_DEFAULTS = (10.0, 28.0, 8.0 / 3.0)


@dataclass
class Trajectory:
    """Uniformly sampled states ``u`` (``(T, d)``) at times ``t``.

    ``rates`` holds exact time derivatives when the generator knows them;
    otherwise window sampling falls back to central differences.  ``z`` is
    the conditioning vector shared by the whole trajectory.
    """

    t: np.ndarray
    u: np.ndarray
    rates: np.ndarray | None = None
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.u.ndim == 1:
            self.u = self.u[:, None]
        if self.t.ndim != 1 or self.u.shape[0] != self.t.size:
            raise ValueError("t must be 1-D and match the rows of u")
        if self.rates is not None:
            self.rates = np.asarray(self.rates, dtype=float).reshape(self.u.shape)
        self.z = np.asarray(self.z, dtype=float).reshape(-1)

    @property
    def dim(self) -> int:
        return self.u.shape[1]

    @property
    def dt(self) -> float:
        if self.t.size < 2:
            raise ValueError("trajectory has fewer than two samples")
        return float(self.t[1] - self.t[0])

    def derivative(self) -> np.ndarray:
        """Exact rates if known, else second-order central differences."""
        if self.rates is not None:
            return self.rates
        return np.gradient(self.u, self.t, axis=0, edge_order=2)

    def save_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"u{c}" for c in range(self.dim)])
            for ti, row in zip(self.t, self.u):
                w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])

    @classmethod
    def load_csv(cls, path, z=None) -> "Trajectory":
        path = Path(path)
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "t" or len(rows[0]) < 2:
            raise ValueError(f"{path}: expected header 't,u0,...'")
        expect = ["t"] + [f"u{c}" for c in range(len(rows[0]) - 1)]
        if rows[0] != expect:
            raise ValueError(f"{path}: malformed header {rows[0]}")
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        if data.size == 0:
            raise ValueError(f"{path}: no samples")
        return cls(data[:, 0], data[:, 1:], z=np.zeros(0) if z is None else z)


def lorenz_rhs(state, sigma=10.0, rho=28.0, beta=8.0 / 3.0) -> np.ndarray:
    x, y, z = np.moveaxis(np.asarray(state, dtype=float), -1, 0)
    return np.stack([sigma * (y - x), x * (rho - z) - y, x * y - beta * z], axis=-1)


def rk4(rhs: Callable, y0, dt: float, n_steps: int) -> np.ndarray:
    """Classic fixed-step RK4; returns ``(n_steps + 1, d)`` states."""
    out = np.empty((n_steps + 1, np.size(y0)))
    y = np.array(y0, dtype=float).reshape(-1)
    out[0] = y
    for n in range(n_steps):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * dt * k1)
        k3 = rhs(y + 0.5 * dt * k2)
        k4 = rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[n + 1] = y
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("integration produced non-finite states")
    return out


def generate_lorenz(sigma=10.0, rho=28.0, beta=8.0 / 3.0, t_final=100.0, dt=0.01,
                    ic=(1.0, 1.0, 1.0), seed=None) -> Trajectory:
    """Lorenz trajectory from fixed-step RK4.

    ``seed`` (optional) adds a ``N(0, 1e-3)`` perturbation to ``ic`` so that
    distinct seeds give distinct but reproducible trajectories.
    """
    if not dt > 0 or not t_final >= 0:
        raise ValueError("dt must be positive and t_final non-negative")
    y0 = np.array(ic, dtype=float).reshape(3)
    if seed is not None:
        y0 = y0 + 1e-3 * np.random.default_rng(seed).standard_normal(3)
    n = int(round(t_final / dt))
    u = _lorenz_rk4(y0, float(dt), n, float(sigma), float(rho), float(beta))
    return Trajectory(dt * np.arange(n + 1), u, rates=lorenz_rhs(u, sigma, rho, beta))


def _lorenz_rk4(y0, dt, n, s, r, b):
    # scalar loop; same arithmetic as rk4(lorenz_rhs) without per-step array overhead
    x, y, z = (float(v) for v in y0)
    out = np.empty((n + 1, 3))
    out[0] = x, y, z
    h2, h6 = 0.5 * dt, dt / 6.0
    for i in range(1, n + 1):
        ax, ay, az = s * (y - x), x * (r - z) - y, x * y - b * z
        x2, y2, z2 = x + h2 * ax, y + h2 * ay, z + h2 * az
        bx, by, bz = s * (y2 - x2), x2 * (r - z2) - y2, x2 * y2 - b * z2
        x3, y3, z3 = x + h2 * bx, y + h2 * by, z + h2 * bz
        cx, cy, cz = s * (y3 - x3), x3 * (r - z3) - y3, x3 * y3 - b * z3
        x4, y4, z4 = x + dt * cx, y + dt * cy, z + dt * cz
        dx, dy, dz = s * (y4 - x4), x4 * (r - z4) - y4, x4 * y4 - b * z4
        x += h6 * (ax + 2.0 * bx + 2.0 * cx + dx)
        y += h6 * (ay + 2.0 * by + 2.0 * cy + dy)
        z += h6 * (az + 2.0 * bz + 2.0 * cz + dz)
        out[i] = x, y, z
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("integration produced non-finite states")
    return out


def damped_oscillator(t, omega: float, beta: float, u0: float = 1.0, v0: float = 0.0):
    """Closed-form solution of ``u'' + beta u' + omega^2 u = 0`` and its rate."""
    t = np.asarray(t, dtype=float)
    a = 0.5 * beta
    disc = omega * omega - a * a
    if disc > 0:
        wd = np.sqrt(disc)
        c1, c2 = u0, (v0 + a * u0) / wd
        e = np.exp(-a * t)
        cs, sn = np.cos(wd * t), np.sin(wd * t)
        u = e * (c1 * cs + c2 * sn)
        v = e * (-a * (c1 * cs + c2 * sn) + wd * (-c1 * sn + c2 * cs))
    elif disc == 0:
        c1, c2 = u0, v0 + a * u0
        e = np.exp(-a * t)
        u = e * (c1 + c2 * t)
        v = e * (c2 - a * (c1 + c2 * t))
    else:
        s = np.sqrt(-disc)
        r1, r2 = -a + s, -a - s
        c2 = (v0 - r1 * u0) / (r2 - r1)
        c1 = u0 - c2
        u = c1 * np.exp(r1 * t) + c2 * np.exp(r2 * t)
        v = c1 * r1 * np.exp(r1 * t) + c2 * r2 * np.exp(r2 * t)
    return u, v


def generate_parametric_oscillator(omega=1.0, beta=0.5, t_final=10.0, dt=0.01,
                                   ic=(1.0, 0.0)) -> Trajectory:
    """Samples of the damped oscillator with conditioning ``z = (beta,)``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = int(round(t_final / dt))
    t = dt * np.arange(n + 1)
    u, v = damped_oscillator(t, omega, beta, *ic)
    return Trajectory(t, u[:, None], rates=v[:, None], z=np.array([beta]))


@dataclass
class WindowBatch:
    """Stacked training windows.

    ``targets`` is ``(B, N, M, d)``; ``u0`` and ``j0`` are ``(B, d)``; ``z``
    is ``(B, p)``.
    """

    t_start: np.ndarray
    u0: np.ndarray
    j0: np.ndarray
    targets: np.ndarray
    z: np.ndarray

    def __len__(self):
        return self.t_start.size

    def subset(self, idx) -> "WindowBatch":
        return WindowBatch(self.t_start[idx], self.u0[idx], self.j0[idx],
                           self.targets[idx], self.z[idx])


def _stride(traj: Trajectory, h: float) -> int:
    s = h / traj.dt
    k = int(round(s))
    if k < 1 or abs(s - k) > 1e-6 * max(1.0, s):
        raise ValueError(f"cell width {h} is not a multiple of the sample spacing {traj.dt}")
    return k


def window_starts(traj: Trajectory, n_domains: int, m_cells: int, h: float) -> int:
    """Number of admissible window start indices."""
    span = n_domains * m_cells * _stride(traj, h)
    return max(0, traj.t.size - span)


def extract_window(traj: Trajectory, start: int, n_domains: int, m_cells: int, h: float,
                   alignment: str = "left"):
    """One window beginning at sample ``start``: ``(t0, u0, j0, targets)``."""
    k = _stride(traj, h)
    n_cells = n_domains * m_cells
    if start < 0 or start + n_cells * k >= traj.t.size:
        raise ValueError("window runs past the end of the trajectory")
    idx = start + k * np.arange(n_cells + 1)
    samples = traj.u[idx]
    if alignment == "left":
        cells = samples[:-1]
    elif alignment == "midpoint":
        if k % 2 == 0:
            cells = traj.u[idx[:-1] + k // 2]
        else:
            cells = 0.5 * (samples[:-1] + samples[1:])
    else:
        raise ValueError(f"unknown alignment {alignment!r}")
    rates = traj.derivative()
    return (float(traj.t[start]), traj.u[start].copy(), rates[start].copy(),
            cells.reshape(n_domains, m_cells, traj.dim))


def sample_windows(trajectories, n_domains: int, m_cells: int, h: float, batch_size: int,
                   rng: np.random.Generator, alignment: str = "left") -> WindowBatch:
    """Uniformly random contiguous windows (trajectory first, then start index)."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    counts = np.array([window_starts(tr, n_domains, m_cells, h) for tr in trajectories])
    if np.all(counts == 0):
        raise ValueError(f"trajectory too short for a window of {n_domains * m_cells} cells")
    usable = np.flatnonzero(counts > 0)
    which = usable[rng.integers(0, usable.size, size=batch_size)]
    rows = []
    for w in which:
        s = int(rng.integers(0, counts[w]))
        rows.append((extract_window(trajectories[w], s, n_domains, m_cells, h, alignment),
                     trajectories[w].z))
    return WindowBatch(
        np.array([r[0][0] for r in rows]),
        np.stack([r[0][1] for r in rows]),
        np.stack([r[0][2] for r in rows]),
        np.stack([r[0][3] for r in rows]),
        np.stack([r[1] for r in rows]),
    )

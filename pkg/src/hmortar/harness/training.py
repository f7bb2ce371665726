"""Minibatch training of a nonlinearity through full rollouts, checkpoints and forecasts."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..feec import assemble_blocks
from ..mortar import BatchRollout, InterfaceState, NewtonSettings, NonConvergence, rollout_batch
from ..nonlinearity import NonlinearityModel, model_from_config
from ..sensitivity import LossSpec, backward, loss_and_cotangents
from .data import Trajectory, WindowBatch, sample_windows

FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    """Flat training configuration (also the JSON config schema for ``train``)."""

    n_domains: int = 11
    m_cells: int = 10
    delta_t: float = 0.1
    model: dict = field(default_factory=lambda: {"kind": "transformer", "config": {}})
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    steps: int = 100
    batch_size: int = 32
    loss: str = "mse"
    j_weight: float = 0.0
    alignment: str = "left"
    seed: int = 0
    checkpoint_interval: int = 0
    probe_size: int = 64
    probe_interval: int = 50
    grad_clip: float = 0.0
    max_skip_fraction: float = 0.5

    def __post_init__(self):
        for name in ("n_domains", "m_cells", "batch_size", "probe_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0 or self.checkpoint_interval < 0 or self.probe_interval < 0:
            raise ValueError("step counts must be non-negative")
        if not (self.delta_t > 0 and self.lr > 0):
            raise ValueError("delta_t and lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment decay rates must lie in [0, 1)")
        if self.loss not in ("mse", "l1"):
            raise ValueError(f"unsupported loss {self.loss!r}")

    @property
    def h(self) -> float:
        return self.delta_t / self.m_cells

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


class Adam:
    """Adam with decoupled weight decay over a flat parameter vector."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2 = lr, beta1, beta2
        self.eps, self.weight_decay = eps, weight_decay
        self.step_count = 0
        self.m = None
        self.v = None

    def step(self, theta, grad):
        theta = np.asarray(theta, dtype=float)
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mh = self.m / (1 - self.beta1 ** self.step_count)
        vh = self.v / (1 - self.beta2 ** self.step_count)
        return theta - self.lr * (mh / (np.sqrt(vh) + self.eps) + self.weight_decay * theta)

    def state_dict(self) -> dict:
        return {"step_count": self.step_count,
                "m": None if self.m is None else self.m.tolist(),
                "v": None if self.v is None else self.v.tolist()}

    def load_state_dict(self, s: dict):
        self.step_count = int(s["step_count"])
        self.m = None if s["m"] is None else np.array(s["m"], dtype=float)
        self.v = None if s["v"] is None else np.array(s["v"], dtype=float)


# -- checkpoints -----------------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: dict
    theta: np.ndarray
    optimizer: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def model(self) -> NonlinearityModel:
        cfg = dict(self.model_config)
        cfg["theta"] = self.theta
        return model_from_config(cfg)

    def to_dict(self) -> dict:
        return {"format_version": self.format_version, "model": self.model_config,
                "theta": [float(v) for v in self.theta], "optimizer": self.optimizer,
                "metadata": self.metadata}

    def save(self, path) -> None:
        # json writes floats with repr, which round-trips float64 exactly
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        d = json.loads(Path(path).read_text())
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {d.get('format_version')!r}")
        return cls(d["model"], np.array(d["theta"], dtype=float), d.get("optimizer", {}),
                   d.get("metadata", {}), d["format_version"])

    @classmethod
    def from_model(cls, model: NonlinearityModel, optimizer=None, metadata=None) -> "Checkpoint":
        cfg = model.to_config()
        cfg.pop("theta", None)
        return cls(cfg, np.array(model.theta), optimizer or {}, metadata or {})


# -- training ----------------------------------------------------------------------

class TrainingAborted(RuntimeError):
    def __init__(self, message, step, skipped, batch_size):
        super().__init__(message)
        self.step, self.skipped, self.batch_size = step, skipped, batch_size


def _build_model(cfg: TrainConfig, dim: int, p: int) -> NonlinearityModel:
    mc = dict(cfg.model)
    if mc.get("kind") == "transformer" and "theta" not in mc:
        from ..transformer import LocalTransformer, LocalTransformerConfig

        tc = dict(mc.get("config", {}))
        tc.setdefault("d", dim)
        tc.setdefault("p", p)
        tc.setdefault("seed", cfg.seed)
        return LocalTransformer(LocalTransformerConfig(**tc))
    return model_from_config(mc)


def batch_loss(model, batch: WindowBatch, blocks, n_domains, settings=None, loss="mse",
               with_grad=True):
    """Rollout loss over the windows that converge.

    Returns ``(loss, grad, n_skipped)``; the loss is averaged over the
    successful windows only.
    """
    res = rollout_batch(batch.j0, batch.u0, n_domains, model, batch.z, blocks, settings)
    ok = np.flatnonzero(res.converged)
    skipped = len(batch) - ok.size
    if ok.size == 0:
        return float("nan"), None, skipped
    sub = BatchRollout(res.j[ok], res.u[ok], res.lambda_out[ok], res.lambda_in[ok],
                       res.converged[ok], res.failed_domain[ok])
    spec = LossSpec(batch.targets[ok], kind=loss)
    val, cot_u, _ = loss_and_cotangents(sub.u, spec)
    if not with_grad:
        return val, None, skipped
    z = batch.z[ok]
    grad = backward(sub, model, z, blocks, cot_u).grad_theta
    return val, grad, skipped


def train(cfg: TrainConfig, trajectories, metrics_path=None, checkpoint_path=None,
          settings: NewtonSettings | None = None, model: NonlinearityModel | None = None,
          log=None) -> tuple[Checkpoint, list[dict]]:
    """Adam over rollout losses on random windows.

    Each step appends ``{step, loss, grad_norm, wall_time, skipped}`` (plus
    ``probe_loss`` every ``probe_interval`` steps) to ``metrics_path`` as one
    JSON record per line.  A checkpoint is written every
    ``checkpoint_interval`` steps and at the end.
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    rng = np.random.default_rng(cfg.seed)
    dim = trajectories[0].dim
    p = trajectories[0].z.size
    if model is None:
        model = _build_model(cfg, dim, p)
    blocks = assemble_blocks(cfg.m_cells, cfg.h)
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    probe = sample_windows(trajectories, cfg.n_domains, cfg.m_cells, cfg.h, cfg.probe_size,
                           np.random.default_rng([cfg.seed, 1]), cfg.alignment)
    records = []
    fh = open(metrics_path, "w") if metrics_path else None
    t0 = time.perf_counter()
    loss = float("nan")

    def probe_loss():
        return batch_loss(model, probe, blocks, cfg.n_domains, settings, cfg.loss, False)[0]

    def save(step):
        if checkpoint_path:
            ck = Checkpoint.from_model(model, opt.state_dict(), {
                "steps": step, "final_loss": loss, "seed": cfg.seed, "config": asdict(cfg)})
            ck.save(checkpoint_path)

    try:
        for step in range(cfg.steps + 1):
            rec = {"step": step}
            if cfg.probe_interval and (step % cfg.probe_interval == 0 or step == cfg.steps):
                rec["probe_loss"] = probe_loss()
            if step == cfg.steps:
                if "probe_loss" in rec:
                    records.append(rec)
                    if fh:
                        fh.write(json.dumps(rec) + "\n")
                break
            batch = sample_windows(trajectories, cfg.n_domains, cfg.m_cells, cfg.h,
                                   cfg.batch_size, rng, cfg.alignment)
            loss, grad, skipped = batch_loss(model, batch, blocks, cfg.n_domains, settings,
                                             cfg.loss)
            if skipped > cfg.max_skip_fraction * cfg.batch_size:
                raise TrainingAborted(
                    f"{skipped} of {cfg.batch_size} windows failed to converge at step {step}",
                    step, skipped, cfg.batch_size)
            gnorm = float(np.linalg.norm(grad))
            if cfg.grad_clip and gnorm > cfg.grad_clip:
                grad = grad * (cfg.grad_clip / gnorm)
            model = model.with_theta(opt.step(model.theta, grad))
            rec.update(loss=loss, grad_norm=gnorm, wall_time=time.perf_counter() - t0,
                       skipped=int(skipped))
            records.append(rec)
            if fh:
                fh.write(json.dumps(rec) + "\n")
                fh.flush()
            if log is not None:
                log(rec)
            if cfg.checkpoint_interval and (step + 1) % cfg.checkpoint_interval == 0:
                save(step + 1)
    finally:
        if fh:
            fh.close()
    save(cfg.steps)
    ck = Checkpoint.from_model(model, opt.state_dict(), {
        "steps": cfg.steps, "final_loss": loss, "seed": cfg.seed, "config": asdict(cfg)})
    return ck, records


def strip_wall_time(records):
    """Metrics without the timing field, for reproducibility comparisons."""
    return [{k: v for k, v in r.items() if k != "wall_time"} for r in records]


# -- forecasting -------------------------------------------------------------------

def forecast(checkpoint: Checkpoint | NonlinearityModel, ic, z, n_domains: int, m_cells: int,
             delta_t: float, t0: float = 0.0, settings: NewtonSettings | None = None):
    """Roll the model out from ``ic = (u0, j0)`` and decode cell values.

    Returns ``(t_mid, u)`` with ``t_mid`` of length ``n_domains * m_cells`` and
    ``u`` of shape ``(n_domains * m_cells, d)``.  Raises
    :class:`NonConvergence` carrying the failing domain index.
    """
    model = checkpoint.model() if isinstance(checkpoint, Checkpoint) else checkpoint
    u0, j0 = (np.atleast_1d(np.asarray(a, dtype=float)) for a in ic)
    y0 = InterfaceState.from_values(j0, u0)
    blocks = assemble_blocks(m_cells, delta_t / m_cells)
    res = rollout_batch(y0.j_end[None], y0.lambda_out[None], n_domains, model,
                        None if z is None else np.asarray(z, dtype=float), blocks, settings)
    if not res.converged[0]:
        i = int(res.failed_domain[0])
        raise NonConvergence(f"forecast failed in domain {i}", domain=i)
    h = blocks.h
    t_mid = t0 + h * (np.arange(n_domains * m_cells) + 0.5)
    return t_mid, res.u[0].reshape(n_domains * m_cells, -1)

"""A small cross-attention transformer applied cell by cell.

For cell ``k`` the query token is built from ``u[k]`` and the key/value
tokens from ``u[k]``, ``J[k]`` and ``J[k+1]``; the conditioning vector is
concatenated to every token before embedding.  The same weights are used
for every cell, so ``dN/d(u, J)`` is block-banded by construction.

Normalization layers are dynamic tanh (``gamma * tanh(alpha x) + beta``)
and the feed-forward activation is ``tanh``.  Derivatives are hand-written
reverse mode over numpy arrays.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nonlinearity import NonlinearityModel


@dataclass(frozen=True)
class LocalTransformerConfig:
    model_dim: int = 32
    n_blocks: int = 1
    n_heads: int = 2
    d: int = 1
    p: int = 0
    mlp_ratio: int = 2
    u_scale: float = 1.0
    j_scale: float = 1.0
    out_scale: float = 1.0
    alpha_init: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("model_dim", "n_blocks", "n_heads", "d", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.p < 0:
            raise ValueError("p must be non-negative")
        if self.model_dim % self.n_heads:
            raise ValueError("model_dim must be divisible by n_heads")
        for name in ("u_scale", "j_scale", "out_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads


def _layout(cfg: LocalTransformerConfig):
    D, F, din = cfg.model_dim, cfg.model_dim * cfg.mlp_ratio, cfg.d + cfg.p
    shapes = [
        ("emb_u_w", (din, D)), ("emb_u_b", (D,)),
        ("emb_j_w", (din, D)), ("emb_j_b", (D,)),
        ("pos_l", (D,)), ("pos_r", (D,)),
    ]
    for b in range(cfg.n_blocks):
        for ln in ("q", "c", "m"):
            shapes += [(f"b{b}_{ln}_a", (1,)), (f"b{b}_{ln}_g", (D,)), (f"b{b}_{ln}_b", (D,))]
        shapes += [
            (f"b{b}_wq", (D, D)), (f"b{b}_wk", (D, D)), (f"b{b}_wv", (D, D)),
            (f"b{b}_wo", (D, D)), (f"b{b}_bo", (D,)),
            (f"b{b}_w1", (D, F)), (f"b{b}_b1", (F,)),
            (f"b{b}_w2", (F, D)), (f"b{b}_b2", (D,)),
        ]
    shapes += [("f_a", (1,)), ("f_g", (D,)), ("f_b", (D,)),
               ("out_w", (D, cfg.d)), ("out_b", (cfg.d,))]
    offsets = {}
    pos = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        offsets[name] = (pos, shape)
        pos += size
    return offsets, pos


def init_theta(cfg: LocalTransformerConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniform ``+-1/sqrt(fan_in)`` hidden weights, unit DyT gains, zero output head."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    offsets, size = _layout(cfg)
    theta = np.zeros(size)
    for name, (pos, shape) in offsets.items():
        n = int(np.prod(shape))
        if name.startswith("out_"):
            continue
        if name.endswith("_a"):
            theta[pos:pos + n] = cfg.alpha_init
        elif name.endswith("_g"):
            theta[pos:pos + n] = 1.0
        elif len(shape) == 2:
            bound = 1.0 / np.sqrt(shape[0])
            theta[pos:pos + n] = rng.uniform(-bound, bound, n)
        elif name.startswith("pos_"):
            theta[pos:pos + n] = rng.uniform(-0.5, 0.5, n)
    return theta


def _dyt_fwd(x, a, g, b):
    t = np.tanh(a[0] * x)
    return g * t + b, (x, t, a, g)


def _dyt_bwd(gy, cache, grads, prefix, need_theta):
    x, t, a, g = cache
    gt = gy * g
    sech2 = 1.0 - t * t
    if need_theta:
        ax = tuple(range(gy.ndim - 1))
        grads[prefix + "_g"] += np.sum(gy * t, axis=ax)
        grads[prefix + "_b"] += np.sum(gy, axis=ax)
        grads[prefix + "_a"] += np.sum(gt * x * sech2)
    return gt * a[0] * sech2


class LocalTransformer(NonlinearityModel):
    """Weight-shared local transformer nonlinearity."""

    kind = "transformer"

    def __init__(self, config: LocalTransformerConfig | None = None, theta=None):
        self.config = config if config is not None else LocalTransformerConfig()
        self._offsets, size = _layout(self.config)
        if theta is None:
            theta = init_theta(self.config)
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (size,):
            raise ValueError(f"expected {size} parameters, got shape {theta.shape}")
        super().__init__(theta)

    def params(self) -> dict:
        th = self.theta
        return {k: th[pos:pos + int(np.prod(shape))].reshape(shape)
                for k, (pos, shape) in self._offsets.items()}

    def to_config(self):
        return {"kind": "transformer", "config": asdict(self.config),
                "theta": self.theta.tolist()}

    # -- forward / backward over a flat batch of cells -----------------------

    def _inputs(self, u, j, z):
        cfg = self.config
        if u.shape[-1] != cfg.d:
            raise ValueError(f"state dimension {u.shape[-1]} != configured d={cfg.d}")
        lead = u.shape[:-1]
        z = np.zeros(0) if z is None else np.asarray(z, dtype=float)
        if z.shape[-1:] != (cfg.p,) and not (cfg.p == 0 and z.size == 0):
            raise ValueError(f"conditioning vector must have length {cfg.p}")
        if cfg.p:
            # z is (p,) or (..., p) with the same leading axes as u minus the cell axis
            zc = np.broadcast_to(z[..., None, :], lead + (cfg.p,))
        else:
            zc = np.zeros(lead + (0,))
        us = u / cfg.u_scale
        jl = j[..., :-1, :] / cfg.j_scale
        jr = j[..., 1:, :] / cfg.j_scale
        rows = int(np.prod(lead))
        flat = lambda a: a.reshape(rows, a.shape[-1])
        return lead, (np.concatenate([flat(us), flat(zc)], 1),
                      np.concatenate([flat(jl), flat(zc)], 1),
                      np.concatenate([flat(jr), flat(zc)], 1))

    def _forward(self, a_u, a_l, a_r):
        cfg = self.config
        P = self.params()
        H, dh = cfg.n_heads, cfg.head_dim
        C = a_u.shape[0]
        x0 = a_u @ P["emb_u_w"] + P["emb_u_b"]
        x1 = a_l @ P["emb_j_w"] + P["emb_j_b"] + P["pos_l"]
        x2 = a_r @ P["emb_j_w"] + P["emb_j_b"] + P["pos_r"]
        ctx = np.stack([x0, x1, x2], axis=1)
        h = x0
        caches = []
        for b in range(cfg.n_blocks):
            pre = f"b{b}"
            hn, c_q = _dyt_fwd(h, P[pre + "_q_a"], P[pre + "_q_g"], P[pre + "_q_b"])
            cn, c_c = _dyt_fwd(ctx, P[pre + "_c_a"], P[pre + "_c_g"], P[pre + "_c_b"])
            q = (hn @ P[pre + "_wq"]).reshape(C, H, dh)
            k = (cn @ P[pre + "_wk"]).reshape(C, 3, H, dh)
            v = (cn @ P[pre + "_wv"]).reshape(C, 3, H, dh)
            s = np.einsum("chd,cthd->cht", q, k) / np.sqrt(dh)
            s -= s.max(axis=-1, keepdims=True)
            att = np.exp(s)
            att /= att.sum(axis=-1, keepdims=True)
            o = np.einsum("cht,cthd->chd", att, v).reshape(C, -1)
            h = h + o @ P[pre + "_wo"] + P[pre + "_bo"]
            hm, c_m = _dyt_fwd(h, P[pre + "_m_a"], P[pre + "_m_g"], P[pre + "_m_b"])
            f = np.tanh(hm @ P[pre + "_w1"] + P[pre + "_b1"])
            h = h + f @ P[pre + "_w2"] + P[pre + "_b2"]
            caches.append((hn, c_q, cn, c_c, q, k, v, att, o, hm, c_m, f))
        hf, c_f = _dyt_fwd(h, P["f_a"], P["f_g"], P["f_b"])
        out = (hf @ P["out_w"] + P["out_b"]) * cfg.out_scale
        return out, (P, a_u, a_l, a_r, ctx, caches, hf, c_f)

    def _backward(self, g_out, cache, need_theta=True, need_inputs=True):
        cfg = self.config
        P, a_u, a_l, a_r, ctx, caches, hf, c_f = cache
        H, dh = cfg.n_heads, cfg.head_dim
        C = a_u.shape[0]
        D = cfg.model_dim
        grads = {k: np.zeros(shape) for k, (_, shape) in self._offsets.items()} if need_theta else None

        g_out = g_out * cfg.out_scale
        if need_theta:
            grads["out_w"] += hf.T @ g_out
            grads["out_b"] += g_out.sum(0)
        g_h = _dyt_bwd(g_out @ P["out_w"].T, c_f, grads, "f", need_theta)
        g_ctx = np.zeros_like(ctx)
        for b in reversed(range(cfg.n_blocks)):
            pre = f"b{b}"
            hn, c_q, cn, c_c, q, k, v, att, o, hm, c_m, f = caches[b]
            # feed-forward branch
            g_pre = (g_h @ P[pre + "_w2"].T) * (1.0 - f * f)
            if need_theta:
                grads[pre + "_w2"] += f.T @ g_h
                grads[pre + "_b2"] += g_h.sum(0)
                grads[pre + "_w1"] += hm.T @ g_pre
                grads[pre + "_b1"] += g_pre.sum(0)
            g_h = g_h + _dyt_bwd(g_pre @ P[pre + "_w1"].T, c_m, grads, pre + "_m", need_theta)
            # attention branch
            if need_theta:
                grads[pre + "_wo"] += o.T @ g_h
                grads[pre + "_bo"] += g_h.sum(0)
            g_o = (g_h @ P[pre + "_wo"].T).reshape(C, H, dh)
            g_att = np.einsum("chd,cthd->cht", g_o, v)
            g_v = np.einsum("cht,chd->cthd", att, g_o)
            g_s = att * (g_att - np.sum(g_att * att, axis=-1, keepdims=True)) / np.sqrt(dh)
            g_q = np.einsum("cht,cthd->chd", g_s, k).reshape(C, D)
            g_k = np.einsum("cht,chd->cthd", g_s, q).reshape(C, 3, D)
            g_v = g_v.reshape(C, 3, D)
            if need_theta:
                cn2 = cn.reshape(-1, D)
                grads[pre + "_wq"] += hn.T @ g_q
                grads[pre + "_wk"] += cn2.T @ g_k.reshape(-1, D)
                grads[pre + "_wv"] += cn2.T @ g_v.reshape(-1, D)
            g_cn = g_k @ P[pre + "_wk"].T + g_v @ P[pre + "_wv"].T
            g_ctx += _dyt_bwd(g_cn, c_c, grads, pre + "_c", need_theta)
            g_h = g_h + _dyt_bwd(g_q @ P[pre + "_wq"].T, c_q, grads, pre + "_q", need_theta)

        g_x0 = g_h + g_ctx[:, 0]
        g_x1 = g_ctx[:, 1]
        g_x2 = g_ctx[:, 2]
        if need_theta:
            grads["emb_u_w"] += a_u.T @ g_x0
            grads["emb_u_b"] += g_x0.sum(0)
            grads["emb_j_w"] += a_l.T @ g_x1 + a_r.T @ g_x2
            grads["emb_j_b"] += g_x1.sum(0) + g_x2.sum(0)
            grads["pos_l"] += g_x1.sum(0)
            grads["pos_r"] += g_x2.sum(0)
        inputs = None
        if need_inputs:
            d = cfg.d
            inputs = ((g_x0 @ P["emb_u_w"].T)[:, :d] / cfg.u_scale,
                      (g_x1 @ P["emb_j_w"].T)[:, :d] / cfg.j_scale,
                      (g_x2 @ P["emb_j_w"].T)[:, :d] / cfg.j_scale)
        flat = None
        if need_theta:
            flat = np.zeros(self.n_params)
            for name, (pos, shape) in self._offsets.items():
                flat[pos:pos + int(np.prod(shape))] = grads[name].reshape(-1)
        return flat, inputs

    # -- model interface ------------------------------------------------------

    def _evaluate(self, u, j, z):
        lead, ins = self._inputs(u, j, z)
        out, _ = self._forward(*ins)
        return out.reshape(lead + (self.config.d,))

    def local_partials(self, u, j, z):
        u = np.asarray(u, dtype=float)
        j = np.asarray(j, dtype=float)
        lead, ins = self._inputs(u, j, z)
        _, cache = self._forward(*ins)
        d = self.config.d
        C = ins[0].shape[0]
        du = np.empty((C, d, d))
        djl = np.empty((C, d, d))
        djr = np.empty((C, d, d))
        for c in range(d):
            g = np.zeros((C, d))
            g[:, c] = 1.0
            _, (gu, gl, gr) = self._backward(g, cache, need_theta=False)
            du[:, c, :] = gu
            djl[:, c, :] = gl
            djr[:, c, :] = gr
        shape = lead + (d, d)
        return du.reshape(shape), djl.reshape(shape), djr.reshape(shape)

    def theta_vjp(self, u, j, z, cotangent):
        u = np.asarray(u, dtype=float)
        j = np.asarray(j, dtype=float)
        _, ins = self._inputs(u, j, z)
        _, cache = self._forward(*ins)
        cot = np.asarray(cotangent, dtype=float).reshape(-1, self.config.d)
        flat, _ = self._backward(cot, cache, need_theta=True, need_inputs=False)
        return flat

    def evaluate_with_vjp(self, u, j, z):
        """Forward pass returning the output and a closure for ``theta`` VJPs."""
        u, j, z = self._check(u, j, z)
        lead, ins = self._inputs(u, j, z)
        out, cache = self._forward(*ins)

        def vjp(cotangent):
            cot = np.asarray(cotangent, dtype=float).reshape(-1, self.config.d)
            return self._backward(cot, cache, need_inputs=False)[0]

        return out.reshape(lead + (self.config.d,)), vjp

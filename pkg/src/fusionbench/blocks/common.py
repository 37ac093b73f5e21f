"""Shared block machinery: configs, parameter init, attention core,
feed-forward core, token gather/scatter plans and stream mixing.

Parameters are flat dicts of float64 arrays keyed like "attn.wq"; that
keeps optimizers, gradient checks and checkpoints trivial. No linear
layer carries a bias; normalization layers carry gamma/beta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..numerics import (
    Rng,
    ew_add,
    matmul,
    relu,
    scale,
    softmax_backward,
    softmax_rows,
)


@dataclass
class BlockConfig:
    """Static shape/behaviour switches shared by all block kinds.

    merge_ratio is kept as an exact Fraction so the merged token count
    K = ceil(merge_ratio * n) never suffers float rounding.
    """

    channels: int
    heads: int = 1
    ffn_ratio: int = 4
    ctx_reduction: int = 4
    merge_ratio: Fraction = Fraction(1, 9)
    merge_mode: str = "softmax"  # "softmax" normalizes merge columns, "raw" does not
    fg_only: bool = False

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.heads < 1 or self.channels % self.heads != 0:
            raise ValueError("heads must divide channels")
        if self.ffn_ratio < 1:
            raise ValueError("ffn_ratio must be >= 1")
        if self.ctx_reduction < 1:
            raise ValueError("ctx_reduction must be >= 1")
        if not isinstance(self.merge_ratio, Fraction):
            self.merge_ratio = Fraction(self.merge_ratio)
        if not 0 < self.merge_ratio <= 1:
            raise ValueError("merge_ratio must be in (0, 1]")
        if self.merge_mode not in ("softmax", "raw"):
            raise ValueError(f"unknown merge_mode {self.merge_mode!r}")

    def merged_tokens(self, n: int) -> int:
        """K = ceil(merge_ratio * n); always >= 1 for n >= 1."""
        return max(1, math.ceil(self.merge_ratio * n))


@dataclass
class GatherPlan:
    """Index partition of n token slots into foreground and background.

    Both index lists are ascending; together they cover range(n) with
    no overlap. validate() enforces that.
    """

    fg: np.ndarray
    bg: np.ndarray
    n: int

    def validate(self):
        fg, bg = np.asarray(self.fg), np.asarray(self.bg)
        if len(fg) + len(bg) != self.n:
            raise ValueError("plan does not cover all slots")
        merged = np.concatenate([fg, bg]) if self.n else np.array([], dtype=np.int64)
        if self.n and not np.array_equal(np.sort(merged), np.arange(self.n)):
            raise ValueError("plan indices must partition range(n)")
        if np.any(np.diff(fg) <= 0) or np.any(np.diff(bg) <= 0):
            raise ValueError("plan indices must be strictly ascending")


def build_plan(hmap: np.ndarray, threshold: float = 0.5) -> GatherPlan:
    """Partition by heatmap value; ties (== threshold) go foreground."""
    hmap = np.asarray(hmap)
    fg = np.nonzero(hmap >= threshold)[0].astype(np.int64)
    bg = np.nonzero(hmap < threshold)[0].astype(np.int64)
    return GatherPlan(fg=fg, bg=bg, n=hmap.shape[0])


def gather(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Row gather; index moves are free in the cost convention."""
    return x[np.asarray(idx, dtype=np.int64)]


def scatter(x: np.ndarray, plan: GatherPlan, upd_fg: np.ndarray, upd_bg: np.ndarray) -> np.ndarray:
    """Inverse of two gathers: writes every row of the output exactly
    once, foreground rows from upd_fg and background rows from upd_bg."""
    plan.validate()
    if upd_fg.shape[0] != len(plan.fg) or upd_bg.shape[0] != len(plan.bg):
        raise ValueError("update row counts do not match the plan")
    out = np.empty((plan.n,) + x.shape[1:], dtype=x.dtype)
    out[plan.fg] = upd_fg
    out[plan.bg] = upd_bg
    return out


# ---------------------------------------------------------------------------
# Parameter initialization


def init_linear(rng: Rng, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], shape (in, out)."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out))


def init_vector(rng: Rng, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, (fan_in,))


def _norm_params(c: int, prefix: str) -> dict:
    return {f"{prefix}.gamma": np.ones(c), f"{prefix}.beta": np.zeros(c)}


def _attn_params(rng: Rng, c: int) -> dict:
    return {
        "attn.wq": init_linear(rng.child(0), c, c),
        "attn.wk": init_linear(rng.child(1), c, c),
        "attn.wv": init_linear(rng.child(2), c, c),
        "attn.wo": init_linear(rng.child(3), c, c),
    }


def _ffn_params(rng: Rng, c: int, ratio: int) -> dict:
    return {
        "ffn.w1": init_linear(rng.child(0), c, ratio * c),
        "ffn.w2": init_linear(rng.child(1), ratio * c, c),
    }


def init_vanilla_params(rng: Rng, cfg: BlockConfig) -> dict:
    c = cfg.channels
    p = _norm_params(c, "ln1")
    p.update(_attn_params(rng.child(0), c))
    p.update(_norm_params(c, "ln2"))
    p.update(_ffn_params(rng.child(1), c, cfg.ffn_ratio))
    return p


def init_cst_params(rng: Rng, cfg: BlockConfig) -> dict:
    c = cfg.channels
    if c % cfg.ctx_reduction != 0:
        raise ValueError("ctx_reduction must divide channels")
    cr = c // cfg.ctx_reduction
    p = _norm_params(c, "ln1")
    p["ctx.head"] = init_vector(rng.child(0), c)
    p["ctx.t1"] = init_linear(rng.child(1), c, cr)
    p.update(_norm_params(cr, "ctx.ln"))
    p["ctx.t2"] = init_linear(rng.child(2), cr, c)
    p.update(_norm_params(c, "ln2"))
    p.update(_ffn_params(rng.child(3), c, cfg.ffn_ratio))
    return p


def init_sgst_params(rng: Rng, cfg: BlockConfig, n: int) -> dict:
    """SGST shares one set of attention/FFN weights across both token
    branches; only the gate head and the merge matrix are extra."""
    c = cfg.channels
    p = init_vanilla_params(rng.child(0), cfg)
    p["gate.head"] = init_vector(rng.child(1), c)
    p["merge.w"] = init_linear(rng.child(2), n, cfg.merged_tokens(n))
    return p


def init_mix_params(rng: Rng, c: int) -> dict:
    return {"mix.w": init_linear(rng, 2 * c, c)}


def param_count(params: dict) -> int:
    return sum(v.size for v in params.values())


# ---------------------------------------------------------------------------
# Attention core (no norm, no residual)


def attention(q_norm: np.ndarray, kv_norm: np.ndarray, params: dict, heads: int):
    """Scaled dot-product attention over pre-normalized tokens.

    q_norm (M, C) provides queries; kv_norm (P, C) provides keys and
    values. Returns (out (M, C), cache). Heads are contiguous channel
    slices; queries are scaled by 1/sqrt(head_dim) before the score
    matmul.
    """
    c = q_norm.shape[1]
    d = c // heads
    s = 1.0 / math.sqrt(d)
    q = matmul(q_norm, params["attn.wq"])
    k = matmul(kv_norm, params["attn.wk"])
    v = matmul(kv_norm, params["attn.wv"])
    qs = scale(q, s)
    heads_out = []
    attn_maps = []
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        scores = matmul(qs[:, sl], k[:, sl].T)  # (M, P)
        a = softmax_rows(scores)
        heads_out.append(matmul(a, v[:, sl]))
        attn_maps.append(a)
    o = np.concatenate(heads_out, axis=1) if heads > 1 else heads_out[0]
    out = matmul(o, params["attn.wo"])
    cache = (q_norm, kv_norm, qs, k, v, attn_maps, o, heads, s)
    return out, cache


def attention_backward(cache, dout: np.ndarray, params: dict):
    """Returns (dq_norm, dkv_norm, grads)."""
    q_norm, kv_norm, qs, k, v, attn_maps, o, heads, s = cache
    c = q_norm.shape[1]
    d = c // heads
    grads = {"attn.wo": matmul(o.T, dout)}
    do = matmul(dout, params["attn.wo"].T)
    dqs = np.zeros_like(qs)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        a = attn_maps[h]
        doh = do[:, sl]
        da = matmul(doh, v[:, sl].T)
        dv[:, sl] = matmul(a.T, doh)
        ds = softmax_backward(a, da, axis=1)
        dqs[:, sl] = matmul(ds, k[:, sl])
        dk[:, sl] = matmul(ds.T, qs[:, sl])
    dq = dqs * s
    grads["attn.wq"] = matmul(q_norm.T, dq)
    grads["attn.wk"] = matmul(kv_norm.T, dk)
    grads["attn.wv"] = matmul(kv_norm.T, dv)
    dq_norm = matmul(dq, params["attn.wq"].T)
    dkv_norm = ew_add(
        matmul(dk, params["attn.wk"].T), matmul(dv, params["attn.wv"].T)
    )
    return dq_norm, dkv_norm, grads


# ---------------------------------------------------------------------------
# Feed-forward core (no norm, no residual)


def ffn(y: np.ndarray, params: dict):
    f1 = matmul(y, params["ffn.w1"])
    h = relu(f1)
    out = matmul(h, params["ffn.w2"])
    return out, (y, f1, h)


def ffn_backward(cache, dout: np.ndarray, params: dict):
    y, f1, h = cache
    grads = {"ffn.w2": matmul(h.T, dout)}
    dh = matmul(dout, params["ffn.w2"].T)
    df1 = dh * (f1 > 0.0)
    grads["ffn.w1"] = matmul(y.T, df1)
    dy = matmul(df1, params["ffn.w1"].T)
    return dy, grads


# ---------------------------------------------------------------------------
# Two-stream mixing (appearance + motion -> fused tokens)


def mix_streams(a: np.ndarray, m: np.ndarray, params: dict):
    """Concatenate two (N, C) streams on channels and project back to C."""
    if a.shape != m.shape:
        raise ValueError("streams must share a shape")
    z = np.concatenate([a, m], axis=1)
    out = matmul(z, params["mix.w"])
    return out, z


def mix_streams_backward(cache, dout: np.ndarray, params: dict):
    z = cache
    c = dout.shape[1]
    grads = {"mix.w": matmul(z.T, dout)}
    dz = matmul(dout, params["mix.w"].T)
    return dz[:, :c], dz[:, c:], grads

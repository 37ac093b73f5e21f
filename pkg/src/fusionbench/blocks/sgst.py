"""Semantic gathering-scattering block.

A one-channel sigmoid head scores every token; tokens at or above 0.5
route to the foreground branch, the rest to background. Each branch
cross-attends from its gathered tokens to a small merged set of K
summary tokens built from the heatmap-weighted sequence (background
uses the complement weights), so attention cost scales with N*K rather
than N*N. Branch outputs scatter back to their original slots.

Both branches share every transformer weight; the routing itself is
not differentiated (straight-through): gradients flow through the
heatmap only where it is used as a multiplicative weight.
"""

from __future__ import annotations

import numpy as np

from ..numerics import (
    ew_add,
    ew_mul,
    ew_sub,
    layernorm,
    layernorm_backward,
    matmul,
    sigmoid,
    softmax_backward,
    softmax_cols,
)
from .common import (
    BlockConfig,
    attention,
    attention_backward,
    build_plan,
    ffn,
    ffn_backward,
    gather,
    scatter,
)


def heatmap_head(x: np.ndarray, params: dict) -> np.ndarray:
    """Per-token foreground score in (0, 1); shape (N,)."""
    c = x.shape[1]
    s = matmul(x, params["gate.head"].reshape(c, 1))
    return sigmoid(s)[:, 0]


def merge_matrix(params: dict, mode: str) -> np.ndarray:
    """(N, K) mixing weights; softmax mode normalizes each output
    column over positions so merged tokens are convex combinations."""
    w = params["merge.w"]
    return softmax_cols(w) if mode == "softmax" else w


def soft_merge(x: np.ndarray, weights: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Merge N tokens into K: m^T @ (weights[:, None] * x) -> (K, C)."""
    xe = ew_mul(weights[:, None], x)
    return matmul(m.T, xe)


def branch_attend(q_raw: np.ndarray, merged: np.ndarray, params: dict, heads: int = 1):
    """One branch in isolation: queries from the gathered raw tokens,
    keys/values from merged tokens, pre-norm attention + FFN with
    residuals. Returns (out (Nb, C), cache). Empty q_raw passes
    through as an empty output."""
    if q_raw.shape[0] == 0:
        return q_raw.copy(), None
    yq, c_q = layernorm(q_raw, params["ln1.gamma"], params["ln1.beta"])
    ykv, c_kv = layernorm(merged, params["ln1.gamma"], params["ln1.beta"])
    att, c_att = attention(yq, ykv, params, heads)
    h = ew_add(q_raw, att)
    y2, c_ln2 = layernorm(h, params["ln2.gamma"], params["ln2.beta"])
    f, c_ffn = ffn(y2, params)
    out = ew_add(h, f)
    return out, (c_q, c_kv, c_att, c_ln2, c_ffn)


def _zero_grads(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def sgst_attention_stage(
    x: np.ndarray,
    params: dict,
    cfg: BlockConfig,
    heatmap_override: np.ndarray | None = None,
):
    """Gather -> merge -> cross-attend -> scatter, with the attention
    residual applied per branch. Returns (h (N, C), cache).

    heatmap_override replaces the sigmoid scores for routing and
    weighting (a test hook; gradients then skip the gate head).
    """
    n, c = x.shape
    hmap_own = heatmap_head(x, params)
    overridden = heatmap_override is not None
    hmap = np.asarray(heatmap_override, dtype=np.float64) if overridden else hmap_own
    if hmap.shape != (n,):
        raise ValueError("heatmap must have one score per token")
    plan = build_plan(hmap)
    m = merge_matrix(params, cfg.merge_mode)
    w_bg = ew_sub(np.float64(1.0), hmap)

    branch_caches = {}
    updates = {}
    for name, idx, w in (("fg", plan.fg, hmap), ("bg", plan.bg, w_bg)):
        q_raw = gather(x, idx)
        if len(idx) == 0:
            updates[name] = q_raw
            branch_caches[name] = None
            continue
        if name == "bg" and cfg.fg_only:
            updates[name] = q_raw  # untouched background tokens
            branch_caches[name] = "passthrough"
            continue
        xe = ew_mul(w[:, None], x)
        merged = matmul(m.T, xe)
        yq, c_q = layernorm(q_raw, params["ln1.gamma"], params["ln1.beta"])
        ykv, c_kv = layernorm(merged, params["ln1.gamma"], params["ln1.beta"])
        att, c_att = attention(yq, ykv, params, cfg.heads)
        updates[name] = ew_add(q_raw, att)
        branch_caches[name] = (xe, c_q, c_kv, c_att)
    h = scatter(x, plan, updates["fg"], updates["bg"])
    cache = (x, hmap_own, hmap, overridden, plan, m, branch_caches)
    return h, cache


def sgst_attention_stage_backward(cache, dh: np.ndarray, params: dict, cfg: BlockConfig):
    x, hmap_own, hmap, overridden, plan, m, branch_caches = cache
    n, c = x.shape
    grads = _zero_grads(params)
    dx = np.zeros_like(x)
    dm = np.zeros_like(m)
    dhmap = np.zeros(n)
    w_bg = 1.0 - hmap
    for name, idx, w, sign in (("fg", plan.fg, hmap, 1.0), ("bg", plan.bg, w_bg, -1.0)):
        bc = branch_caches[name]
        if bc is None:
            continue
        db = dh[idx]
        if bc == "passthrough":
            dx[idx] += db
            continue
        xe, c_q, c_kv, c_att = bc
        dq_raw = db.copy()
        dyq, dykv, g_att = attention_backward(c_att, db, params)
        for k, v in g_att.items():
            grads[k] += v
        dq_pre, g1, b1 = layernorm_backward(c_q, dyq)
        grads["ln1.gamma"] += g1
        grads["ln1.beta"] += b1
        dmerged, g1k, b1k = layernorm_backward(c_kv, dykv)
        grads["ln1.gamma"] += g1k
        grads["ln1.beta"] += b1k
        dq_raw += dq_pre
        dx[idx] += dq_raw
        dxe = matmul(m, dmerged)  # (N, C)
        dm += matmul(xe, dmerged.T)  # (N, K)
        dx += w[:, None] * dxe
        dhmap += sign * np.sum(dxe * x, axis=1)
    if cfg.merge_mode == "softmax":
        grads["merge.w"] += softmax_backward(m, dm, axis=0)
    else:
        grads["merge.w"] += dm
    if not overridden:
        ds = dhmap * hmap_own * (1.0 - hmap_own)  # sigmoid backward
        grads["gate.head"] += matmul(x.T, ds[:, None]).reshape(c)
        dx += ds[:, None] * params["gate.head"][None, :]
    return dx, grads


def sgst_block_forward(
    x: np.ndarray,
    params: dict,
    cfg: BlockConfig,
    heatmap_override: np.ndarray | None = None,
):
    """Attention stage followed by the pre-norm FFN sub-layer.

    The FFN acts row-wise, so running it once on the scattered tokens
    is exactly the per-branch application the branch view describes.
    In fg_only mode only foreground rows see the FFN; background rows
    leave the block untouched.
    """
    h, c_stage = sgst_attention_stage(x, params, cfg, heatmap_override)
    plan = c_stage[4]
    restrict = cfg.fg_only and len(plan.bg) > 0
    rows = gather(h, plan.fg) if restrict else h
    y2, c_ln2 = layernorm(rows, params["ln2.gamma"], params["ln2.beta"])
    f, c_ffn = ffn(y2, params)
    upd = ew_add(rows, f)
    out = scatter(h, plan, upd, gather(h, plan.bg)) if restrict else upd
    return out, (c_stage, c_ln2, c_ffn, restrict)


def block_signature(cache) -> tuple:
    """Discrete state of one block application: the routing partition
    plus the FFN relu pattern. Finite-difference probes that change
    this are excluded as boundary cases."""
    c_stage, _, c_ffn, restrict = cache
    plan = c_stage[4]
    return (tuple(plan.fg), bool(restrict), (c_ffn[1] > 0.0).tobytes())


def sgst_block_backward(cache, dout: np.ndarray, params: dict, cfg: BlockConfig):
    c_stage, c_ln2, c_ffn, restrict = cache
    plan = c_stage[4]
    drows = dout[plan.fg] if restrict else dout
    dy2, g_ffn = ffn_backward(c_ffn, drows, params)
    dy2_x, g2, b2 = layernorm_backward(c_ln2, dy2)
    dsub = drows + dy2_x
    if restrict:
        dh = np.zeros_like(dout)
        dh[plan.fg] = dsub
        dh[plan.bg] = dout[plan.bg]
    else:
        dh = dsub
    dx, grads = sgst_attention_stage_backward(c_stage, dh, params, cfg)
    for k, v in g_ffn.items():
        grads[k] += v
    grads["ln2.gamma"] += g2
    grads["ln2.beta"] += b2
    return dx, grads

"""Four-stage fusion pipeline over appearance and motion streams.

Stage l (strides 4, 8, 16, 32) mixes the two token streams with a
learned linear map, then runs that stage's fusion block: context
blocks on the two fine stages, gathering-scattering blocks on the two
coarse ones by default. A small decoder projects every stage to a
shared width, nearest-neighbour upsamples to stage-1 resolution, sums
and reads out one logit per position. The only bias in the model sits
on the decoder head.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import tensorio
from .blocks import (
    BlockConfig,
    init_cst_params,
    init_mix_params,
    init_sgst_params,
    init_vanilla_params,
    mix_streams,
    mix_streams_backward,
)
from .blocks.cst import cst_block_backward, cst_block_forward
from .blocks.sgst import heatmap_head, sgst_block_backward, sgst_block_forward
from .blocks.vanilla import vanilla_block_backward, vanilla_block_forward
from .numerics import Rng, matmul, sigmoid
from .synth import Clip, clip_feature_stacks, stage_dims, synth_clip

BLOCK_KINDS = ("vanilla", "cst", "sgst")


@dataclass
class FeatureMap:
    """Tokens of one stage: rows are positions in row-major (h, w)
    order, columns are channels."""

    tokens: np.ndarray
    h: int
    w: int
    stride: int

    def __post_init__(self):
        if self.tokens.shape[0] != self.h * self.w:
            raise ValueError("token count must equal h * w")

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def c(self) -> int:
        return self.tokens.shape[1]

    def to_grid(self) -> np.ndarray:
        """(C, H, W) channels-first view copy."""
        return self.tokens.T.reshape(self.c, self.h, self.w).copy()


@dataclass
class PipelineConfig:
    base: int = 64
    frames: int = 3
    channels: tuple = (12, 12, 12, 12)
    kinds: tuple = ("cst", "cst", "sgst", "sgst")
    heads: int = 1
    ffn_ratio: int = 4
    ctx_reduction: int = 4
    merge_ratio: Fraction = Fraction(1, 9)
    merge_mode: str = "softmax"
    fg_only: bool = False
    decoder_dim: int = 8
    shape: str = "disk"
    radius: float = 0.3
    lr: float = 1e-3
    weight_decay: float = 0.01
    feature_seed: int = 417

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        self.kinds = tuple(self.kinds)
        if len(self.channels) != 4 or len(self.kinds) != 4:
            raise ValueError("exactly four stages are supported")
        for k in self.kinds:
            if k not in BLOCK_KINDS:
                raise ValueError(f"unknown block kind {k!r}")
        if not isinstance(self.merge_ratio, Fraction):
            self.merge_ratio = Fraction(self.merge_ratio)

    def block_cfg(self, stage: int) -> BlockConfig:
        return BlockConfig(
            channels=self.channels[stage],
            heads=self.heads,
            ffn_ratio=self.ffn_ratio,
            ctx_reduction=self.ctx_reduction,
            merge_ratio=self.merge_ratio,
            merge_mode=self.merge_mode,
            fg_only=self.fg_only,
        )

    def stage_tokens(self) -> list[int]:
        return [h * w for h, w in stage_dims(self.base)]

    def to_dict(self) -> dict:
        d = {
            "base": self.base,
            "frames": self.frames,
            "channels": list(self.channels),
            "kinds": list(self.kinds),
            "heads": self.heads,
            "ffn_ratio": self.ffn_ratio,
            "ctx_reduction": self.ctx_reduction,
            "merge_ratio": str(self.merge_ratio),
            "merge_mode": self.merge_mode,
            "fg_only": self.fg_only,
            "decoder_dim": self.decoder_dim,
            "shape": self.shape,
            "radius": self.radius,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "feature_seed": self.feature_seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if "merge_ratio" in d:
            d["merge_ratio"] = Fraction(d["merge_ratio"])
        if "channels" in d:
            d["channels"] = tuple(d["channels"])
        if "kinds" in d:
            d["kinds"] = tuple(d["kinds"])
        return cls(**d)


# ---------------------------------------------------------------------------
# Parameters


def init_pipeline_params(rng: Rng, cfg: PipelineConfig) -> dict:
    params = {}
    tokens = cfg.stage_tokens()
    for l in range(4):
        pref = f"s{l}."
        bcfg = cfg.block_cfg(l)
        params[pref + "mix.w"] = init_mix_params(rng.child(10 * l), cfg.channels[l])["mix.w"]
        kind = cfg.kinds[l]
        if kind == "vanilla":
            blk = init_vanilla_params(rng.child(10 * l + 1), bcfg)
        elif kind == "cst":
            blk = init_cst_params(rng.child(10 * l + 1), bcfg)
        else:
            blk = init_sgst_params(rng.child(10 * l + 1), bcfg, tokens[l])
        for k, v in blk.items():
            params[pref + k] = v
    d = cfg.decoder_dim
    for l in range(4):
        bound = 1.0 / math.sqrt(cfg.channels[l])
        params[f"dec.proj{l}"] = rng.child(100 + l).uniform(
            -bound, bound, (cfg.channels[l], d)
        )
    bound = 1.0 / math.sqrt(d)
    params["dec.head.w"] = rng.child(104).uniform(-bound, bound, (d,))
    params["dec.head.b"] = np.zeros(())
    return params


def _sub_params(params: dict, pref: str) -> dict:
    return {k[len(pref):]: v for k, v in params.items() if k.startswith(pref)}


def _upsample_index(src_hw: tuple, dst_hw: tuple) -> np.ndarray:
    """Flat row indices implementing nearest-neighbour upsampling from
    a src grid to a dst grid (row-major token order)."""
    sh, sw = src_hw
    dh, dw = dst_hw
    rows = (np.arange(dh) * sh) // dh
    cols = (np.arange(dw) * sw) // dw
    return (rows[:, None] * sw + cols[None, :]).ravel()


# ---------------------------------------------------------------------------
# Forward / backward


def pipeline_forward(app_t: list, mot_t: list, params: dict, cfg: PipelineConfig):
    """One frame through mixing, blocks and the decoder.

    app_t and mot_t hold per-stage (N_l, C_l) token arrays. Returns
    (logits (H1, W1), cache).
    """
    dims = stage_dims(cfg.base)
    fused = []
    stage_caches = []
    for l in range(4):
        pref = f"s{l}."
        sub = _sub_params(params, pref)
        mixed, c_mix = mix_streams(app_t[l], mot_t[l], sub)
        kind = cfg.kinds[l]
        bcfg = cfg.block_cfg(l)
        if kind == "vanilla":
            out, c_blk = vanilla_block_forward(mixed, sub, bcfg.heads)
        elif kind == "cst":
            out, c_blk = cst_block_forward(mixed, sub)
        else:
            out, c_blk = sgst_block_forward(mixed, sub, bcfg)
        fused.append(out)
        stage_caches.append((c_mix, c_blk))
    h1, w1 = dims[0]
    d = cfg.decoder_dim
    acc = np.zeros((h1 * w1, d))
    idx_maps = []
    projected = []
    for l in range(4):
        pr = matmul(fused[l], params[f"dec.proj{l}"])
        idx = _upsample_index(dims[l], (h1, w1))
        acc = acc + pr[idx]
        idx_maps.append(idx)
        projected.append(pr)
    logits_flat = matmul(acc, params["dec.head.w"].reshape(d, 1))[:, 0]
    logits_flat = logits_flat + float(params["dec.head.b"])
    logits = logits_flat.reshape(h1, w1)
    cache = (fused, stage_caches, acc, idx_maps, dims)
    return logits, cache


def pipeline_backward(cache, dlogits: np.ndarray, params: dict, cfg: PipelineConfig):
    """Returns (grads, dapp, dmot); grads covers every parameter key."""
    fused, stage_caches, acc, idx_maps, dims = cache
    d = cfg.decoder_dim
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dflat = dlogits.reshape(-1, 1)
    grads["dec.head.b"] = np.asarray(np.sum(dflat))
    grads["dec.head.w"] = matmul(acc.T, dflat)[:, 0]
    dacc = matmul(dflat, params["dec.head.w"].reshape(1, d))
    dapp = [None] * 4
    dmot = [None] * 4
    for l in range(4):
        n_l = dims[l][0] * dims[l][1]
        dpr = np.zeros((n_l, d))
        np.add.at(dpr, idx_maps[l], dacc)
        grads[f"dec.proj{l}"] = matmul(fused[l].T, dpr)
        dfused = matmul(dpr, params[f"dec.proj{l}"].T)
        pref = f"s{l}."
        sub = _sub_params(params, pref)
        c_mix, c_blk = stage_caches[l]
        kind = cfg.kinds[l]
        if kind == "vanilla":
            dmixed, g_blk = vanilla_block_backward(c_blk, dfused, sub)
        elif kind == "cst":
            dmixed, g_blk = cst_block_backward(c_blk, dfused, sub)
        else:
            dmixed, g_blk = sgst_block_backward(c_blk, dfused, sub, cfg.block_cfg(l))
        da, dm, g_mix = mix_streams_backward(c_mix, dmixed, sub)
        dapp[l] = da
        dmot[l] = dm
        for k, v in g_blk.items():
            grads[pref + k] += v
        grads[pref + "mix.w"] += g_mix["mix.w"]
    return grads, dapp, dmot


# ---------------------------------------------------------------------------
# Loss and metric


def bce_loss(logits: np.ndarray, target: np.ndarray):
    """Mean binary cross-entropy from logits, numerically stable for
    any magnitude. Returns (loss, dlogits)."""
    y = target.astype(np.float64)
    z = logits
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    loss = float(np.mean(per))
    dz = (sigmoid(z) - y) / z.size
    return loss, dz


def iou(logits: np.ndarray, target: np.ndarray) -> float:
    """Intersection over union of the thresholded prediction
    (sigmoid > 0.5, i.e. logit > 0) against a boolean mask."""
    pred = logits > 0.0
    t = target.astype(bool)
    union = np.sum(pred | t)
    if union == 0:
        return 1.0
    return float(np.sum(pred & t) / union)


# ---------------------------------------------------------------------------
# Optimizer


class AdamW:
    """Decoupled weight decay Adam. Decay applies only to weight
    matrices (ndim >= 2); vectors, scalars and norm affines are
    exempt. Updates iterate keys in sorted order, so a run replays
    exactly from the same seed and data."""

    def __init__(self, params: dict, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict):
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            upd = mhat / (np.sqrt(vhat) + self.eps)
            if params[k].ndim >= 2 and self.wd:
                upd = upd + self.wd * params[k]
            params[k] = params[k] - self.lr * upd


# ---------------------------------------------------------------------------
# Training and evaluation


def train(
    cfg: PipelineConfig,
    seed: int,
    steps: int,
    out_dir=None,
    params: dict | None = None,
    log_cb=None,
):
    """Overfit the pipeline on one synthetic clip.

    Walks frames round-robin, one optimizer step per frame visit.
    Returns a dict with the final parameters, the per-step log rows
    (step, frame, loss, iou) and final mean IoU across all frames.
    Writes training_log.csv and params.isoc when out_dir is given.
    """
    rng = Rng(seed)
    clip = synth_clip(rng.child(0), cfg.base, cfg.frames, cfg.shape, cfg.radius)
    app, mot = clip_feature_stacks(clip, cfg.channels, cfg.feature_seed)
    if params is None:
        params = init_pipeline_params(rng.child(1), cfg)
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rows = []
    for step in range(1, steps + 1):
        t = (step - 1) % cfg.frames
        logits, cache = pipeline_forward(app[t], mot[t], params, cfg)
        loss, dz = bce_loss(logits, clip.masks[t])
        grads, _, _ = pipeline_backward(cache, dz, params, cfg)
        opt.step(params, grads)
        rows.append((step, t, loss, iou(logits, clip.masks[t])))
        if log_cb is not None:
            log_cb(rows[-1])
    final = evaluate(params, cfg, clip=clip)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "training_log.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "frame", "loss", "iou"])
            w.writerows(rows)
        tensorio.save_checkpoint(out / "params.isoc", params)
    return {
        "params": params,
        "rows": rows,
        "final_mean_iou": final["mean_iou"],
        "per_frame_iou": final["per_frame"],
        "clip": clip,
    }


def evaluate(params: dict, cfg: PipelineConfig, clip: Clip | None = None,
             seed: int | None = None):
    """Mean IoU of the frozen model over a clip's frames. Supply the
    training clip or a seed to regenerate one."""
    if clip is None:
        if seed is None:
            raise ValueError("need a clip or a seed")
        clip = synth_clip(Rng(seed).child(0), cfg.base, cfg.frames, cfg.shape, cfg.radius)
    app, mot = clip_feature_stacks(clip, cfg.channels, cfg.feature_seed)
    per = []
    for t in range(cfg.frames):
        logits, _ = pipeline_forward(app[t], mot[t], params, cfg)
        per.append(iou(logits, clip.masks[t]))
    return {"mean_iou": float(np.mean(per)), "per_frame": per}


# ---------------------------------------------------------------------------
# Gradient hook for the verification suite


def check_pipeline_gradients(seed: int, rtol: float = 1e-4):
    """Finite-difference check of the whole pipeline (mix, blocks,
    decoder, BCE) at a tiny resolution. Perturbs raw stream tokens and
    every parameter; SGST routing signatures guard boundary flips."""
    from .verify import grad_check

    r = Rng(seed)
    cfg = PipelineConfig(
        base=8, frames=1, channels=(6, 6, 6, 6), heads=1, ctx_reduction=2,
        merge_ratio=Fraction(1, 2), decoder_dim=4,
    )
    tokens = cfg.stage_tokens()
    target = r.child(0).uniform(0.0, 1.0, (2, 2)) > 0.5

    def draw(attempt):
        rr = r.child(1).child(attempt)
        app = [rr.child(l).normal((tokens[l], 6)) for l in range(4)]
        mot = [rr.child(4 + l).normal((tokens[l], 6)) for l in range(4)]
        params = init_pipeline_params(rr.child(8), cfg)
        return app, mot, params

    app, mot, params = draw(0)
    for attempt in range(1, 50):
        margins = []
        for l in range(4):
            if cfg.kinds[l] != "sgst":
                continue
            sub = _sub_params(params, f"s{l}.")
            mixed, _ = mix_streams(app[l], mot[l], sub)
            hm = heatmap_head(mixed, sub)
            margins.append(float(np.min(np.abs(hm - 0.5))))
        if min(margins) >= 1e-3:
            break
        app, mot, params = draw(attempt)

    from .blocks import cst as cst_mod
    from .blocks import sgst as sgst_mod
    from .blocks import vanilla as vanilla_mod

    sig_fns = {"vanilla": vanilla_mod.block_signature,
               "cst": cst_mod.block_signature,
               "sgst": sgst_mod.block_signature}

    def run():
        logits, cache = pipeline_forward(app, mot, params, cfg)
        sig = tuple(sig_fns[cfg.kinds[l]](cache[1][l][1]) for l in range(4))
        return logits, cache, sig

    logits0, cache0, _ = run()
    loss0, dz = bce_loss(logits0, target)
    grads, dapp, dmot = pipeline_backward(cache0, dz, params, cfg)
    arrays = dict(params)
    analytic = dict(grads)
    for l in range(4):
        arrays[f"app{l}"] = app[l]
        arrays[f"mot{l}"] = mot[l]
        analytic[f"app{l}"] = dapp[l]
        analytic[f"mot{l}"] = dmot[l]

    def make_loss():
        logits, _, sig = run()
        loss, _ = bce_loss(logits, target)
        return loss, sig

    return grad_check(
        make_loss, arrays, analytic, r.child(9),
        name=f"grad_pipeline_s{seed}", coords_per_array=3, rtol=rtol,
    )

"""Verification: independent oracles, finite-difference gradient
checks, randomized property suites and golden-fixture comparison.

The oracles here recompute block outputs through a different route
than the implementation: attention via pure Python scalar loops,
context pooling via an explicit N x N attention matrix, SGST via its
algebraic reduction to the vanilla block. Tolerances are stated per
check; "bitwise" means np.array_equal, no tolerance at all.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import tensorio
from .blocks import (
    BlockConfig,
    branch_attend,
    build_plan,
    cst_global_context,
    gather,
    init_cst_params,
    init_mix_params,
    init_sgst_params,
    init_vanilla_params,
    merge_matrix,
    mhsa_forward,
    mix_streams,
    mix_streams_backward,
    scatter,
    sgst_block_backward,
    sgst_block_forward,
    soft_merge,
)
from .blocks.cst import cst_block_backward, cst_block_forward
from .blocks.vanilla import vanilla_block_backward, vanilla_block_forward
from .numerics import Rng, layernorm, matmul, relu, softmax_cols
from .tensorio import load_array_text

GOLDEN_DIR = Path(__file__).parent / "golden"


@dataclass
class CheckReport:
    """Outcome of one named check."""

    name: str
    passed: bool
    details: str = ""
    max_err: float | None = None
    checked: int = 0
    fragile: int = 0
    seed: int | None = None

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" max_err={self.max_err:.3e}" if self.max_err is not None else ""
        frag = f" fragile={self.fragile}" if self.fragile else ""
        return f"[{tag}] {self.name}: {self.details}{extra}{frag}"


# ---------------------------------------------------------------------------
# Pure-Python oracles (scalar loops, no numpy arithmetic)


def _py_mm(a, b):
    m, k, p = len(a), len(b), len(b[0])
    out = [[0.0] * p for _ in range(m)]
    for i in range(m):
        for kk in range(k):
            aik = a[i][kk]
            for j in range(p):
                out[i][j] += aik * b[kk][j]
    return out


def _py_softmax_row(row):
    mx = max(row)
    e = [math.exp(v - mx) for v in row]
    s = sum(e)
    return [v / s for v in e]


def _py_layernorm(rows, gamma, beta, eps=1e-5):
    out = []
    for r in rows:
        n = len(r)
        mu = sum(r) / n
        var = sum((v - mu) ** 2 for v in r) / n
        inv = 1.0 / math.sqrt(var + eps)
        out.append([(v - mu) * inv * g + b for v, g, b in zip(r, gamma, beta)])
    return out


def oracle_attention(q_tokens, kv_tokens, params, heads: int):
    """Scaled dot-product attention recomputed with Python floats.

    Independent of the numerics module; agreement is expected to
    ~1e-12 relative, not bitwise.
    """
    ql = q_tokens.tolist()
    kl = kv_tokens.tolist()
    c = q_tokens.shape[1]
    d = c // heads
    s = 1.0 / math.sqrt(d)
    q = _py_mm(ql, params["attn.wq"].tolist())
    k = _py_mm(kl, params["attn.wk"].tolist())
    v = _py_mm(kl, params["attn.wv"].tolist())
    m, p = len(q), len(k)
    o = [[0.0] * c for _ in range(m)]
    for h in range(heads):
        lo = h * d
        for i in range(m):
            scores = []
            for j in range(p):
                acc = 0.0
                for t in range(d):
                    acc += (q[i][lo + t] * s) * k[j][lo + t]
                scores.append(acc)
            a = _py_softmax_row(scores)
            for t in range(d):
                acc = 0.0
                for j in range(p):
                    acc += a[j] * v[j][lo + t]
                o[i][lo + t] = acc
    out = _py_mm(o, params["attn.wo"].tolist())
    return np.array(out)


def oracle_branch_attend(q_raw, merged, params, heads: int):
    """Full branch oracle: pre-norm cross-attention and FFN, residuals
    included, all in Python floats."""
    if q_raw.shape[0] == 0:
        return q_raw.copy()
    g1, b1 = params["ln1.gamma"].tolist(), params["ln1.beta"].tolist()
    yq = _py_layernorm(q_raw.tolist(), g1, b1)
    ykv = _py_layernorm(merged.tolist(), g1, b1)
    att = oracle_attention(np.array(yq), np.array(ykv), params, heads)
    h = [[a + b for a, b in zip(xr, ar)] for xr, ar in zip(q_raw.tolist(), att.tolist())]
    y2 = _py_layernorm(h, params["ln2.gamma"].tolist(), params["ln2.beta"].tolist())
    f1 = _py_mm(y2, params["ffn.w1"].tolist())
    hid = [[max(v, 0.0) for v in r] for r in f1]
    f2 = _py_mm(hid, params["ffn.w2"].tolist())
    return np.array([[a + b for a, b in zip(hr, fr)] for hr, fr in zip(h, f2)])


def oracle_context_explicit(x, params):
    """Context pooling through the route the block avoids: materialize
    the full attention matrix whose every row is the shared softmax
    map, multiply it against the tokens, then transform each row.

    Uses the same pinned-order matmul primitive, so the result must be
    bitwise identical to the block's pooled shortcut. Returns
    (out, delta_rows): delta_rows holds the per-token corrections this
    route computes independently for every query row.
    """
    n, c = x.shape
    s = matmul(x, params["ctx.head"].reshape(c, 1))
    g = softmax_cols(s)  # (N, 1)
    a_full = np.tile(g[:, 0], (n, 1))  # every query row holds the same map
    pooled_rows = matmul(a_full, x)  # (N, C)
    z = matmul(pooled_rows, params["ctx.t1"])
    zl, _ = layernorm(z, params["ctx.ln.gamma"], params["ctx.ln.beta"])
    r = matmul(relu(zl), params["ctx.t2"])
    return x + r, r


# ---------------------------------------------------------------------------
# Finite-difference gradient harness


def grad_check(
    make_loss,
    arrays: dict,
    analytic: dict,
    rng: Rng,
    name: str,
    coords_per_array: int = 4,
    h: float = 1e-5,
    rtol: float = 1e-4,
) -> CheckReport:
    """Central-difference check of hand-written gradients.

    make_loss() recomputes the scalar loss from the current contents
    of `arrays` (which are perturbed in place) and returns
    (loss, signature). If the discrete routing signature differs
    between the +h and -h evaluations, that coordinate sits on a
    routing boundary: it is excluded and counted as fragile rather
    than failed, since the loss is only piecewise differentiable
    there.

    The relative error uses denominator max(|num|, |ana|, 1e-8). A
    coordinate also passes when |num - ana| < 1e-9: central
    differences of an O(1) loss at h=1e-5 carry roundoff of order
    eps*|loss|/h ~ 1e-11, so below 1e-9 the comparison measures
    noise, not the gradient formula. Any wrong term on a path whose
    true gradient matters produces a discrepancy at that gradient's
    own scale, far above this floor.
    """
    worst = 0.0
    checked = 0
    fragile = 0
    failures = []
    for key in sorted(arrays):
        arr = arrays[key]
        ana = analytic.get(key)
        if arr.size == 0:
            continue
        if ana is None:
            raise KeyError(f"no analytic gradient for {key}")
        n_probe = min(coords_per_array, arr.size)
        flat = rng.permutation(arr.size)[:n_probe]
        for fi in flat:
            ix = np.unravel_index(int(fi), arr.shape)
            old = arr[ix]
            arr[ix] = old + h
            lp, sig_p = make_loss()
            arr[ix] = old - h
            lm, sig_m = make_loss()
            arr[ix] = old
            if sig_p != sig_m:
                fragile += 1
                continue
            num = (lp - lm) / (2.0 * h)
            a = float(ana[ix])
            if abs(num - a) < 1e-9:  # below central-difference noise
                checked += 1
                continue
            err = abs(num - a) / max(abs(num), abs(a), 1e-8)
            worst = max(worst, err)
            checked += 1
            if err >= rtol:
                failures.append(f"{key}{list(ix)}: num={num:.6e} ana={a:.6e} err={err:.2e}")
    passed = not failures and checked > 0
    details = f"{checked} coords ok" if passed else "; ".join(failures[:4]) or "no coords checked"
    return CheckReport(
        name=name, passed=passed, details=details, max_err=worst, checked=checked, fragile=fragile
    )


# ---------------------------------------------------------------------------
# Oracle suite


def check_mhsa_oracle(seed: int, trials: int = 50) -> CheckReport:
    """Self-attention against the scalar-loop oracle, max abs error
    below 1e-10 on small random instances (N <= 16, C <= 32)."""
    rng = Rng(seed)
    worst = 0.0
    for t in range(trials):
        r = rng.child(t)
        heads = (1, 2, 4)[int(r.child(0).integers(0, 3))]
        c = heads * int(r.child(1).integers(1, 32 // heads + 1))
        n = int(r.child(2).integers(1, 17))
        cfg = BlockConfig(channels=c, heads=heads)
        params = init_vanilla_params(r.child(3), cfg)
        x = r.child(4).normal((n, c))
        got, _ = mhsa_forward(x, params, heads)
        want = oracle_attention(x, x, params, heads)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return CheckReport(
        name="mhsa_vs_python_oracle",
        passed=worst < 1e-10,
        details=f"{trials} random instances N<=16 C<=32, abs tol 1e-10",
        max_err=worst,
        checked=trials,
        seed=seed,
    )


def check_branch_attend_oracle(seed: int, trials: int = 50) -> CheckReport:
    rng = Rng(seed)
    worst = 0.0
    for t in range(trials):
        r = rng.child(t)
        heads = (1, 2)[int(r.child(0).integers(0, 2))]
        c = heads * int(r.child(1).integers(2, 9))
        nq = 6 if t == 0 else int(r.child(2).integers(1, 17))
        k = 3 if t == 0 else int(r.child(3).integers(1, 9))
        cfg = BlockConfig(channels=c, heads=heads)
        params = init_vanilla_params(r.child(4), cfg)
        q_raw = r.child(5).normal((nq, c))
        merged = r.child(6).normal((k, c))
        got, _ = branch_attend(q_raw, merged, params, heads)
        want = oracle_branch_attend(q_raw, merged, params, heads)
        worst = max(worst, float(np.max(np.abs(got - want))))
    return CheckReport(
        name="branch_attend_vs_python_oracle",
        passed=worst < 1e-10,
        details=f"{trials} subset instances incl 6q/3kv, abs tol 1e-10",
        max_err=worst,
        checked=trials,
        seed=seed,
    )


def check_cst_explicit_bitwise(seed: int, trials: int = 30) -> CheckReport:
    """The pooled-context shortcut against the materialized rank-1
    attention matrix: outputs bitwise equal, and the explicit route's
    per-token correction rows are bitwise identical to each other."""
    rng = Rng(seed)
    bad = []
    for t in range(trials):
        r = rng.child(t)
        c = 4 * int(r.child(0).integers(1, 5))
        n = int(r.child(1).integers(1, 33))
        cfg = BlockConfig(channels=c, ctx_reduction=4)
        params = init_cst_params(r.child(2), cfg)
        x = r.child(3).normal((n, c))
        got, _ = cst_global_context(x, params)
        want, delta_rows = oracle_context_explicit(x, params)
        if not np.array_equal(got, want):
            bad.append(f"trial {t}: route mismatch")
            continue
        if not np.all(delta_rows == delta_rows[0:1]):
            bad.append(f"trial {t}: per-token delta differs")
    return CheckReport(
        name="cst_context_vs_explicit_matrix",
        passed=not bad,
        details="; ".join(bad[:3]) or f"{trials} shapes bitwise, deltas query-independent",
        max_err=float(len(bad)),
        checked=trials,
        seed=seed,
    )


def check_sgst_reduces_to_vanilla(seed: int, trials: int = 10) -> CheckReport:
    """With K = N, a raw identity merge matrix and the heatmap forced
    to one, the gathered branch sees exactly the vanilla computation;
    outputs must agree bitwise."""
    rng = Rng(seed)
    bad = 0
    for t in range(trials):
        r = rng.child(t)
        heads = (1, 2)[int(r.child(0).integers(0, 2))]
        c = heads * 4
        n = int(r.child(1).integers(2, 11))
        cfg_v = BlockConfig(channels=c, heads=heads)
        params = init_vanilla_params(r.child(2), cfg_v)
        x = r.child(3).normal((n, c))
        want, _ = vanilla_block_forward(x, params, heads)
        cfg_s = BlockConfig(
            channels=c, heads=heads, merge_ratio=Fraction(1, 1), merge_mode="raw"
        )
        params_s = dict(params)
        params_s["gate.head"] = np.zeros(c)  # unused under the override
        params_s["merge.w"] = np.eye(n)
        got, _ = sgst_block_forward(x, params_s, cfg_s, heatmap_override=np.ones(n))
        if not np.array_equal(got, want):
            bad += 1
    return CheckReport(
        name="sgst_reduces_to_vanilla",
        passed=bad == 0,
        details=f"{trials} shapes, K=N identity merge, bitwise",
        max_err=float(bad),
        checked=trials,
        seed=seed,
    )


def suite_oracles(seed: int = 0) -> list[CheckReport]:
    return [
        check_mhsa_oracle(seed),
        check_branch_attend_oracle(seed + 1),
        check_cst_explicit_bitwise(seed + 2),
        check_sgst_reduces_to_vanilla(seed + 3),
    ]


# ---------------------------------------------------------------------------
# Gradient suite


def _sgst_safe_input(r: Rng, n: int, c: int, params, margin: float = 1e-3):
    """Redraw x until every heatmap score clears the routing threshold
    by `margin`, so finite differences cannot flip the partition."""
    from .blocks import heatmap_head

    for attempt in range(200):
        x = r.child(attempt).normal((n, c))
        hm = heatmap_head(x, params)
        if np.min(np.abs(hm - 0.5)) >= margin and len(np.unique(hm >= 0.5)) == 2:
            return x
    raise RuntimeError("could not draw a routing-safe input")


def check_block_gradients(kind: str, seed: int, rtol: float = 1e-4) -> CheckReport:
    from .blocks import cst as cst_mod
    from .blocks import sgst as sgst_mod
    from .blocks import vanilla as vanilla_mod

    r = Rng(seed)
    if kind == "vanilla":
        cfg = BlockConfig(channels=8, heads=2)
        params = init_vanilla_params(r.child(0), cfg)
        x = r.child(1).normal((6, 8))
        dout = r.child(2).normal((6, 8))

        def run():
            out, cache = vanilla_block_forward(x, params, cfg.heads)
            return out, cache, vanilla_mod.block_signature(cache)

        def back(cache):
            return vanilla_block_backward(cache, dout, params)

    elif kind == "cst":
        cfg = BlockConfig(channels=8, ctx_reduction=4)
        params = init_cst_params(r.child(0), cfg)
        x = r.child(1).normal((6, 8))
        dout = r.child(2).normal((6, 8))

        def run():
            out, cache = cst_block_forward(x, params)
            return out, cache, cst_mod.block_signature(cache)

        def back(cache):
            return cst_block_backward(cache, dout, params)

    elif kind == "sgst":
        cfg = BlockConfig(channels=8, heads=2, merge_ratio=Fraction(1, 3))
        params = init_sgst_params(r.child(0), cfg, n=7)
        x = _sgst_safe_input(r.child(1), 7, 8, params)
        dout = r.child(2).normal((7, 8))

        def run():
            out, cache = sgst_block_forward(x, params, cfg)
            return out, cache, sgst_mod.block_signature(cache)

        def back(cache):
            return sgst_block_backward(cache, dout, params, cfg)

    else:
        raise ValueError(f"unknown block kind {kind!r}")

    out0, cache0, _ = run()
    dx, grads = back(cache0)
    analytic = dict(grads)
    analytic["x"] = dx
    arrays = dict(params)
    arrays["x"] = x

    def make_loss():
        out, _, sig = run()
        return float(np.sum(out * dout)), sig

    return grad_check(
        make_loss, arrays, analytic, r.child(3), name=f"grad_{kind}_block_s{seed}", rtol=rtol
    )


def check_mix_gradients(seed: int, rtol: float = 1e-4) -> CheckReport:
    r = Rng(seed)
    params = init_mix_params(r.child(0), 6)
    a = r.child(1).normal((5, 6))
    m = r.child(2).normal((5, 6))
    dout = r.child(3).normal((5, 6))
    out, cache = mix_streams(a, m, params)
    da, dm, grads = mix_streams_backward(cache, dout, params)
    analytic = dict(grads)
    analytic["a"] = da
    analytic["m"] = dm
    arrays = {"a": a, "m": m, "mix.w": params["mix.w"]}

    def make_loss():
        out, _ = mix_streams(a, m, params)
        return float(np.sum(out * dout)), None

    return grad_check(make_loss, arrays, analytic, r.child(4), name=f"grad_mix_s{seed}", rtol=rtol)


def suite_gradients(seed: int = 0, n_seeds: int = 20) -> list[CheckReport]:
    """Per-block finite-difference checks across many seeds; the fused
    pipeline check lives in the pipeline module's suite hook."""
    from .pipeline import check_pipeline_gradients

    reports = []
    for kind in ("vanilla", "cst", "sgst"):
        for s in range(n_seeds):
            reports.append(check_block_gradients(kind, seed + s))
    reports.append(check_mix_gradients(seed))
    for s in range(n_seeds):
        reports.append(check_pipeline_gradients(seed + s))
    return reports


# ---------------------------------------------------------------------------
# Property suite (randomized, seeded, replayable)


def check_partition_properties(seed: int, trials: int = 1000) -> CheckReport:
    rng = Rng(seed)
    for t in range(trials):
        r = rng.child(t)
        n = int(r.child(0).integers(1, 33))
        h = r.child(1).uniform(0.0, 1.0, n)
        if t % 7 == 0 and n > 2:
            h[: n // 2] = 0.5  # exercise the tie rule
        plan = build_plan(h)
        try:
            plan.validate()
        except ValueError as e:
            return CheckReport("partition_properties", False, f"trial {t}: {e}", seed=seed)
        if np.any(h[plan.fg] < 0.5) or np.any(h[plan.bg] >= 0.5):
            return CheckReport("partition_properties", False, f"trial {t}: threshold broken", seed=seed)
        x = r.child(2).normal((n, 3))
        back = scatter(x, plan, gather(x, plan.fg), gather(x, plan.bg))
        if not np.array_equal(back, x):
            return CheckReport("partition_properties", False, f"trial {t}: scatter not inverse", seed=seed)
    return CheckReport(
        "partition_properties", True, f"{trials} partitions: cover, tie->fg, scatter inverse",
        checked=trials, seed=seed,
    )


def check_merge_properties(seed: int, trials: int = 200) -> CheckReport:
    rng = Rng(seed)
    for t in range(trials):
        r = rng.child(t)
        n = int(r.child(0).integers(1, 20))
        k = int(r.child(1).integers(1, n + 1))
        w = r.child(2).normal((n, k))
        m = softmax_cols(w)
        if not np.allclose(np.sum(m, axis=0), 1.0, atol=1e-12):
            return CheckReport("merge_properties", False, f"trial {t}: columns not normalized", seed=seed)
        if np.any(m < 0):
            return CheckReport("merge_properties", False, f"trial {t}: negative weight", seed=seed)
        x = r.child(3).normal((n, 4))
        ones = np.ones(n)
        merged = soft_merge(x, ones, m)
        lo, hi = x.min(axis=0), x.max(axis=0)
        if np.any(merged < lo - 1e-9) or np.any(merged > hi + 1e-9):
            return CheckReport("merge_properties", False, f"trial {t}: outside convex hull", seed=seed)
    return CheckReport(
        "merge_properties", True, f"{trials} merges: convex columns", checked=trials, seed=seed
    )


def check_single_merged_token_attention(seed: int) -> CheckReport:
    """K = 1 forces every attention row to the single value 1.0."""
    r = Rng(seed)
    cfg = BlockConfig(channels=6, heads=2, merge_ratio=Fraction(1, 100))
    params = init_sgst_params(r.child(0), cfg, n=9)
    x = r.child(1).normal((9, 6))
    from .blocks import sgst_attention_stage

    _, cache = sgst_attention_stage(x, params, cfg)
    branch_caches = cache[6]
    rows = 0
    for bc in branch_caches.values():
        if bc is None or bc == "passthrough":
            continue
        attn_maps = bc[3][5]
        for a in attn_maps:
            if a.shape[1] != 1 or not np.array_equal(a, np.ones_like(a)):
                return CheckReport("single_merged_token", False, "attention row not [1.0]", seed=seed)
            rows += a.shape[0]
    return CheckReport("single_merged_token", True, f"{rows} rows all exactly 1.0", seed=seed)


def check_permutation_equivariance(seed: int, trials: int = 20) -> CheckReport:
    """No positional encodings anywhere: permuting tokens permutes the
    vanilla block output (within accumulation-order noise)."""
    rng = Rng(seed)
    worst = 0.0
    for t in range(trials):
        r = rng.child(t)
        n, c = int(r.child(0).integers(2, 10)), 8
        cfg = BlockConfig(channels=c, heads=2)
        params = init_vanilla_params(r.child(1), cfg)
        x = r.child(2).normal((n, c))
        perm = r.child(3).permutation(n)
        a, _ = vanilla_block_forward(x, params, cfg.heads)
        b, _ = vanilla_block_forward(x[perm], params, cfg.heads)
        worst = max(worst, float(np.max(np.abs(a[perm] - b))))
    return CheckReport(
        "permutation_equivariance", worst < 1e-10,
        f"{trials} permutations, abs tol 1e-10", max_err=worst, checked=trials, seed=seed,
    )


def check_zeroed_blocks_are_identity(seed: int) -> CheckReport:
    r = Rng(seed)
    cfg = BlockConfig(channels=8, heads=2)
    x = r.child(0).normal((5, 8))
    pv = init_vanilla_params(r.child(1), cfg)
    for k in ("attn.wq", "attn.wk", "attn.wv", "attn.wo", "ffn.w1", "ffn.w2"):
        pv[k] = np.zeros_like(pv[k])
    ov, _ = vanilla_block_forward(x, pv, cfg.heads)
    pc = init_cst_params(r.child(2), BlockConfig(channels=8, ctx_reduction=4))
    for k in ("ctx.t2", "ffn.w2"):
        pc[k] = np.zeros_like(pc[k])
    oc, _ = cst_block_forward(x, pc)
    ok = np.array_equal(ov, x) and np.array_equal(oc, x)
    return CheckReport("zeroed_blocks_identity", ok, "zero attention/FFN weights pass input through", seed=seed)


def check_fg_only_passthrough(seed: int) -> CheckReport:
    r = Rng(seed)
    cfg = BlockConfig(channels=6, heads=1, merge_ratio=Fraction(1, 2), fg_only=True)
    params = init_sgst_params(r.child(0), cfg, n=8)
    x = r.child(1).normal((8, 6))
    hm = np.concatenate([np.full(3, 0.9), np.full(5, 0.1)])
    out, _ = sgst_block_forward(x, params, cfg, heatmap_override=hm)
    bg_same = np.array_equal(out[3:], x[3:])
    fg_changed = not np.array_equal(out[:3], x[:3])
    return CheckReport(
        "fg_only_passthrough", bg_same and fg_changed,
        "background rows bitwise untouched, foreground transformed", seed=seed,
    )


def check_serialization_roundtrip(seed: int, trials: int = 50, tmpdir=None) -> CheckReport:
    import tempfile

    rng = Rng(seed)
    with tempfile.TemporaryDirectory(dir=tmpdir) as td:
        for t in range(trials):
            r = rng.child(t)
            rank = int(r.child(0).integers(0, 4))
            shape = tuple(int(d) for d in r.child(1).integers(1, 6, rank))
            x = r.child(2).normal(shape) * 10.0 ** float(r.child(3).integers(-8, 9))
            p = Path(td) / "x.isot"
            tensorio.save_array(p, np.asarray(x))
            if not np.array_equal(tensorio.load_array(p), np.asarray(x)):
                return CheckReport("serialization_roundtrip", False, f"trial {t}: binary mismatch", seed=seed)
            pt = Path(td) / "x.txt"
            tensorio.save_array_text(pt, np.asarray(x))
            if not np.array_equal(tensorio.load_array_text(pt), np.asarray(x)):
                return CheckReport("serialization_roundtrip", False, f"trial {t}: text mismatch", seed=seed)
    return CheckReport("serialization_roundtrip", True, f"{trials} arrays, bitwise both formats",
                       checked=trials, seed=seed)


def suite_properties(seed: int = 0) -> list[CheckReport]:
    return [
        check_partition_properties(seed),
        check_merge_properties(seed + 1),
        check_single_merged_token_attention(seed + 2),
        check_permutation_equivariance(seed + 3),
        check_zeroed_blocks_are_identity(seed + 4),
        check_fg_only_passthrough(seed + 5),
        check_serialization_roundtrip(seed + 6),
    ]


# ---------------------------------------------------------------------------
# Golden fixtures


def _golden_ops():
    from .blocks import cst_global_context as _cst

    def run_softmax(inp):
        from .numerics import softmax_rows

        return softmax_rows(inp["x"])

    def run_layernorm(inp):
        out, _ = layernorm(inp["x"], inp["gamma"], inp["beta"])
        return out

    def run_mhsa(inp, heads):
        params = {f"attn.w{k}": inp[f"w{k}"] for k in "qkvo"}
        out, _ = mhsa_forward(inp["tokens"], params, heads)
        return out

    def run_cst(inp):
        params = {
            "ctx.head": inp["head"],
            "ctx.t1": inp["t1"],
            "ctx.ln.gamma": inp["ln_gamma"],
            "ctx.ln.beta": inp["ln_beta"],
            "ctx.t2": inp["t2"],
        }
        out, _ = _cst(inp["x"], params)
        return out

    return {
        "softmax_rows": lambda inp, man: run_softmax(inp),
        "layernorm": lambda inp, man: run_layernorm(inp),
        "mhsa": lambda inp, man: run_mhsa(inp, int(man["heads"])),
        "cst_context": lambda inp, man: run_cst(inp),
    }


def golden_compare(fixture_dir, tolerance: float | None = None) -> CheckReport:
    """Run the op named in a fixture's manifest on its stored inputs
    and compare against the stored high-precision expectation."""
    fdir = Path(fixture_dir)
    man = json.loads((fdir / "manifest.json").read_text())
    inputs = {k: load_array_text(fdir / v) for k, v in man["inputs"].items()}
    expected = load_array_text(fdir / man["expected"])
    tol = tolerance if tolerance is not None else float(man["tolerance"])
    ops = _golden_ops()
    if man["op"] not in ops:
        return CheckReport(f"golden_{fdir.name}", False, f"unknown op {man['op']!r}")
    got = ops[man["op"]](inputs, man)
    if got.shape != expected.shape:
        return CheckReport(f"golden_{fdir.name}", False,
                           f"shape {got.shape} != {expected.shape}")
    diff = np.abs(got - expected)
    max_err = float(np.max(diff)) if diff.size else 0.0
    if max_err <= tol:
        return CheckReport(f"golden_{fdir.name}", True, f"within {tol:g}", max_err=max_err)
    loc = [int(i) for i in np.unravel_index(int(np.argmax(diff)), diff.shape)]
    return CheckReport(
        f"golden_{fdir.name}", False,
        f"max error {max_err:.3e} at index {loc} exceeds {tol:g}", max_err=max_err,
    )


def suite_golden(root=None) -> list[CheckReport]:
    root = Path(root) if root is not None else GOLDEN_DIR
    if not root.is_dir():
        return [CheckReport("golden_fixtures", False, f"fixture dir {root} missing")]
    dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not dirs:
        return [CheckReport("golden_fixtures", False, "no fixtures found")]
    return [golden_compare(d) for d in dirs]


# ---------------------------------------------------------------------------
# Entry point used by the CLI


SUITES = {
    "oracles": lambda seed: suite_oracles(seed),
    "gradients": lambda seed: suite_gradients(seed),
    "properties": lambda seed: suite_properties(seed),
    "golden": lambda seed: suite_golden(),
}


def run_suites(names=None, seed: int = 0) -> list[CheckReport]:
    names = list(names) if names else sorted(SUITES)
    reports = []
    for n in names:
        if n not in SUITES:
            raise KeyError(f"unknown suite {n!r}; have {sorted(SUITES)}")
        reports.extend(SUITES[n](seed))
    return reports

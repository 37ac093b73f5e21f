"""Wall-time measurement for block forwards.

Methodology: fixed warmup runs (excluded) then timed repeats; the
reported statistic is the median, with the interquartile range as the
spread measure — both robust to scheduler noise on shared desktops.
Single-threaded by default so numbers are comparable across variants;
callers can opt in to the numerics layer's parallelism.

Every result carries the analytic FLOP count of the thing it timed, so
timing tables join against cost tables on (block, N, C, K).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from time import perf_counter

import numpy as np

from .blocks import (
    BlockConfig,
    build_plan,
    init_cst_params,
    init_sgst_params,
    init_vanilla_params,
)
from .blocks.cst import cst_block_forward
from .blocks.sgst import heatmap_head, sgst_attention_stage, sgst_block_forward
from .blocks.vanilla import vanilla_block_forward
from .cost import block_cost, flops_sgst
from .numerics import Rng, set_threads

DEFAULT_MEM_CAP_BYTES = 4 << 30  # refuse shapes whose intermediates top 4 GB

BENCH_TARGETS = ("vanilla", "cst", "sgst", "sgst_stage")

CSV_HEADER = ("block", "N", "C", "heads", "K", "repeats", "median_s", "iqr_s",
              "flops", "gflops_per_s")


class MemoryCapError(RuntimeError):
    pass


@dataclass
class BenchResult:
    name: str
    n: int
    c: int
    heads: int
    k: int | None
    repeats: int
    median_s: float
    iqr_s: float
    flops: int

    @property
    def gflops_per_s(self) -> float:
        if self.median_s == 0.0:
            return float("inf")
        return self.flops / self.median_s / 1e9

    def row(self) -> tuple:
        return (self.name, self.n, self.c, self.heads,
                "" if self.k is None else self.k, self.repeats,
                f"{self.median_s:.6e}", f"{self.iqr_s:.6e}", self.flops,
                f"{self.gflops_per_s:.3f}")


def time_callable(fn, repeats: int = 11, warmup: int = 3):
    """(median, iqr, samples) of fn's wall time; warmups not counted."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = perf_counter()
        fn()
        samples.append(perf_counter() - t0)
    med = float(np.median(samples))
    iqr = 0.0 if repeats == 1 else float(
        np.percentile(samples, 75) - np.percentile(samples, 25)
    )
    return med, iqr, samples


def _build(target: str, n: int, c: int, heads: int, merge_ratio: Fraction, seed: int):
    """Returns (fn, k_or_none, analytic_flops)."""
    rng = Rng(seed, (7001, BENCH_TARGETS.index(target)))
    if target == "vanilla":
        cfg = BlockConfig(channels=c, heads=heads)
        params = init_vanilla_params(rng.child(0), cfg)
        x = rng.child(1).normal((n, c))
        return (lambda: vanilla_block_forward(x, params, heads), None,
                block_cost("vanilla", n, c, heads))
    if target == "cst":
        r_c = 4 if c % 4 == 0 else 1
        cfg = BlockConfig(channels=c, ctx_reduction=r_c)
        params = init_cst_params(rng.child(0), cfg)
        x = rng.child(1).normal((n, c))
        return (lambda: cst_block_forward(x, params), None,
                block_cost("cst", n, c, ctx_reduction=r_c))
    if target in ("sgst", "sgst_stage"):
        cfg = BlockConfig(channels=c, heads=heads, merge_ratio=merge_ratio)
        params = init_sgst_params(rng.child(0), cfg, n)
        x = rng.child(1).normal((n, c))
        k = cfg.merged_tokens(n)
        # the timed runs use the model's own routing; read the realized
        # split once so the FLOP column matches what actually executes
        n_f = len(build_plan(heatmap_head(x, params)).fg)
        if target == "sgst_stage":
            fn = lambda: sgst_attention_stage(x, params, cfg)
            rep = flops_sgst(n, c, heads, k, n_f)
        else:
            fn = lambda: sgst_block_forward(x, params, cfg)
            rep = block_cost("sgst", n, c, heads, k=k, n_f=n_f)
        return fn, k, rep
    raise ValueError(f"unknown bench target {target!r}")


def bench_target(
    target: str,
    n: int,
    c: int,
    heads: int = 1,
    merge_ratio: Fraction = Fraction(1, 9),
    repeats: int = 11,
    warmup: int = 3,
    seed: int = 0,
    threads: int = 1,
    mem_cap_bytes: int = DEFAULT_MEM_CAP_BYTES,
) -> BenchResult:
    """Time one block forward at one shape."""
    set_threads(threads)
    fn, k, rep = _build(target, n, c, heads, Fraction(merge_ratio), seed)
    need = rep.peak_bytes + 8 * n * c
    if need > mem_cap_bytes:
        raise MemoryCapError(
            f"{target} at N={n}, C={c} needs ~{need / 2**30:.2f} GB of "
            f"intermediates, over the {mem_cap_bytes / 2**30:.2f} GB cap"
        )
    med, iqr, _ = time_callable(fn, repeats, warmup)
    return BenchResult(target, n, c, heads, k, repeats, med, iqr, rep.total)


def bench_grid(
    targets=BENCH_TARGETS,
    ns=(256, 1024, 4096),
    cs=(64, 256),
    heads: int = 1,
    merge_ratio: Fraction = Fraction(1, 9),
    repeats: int = 11,
    warmup: int = 3,
    seed: int = 0,
    threads: int = 1,
    mem_cap_bytes: int = DEFAULT_MEM_CAP_BYTES,
) -> list[BenchResult]:
    out = []
    for n in ns:
        for c in cs:
            for t in targets:
                out.append(bench_target(t, n, c, heads, merge_ratio, repeats,
                                        warmup, seed, threads, mem_cap_bytes))
    return out


def relative_speed(
    n: int = 4096,
    c: int = 256,
    heads: int = 1,
    merge_ratio: Fraction = Fraction(1, 9),
    repeats: int = 5,
    warmup: int = 1,
    seed: int = 0,
) -> dict:
    """Single-threaded medians of the three contenders at one shape,
    plus their ratios against the vanilla block."""
    van = bench_target("vanilla", n, c, heads, repeats=repeats, warmup=warmup, seed=seed)
    cst = bench_target("cst", n, c, heads, repeats=repeats, warmup=warmup, seed=seed)
    stage = bench_target("sgst_stage", n, c, heads, merge_ratio, repeats=repeats,
                         warmup=warmup, seed=seed)
    return {
        "n": n,
        "c": c,
        "vanilla_median_s": van.median_s,
        "cst_median_s": cst.median_s,
        "sgst_stage_median_s": stage.median_s,
        "cst_over_vanilla": cst.median_s / van.median_s,
        "sgst_stage_over_vanilla": stage.median_s / van.median_s,
    }


def write_csv(path, results) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in results:
            w.writerow(r.row())

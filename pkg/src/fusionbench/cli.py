"""Command-line front end.

One executable, six subcommands:

    verify   run verification suites, nonzero exit on any failure
    bench    wall-time forwards across blocks and shapes
    cost     closed-form FLOP sweeps and the MHSA-portion reduction
    train    overfit the toy pipeline on a synthetic clip
    eval     IoU of a saved checkpoint on a synthetic clip
    dump     export attention artifacts for offline plotting
    rerun    repeat a previous run from its manifest

Every run resolves its configuration as defaults < config file (JSON,
--config) < explicit flags, writes the resolved values into
<out-dir>/manifest.json BEFORE doing any work, and appends the list of
files it produced afterwards. `rerun <manifest>` re-executes from the
resolved config; all outputs except measured wall times are
deterministic functions of (config, seed, threads), so reruns
reproduce those files byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from . import tensorio
from .numerics import Rng, set_threads

MANIFEST_NAME = "manifest.json"

# flag defaults live here, not in argparse, so we can tell "flag given"
# from "flag defaulted" when merging with a config file
DEFAULTS = {
    "verify": {"suite": "all", "seed": 0},
    "bench": {
        "targets": "vanilla,cst,sgst,sgst_stage",
        "ns": "256,1024,4096",
        "cs": "64,256",
        "heads": 1,
        "merge_ratio": "1/9",
        "repeats": 11,
        "warmup": 3,
        "mem_cap_gb": 4.0,
        "seed": 0,
    },
    "cost": {"channels": 256, "base": 512, "heads": 1, "ffn_ratio": 4,
             "ctx_reduction": 4, "seed": 0},
    "train": {
        "steps": 600,
        "seed": 7,
        "base": 64,
        "frames": 3,
        "channels": "12,12,12,12",
        "kinds": "cst,cst,sgst,sgst",
        "heads": 1,
        "ffn_ratio": 4,
        "ctx_reduction": 4,
        "merge_ratio": "1/9",
        "merge_mode": "softmax",
        "decoder_dim": 8,
        "shape": "disk",
        "radius": 0.3,
        "lr": 1e-3,
        "weight_decay": 0.01,
        "feature_seed": 417,
    },
    "eval": {"checkpoint": "", "clip_seed": 7, "seed": 7},
    "dump": {"what": "all", "tokens": 64, "channels": 16, "seed": 0},
}


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _resolve(sub: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags; returns plain dict."""
    cfg = dict(DEFAULTS[sub])
    if args.config:
        with open(args.config) as f:
            file_cfg = json.load(f)
        unknown = set(file_cfg) - set(cfg) - {"threads", "out_dir"}
        if unknown:
            raise SystemExit(f"config file has unknown keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in file_cfg.items() if k in cfg})
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _out_dir(sub: str, args: argparse.Namespace) -> Path:
    d = Path(args.out_dir) if args.out_dir else Path("runs") / sub
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(out: Path, sub: str, cfg: dict, threads: int,
                    outputs=None, started=None) -> dict:
    man = {
        "subcommand": sub,
        "config": cfg,
        "seed": cfg.get("seed", 0),
        "threads": threads,
        "out_dir": str(out),
        "version": __version__,
        "started": started or _utcnow(),
        "finished": None if outputs is None else _utcnow(),
        "outputs": outputs or [],
    }
    with open(out / MANIFEST_NAME, "w") as f:
        json.dump(man, f, indent=2, sort_keys=True)
        f.write("\n")
    return man


def _run(sub, cfg, out, threads):
    """Dispatch after the manifest is on disk; returns (exit, outputs)."""
    set_threads(threads)
    if sub == "verify":
        return _do_verify(cfg, out)
    if sub == "bench":
        return _do_bench(cfg, out, threads)
    if sub == "cost":
        return _do_cost(cfg, out)
    if sub == "train":
        return _do_train(cfg, out)
    if sub == "eval":
        return _do_eval(cfg, out)
    if sub == "dump":
        return _do_dump(cfg, out)
    raise SystemExit(f"unknown subcommand {sub!r}")


# --- verify -----------------------------------------------------------------


def _do_verify(cfg, out):
    from .verify import SUITES, run_suites

    names = sorted(SUITES) if cfg["suite"] == "all" else [cfg["suite"]]
    for n in names:
        if n not in SUITES:
            raise SystemExit(
                f"unknown suite {n!r}; choose from {', '.join(sorted(SUITES))} or all"
            )
    reports = run_suites(names, seed=int(cfg["seed"]))
    lines = [r.line() for r in reports]
    print("\n".join(lines))
    report_txt = out / "verify_report.txt"
    report_txt.write_text("\n".join(lines) + "\n")
    summary = out / "verify_summary.csv"
    with open(summary, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["name", "pass", "max_rel_err"])
        for r in reports:
            w.writerow([r.name, int(r.passed),
                        "" if r.max_err is None else f"{r.max_err:.6e}"])
    ok = all(r.passed for r in reports)
    print(f"{sum(r.passed for r in reports)}/{len(reports)} checks passed")
    return (0 if ok else 1), [report_txt.name, summary.name]


# --- bench ------------------------------------------------------------------


def _csv_ints(s) -> tuple:
    return tuple(int(v) for v in str(s).split(","))


def _do_bench(cfg, out, threads):
    from .bench import MemoryCapError, bench_grid, write_csv

    targets = tuple(t.strip() for t in str(cfg["targets"]).split(","))
    try:
        results = bench_grid(
            targets=targets,
            ns=_csv_ints(cfg["ns"]),
            cs=_csv_ints(cfg["cs"]),
            heads=int(cfg["heads"]),
            merge_ratio=Fraction(str(cfg["merge_ratio"])),
            repeats=int(cfg["repeats"]),
            warmup=int(cfg["warmup"]),
            seed=int(cfg["seed"]),
            threads=threads,
            mem_cap_bytes=int(float(cfg["mem_cap_gb"]) * 2**30),
        )
    except MemoryCapError as e:
        raise SystemExit(str(e))
    path = out / "bench.csv"
    write_csv(path, results)
    for r in results:
        print(",".join(str(v) for v in r.row()))
    return 0, [path.name]


# --- cost -------------------------------------------------------------------


def _do_cost(cfg, out):
    from .cost import cost_sweep, mhsa_reduction, sweep_rows

    reports = cost_sweep(
        c=int(cfg["channels"]),
        heads=int(cfg["heads"]),
        base=int(cfg["base"]),
        ffn_ratio=int(cfg["ffn_ratio"]),
        ctx_reduction=int(cfg["ctx_reduction"]),
    )
    sweep_path = out / "cost_sweep.csv"
    with open(sweep_path, "w", newline="") as f:
        csv.writer(f).writerows(sweep_rows(reports))
    red_path = out / "reduction.csv"
    with open(red_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["N", "C", "K", "sgst_reduced_portion", "mhsa_portion",
                    "ratio", "reduction_pct"])
        for n in (256, 1024, 4096, 16384):
            for c in (64, 256, 512):
                d = mhsa_reduction(n, c, heads=int(cfg["heads"]))
                w.writerow([d["n"], d["c"], d["k"], d["sgst_reduced_portion"],
                            d["mhsa_portion"], f"{d['ratio_vs_portion']:.6f}",
                            f"{d['reduction_pct']:.3f}"])
    print(reports[0].table())
    d = mhsa_reduction(1024, 256, heads=int(cfg["heads"]))
    print(f"MHSA-portion reduction at N=1024, C=256: {d['reduction_pct']:.2f}%")
    return 0, [sweep_path.name, red_path.name]


# --- train / eval -----------------------------------------------------------


def _pipeline_cfg(cfg):
    from .pipeline import PipelineConfig

    return PipelineConfig(
        base=int(cfg["base"]),
        frames=int(cfg["frames"]),
        channels=_csv_ints(cfg["channels"]),
        kinds=tuple(k.strip() for k in str(cfg["kinds"]).split(",")),
        heads=int(cfg["heads"]),
        ffn_ratio=int(cfg["ffn_ratio"]),
        ctx_reduction=int(cfg["ctx_reduction"]),
        merge_ratio=Fraction(str(cfg["merge_ratio"])),
        merge_mode=str(cfg["merge_mode"]),
        decoder_dim=int(cfg["decoder_dim"]),
        shape=str(cfg["shape"]),
        radius=float(cfg["radius"]),
        lr=float(cfg["lr"]),
        weight_decay=float(cfg["weight_decay"]),
        feature_seed=int(cfg["feature_seed"]),
    )


def _do_train(cfg, out):
    from .pipeline import train

    pcfg = _pipeline_cfg(cfg)
    res = train(pcfg, seed=int(cfg["seed"]), steps=int(cfg["steps"]), out_dir=out)
    cfg_path = out / "resolved_config.json"
    with open(cfg_path, "w") as f:
        json.dump(pcfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    last = res["rows"][-1]
    print(f"step {last[0]}: loss {last[2]:.6f} iou {last[3]:.4f}")
    print(f"final mean IoU {res['final_mean_iou']:.4f} "
          f"(per frame: {', '.join(f'{v:.4f}' for v in res['per_frame_iou'])})")
    return 0, ["training_log.csv", "params.isoc", cfg_path.name]


def _check_shapes(params, expect):
    """First mismatch between a loaded checkpoint and a config's
    parameter table, by sorted tensor name."""
    for name in sorted(set(params) | set(expect)):
        if name not in params:
            return f"checkpoint is missing tensor {name!r}"
        if name not in expect:
            return f"checkpoint has unexpected tensor {name!r}"
        if params[name].shape != expect[name].shape:
            return (f"shape mismatch for {name!r}: checkpoint "
                    f"{params[name].shape}, config {expect[name].shape}")
    return None


def _do_eval(cfg, out):
    from .pipeline import evaluate, init_pipeline_params

    ckpt = Path(cfg["checkpoint"]) if cfg["checkpoint"] else None
    if ckpt is None or not ckpt.exists():
        raise SystemExit("eval needs --checkpoint pointing at a params.isoc")
    sibling = ckpt.parent / "resolved_config.json"
    if sibling.exists():
        with open(sibling) as f:
            pcfg_d = json.load(f)
        merged = dict(DEFAULTS["train"])
        merged.update({k: v for k, v in pcfg_d.items() if k in merged})
        merged["channels"] = ",".join(str(c) for c in pcfg_d["channels"])
        merged["kinds"] = ",".join(pcfg_d["kinds"])
        pcfg = _pipeline_cfg(merged)
    else:
        pcfg = _pipeline_cfg(dict(DEFAULTS["train"]))
    params = tensorio.load_checkpoint(ckpt)
    expect = init_pipeline_params(Rng(0), pcfg)
    err = _check_shapes(params, expect)
    if err:
        raise SystemExit(f"checkpoint does not match config: {err}")
    res = evaluate(params, pcfg, seed=int(cfg["clip_seed"]))
    for t, v in enumerate(res["per_frame"]):
        print(f"frame {t}: IoU {v:.4f}")
    print(f"mean IoU {res['mean_iou']:.4f}")
    path = out / "eval.json"
    with open(path, "w") as f:
        json.dump({"clip_seed": int(cfg["clip_seed"]),
                   "per_frame": res["per_frame"],
                   "mean_iou": res["mean_iou"]}, f, indent=2, sort_keys=True)
        f.write("\n")
    return 0, [path.name]


# --- dump -------------------------------------------------------------------


def _do_dump(cfg, out):
    from .blocks import BlockConfig, init_cst_params, init_sgst_params, init_vanilla_params
    from .blocks.cst import cst_block_forward
    from .blocks.sgst import sgst_attention_stage
    from .blocks.vanilla import vanilla_block_forward

    n, c = int(cfg["tokens"]), int(cfg["channels"])
    rng = Rng(int(cfg["seed"]), (9001,))
    x = rng.child(0).normal((n, c))
    wanted = ("cst-gmap", "sgst-heatmap", "attn-matrix") if cfg["what"] == "all" \
        else (cfg["what"],)
    arrays = {}
    for what in wanted:
        if what == "cst-gmap":
            p = init_cst_params(rng.child(1), BlockConfig(channels=c))
            _, cache = cst_block_forward(x, p)
            arrays[what] = cache[1][1][:, 0]  # softmax pooling map, sums to 1
        elif what == "sgst-heatmap":
            bc = BlockConfig(channels=c, merge_ratio=Fraction(1, 4))
            p = init_sgst_params(rng.child(2), bc, n)
            _, cache = sgst_attention_stage(x, p, bc)
            arrays[what] = cache[1]  # sigmoid scores in (0, 1)
        elif what == "attn-matrix":
            p = init_vanilla_params(rng.child(3), BlockConfig(channels=c))
            _, cache = vanilla_block_forward(x, p)
            arrays[what] = cache[1][5][0]  # head-0 map, rows sum to 1
        else:
            raise SystemExit(f"unknown dump target {what!r}")
    outputs = []
    for what, arr in arrays.items():
        stem = what.replace("-", "_")
        tensorio.save_array(out / f"{stem}.isot", arr)
        tensorio.save_array_text(out / f"{stem}.txt", arr)
        outputs += [f"{stem}.isot", f"{stem}.txt"]
        print(f"{what}: shape {arr.shape} -> {stem}.isot, {stem}.txt")
    return 0, outputs


# --- argument plumbing ------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--threads", type=int, default=1,
                   help="numerics threads (default 1 for comparable timings)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="fusionbench",
        description="attention-fusion blocks: verify, cost-model, benchmark, train",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("verify", help="run verification suites")
    p.add_argument("--suite", default=None,
                   help="oracles | gradients | properties | golden | all")
    _add_common(p)

    p = sub.add_parser("bench", help="wall-time block forwards")
    p.add_argument("--targets", default=None)
    p.add_argument("--ns", default=None, help="comma list of token counts")
    p.add_argument("--cs", default=None, help="comma list of channel widths")
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--merge-ratio", dest="merge_ratio", default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--mem-cap-gb", dest="mem_cap_gb", type=float, default=None)
    _add_common(p)

    p = sub.add_parser("cost", help="closed-form FLOP sweeps")
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--base", type=int, default=None)
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--ffn-ratio", dest="ffn_ratio", type=int, default=None)
    p.add_argument("--ctx-reduction", dest="ctx_reduction", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("train", help="overfit the toy pipeline")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--base", type=int, default=None)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--channels", default=None, help="comma list, one per stage")
    p.add_argument("--kinds", default=None, help="comma list of vanilla|cst|sgst")
    p.add_argument("--heads", type=int, default=None)
    p.add_argument("--ffn-ratio", dest="ffn_ratio", type=int, default=None)
    p.add_argument("--ctx-reduction", dest="ctx_reduction", type=int, default=None)
    p.add_argument("--merge-ratio", dest="merge_ratio", default=None)
    p.add_argument("--merge-mode", dest="merge_mode", default=None)
    p.add_argument("--decoder-dim", dest="decoder_dim", type=int, default=None)
    p.add_argument("--shape", default=None, help="disk | square")
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", dest="weight_decay", type=float, default=None)
    p.add_argument("--feature-seed", dest="feature_seed", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("eval", help="IoU of a checkpoint on a synthetic clip")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--clip-seed", dest="clip_seed", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("dump", help="export attention artifacts")
    p.add_argument("--what", default=None,
                   help="cst-gmap | sgst-heatmap | attn-matrix | all")
    p.add_argument("--tokens", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    _add_common(p)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None,
                   help="write outputs here instead of the recorded dir")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.subcommand == "rerun":
        with open(args.manifest) as f:
            man = json.load(f)
        sub = man["subcommand"]
        cfg = man["config"]
        threads = int(man.get("threads", 1))
        out = Path(args.out_dir) if args.out_dir else Path(man["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
    else:
        sub = args.subcommand
        cfg = _resolve(sub, args)
        threads = args.threads
        out = _out_dir(sub, args)
    man = _write_manifest(out, sub, cfg, threads)
    code, outputs = _run(sub, cfg, out, threads)
    _write_manifest(out, sub, cfg, threads, outputs=outputs,
                    started=man["started"])
    return code


if __name__ == "__main__":
    sys.exit(main())

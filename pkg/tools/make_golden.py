"""Regenerate the golden fixtures under src/fusionbench/golden/.

Expected outputs are computed with mpmath at 50 significant digits by
straightforward formula transcription - no code shared with the fast
path - then rounded once to float64. The package compares against them
at 1e-10, which comfortably covers double rounding plus the fast
path's own accumulation error on these tiny shapes.

Run from the repo root:  python3 tools/make_golden.py
"""

import json
import sys
from pathlib import Path

import numpy as np
from mpmath import exp as mp_exp
from mpmath import mp, mpf, sqrt

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from fusionbench.numerics import Rng  # noqa: E402
from fusionbench.tensorio import load_array_text, save_array_text  # noqa: E402

mp.dps = 50
GOLDEN = ROOT / "src" / "fusionbench" / "golden"


def to_mp(a):
    return [[mpf(float(v)) for v in row] for row in np.atleast_2d(a)]


def to_np(m):
    return np.array([[float(v) for v in row] for row in m])


def mp_matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    assert len(a[0]) == inner
    return [[sum((a[i][k] * b[k][j] for k in range(inner)), mpf(0))
             for j in range(cols)] for i in range(rows)]


def mp_softmax_vec(v):
    m = max(v)
    e = [mp_exp(x - m) for x in v]
    s = sum(e, mpf(0))
    return [x / s for x in e]


def mp_softmax_rows(x):
    return [mp_softmax_vec(row) for row in x]


def mp_layernorm(x, gamma, beta, eps=mpf(1e-5)):
    out = []
    for row in x:
        n = len(row)
        mu = sum(row, mpf(0)) / n
        xc = [v - mu for v in row]
        var = sum((v * v for v in xc), mpf(0)) / n
        inv = 1 / sqrt(var + eps)
        out.append([xc_i * inv * g + b for xc_i, g, b in zip(xc, gamma[0], beta[0])])
    return out


def mp_mhsa(tokens, wq, wk, wv, wo, heads):
    n = len(tokens)
    c = len(tokens[0])
    d = c // heads
    scale = 1 / sqrt(mpf(d))
    q = mp_matmul(tokens, wq)
    k = mp_matmul(tokens, wk)
    v = mp_matmul(tokens, wv)
    o = [[mpf(0)] * c for _ in range(n)]
    for h in range(heads):
        lo = h * d
        for i in range(n):
            scores = [
                sum((q[i][lo + t] * scale * k[j][lo + t] for t in range(d)), mpf(0))
                for j in range(n)
            ]
            a = mp_softmax_vec(scores)
            for t in range(d):
                o[i][lo + t] = sum((a[j] * v[j][lo + t] for j in range(n)), mpf(0))
    return mp_matmul(o, wo)


def mp_cst(x, head, t1, ln_gamma, ln_beta, t2):
    n = len(x)
    s = [row[0] for row in mp_matmul(x, head)]
    g = mp_softmax_vec(s)
    ctx = [[sum((g[i] * x[i][j] for i in range(n)), mpf(0)) for j in range(len(x[0]))]]
    z = mp_matmul(ctx, t1)
    zl = mp_layernorm(z, ln_gamma, ln_beta)
    a = [[v if v > 0 else mpf(0) for v in zl[0]]]
    r = mp_matmul(a, t2)
    return [[x[i][j] + r[0][j] for j in range(len(x[0]))] for i in range(n)]


def write_fixture(name, op, inputs, expected, extra=None):
    fdir = GOLDEN / name
    fdir.mkdir(parents=True, exist_ok=True)
    man = {"op": op, "tolerance": 1e-10, "expected": "expected.txt",
           "inputs": {}}
    if extra:
        man.update(extra)
    for key, arr in inputs.items():
        fname = f"{key}.txt"
        save_array_text(fdir / fname, arr)
        man["inputs"][key] = fname
    save_array_text(fdir / "expected.txt", expected)
    with open(fdir / "manifest.json", "w") as f:
        json.dump(man, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {fdir} ({op})")


def main():
    rng = Rng(20260814)

    x = rng.child(0).normal((6, 7)) * 3.0
    exp = to_np(mp_softmax_rows(to_mp(x)))
    write_fixture("softmax_rows", "softmax_rows", {"x": x}, exp)

    x = rng.child(1).normal((5, 9)) * 2.0 + 1.0
    gamma = rng.child(2).uniform(0.5, 1.5, (9,))
    beta = rng.child(3).uniform(-0.5, 0.5, (9,))
    exp = to_np(mp_layernorm(to_mp(x), to_mp(gamma), to_mp(beta)))
    write_fixture("layernorm", "layernorm",
                  {"x": x, "gamma": gamma, "beta": beta}, exp)

    n, c, heads = 5, 8, 2  # head_dim 4 -> the q scale is exact in binary
    tokens = rng.child(4).normal((n, c))
    ws = {f"w{k}": rng.child(10 + i).normal((c, c)) * 0.4
          for i, k in enumerate("qkvo")}
    exp = to_np(mp_mhsa(to_mp(tokens), *(to_mp(ws[f"w{k}"]) for k in "qkvo"),
                        heads))
    write_fixture("mhsa", "mhsa", {"tokens": tokens, **ws}, exp,
                  extra={"heads": heads})

    n, c, cr = 7, 8, 4
    x = rng.child(5).normal((n, c))
    head = rng.child(6).normal((c,))  # stored flat, like the ctx.head param
    t1 = rng.child(7).normal((c, cr)) * 0.5
    ln_gamma = rng.child(8).uniform(0.5, 1.5, (cr,))
    ln_beta = rng.child(9).uniform(-0.5, 0.5, (cr,))
    t2 = rng.child(20).normal((cr, c)) * 0.5
    head_col = [[mpf(float(v))] for v in head]
    exp = to_np(mp_cst(to_mp(x), head_col, to_mp(t1), to_mp(ln_gamma),
                       to_mp(ln_beta), to_mp(t2)))
    write_fixture("cst_context", "cst_context",
                  {"x": x, "head": head, "t1": t1,
                   "ln_gamma": ln_gamma, "ln_beta": ln_beta, "t2": t2}, exp)


if __name__ == "__main__":
    main()

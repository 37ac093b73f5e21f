"""Deterministic numerical primitives shared by every block.

All arrays are float64. The matmul here is the only place products are
accumulated, and it promises a fixed accumulation order: each output
element c[i, j] is built by adding a[i, k] * b[k, j] for k = 0, 1, ...
into a zero-initialized accumulator. That order matches a plain Python
triple loop bit for bit, which is what the verification oracles rely
on. BLAS does not honour this, so we never call it.

Every primitive charges the active FlopCounter according to the cost
convention documented in `cost.py` (adds, subtracts, multiplies and
divides cost 1; exp, log, sqrt and comparisons cost 0; reductions over
n elements cost n adds).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit, prange, set_num_threads as _numba_set_threads

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

__all__ = [
    "FlopCounter",
    "Rng",
    "matmul",
    "softmax_rows",
    "softmax_cols",
    "softmax_backward",
    "sigmoid",
    "relu",
    "layernorm",
    "layernorm_backward",
    "ew_add",
    "ew_sub",
    "ew_mul",
    "scale",
    "reduce_sum",
    "charge",
    "set_threads",
    "get_threads",
    "assert_finite",
]


# ---------------------------------------------------------------------------
# FLOP instrumentation


class FlopCounter:
    """Context manager that tallies charged floating point operations.

    Counters nest; an outer counter sees everything charged while an
    inner one is active.
    """

    def __init__(self):
        self.total = 0

    def __enter__(self):
        _COUNTERS.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _COUNTERS.remove(self)
        return False


_COUNTERS: list[FlopCounter] = []


def charge(n: int):
    """Add n FLOPs to every active counter."""
    if _COUNTERS:
        for c in _COUNTERS:
            c.total += int(n)


# ---------------------------------------------------------------------------
# Randomness


class Rng:
    """Seeded PCG64 generator; every random draw in the package goes
    through one of these so runs replay exactly from the recorded seed."""

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed)
        self._key = tuple(_key)
        ss = np.random.SeedSequence([self.seed, *self._key])
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, k: int) -> "Rng":
        """Independent stream derived from (seed, ..., k); deterministic."""
        return Rng(self.seed, self._key + (int(k),))

    def uniform(self, lo: float, hi: float, shape=()) -> np.ndarray:
        return self._gen.uniform(lo, hi, size=shape)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def integers(self, lo: int, hi: int, shape=()) -> np.ndarray:
        return self._gen.integers(lo, hi, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


# ---------------------------------------------------------------------------
# Matrix multiply with pinned accumulation order

_THREADS = 1


def set_threads(n: int):
    """Select the worker count for matmul. Any n keeps results bitwise
    identical: threads split rows, never the k accumulation. Requests
    above the host's capacity are clamped."""
    global _THREADS
    if n < 1:
        raise ValueError("thread count must be >= 1")
    n = int(n)
    if _HAVE_NUMBA:
        from numba import config as _numba_config

        n = min(n, _numba_config.NUMBA_NUM_THREADS)
        if n > 1:
            _numba_set_threads(n)
    _THREADS = n


def get_threads() -> int:
    return _THREADS


if _HAVE_NUMBA:

    @njit(cache=True)
    def _mm_serial(a, b):
        m, kk = a.shape
        p = b.shape[1]
        c = np.zeros((m, p))
        for i in range(m):
            for k in range(kk):
                aik = a[i, k]
                for j in range(p):
                    c[i, j] += aik * b[k, j]
        return c

    @njit(cache=True, parallel=True)
    def _mm_parallel(a, b):
        m, kk = a.shape
        p = b.shape[1]
        c = np.zeros((m, p))
        for i in prange(m):
            for k in range(kk):
                aik = a[i, k]
                for j in range(p):
                    c[i, j] += aik * b[k, j]
        return c

else:

    def _mm_serial(a, b):
        # k-major accumulation keeps the same per-element order as the
        # triple loop; ~20x slower than the numba path but still exact.
        m, kk = a.shape
        p = b.shape[1]
        c = np.zeros((m, p))
        for k in range(kk):
            c += a[:, k : k + 1] * b[k : k + 1, :]
        return c

    _mm_parallel = _mm_serial


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(m, k) @ (k, p) with sequential-k accumulation per element.

    Charges 2*m*k*p FLOPs (one multiply and one add per term; the adds
    into the zero accumulator are counted).
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects rank-2 arrays")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dims differ: {a.shape} @ {b.shape}")
    if a.dtype != np.float64 or b.dtype != np.float64:
        raise TypeError("matmul is float64 only")
    a = np.ascontiguousarray(a)
    b = np.ascontiguousarray(b)
    charge(2 * a.shape[0] * a.shape[1] * b.shape[1])
    if _THREADS > 1 and a.shape[0] >= 64:
        return _mm_parallel(a, b)
    return _mm_serial(a, b)


# ---------------------------------------------------------------------------
# Pointwise / row-wise primitives


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction. Charges 3 FLOPs per
    element (subtract, accumulate, divide); max and exp are free."""
    if x.ndim != 2:
        raise ValueError("softmax_rows expects rank-2")
    m = np.max(x, axis=1, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=1, keepdims=True)
    charge(3 * x.size)
    return e / s


def softmax_cols(x: np.ndarray) -> np.ndarray:
    """Column-wise softmax; same convention as softmax_rows."""
    if x.ndim != 2:
        raise ValueError("softmax_cols expects rank-2")
    m = np.max(x, axis=0, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=0, keepdims=True)
    charge(3 * x.size)
    return e / s


def softmax_backward(s: np.ndarray, ds: np.ndarray, axis: int = 1) -> np.ndarray:
    """Given s = softmax(x) along axis and upstream ds, return dx."""
    dot = np.sum(ds * s, axis=axis, keepdims=True)
    return s * (ds - dot)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise logistic. Charges 2 FLOPs per element (the add in
    1 + e^-x and the divide); exp and negation are free."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    charge(2 * x.size)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0); comparisons are free so this charges 0."""
    return np.maximum(x, 0.0)


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Row-wise layer norm over the last axis of a rank-2 input.

    Returns (out, cache) where cache feeds layernorm_backward. Charges
    7 FLOPs per element plus 4 per row: mean (n adds + 1 divide),
    centering (n subtracts), variance (n multiplies + n adds + 1
    divide), the eps add, the reciprocal divide, normalization (n
    multiplies) and the affine scale/shift (2n). sqrt is free.
    """
    if x.ndim != 2:
        raise ValueError("layernorm expects rank-2")
    n = x.shape[1]
    mu = np.mean(x, axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma + beta
    charge(7 * x.size + 4 * x.shape[0])
    return out, (xhat, inv, gamma)


def layernorm_backward(cache, dout: np.ndarray):
    """Returns (dx, dgamma, dbeta) for the matching layernorm call."""
    xhat, inv, gamma = cache
    n = xhat.shape[1]
    dgamma = np.sum(dout * xhat, axis=0)
    dbeta = np.sum(dout, axis=0)
    dxhat = dout * gamma
    # dx = inv * (dxhat - mean(dxhat) - xhat * mean(dxhat * xhat))
    m1 = np.mean(dxhat, axis=1, keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# Charged elementwise helpers (used on the forward paths the cost model
# covers so instrumented counts line up with the closed forms)


def ew_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    charge(max(a.size, b.size))
    return a + b


def ew_sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    charge(max(a.size, b.size))
    return a - b


def ew_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    charge(max(a.size, b.size))
    return a * b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    charge(a.size)
    return a * s


def reduce_sum(a: np.ndarray, axis=None):
    """Sum reduction; charges one add per input element."""
    charge(a.size)
    return np.sum(a, axis=axis)


def assert_finite(x: np.ndarray, label: str = "array"):
    if not np.all(np.isfinite(x)):
        bad = int(np.sum(~np.isfinite(x)))
        raise FloatingPointError(f"{label}: {bad} non-finite values")

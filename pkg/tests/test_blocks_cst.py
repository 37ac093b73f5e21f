"""Context-sharing block: one pooled map serves every query."""

import numpy as np
import pytest

from fusionbench.blocks import BlockConfig, init_cst_params
from fusionbench.blocks.cst import (
    block_signature,
    cst_block_backward,
    cst_block_forward,
    cst_global_context,
    cst_global_context_backward,
)
from fusionbench.numerics import Rng
from fusionbench.verify import oracle_context_explicit


def _setup(seed=0, n=9, c=8, r_c=4):
    rng = Rng(seed)
    cfg = BlockConfig(channels=c, ctx_reduction=r_c)
    params = init_cst_params(rng.child(0), cfg)
    x = rng.child(1).normal((n, c))
    return params, x


def test_matches_explicit_attention_matrix_bitwise():
    params, x = _setup()
    got, _ = cst_global_context(x, params)
    want, deltas = oracle_context_explicit(x, params)
    assert np.array_equal(got, want)
    assert np.all(deltas == deltas[0:1])  # query-independent by construction


def test_zero_head_pools_uniformly():
    params, x = _setup(n=6)
    params["ctx.head"] = np.zeros(8)
    _, cache = cst_global_context(x, params)
    g = cache[1]
    np.testing.assert_allclose(g[:, 0], 1.0 / 6.0, atol=1e-15)
    np.testing.assert_allclose(cache[2], x.mean(axis=0, keepdims=True), atol=1e-12)


def test_single_token_context():
    params, x = _setup(n=1)
    out, cache = cst_global_context(x, params)
    assert np.all(cache[1] == 1.0)  # softmax over one position
    want, _ = oracle_context_explicit(x, params)
    assert np.array_equal(out, want)


def test_same_correction_added_to_every_token():
    params, x = _setup(n=12)
    out, _ = cst_global_context(x, params)
    delta = out - x
    # float subtraction reintroduces per-row rounding, hence the tolerance
    np.testing.assert_allclose(delta, np.tile(delta[0], (12, 1)), atol=1e-12)


def test_context_op_backward_shapes():
    params, x = _setup(n=5)
    out, cache = cst_global_context(x, params)
    dx, grads = cst_global_context_backward(cache, np.ones_like(out), params)
    assert dx.shape == x.shape
    assert set(grads) == {"ctx.head", "ctx.t1", "ctx.t2", "ctx.ln.gamma", "ctx.ln.beta"}


def test_block_backward_covers_all_params():
    params, x = _setup()
    out, cache = cst_block_forward(x, params)
    dx, grads = cst_block_backward(cache, np.ones_like(out), params)
    assert set(grads) == set(params)
    assert isinstance(block_signature(cache), bytes)


def test_ctx_reduction_must_divide_channels():
    cfg = BlockConfig(channels=6, ctx_reduction=4)
    with pytest.raises(ValueError):
        init_cst_params(Rng(0), cfg)


def test_block_cost_independent_of_content_scale():
    # context path has no N x N interaction: doubling N doubles runtime
    # work only linearly; here we just pin the output shape contract
    params, x = _setup(n=17)
    out, _ = cst_block_forward(x, params)
    assert out.shape == x.shape

"""Gather-merge-scatter block: routing, merging, branch attention."""

from fractions import Fraction

import numpy as np
import pytest

from fusionbench.blocks import (
    BlockConfig,
    GatherPlan,
    build_plan,
    gather,
    init_sgst_params,
    init_vanilla_params,
    scatter,
)
from fusionbench.blocks.sgst import (
    heatmap_head,
    merge_matrix,
    sgst_attention_stage,
    sgst_attention_stage_backward,
    sgst_block_backward,
    sgst_block_forward,
    soft_merge,
)
from fusionbench.blocks.vanilla import vanilla_block_forward
from fusionbench.numerics import Rng


def _setup(seed=0, n=10, c=8, heads=2, ratio=Fraction(1, 3), **kw):
    rng = Rng(seed)
    cfg = BlockConfig(channels=c, heads=heads, merge_ratio=ratio, **kw)
    params = init_sgst_params(rng.child(0), cfg, n)
    x = rng.child(1).normal((n, c))
    return cfg, params, x


# --- routing ----------------------------------------------------------------


def test_plan_partitions_and_ties_go_foreground():
    hm = np.array([0.2, 0.5, 0.8, 0.4999, 0.5001])
    plan = build_plan(hm)
    plan.validate()
    assert list(plan.fg) == [1, 2, 4]
    assert list(plan.bg) == [0, 3]


def test_scatter_inverts_gather():
    rng = Rng(3)
    for t in range(20):
        n = int(rng.child(2 * t).integers(1, 40))
        x = rng.child(2 * t + 1).normal((n, 5))
        hm = rng.child(1000 + t).uniform(0.0, 1.0, (n,))
        plan = build_plan(hm)
        back = scatter(x, plan, gather(x, plan.fg), gather(x, plan.bg))
        assert np.array_equal(back, x)


def test_plan_validation_rejects_overlap_and_gaps():
    with pytest.raises(ValueError):
        GatherPlan(fg=np.array([0, 1]), bg=np.array([1, 2]), n=3).validate()
    with pytest.raises(ValueError):
        GatherPlan(fg=np.array([0]), bg=np.array([2]), n=3).validate()


def test_merged_token_count_edges():
    cfg = BlockConfig(channels=4, merge_ratio=Fraction(1, 36))
    assert cfg.merged_tokens(36) == 1
    assert cfg.merged_tokens(37) == 2
    assert cfg.merged_tokens(1) == 1
    assert BlockConfig(channels=4, merge_ratio=Fraction(1, 1)).merged_tokens(9) == 9
    with pytest.raises(ValueError):
        BlockConfig(channels=4, merge_ratio=Fraction(0, 1))


# --- merging ----------------------------------------------------------------


def test_softmax_merge_columns_are_convex():
    cfg, params, x = _setup()
    m = merge_matrix(params, "softmax")
    assert np.all(m > 0.0)
    np.testing.assert_allclose(m.sum(axis=0), 1.0, atol=1e-12)
    raw = merge_matrix(params, "raw")
    assert np.array_equal(raw, params["merge.w"])


def test_soft_merge_weights_tokens():
    cfg, params, x = _setup(n=6)
    w = np.zeros(6)
    w[2] = 1.0
    m = np.ones((6, 2))
    merged = soft_merge(x, w, m)
    np.testing.assert_allclose(merged, np.tile(x[2], (2, 1)), atol=1e-15)


def test_single_merged_token_gets_full_attention():
    cfg, params, x = _setup(n=9, ratio=Fraction(1, 9))
    assert cfg.merged_tokens(9) == 1
    _, cache = sgst_attention_stage(x, params, cfg)
    for name in ("fg", "bg"):
        bc = cache[6][name]
        if bc is None:
            continue
        for a in bc[3][5]:  # attention maps over the single merged key
            assert np.all(a == 1.0)


# --- stage behaviour --------------------------------------------------------


def test_stage_preserves_shape_and_routes_all_tokens():
    cfg, params, x = _setup()
    h, cache = sgst_attention_stage(x, params, cfg)
    assert h.shape == x.shape
    plan = cache[4]
    assert len(plan.fg) + len(plan.bg) == x.shape[0]


def test_heatmap_override_controls_routing_and_grads():
    cfg, params, x = _setup(n=8)
    hm = np.array([0.9, 0.9, 0.1, 0.1, 0.1, 0.9, 0.1, 0.1])
    h, cache = sgst_attention_stage(x, params, cfg, heatmap_override=hm)
    assert list(cache[4].fg) == [0, 1, 5]
    dx, grads = sgst_attention_stage_backward(cache, np.ones_like(h), params, cfg)
    assert np.all(grads["gate.head"] == 0.0)  # override cuts the gate path
    h2, cache2 = sgst_attention_stage(x, params, cfg)
    _, grads2 = sgst_attention_stage_backward(cache2, np.ones_like(h2), params, cfg)
    assert np.any(grads2["gate.head"] != 0.0)


def test_all_foreground_single_branch():
    cfg, params, x = _setup(n=6)
    h, cache = sgst_attention_stage(x, params, cfg, heatmap_override=np.ones(6))
    assert len(cache[4].bg) == 0
    assert cache[6]["bg"] is None
    assert h.shape == x.shape
    dx, grads = sgst_attention_stage_backward(cache, np.ones_like(h), params, cfg)
    assert dx.shape == x.shape


def test_heatmap_values_come_from_sigmoid():
    cfg, params, x = _setup()
    hm = heatmap_head(x, params)
    assert hm.shape == (x.shape[0],)
    assert np.all((hm > 0.0) & (hm < 1.0))


def test_wrong_override_shape_rejected():
    cfg, params, x = _setup(n=5)
    with pytest.raises(ValueError):
        sgst_attention_stage(x, params, cfg, heatmap_override=np.ones((5, 1)))


# --- block behaviour --------------------------------------------------------


def test_reduces_to_vanilla_block_bitwise():
    rng = Rng(11)
    c, heads, n = 8, 2, 7
    params = init_vanilla_params(rng.child(0), BlockConfig(channels=c, heads=heads))
    x = rng.child(1).normal((n, c))
    want, _ = vanilla_block_forward(x, params, heads)
    cfg = BlockConfig(channels=c, heads=heads, merge_ratio=Fraction(1, 1), merge_mode="raw")
    ps = dict(params)
    ps["gate.head"] = np.zeros(c)
    ps["merge.w"] = np.eye(n)
    got, _ = sgst_block_forward(x, ps, cfg, heatmap_override=np.ones(n))
    assert np.array_equal(got, want)


def test_fg_only_leaves_background_bitwise_untouched():
    cfg, params, x = _setup(n=10, fg_only=True)
    hm = np.array([0.9, 0.1] * 5)
    out, cache = sgst_block_forward(x, params, cfg, heatmap_override=hm)
    bg = cache[0][4].bg
    assert len(bg) == 5
    assert np.array_equal(out[bg], x[bg])
    fg = cache[0][4].fg
    assert not np.array_equal(out[fg], x[fg])


def test_block_backward_covers_all_params():
    cfg, params, x = _setup()
    out, cache = sgst_block_forward(x, params, cfg)
    dx, grads = sgst_block_backward(cache, np.ones_like(out), params, cfg)
    assert set(grads) == set(params)
    assert dx.shape == x.shape
    for k, g in grads.items():
        assert g.shape == params[k].shape, k
        assert np.all(np.isfinite(g))

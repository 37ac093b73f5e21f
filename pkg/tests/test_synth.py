"""Synthetic clip generator and the fixed feature extraction."""

import math

import numpy as np
import pytest

from fusionbench.numerics import Rng
from fusionbench.synth import (
    STRIDES,
    _pool_mean,
    analytic_mask_area,
    clip_feature_stacks,
    feature_projections,
    stage_dims,
    synth_clip,
)


def test_same_seed_same_clip():
    a = synth_clip(Rng(4).child(0), 32, 3)
    b = synth_clip(Rng(4).child(0), 32, 3)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.masks, b.masks)
    c = synth_clip(Rng(5).child(0), 32, 3)
    assert not np.array_equal(a.images, c.images)


def test_clip_ranges_and_shapes():
    clip = synth_clip(Rng(0).child(0), 64, 4, "disk", 0.25)
    assert clip.images.shape == (4, 64, 64)
    assert clip.masks.shape == (4, 16, 16)
    assert clip.masks.dtype == bool
    assert np.all(clip.images >= 0.0) and np.all(clip.images <= 1.0)
    assert np.all((clip.centers > 0.0) & (clip.centers < 1.0))


@pytest.mark.parametrize("shape", ["disk", "square"])
def test_mask_area_tracks_analytic_value(shape):
    for seed in range(5):
        clip = synth_clip(Rng(seed).child(0), 64, 3, shape, 0.3)
        want = analytic_mask_area(clip)
        hm = clip.masks.shape[1]
        # digitization error is O(perimeter) cells
        perimeter = 2 * math.pi * 0.3 * hm if shape == "disk" else 8 * 0.3 * hm
        for t in range(3):
            got = clip.masks[t].sum()
            assert abs(got - want) <= perimeter + 4, (seed, t, got, want)


def test_object_pixels_brighter_than_average():
    clip = synth_clip(Rng(1).child(0), 64, 1, "disk", 0.3)
    img = clip.images[0]
    full = np.kron(clip.masks[0], np.ones((4, 4), bool))
    assert img[full].mean() > img[~full].mean() + 0.2


def test_input_validation():
    with pytest.raises(ValueError):
        synth_clip(Rng(0), 30, 1)  # not a multiple of 4
    with pytest.raises(ValueError):
        synth_clip(Rng(0), 32, 0)
    with pytest.raises(ValueError):
        synth_clip(Rng(0), 32, 1, radius=0.5)  # cannot fit with margin
    with pytest.raises(ValueError):
        synth_clip(Rng(0), 32, 1, shape="hexagon")


def test_pool_mean_matches_reshape_mean():
    rng = Rng(2)
    img = rng.normal((8, 8))
    got = _pool_mean(img, 4, 4)
    want = img.reshape(4, 2, 4, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(got, want, atol=1e-15)
    # non-divisible sizes still cover every pixel exactly once
    got5 = _pool_mean(img, 5, 5)
    assert got5.shape == (5, 5)
    assert abs(img.sum() - sum(
        _pool_mean(img, 5, 5)[r, c] * ((np.arange(8) * 5 // 8 == r).sum()
                                       * (np.arange(8) * 5 // 8 == c).sum())
        for r in range(5) for c in range(5)
    )) < 1e-10


def test_stage_dims_ceil():
    assert stage_dims(64) == [(16, 16), (8, 8), (4, 4), (2, 2)]
    assert stage_dims(20) == [(5, 5), (3, 3), (2, 2), (1, 1)]
    assert STRIDES == (4, 8, 16, 32)


def test_feature_stack_shapes():
    clip = synth_clip(Rng(3).child(0), 32, 2)
    channels = (5, 6, 7, 8)
    app, mot = clip_feature_stacks(clip, channels)
    assert len(app) == len(mot) == 2
    for t in range(2):
        for l, (h, w) in enumerate(stage_dims(32)):
            assert app[t][l].shape == (h * w, channels[l])
            assert mot[t][l].shape == (h * w, channels[l])


def test_motion_features_zero_when_static():
    clip = synth_clip(Rng(6).child(0), 32, 3, static=True)
    assert np.array_equal(clip.masks[0], clip.masks[2])
    app, mot = clip_feature_stacks(clip, (4, 4, 4, 4))
    for t in range(3):
        for l in range(4):
            assert np.all(mot[t][l] == 0.0), (t, l)


def test_first_frame_motion_always_zero():
    clip = synth_clip(Rng(7).child(0), 32, 3)
    app, mot = clip_feature_stacks(clip, (4, 4, 4, 4))
    for l in range(4):
        assert np.all(mot[0][l] == 0.0)
    assert any(np.any(mot[1][l] != 0.0) for l in range(4))


def test_projections_fixed_by_seed():
    a = feature_projections(417, (4, 4, 4, 4))
    b = feature_projections(417, (4, 4, 4, 4))
    c = feature_projections(418, (4, 4, 4, 4))
    for (pa, pm), (qa, qm) in zip(a, b):
        assert np.array_equal(pa, qa) and np.array_equal(pm, qm)
    assert not np.array_equal(a[0][0], c[0][0])


def test_token_layout_is_row_major():
    # put the object far from the frame centre and confirm the pooled
    # intensity channel peaks at the matching row-major token
    clip = synth_clip(Rng(8).child(0), 32, 1, "square", 0.12)
    app, _ = clip_feature_stacks(clip, (1, 1, 1, 1), feature_seed=0)
    proj = feature_projections(0, (1, 1, 1, 1))[0][0]
    h, w = stage_dims(32)[0]
    from fusionbench.synth import _base_channels_appearance

    base = _base_channels_appearance(clip.images[0], h, w)
    want = (base.reshape(4, h * w).T @ proj)
    assert np.array_equal(app[0][0], want)

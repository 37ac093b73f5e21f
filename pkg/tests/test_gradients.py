"""Finite-difference validation of every hand-written backward pass.

The full 20-seed sweeps run in the acceptance module; here each block
gets a handful of seeds plus negative controls proving the harness can
actually fail.
"""

import numpy as np
import pytest

from fusionbench.numerics import Rng
from fusionbench.pipeline import check_pipeline_gradients
from fusionbench.verify import check_block_gradients, check_mix_gradients, grad_check


@pytest.mark.parametrize("kind", ["vanilla", "cst", "sgst"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_block_gradients(kind, seed):
    rep = check_block_gradients(kind, seed)
    assert rep.passed, rep.line()
    assert rep.checked > 0


def test_mix_gradients():
    rep = check_mix_gradients(0)
    assert rep.passed, rep.line()


@pytest.mark.parametrize("seed", [0, 5])
def test_pipeline_gradients(seed):
    rep = check_pipeline_gradients(seed)
    assert rep.passed, rep.line()
    assert rep.checked > 100  # inputs + every parameter family probed


def test_harness_catches_wrong_gradient():
    x = Rng(0).normal((3, 3))
    wrong = 2.0 * x + 0.5  # true gradient of sum(x^2) is 2x

    def loss():
        return float(np.sum(x * x)), None

    rep = grad_check(loss, {"x": x}, {"x": wrong}, Rng(1), "negative_control")
    assert not rep.passed
    assert "x[" in rep.details


def test_harness_catches_sign_flip():
    x = Rng(2).normal((4,)) + 3.0  # keep |x| big so errors clear the floor

    def loss():
        return float(np.sum(x * x * x)), None

    rep = grad_check(loss, {"x": x}, {"x": -3.0 * x * x}, Rng(3), "sign_control")
    assert not rep.passed


def test_harness_requires_analytic_entry_per_array():
    x = Rng(4).normal((2, 2))

    def loss():
        return float(np.sum(x)), None

    with pytest.raises(KeyError):
        grad_check(loss, {"x": x}, {}, Rng(5), "missing")


def test_fragile_coordinates_are_excluded_not_failed():
    # loss |x| has a kink at 0; the signature flips there, so the probe
    # at the kink must be counted fragile instead of failing
    x = np.array([1e-7])  # within h of the kink

    def loss():
        return float(np.abs(x[0])), bool(x[0] > 0)

    rep = grad_check(loss, {"x": x}, {"x": np.array([1.0])}, Rng(6), "kink")
    assert rep.fragile == 1
    assert not rep.passed  # nothing left to check -> not a pass

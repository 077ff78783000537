import math

import numpy as np
import pytest

from conftest import rand, stripe_masks
from regiondit.dit import StackConfig, build_stack
from regiondit.errors import DimensionError
from regiondit.metrics import (
    SSIM_C1, SSIM_C2, MetricsReport, format_metric, perturb_state, psnr,
    register_metric, regional_influence_score, ssim,
)


def closed_form_const_ssim(a, b):
    # constant images: no variance, SSIM reduces to the luminance term
    return (2 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1)


def test_psnr_identical_is_inf(rng):
    a = rng.random((8, 8))
    assert psnr(a, a) == math.inf
    assert format_metric(psnr(a, a)) == "inf"


def test_psnr_zero_vs_one():
    assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == 0.0


def test_psnr_known_mse():
    a = np.zeros((10, 10))
    b = np.full((10, 10), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)


def test_ssim_self_is_one(rng):
    a = rng.random((16, 16))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    c = rng.random((12, 12, 3))
    assert ssim(c, c) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("x,y", [(0.2, 0.7), (0.0, 1.0), (0.5, 0.5), (0.9, 0.1)])
def test_ssim_constant_closed_form(x, y):
    got = ssim(np.full((9, 11), x), np.full((9, 11), y))
    assert abs(got - closed_form_const_ssim(x, y)) < 1e-9


def test_ssim_symmetric_and_bounded(rng):
    a = rng.random((20, 20))
    b = rng.random((20, 20))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1 <= ssim(a, b) < 1


def test_ssim_direct_window(rng):
    a = rng.random((8, 8))
    b = rng.random((8, 8))
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(), b.var()
    cov = ((a - ma) * (b - mb)).mean()
    ref = ((2 * ma * mb + SSIM_C1) * (2 * cov + SSIM_C2)) / ((ma ** 2 + mb ** 2 + SSIM_C1) * (va + vb + SSIM_C2))
    assert ssim(a, b) == pytest.approx(ref, abs=1e-12)


def test_input_checks():
    with pytest.raises(DimensionError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        psnr(np.full((2, 2), 2.0), np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        ssim(np.zeros((4, 4)), np.zeros((4, 4)))


def test_report_and_registry(rng):
    a = rng.random((8, 8))
    rep = MetricsReport().compute(a, a)
    assert rep.to_dict() == {"psnr": "inf", "ssim": pytest.approx(1.0)}
    with pytest.raises(ValueError):
        register_metric("psnr", psnr)


def test_perturb_same_norm():
    s = rand((10, 4), 0)
    p = perturb_state(s, 1)
    assert np.linalg.norm(p) == pytest.approx(np.linalg.norm(s), rel=1e-5)
    assert not np.allclose(p, s)


def test_influence_zero_without_injection():
    stack = build_stack(StackConfig(num_blocks=3, d_model=8, heads=2, head_dim=4))
    masks = stripe_masks(2, 4, 2)
    states = [rand((5, 8), i) for i in range(3)]
    sc = regional_influence_score(stack, rand((8, 8), 9), 0.5, masks, states, 0, 7, merged=rand((5, 8), 8))
    assert sc.inside == 0.0 and sc.outside == 0.0 and sc.ratio == 0.0


def test_influence_local_with_last_block():
    stack = build_stack(StackConfig(num_blocks=3, injected={2}, d_model=8, heads=2, head_dim=4))
    masks = stripe_masks(2, 4, 2)
    states = [rand((5, 8), i) for i in range(3)]
    sc = regional_influence_score(stack, rand((8, 8), 9), 0.5, masks, states, 1, 7, merged=rand((5, 8), 8))
    assert sc.inside > 0 and sc.outside == 0.0


def test_influence_bad_region():
    stack = build_stack(StackConfig(num_blocks=1, d_model=8, heads=2, head_dim=4))
    with pytest.raises(IndexError):
        regional_influence_score(stack, rand((8, 8), 0), 0.5, stripe_masks(2, 4, 2),
                                 [rand((5, 8), i) for i in range(3)], 2, 0)

import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regiondit.errors import DimensionError
from regiondit.sampler import (
    CfgConfig, SchedulerConfig, cfg_combine, euler_step, sample, sampling_sigmas,
    sgm_uniform_sigmas, write_trajectory,
)
from regiondit.tensor import read_tensor

DATA = Path(__file__).parent / "data"
sys.path.insert(0, str(DATA))
import make_golden  # noqa: E402


class Stub:
    """Model predicting eps = fn(x, sigma) on both branches."""

    d_model = 4

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def forward(self, x, sigma, states, masks, merged=None):
        self.calls += 1
        return self.fn(x, sigma)

    def forward_negative(self, x, sigma, negative):
        return self.fn(x, sigma)


MASKS = [np.ones(6)]
STATES = [None, None]


def test_sigmas_one_step():
    assert sgm_uniform_sigmas(SchedulerConfig(1, 1.0, 0.01)) == [1.0, 0.01, 0.0]


def test_sigmas_four_steps_uniform():
    s = sgm_uniform_sigmas(SchedulerConfig(4, 1.0, 0.01))
    assert len(s) == 6 and s[-1] == 0.0
    gaps = np.diff(s[:5])
    np.testing.assert_allclose(gaps, -(1.0 - 0.01) / 4, rtol=1e-12)


@settings(max_examples=100)
@given(st.integers(1, 200), st.floats(1e-3, 10.0), st.floats(0.01, 0.99))
def test_sigmas_strictly_decreasing(steps, smax, frac):
    cfg = SchedulerConfig(steps, smax, smax * frac)
    s = sgm_uniform_sigmas(cfg)
    assert all(a > b for a, b in zip(s, s[1:]))
    assert s[-1] == 0.0


def test_bad_scheduler():
    with pytest.raises(ValueError):
        SchedulerConfig(0)
    with pytest.raises(ValueError):
        SchedulerConfig(4, 0.01, 0.1)


@pytest.mark.parametrize("steps,denoise,expect", [(8, 1.0, 8), (8, 0.5, 4), (20, 1.0, 20), (5, 0.5, 3), (7, 0.01, 1)])
def test_sampling_step_counts(steps, denoise, expect):
    s = sampling_sigmas(SchedulerConfig(steps), denoise)
    assert len(s) - 1 == expect and s[-1] == 0.0
    assert all(a > b for a, b in zip(s, s[1:]))


def test_truncation_keeps_tail():
    full = sampling_sigmas(SchedulerConfig(8))
    assert sampling_sigmas(SchedulerConfig(8), 0.5) == full[4:]


def test_cfg_identities(rng):
    u = rng.standard_normal((3, 4)).astype(np.float32)
    c = rng.standard_normal((3, 4)).astype(np.float32)
    assert cfg_combine(u, c, 1).tobytes() == c.tobytes()
    for s in (0.0, 1.0, 6.0, 12.5):
        assert cfg_combine(u, u, s).tobytes() == u.tobytes()
    np.testing.assert_array_equal(cfg_combine(np.zeros(3), np.ones(3), 6), [6.0, 6.0, 6.0])


def test_cfg_shape_mismatch():
    with pytest.raises(DimensionError):
        cfg_combine(np.zeros(3), np.zeros(4), 6)


def test_euler_direct_formula(rng):
    x = rng.standard_normal(5).astype(np.float32)
    d = rng.standard_normal(5).astype(np.float32)
    s, s1 = np.float32(0.8), np.float32(0.55)
    expect = x + (s1 - s) * ((x - d) / s)
    assert euler_step(x, s, s1, d).tobytes() == expect.astype(np.float32).tobytes()


def test_euler_fixed_point_and_last_step(rng):
    x = rng.standard_normal(5).astype(np.float32)
    d = rng.standard_normal(5).astype(np.float32)
    np.testing.assert_array_equal(euler_step(x, 0.7, 0.3, x), x)
    np.testing.assert_array_equal(euler_step(x, 0.7, 0.0, d), d)
    with pytest.raises(ValueError):
        euler_step(x, 0.0, 0.0, d)


def test_zero_eps_constant_trajectory():
    stub = Stub(lambda x, s: np.zeros_like(x))
    res = sample(stub, STATES, MASKS, SchedulerConfig(6), CfgConfig(), seed=3)
    assert res.steps == 6 and stub.calls == 6
    for x in res.trajectory:
        assert x.tobytes() == res.trajectory[0].tobytes()


def test_denoised_zero_reaches_zero():
    stub = Stub(lambda x, s: x / np.float32(s))
    res = sample(stub, STATES, MASKS, SchedulerConfig(5), CfgConfig(), seed=4)
    assert np.abs(res.latent).max() < 1e-6
    # intermediate latents shrink in proportion to sigma
    for x, s in zip(res.trajectory, res.sigmas):
        np.testing.assert_allclose(x, res.trajectory[0] * s, atol=1e-6)


def test_initial_noise_scale():
    stub = Stub(lambda x, s: np.zeros_like(x))
    res = sample(stub, STATES, MASKS, SchedulerConfig(4, sigma_max=2.0), CfgConfig(), seed=9, shape=(400, 4))
    assert abs(res.trajectory[0].std() - 2.0) < 0.1


def test_seeded_reproducible():
    stub = Stub(lambda x, s: 0.1 * x)
    a = sample(stub, STATES, MASKS, SchedulerConfig(4), CfgConfig(), seed=1)
    b = sample(stub, STATES, MASKS, SchedulerConfig(4), CfgConfig(), seed=1)
    assert a.latent.tobytes() == b.latent.tobytes()


def test_write_trajectory(tmp_path):
    stub = Stub(lambda x, s: 0.1 * x)
    res = sample(stub, STATES, MASKS, SchedulerConfig(3), CfgConfig(), seed=1)
    write_trajectory(res, tmp_path)
    man = json.loads((tmp_path / "trajectory.json").read_text())
    assert [e["step"] for e in man] == [0, 1, 2, 3]
    assert man[-1]["sigma"] == 0.0
    last, _ = read_tensor(tmp_path / man[-1]["file"])
    np.testing.assert_array_equal(last, res.latent)


@pytest.mark.slow
def test_golden_trajectory():
    expect = json.loads((DATA / "golden_trajectory.json").read_text())
    got = make_golden.trajectory_golden()
    assert len(got) == len(expect) == make_golden.TRAJ_STEPS + 1
    for g, e in zip(got, expect):
        assert g["sigma"] == e["sigma"]
        assert abs(g["mean"] - e["mean"]) < 1e-5
        assert abs(g["std"] - e["std"]) < 1e-5
        assert max(abs(a - b) for a, b in zip(g["first"], e["first"])) < 1e-5
    assert math.isfinite(got[-1]["std"])

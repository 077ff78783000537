import numpy as np
import pytest

from regiondit.attention import CrossAttnWeights
from regiondit.masks import LatentGrid, RegionSpec, divide_regions
from regiondit.tensor import derive_seed, seeded_normal


def rand(shape, seed, scale=1.0):
    return seeded_normal(shape, seed, scale)


def small_weights(d_model=4, heads=2, head_dim=2, seed=0, scale=0.5, bias=True):
    """CrossAttnWeights with non-trivial biases, small enough for the oracles."""
    w = CrossAttnWeights.seeded(d_model, heads, head_dim, seed, scale)
    if not bias:
        return w
    inner = heads * head_dim
    b = {k: rand((n,), derive_seed(seed, "bias", k), 0.1)
         for k, n in (("bq", inner), ("bk", inner), ("bv", inner), ("bo", d_model))}
    return CrossAttnWeights(heads, head_dim, w.wq, b["bq"], w.wk, b["bk"], w.wv, b["bv"], w.wo, b["bo"])


def stripe_masks(n, h, w, axis="height"):
    return divide_regions(RegionSpec(axis, n), LatentGrid(h, w))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting -----------------------------------------------------

_CRITERIA = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and label")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        n, title = mark.args
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _CRITERIA.append((n, status, title, rep.duration))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, title, secs in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {title}  ({secs:.1f} s)")

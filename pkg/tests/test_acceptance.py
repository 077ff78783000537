"""The twelve acceptance criteria, one test each, at their stated tolerances.

A PASS/FAIL line per criterion is printed in the terminal summary.
"""

import csv
import json
import math
import time

import httpx
import numpy as np
import pytest

from conftest import rand, small_weights, stripe_masks
from regiondit import oracles
from regiondit.attention import AttentionMode, cross_attention, region_attention
from regiondit.cli import main
from regiondit.config import config_from_dict
from regiondit.dit import StackConfig, build_stack
from regiondit.errors import RegionTooSmallError, SchemaError, TransportError
from regiondit.masks import LatentGrid, RegionSpec, divide_regions
from regiondit.metrics import SSIM_C1, psnr, ssim
from regiondit.pipeline import run_ablation
from regiondit.prompts import LlmClientConfig, generate_prompts
from regiondit.sampler import CfgConfig, SchedulerConfig, cfg_combine, sample, sampling_sigmas, sgm_uniform_sigmas
from regiondit.tensor import seeded_normal
from regiondit.text_states import STATE_LEN, ProjectionMlp, PromptSet, batch_prompt_states, encode_prompt

MODES = (AttentionMode.REGION_LITERAL, AttentionMode.REGION_OUTPUT_MASKED)


def _instance(seed, n):
    """Random small region-attention problem: L <= 8, d = 4, two heads, at most ``h`` regions."""
    w = small_weights(seed=seed)
    h = [2, 4, 3, 8][seed % 4]
    width = 8 // h
    n = min(n, h)
    masks = stripe_masks(n, h, width)
    x = rand((h * width, 4), seed + 1000)
    states = [rand((2 + (seed + i) % 5, 4), seed * 31 + i) for i in range(n)]
    return w, masks, x, states


def _oracle_region(w, masks, x, states, mode):
    q = oracles.oracle_linear(x, w.wq, w.bq)
    ks = [oracles.oracle_linear(s, w.wk, w.bk) for s in states]
    vs = [oracles.oracle_linear(s, w.wv, w.bv) for s in states]
    fn = oracles.oracle_region_literal if mode is AttentionMode.REGION_LITERAL else oracles.oracle_region_masked
    return np.array(oracles.oracle_linear(fn(q, ks, vs, [m.values for m in masks], w.heads), w.wo, w.bo))


@pytest.mark.criterion(1, "oracle equivalence, cross and region attention (both modes)")
def test_c01_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        w, masks, x, states = _instance(seed, 1)
        ref = oracles.oracle_cross_attention(x, states[0], w.tensors(), w.heads)
        worst = max(worst, float(np.abs(cross_attention(x, states[0], w) - np.array(ref)).max()))
    for mode in MODES:
        for seed in range(20):
            w, masks, x, states = _instance(seed, 1 + seed % 3)
            got = region_attention(x, masks, states, w, mode)
            worst = max(worst, float(np.abs(got - _oracle_region(w, masks, x, states, mode)).max()))
    assert worst < 1e-5
    assert time.perf_counter() - t0 < 5.0


@pytest.mark.criterion(2, "N=1 region attention is cross attention bit for bit")
def test_c02_degeneracy():
    for seed in range(10):
        w, masks, x, states = _instance(seed, 1)
        ref = cross_attention(x, states[0], w).tobytes()
        for mode in MODES:
            assert region_attention(x, masks, states, w, mode).tobytes() == ref


@pytest.mark.criterion(3, "identical prompts collapse to the merged baseline, 39 blocks, 32x32")
def test_c03_identical_prompt_collapse():
    t0 = time.perf_counter()
    stack = build_stack(StackConfig(injected=frozenset(range(39))))
    baseline_stack = stack.with_injection(frozenset())
    state = seeded_normal((STATE_LEN, 64), 5, 1.0)
    negative = seeded_normal((STATE_LEN, 64), 6, 1.0)
    latent = seeded_normal((1024, 64), 7, 1.0)
    grid = LatentGrid(32, 32)
    ref = baseline_stack.forward(latent, 0.5, [state, negative], divide_regions(RegionSpec("height", 1), grid),
                                 merged=state)
    for n in (2, 4, 9):
        masks = divide_regions(RegionSpec("height", n), grid)
        out = stack.forward(latent, 0.5, [state] * n + [negative], masks, merged=state)
        assert np.abs(out - ref).max() < 1e-4, n
    assert time.perf_counter() - t0 < 60.0


@pytest.mark.criterion(4, "locality: perturbing state j leaves positions outside region j bitwise unchanged")
def test_c04_locality():
    w = small_weights(d_model=64, heads=4, head_dim=16, seed=3, scale=0.2)
    latent = seeded_normal((1024, 64), 1, 1.0)
    grid = LatentGrid(32, 32)
    for n in (2, 4, 9):
        masks = divide_regions(RegionSpec("height", n), grid)
        states = [seeded_normal((STATE_LEN, 64), 10 + i, 1.0) for i in range(n)]
        base = region_attention(latent, masks, states, w)
        for j in range(n):
            pert = list(states)
            pert[j] = seeded_normal((STATE_LEN, 64), 500 + j, 1.0)
            out = region_attention(latent, masks, pert, w)
            outside = masks[j].values == 0
            assert out[outside].tobytes() == base[outside].tobytes(), (n, j)
            assert not np.array_equal(out[~outside], base[~outside]), (n, j)


@pytest.mark.criterion(5, "literal-mode bias equals the out-of-region uniform-attention terms")
def test_c05_literal_bias_law():
    worst = 0.0
    for seed in range(20):
        w, masks, x, states = _instance(seed, 2)
        diff = (region_attention(x, masks, states, w, "region-literal")
                - region_attention(x, masks, states, w, "region-output-masked"))
        expect = np.zeros_like(diff, dtype=np.float64)
        for m, s in zip(masks, states):
            v = oracles.oracle_linear(s, w.wv, w.bv)
            u = oracles.oracle_linear([oracles.oracle_uniform_term(v, w.heads)], w.wo, np.zeros(4))[0]
            expect[m.values == 0] += u
        worst = max(worst, float(np.abs(diff - expect).max()))
    assert worst < 1e-5


@pytest.mark.criterion(6, "masks partition every grid; too many regions is a clean error")
def test_c06_partition():
    for h, wd in ((8, 8), (9, 7), (32, 32)):
        grid = LatentGrid(h, wd)
        for axis, length in (("height", h), ("width", wd)):
            for n in range(1, 10):
                spec = RegionSpec(axis, n)
                if n > length:
                    with pytest.raises(RegionTooSmallError):
                        divide_regions(spec, grid)
                    continue
                masks = divide_regions(spec, grid)
                stacked = np.stack([m.values for m in masks]).astype(np.int64)
                assert stacked.shape == (n, h * wd)
                assert (stacked.sum(axis=0) == 1).all()
                assert ((stacked == 0) | (stacked == 1)).all()


@pytest.mark.criterion(7, "every text state has 333 rows; batch is N+1")
def test_c07_text_states():
    mlp = ProjectionMlp.seeded(32, 24, 64, seed=0)
    for tokens in (1, 10, 77, 256):
        text = " ".join(f"w{i}" for i in range(tokens))
        for n in (1, 2, 4, 9):
            ps = PromptSet([encode_prompt(f"{text} r{i}", i, 32, 24) for i in range(n)],
                           encode_prompt(text + " neg", 0, 32, 24))
            states = batch_prompt_states(ps, mlp)
            assert len(states) == n + 1
            assert all(s.values.shape == (STATE_LEN, 64) for s in states)


class _ZeroEps:
    d_model = 8

    def forward(self, x, sigma, states, masks, merged=None):
        return np.zeros_like(x)

    def forward_negative(self, x, sigma, negative):
        return np.zeros_like(x)


@pytest.mark.criterion(8, "sampler identities")
def test_c08_sampler_identities():
    u = rand((5, 8), 1)
    c = rand((5, 8), 2)
    assert cfg_combine(u, c, 1).tobytes() == c.tobytes()
    assert cfg_combine(u, u, 6).tobytes() == u.tobytes()
    res = sample(_ZeroEps(), [None, None], [np.ones(16)], SchedulerConfig(8), CfgConfig(6.0), seed=4)
    assert all(x.tobytes() == res.trajectory[0].tobytes() for x in res.trajectory)
    for steps in (1, 4, 8, 20):
        s = sgm_uniform_sigmas(SchedulerConfig(steps))
        assert all(a > b for a, b in zip(s, s[1:])) and s[-1] == 0.0
    assert len(sampling_sigmas(SchedulerConfig(8), 1.0)) - 1 == 8
    assert len(sampling_sigmas(SchedulerConfig(8), 0.5)) - 1 == 4
    half = sample(_ZeroEps(), [None, None], [np.ones(16)], SchedulerConfig(8), CfgConfig(6.0, 0.5), seed=4)
    assert half.steps == 4


@pytest.mark.slow
@pytest.mark.criterion(9, "depth ablation: zero at k=0, positive at k=39, trend, complete CSVs")
def test_c09_ablation(tmp_path):
    t0 = time.perf_counter()
    cfg = config_from_dict({"ablation": {"counts": [0, 13, 26, 39]}})
    rep = run_ablation(cfg, tmp_path, offline=True)
    for policy in ("deepest-first", "shallowest-first"):
        with (tmp_path / f"ablation_{policy}.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["k", "region", "inside", "outside", "ratio"]
        assert sorted({(int(r["k"]), int(r["region"])) for r in rows}) == [
            (k, j) for k in (0, 13, 26, 39) for j in (0, 1)]
        for r in rows:
            vals = [float(r[c]) for c in ("inside", "outside", "ratio")]
            assert all(math.isfinite(v) for v in vals)
            if r["k"] == "0":
                assert vals == [0.0, 0.0, 0.0]
            if r["k"] == "39":
                assert vals[0] > 0 and vals[2] > 0
    trend = rep["trend"]
    assert trend["seeds"] == 5 and trend["increased"] >= 4
    assert json.loads((tmp_path / "ablation.json").read_text())["trend"]["increased"] == trend["increased"]
    assert time.perf_counter() - t0 < 600.0


@pytest.mark.criterion(10, "psnr/ssim sentinels and closed forms")
def test_c10_metrics():
    a = np.random.default_rng(0).random((16, 16))
    assert psnr(a, a) == math.inf
    assert psnr(np.zeros((8, 8)), np.ones((8, 8))) == 0.0
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    for x, y in ((0.2, 0.7), (0.0, 1.0), (0.4, 0.4)):
        expect = (2 * x * y + SSIM_C1) / (x * x + y * y + SSIM_C1)
        assert abs(ssim(np.full((10, 10), x), np.full((10, 10), y)) - expect) < 1e-9


@pytest.mark.criterion(11, "two offline generate runs give identical report checksums")
def test_c11_determinism(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("grid: {height: 16, width: 16}\nregions: {count: 4}\nsampler: {steps: 4}\n")
    sums = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["generate", "--config", str(cfg), "--seed", "42", "--out", str(out), "--offline"]) == 0
        capsys.readouterr()
        sums.append(json.loads((out / "report.json").read_text())["checksums"])
    assert sums[0] == sums[1]
    assert (tmp_path / "a" / "final_latent.txt").read_bytes() == (tmp_path / "b" / "final_latent.txt").read_bytes()


@pytest.mark.criterion(12, "prompt generation against a mock server")
def test_c12_prompt_robustness():
    client = LlmClientConfig("http://mock/v1/chat/completions", "m", max_retries=2, backoff=0.1)

    def serve(content=None, status=200):
        calls = []

        def handler(request):
            calls.append(request)
            if status != 200:
                return httpx.Response(status)
            return httpx.Response(200, json={"choices": [{"message": {"content": content}}]})

        return httpx.MockTransport(handler), calls

    ok = {"high_level": "h", "regions": [{"index": 0, "text": "a"}, {"index": 1, "text": "b"}], "negative": "n"}
    tr, _ = serve(json.dumps(ok))
    assert generate_prompts("x", 2, client, transport=tr, sleep=lambda s: None).n == 2

    dup = dict(ok, regions=[{"index": 0, "text": "a"}, {"index": 0, "text": "b"}])
    tr, _ = serve(json.dumps(dup))
    with pytest.raises(SchemaError):
        generate_prompts("x", 2, client, transport=tr, sleep=lambda s: None)

    missing = {k: v for k, v in ok.items() if k != "negative"}
    tr, _ = serve(json.dumps(missing))
    with pytest.raises(SchemaError):
        generate_prompts("x", 2, client, transport=tr, sleep=lambda s: None)

    tr, calls = serve(status=500)
    sleeps = []
    with pytest.raises(TransportError):
        generate_prompts("x", 2, client, transport=tr, sleep=sleeps.append)
    assert len(calls) == client.max_retries + 1 and len(sleeps) == client.max_retries

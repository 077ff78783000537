"""End-to-end runs behind the CLI: generation, depth ablation, mask dumps."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._accel import backend_name
from .attention import AttentionMode
from .config import RunConfig
from .dit import Stack, StackConfig, build_stack, placement
from .errors import PipelineError, RegionDitError, TransportError
from .masks import LatentGrid, RegionMask, RegionSpec, divide_regions, write_pgm
from .metrics import regional_influence_score
from .prompts import LlmClientConfig, ProgressivePrompt, generate_prompts, merge_prompts, offline_template
from .sampler import CfgConfig, SchedulerConfig, sample, write_trajectory
from .tensor import DTYPE, checksum, derive_seed, seeded_normal, write_tensor
from .text_states import (
    ProjectionMlp,
    PromptSet,
    TextState,
    batch_prompt_states,
    encode_prompt,
    load_prompt_record,
    prompt_state,
)

logger = logging.getLogger(__name__)


def _stage(name):
    """Wrap package errors raised inside a stage with the stage tag (transport errors pass through)."""

    class _Ctx:
        def __enter__(self):
            return self

        def __exit__(self, et, ev, tb):
            if ev is None or isinstance(ev, (TransportError, PipelineError)):
                return False
            if isinstance(ev, (RegionDitError, ValueError, OSError)):
                raise PipelineError(name, ev) from ev
            return False

    return _Ctx()


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


@dataclass
class Conditioning:
    prompts: ProgressivePrompt | None
    states: list[TextState]  # N positives then the negative
    merged: TextState
    masks: list[RegionMask]


def region_spec(cfg: RunConfig) -> RegionSpec:
    layout = tuple(cfg.regions.layout) if cfg.regions.layout else None
    return RegionSpec(cfg.regions.axis, cfg.regions.count, layout)


def latent_grid(cfg: RunConfig) -> LatentGrid:
    return LatentGrid(cfg.grid.height, cfg.grid.width)


def stack_config(cfg: RunConfig, seed: int | None = None, injected=None) -> StackConfig:
    m = cfg.model
    return StackConfig(
        num_blocks=m.num_blocks,
        injected=cfg.injected_blocks() if injected is None else injected,
        mode=AttentionMode(m.mode),
        d_model=m.d_model, heads=m.heads, head_dim=m.head_dim,
        seed=cfg.seeds.weights if seed is None else seed,
    )


def resolve_prompts(cfg: RunConfig, offline: bool = False, transport=None) -> ProgressivePrompt | None:
    src = "offline" if offline else cfg.prompts.source
    n = cfg.regions.count
    if src == "offline":
        return offline_template(cfg.prompts.intent, n)
    if src == "llm":
        llm = cfg.prompts.llm
        client = LlmClientConfig(llm.endpoint, llm.model, llm.api_key_env, llm.timeout,
                                 llm.max_retries, llm.backoff, llm.concurrency)
        return generate_prompts(cfg.prompts.intent, n, client, transport=transport)
    return None


def build_conditioning(cfg: RunConfig, offline: bool = False, transport=None) -> Conditioning:
    with _stage("regions"):
        masks = divide_regions(region_spec(cfg), latent_grid(cfg))
    with _stage("prompts"):
        pp = resolve_prompts(cfg, offline, transport)
    m = cfg.model
    with _stage("text-states"):
        mlp = ProjectionMlp.seeded(m.d_long, m.d_short, m.d_model, derive_seed(cfg.seeds.weights, "mlp"))
        seed = cfg.seeds.text
        if pp is not None:
            prompt_set = PromptSet(
                [encode_prompt(r.text, seed, m.d_long, m.d_short) for r in pp.ordered()],
                encode_prompt(pp.negative, seed, m.d_long, m.d_short),
            )
            merged_rec = encode_prompt(merge_prompts(pp), seed, m.d_long, m.d_short)
        else:
            files = cfg.prompts.files
            prompt_set = PromptSet(
                [load_prompt_record(p["text"], p["long"], p["short"]) for p in files["positives"]],
                load_prompt_record(files["negative"]["text"], files["negative"]["long"], files["negative"]["short"]),
            )
            f = files["merged"]
            merged_rec = load_prompt_record(f["text"], f["long"], f["short"])
        states = batch_prompt_states(prompt_set, mlp)
        merged = prompt_state(merged_rec, mlp)
    return Conditioning(pp, states, merged, masks)


def dump_masks(masks: list[RegionMask], grid: LatentGrid, out_dir: Path, spec: RegionSpec | None = None) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for m in masks:
        name = f"mask_{m.region_index:02d}.pgm"
        write_pgm(out_dir / name, m, grid)
        entries.append({"region": m.region_index, "file": name, "pixels": int(m.values.sum())})
    index = {"height": grid.height, "width": grid.width, "count": len(masks), "masks": entries}
    if spec is not None:
        index.update(axis=spec.axis.value, layout=list(spec.layout) if spec.layout else None)
    _write_json(out_dir / "index.json", index)
    return index


# --------------------------------------------------------------------------
# generate
# --------------------------------------------------------------------------

def run_generate(cfg: RunConfig, out_dir, offline: bool = False, transport=None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    cond = build_conditioning(cfg, offline, transport)
    timings["conditioning"] = time.perf_counter() - t0

    grid = latent_grid(cfg)
    dump_masks(cond.masks, grid, out_dir / "masks", region_spec(cfg))
    if cond.prompts is not None:
        (out_dir / "prompts.json").write_text(cond.prompts.to_json(indent=2) + "\n")

    t0 = time.perf_counter()
    with _stage("dit-stack"):
        stack = build_stack(stack_config(cfg))
    timings["build_stack"] = time.perf_counter() - t0

    s = cfg.sampler
    sched = SchedulerConfig(s.steps, s.sigma_max, s.sigma_min)
    guidance = CfgConfig(s.cfg_scale, s.denoise)
    t0 = time.perf_counter()
    with _stage("sampler"):
        result = sample(stack, cond.states, cond.masks, sched, guidance, cfg.seeds.noise, merged=cond.merged)
    timings["sample"] = time.perf_counter() - t0

    write_trajectory(result, out_dir / "trajectory")
    write_tensor(out_dir / "final_latent.txt", result.latent)

    source = "offline" if offline else cfg.prompts.source
    effective = cfg.to_dict()
    if offline:
        effective["prompts"]["source"] = "offline"
    report = {
        "command": "generate",
        "backend": backend_name(),
        "config": effective,
        "deterministic": source != "llm",
        "prompts": cond.prompts.to_dict() if cond.prompts else None,
        "merged_prompt": merge_prompts(cond.prompts) if cond.prompts else cfg.prompts.files["merged"]["text"],
        "masks": len(cond.masks),
        "text_states": {"count": len(cond.states), "length": int(cond.states[0].values.shape[0])},
        "injected_blocks": stack.injected_count,
        "num_steps": result.steps,
        "steps": [
            {"step": k + 1, "sigma": a, "sigma_next": b, "seconds": t}
            for k, (a, b, t) in enumerate(zip(result.sigmas[:-1], result.sigmas[1:], result.step_seconds))
        ],
        "timings": timings,
        "checksums": {
            "final_latent": checksum([result.latent]),
            "trajectory": checksum(result.trajectory),
            "text_states": checksum([st.values for st in cond.states] + [cond.merged.values]),
            "masks": checksum([m.values.astype(DTYPE) for m in cond.masks]),
        },
    }
    _write_json(out_dir / "report.json", report)
    return report


# --------------------------------------------------------------------------
# depth ablation
# --------------------------------------------------------------------------

def _sweep_points(cfg: RunConfig) -> list[tuple[str, int, frozenset[int]]]:
    n = cfg.model.num_blocks
    pts = [(p, k, placement(p, k, n)) for p in cfg.ablation.policies for k in cfg.ablation.counts]
    pts += [("explicit", len(set(s)), frozenset(s)) for s in cfg.ablation.explicit]
    return pts


def _influence_rows(stack: Stack, cond: Conditioning, latent, timestep, seed) -> list[dict]:
    base = stack.forward(latent, timestep, cond.states, cond.masks, merged=cond.merged)
    rows = []
    for j in range(len(cond.masks)):
        sc = regional_influence_score(stack, latent, timestep, cond.masks, cond.states, j,
                                      derive_seed(seed, "region", j), merged=cond.merged, baseline=base)
        rows.append({"region": j, "inside": sc.inside, "outside": sc.outside, "ratio": sc.ratio})
    return rows


def _ablation_latent(cfg: RunConfig, seed: int) -> np.ndarray:
    shape = (latent_grid(cfg).size, cfg.model.d_model)
    return seeded_normal(shape, derive_seed(seed, "ablation-latent"), 1.0) * DTYPE(cfg.ablation.timestep)


def trend_check(cfg: RunConfig, cond: Conditioning, region: int = 0) -> list[dict]:
    """Per seed: ratio with all blocks injected vs a single block, under the trend policy."""
    n = cfg.model.num_blocks
    t = cfg.ablation.timestep
    out = []
    for seed in cfg.ablation.trend_seeds:
        stack = build_stack(stack_config(cfg, seed=seed, injected=frozenset()))
        latent = _ablation_latent(cfg, seed)
        ratios = {}
        for k in (1, n):
            st = stack.with_injection(placement(cfg.ablation.trend_policy, k, n))
            sc = regional_influence_score(st, latent, t, cond.masks, cond.states, region,
                                          derive_seed(seed, "region", region), merged=cond.merged)
            ratios[k] = sc.ratio
        out.append({"seed": seed, "ratio_1": ratios[1], f"ratio_{n}": ratios[n], "increased": ratios[n] > ratios[1]})
    return out


def run_ablation(cfg: RunConfig, out_dir, offline: bool = True, transport=None, trend: bool = True) -> dict:
    out_dir = Path(out_dir)
    points_dir = out_dir / "points"
    points_dir.mkdir(parents=True, exist_ok=True)
    cond = build_conditioning(cfg, offline, transport)
    base_stack = build_stack(stack_config(cfg, injected=frozenset()))
    latent = _ablation_latent(cfg, cfg.seeds.noise)
    t = cfg.ablation.timestep

    def run_point(point):
        policy, k, injected = point
        with _stage("ablate-depth"):
            rows = _influence_rows(base_stack.with_injection(injected), cond, latent, t, cfg.seeds.noise)
        rec = {"policy": policy, "k": k, "injected": sorted(injected), "rows": rows}
        tag = "_".join(str(i) for i in sorted(injected)) if policy == "explicit" else str(k)
        _write_json(points_dir / f"{policy}_k{tag}.json", rec)
        return rec

    started = time.perf_counter()
    with ThreadPoolExecutor(max_workers=cfg.ablation.workers) as pool:
        records = list(pool.map(run_point, _sweep_points(cfg)))

    csv_files = {}
    for policy in dict.fromkeys(r["policy"] for r in records):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "region", "inside", "outside", "ratio"])
        for rec in records:
            if rec["policy"] != policy:
                continue
            for row in rec["rows"]:
                w.writerow([rec["k"], row["region"], repr(row["inside"]), repr(row["outside"]), repr(row["ratio"])])
        name = f"ablation_{policy}.csv"
        (out_dir / name).write_text(buf.getvalue())
        csv_files[policy] = name

    report = {
        "command": "ablate-depth",
        "backend": backend_name(),
        "config": cfg.to_dict(),
        "csv": csv_files,
        "points": records,
    }
    if trend:
        per_seed = trend_check(cfg, cond)
        report["trend"] = {
            "policy": cfg.ablation.trend_policy,
            "region": 0,
            "per_seed": per_seed,
            "increased": sum(r["increased"] for r in per_seed),
            "seeds": len(per_seed),
        }
    report["seconds"] = time.perf_counter() - started
    _write_json(out_dir / "ablation.json", report)
    return report


def run_masks(spec: RegionSpec, grid: LatentGrid, out_dir) -> dict:
    masks = divide_regions(spec, grid)
    return dump_masks(masks, grid, Path(out_dir), spec)


__all__ = [
    "Conditioning",
    "build_conditioning",
    "dump_masks",
    "run_ablation",
    "run_generate",
    "run_masks",
    "trend_check",
]

"""Euler sampling on an SGM-uniform sigma schedule with classifier-free guidance.

The network output is read as a noise prediction: ``denoised = x - sigma * eps``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError
from .tensor import DTYPE, seeded_normal, write_tensor


@dataclass(frozen=True)
class SchedulerConfig:
    steps: int = 20
    sigma_max: float = 1.0
    sigma_min: float = 0.01
    kind: str = "sgm_uniform"

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.sigma_max > self.sigma_min > 0:
            raise ValueError("need sigma_max > sigma_min > 0")
        if self.kind != "sgm_uniform":
            raise ValueError(f"unknown scheduler kind {self.kind!r}")


@dataclass(frozen=True)
class CfgConfig:
    scale: float = 6.0
    denoise: float = 1.0

    def __post_init__(self):
        if self.scale < 0:
            raise ValueError("cfg scale must be >= 0")
        if not 0 < self.denoise <= 1:
            raise ValueError("denoise must lie in (0, 1]")


def sgm_uniform_sigmas(cfg: SchedulerConfig) -> list[float]:
    """Uniform timesteps from sigma_max down to sigma_min inclusive, then a terminal 0."""
    span = cfg.sigma_max - cfg.sigma_min
    sigmas = [cfg.sigma_max - k * span / cfg.steps for k in range(cfg.steps)]
    sigmas.append(cfg.sigma_min)
    sigmas.append(0.0)
    return sigmas


def sampling_sigmas(sched: SchedulerConfig, denoise: float = 1.0) -> list[float]:
    """Sigmas actually visited: ``ceil(denoise * steps)`` Euler steps ending at 0.

    The grid point at sigma_min is skipped so the last step lands on 0 directly
    and the step count equals ``steps`` for ``denoise=1``.
    """
    grid = sgm_uniform_sigmas(sched)
    visited = grid[:sched.steps] + [0.0]
    m = math.ceil(denoise * sched.steps - 1e-12)
    return visited[len(visited) - (m + 1):]


def cfg_combine(uncond, cond, scale: float) -> np.ndarray:
    uncond = np.asarray(uncond, dtype=DTYPE)
    cond = np.asarray(cond, dtype=DTYPE)
    if uncond.shape != cond.shape:
        raise DimensionError(f"cfg_combine shapes differ: {uncond.shape} vs {cond.shape}")
    if scale == 1:
        return cond.copy()
    return uncond + DTYPE(scale) * (cond - uncond)


def euler_step(x, sigma, sigma_next, denoised) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("euler_step needs sigma > 0")
    x = np.asarray(x, dtype=DTYPE)
    denoised = np.asarray(denoised, dtype=DTYPE)
    if sigma_next == 0:
        return denoised.copy()
    d = (x - denoised) / DTYPE(sigma)
    return x + DTYPE(sigma_next - sigma) * d


@dataclass
class SampleResult:
    latent: np.ndarray
    trajectory: list[np.ndarray]
    sigmas: list[float]
    step_seconds: list[float] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.sigmas) - 1


def sample(model, states, masks, sched: SchedulerConfig, cfg: CfgConfig, seed: int, *,
           merged=None, shape=None, init_latent=None, clock=None) -> SampleResult:
    """Run the guided Euler loop.

    ``model`` needs ``forward(x, sigma, states, masks, merged=...)`` and
    ``forward_negative(x, sigma, negative_state)``; the last entry of ``states``
    is the negative prompt state.
    """
    import time

    clock = clock or time.perf_counter
    sigmas = sampling_sigmas(sched, cfg.denoise)
    if shape is None:
        shape = (len(masks[0]), model.d_model)
    x = seeded_normal(shape, seed, scale=1.0) * DTYPE(sigmas[0])
    if init_latent is not None:
        x = np.asarray(init_latent, dtype=DTYPE) + x
    negative = states[-1]
    trajectory = [x]
    timings = []
    for s, s_next in zip(sigmas[:-1], sigmas[1:]):
        t0 = clock()
        eps_pos = model.forward(x, s, states, masks, merged=merged)
        eps_neg = model.forward_negative(x, s, negative)
        eps = cfg_combine(eps_neg, eps_pos, cfg.scale)
        denoised = x - DTYPE(s) * eps
        x = euler_step(x, s, s_next, denoised)
        trajectory.append(x)
        timings.append(clock() - t0)
    return SampleResult(x, trajectory, sigmas, timings)


def write_trajectory(result: SampleResult, out_dir) -> Path:
    """One fixture file per step plus ``trajectory.json`` (step, sigma, file)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, (x, sigma) in enumerate(zip(result.trajectory, result.sigmas)):
        name = f"step_{k:03d}.txt"
        write_tensor(out_dir / name, x)
        entries.append({"step": k, "sigma": sigma, "file": name})
    path = out_dir / "trajectory.json"
    path.write_text(json.dumps(entries, indent=2) + "\n")
    return path

"""Image fidelity metrics and the regional-influence score used by the depth ablation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import DimensionError
from .tensor import DTYPE, derive_seed, seeded_normal

SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def as_image(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] != 3):
        raise DimensionError(f"image must be HxW or HxWx3, got {a.shape}")
    if a.size and (a.min() < 0 or a.max() > 1):
        raise ValueError("image values must lie in [0, 1]")
    return a


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for unit dynamic range; ``inf`` for identical images."""
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim(a, b, window: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all ``window x window`` uniform windows (stride 1), averaged over channels."""
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < window:
        raise DimensionError(f"image {a.shape[:2]} smaller than the {window}x{window} window")
    if a.ndim == 2:
        return float(kernels.ssim_map(a, b, window, SSIM_C1, SSIM_C2).mean())
    return float(np.mean([
        kernels.ssim_map(a[:, :, c], b[:, :, c], window, SSIM_C1, SSIM_C2).mean() for c in range(3)
    ]))


def format_metric(v: float):
    """JSON-friendly value: infinities become the string ``"inf"``."""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


METRICS: dict[str, Callable[..., float]] = {"psnr": psnr, "ssim": ssim}


def register_metric(name: str, fn: Callable[..., float]) -> None:
    if name in METRICS:
        raise ValueError(f"metric {name!r} already registered")
    METRICS[name] = fn


@dataclass
class MetricsReport:
    """Named metric values; external tools may append e.g. LPIPS or rFID."""

    values: dict[str, float] = field(default_factory=dict)

    def add(self, name: str, value: float) -> None:
        self.values[name] = float(value)

    def compute(self, a, b, names=None) -> "MetricsReport":
        for name in names or METRICS:
            self.add(name, METRICS[name](a, b))
        return self

    def to_dict(self) -> dict:
        return {k: format_metric(v) for k, v in self.values.items()}


# --------------------------------------------------------------------------
# regional influence
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class InfluenceScore:
    inside: float
    outside: float
    ratio: float


def perturb_state(state, seed: int) -> np.ndarray:
    """Random direction with the same Frobenius norm as ``state``."""
    s = np.asarray(getattr(state, "values", state), dtype=DTYPE)
    noise = seeded_normal(s.shape, derive_seed(seed, "perturb"), scale=1.0).astype(np.float64)
    norm = float(np.linalg.norm(s.astype(np.float64)))
    return (noise * (norm / np.linalg.norm(noise))).astype(DTYPE)


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x.astype(np.float64) ** 2))) if x.size else 0.0


def regional_influence_score(stack, latent, timestep, masks, states, region: int, seed: int, *,
                             merged=None, baseline=None) -> InfluenceScore:
    """RMS change inside vs outside ``region`` when that region's state is swapped for a
    same-norm random one. ``baseline`` may carry a precomputed unperturbed forward."""
    if not 0 <= region < len(masks):
        raise IndexError(f"region {region} out of range for {len(masks)} regions")
    if baseline is None:
        baseline = stack.forward(latent, timestep, states, masks, merged=merged)
    perturbed = list(states)
    perturbed[region] = perturb_state(states[region], seed)
    out = stack.forward(latent, timestep, perturbed, masks, merged=merged)
    delta = out - baseline
    inside_rows = masks[region].values.astype(bool)
    inside = _rms(delta[inside_rows])
    outside = _rms(delta[~inside_rows])
    return InfluenceScore(inside, outside, inside / (outside + 1e-8))

"""A simplified DiT stack whose cross-attention slot is switchable per block.

Block layout (pre-norm, residual around each sublayer)::

    x += self_attn(mod1(LN1(x)))
    x += cross_attn(mod2(LN2(x)))      # standard or region attention
    x += ffn(mod3(LN3(x)))

where ``mod_k(h) = h * (1 + scale_k) + shift_k`` and the six modulation
vectors come from one affine map of a 16-dim sinusoidal timestep embedding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attention import AttentionMode, CrossAttnWeights, cross_attention, region_attention, self_attention
from .errors import BlockError, RegionDitError
from .masks import RegionMask
from .tensor import DTYPE, derive_seed, gelu, layer_norm, linear, read_tensors, seeded_normal, write_tensors

TIME_DIM = 16
DEFAULT_BLOCKS = 39


def timestep_embedding(t: float, dim: int = TIME_DIM) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    ang = 1000.0 * float(t) * freqs
    return np.concatenate([np.cos(ang), np.sin(ang)]).astype(DTYPE)


@dataclass(frozen=True)
class StackConfig:
    num_blocks: int = DEFAULT_BLOCKS
    injected: frozenset[int] = field(default_factory=frozenset)
    mode: AttentionMode = AttentionMode.REGION_OUTPUT_MASKED
    d_model: int = 64
    heads: int = 4
    head_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "injected", frozenset(int(i) for i in self.injected))
        object.__setattr__(self, "mode", AttentionMode(self.mode))
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        bad = sorted(i for i in self.injected if not 0 <= i < self.num_blocks)
        if bad:
            raise ValueError(f"injected block indices out of range [0, {self.num_blocks}): {bad}")
        if self.mode is AttentionMode.STANDARD and self.injected:
            raise ValueError("mode 'standard' cannot be injected; use an empty injection set")


def placement(policy: str, k: int, num_blocks: int) -> frozenset[int]:
    """Blocks that receive region attention when ``k`` of them are injected."""
    if not 0 <= k <= num_blocks:
        raise ValueError(f"injection count {k} outside [0, {num_blocks}]")
    if policy == "deepest-first":
        return frozenset(range(num_blocks - k, num_blocks))
    if policy == "shallowest-first":
        return frozenset(range(k))
    raise ValueError(f"unknown placement policy {policy!r}")


@dataclass(frozen=True, eq=False)
class DiTBlock:
    self_attn: CrossAttnWeights
    cross_attn: CrossAttnWeights
    ffn_w1: np.ndarray
    ffn_b1: np.ndarray
    ffn_w2: np.ndarray
    ffn_b2: np.ndarray
    norms: tuple[tuple[np.ndarray, np.ndarray], ...]
    mod_w: np.ndarray  # TIME_DIM x 6*d_model
    mod_b: np.ndarray

    @classmethod
    def seeded(cls, cfg: StackConfig, index: int, scale: float = 0.02):
        s = derive_seed(cfg.seed, "block", index)
        d = cfg.d_model
        return cls(
            self_attn=CrossAttnWeights.seeded(d, cfg.heads, cfg.head_dim, derive_seed(s, "self"), scale),
            cross_attn=CrossAttnWeights.seeded(d, cfg.heads, cfg.head_dim, derive_seed(s, "cross"), scale),
            ffn_w1=seeded_normal((d, 4 * d), derive_seed(s, "ffn1"), scale),
            ffn_b1=np.zeros(4 * d, DTYPE),
            ffn_w2=seeded_normal((4 * d, d), derive_seed(s, "ffn2"), scale),
            ffn_b2=np.zeros(d, DTYPE),
            norms=tuple((np.ones(d, DTYPE), np.zeros(d, DTYPE)) for _ in range(3)),
            mod_w=seeded_normal((TIME_DIM, 6 * d), derive_seed(s, "mod"), scale),
            mod_b=np.zeros(6 * d, DTYPE),
        )

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"self.{k}": v for k, v in self.self_attn.tensors().items()}
        out.update({f"cross.{k}": v for k, v in self.cross_attn.tensors().items()})
        out.update(ffn_w1=self.ffn_w1, ffn_b1=self.ffn_b1, ffn_w2=self.ffn_w2, ffn_b2=self.ffn_b2)
        for i, (g, b) in enumerate(self.norms):
            out[f"norm{i}.gain"] = g
            out[f"norm{i}.bias"] = b
        out.update(mod_w=self.mod_w, mod_b=self.mod_b)
        return out

    @classmethod
    def from_tensors(cls, t: dict[str, np.ndarray], heads: int, head_dim: int):
        def attn(prefix):
            return CrossAttnWeights(heads, head_dim, **{k: t[f"{prefix}.{k}"] for k in
                                                        ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")})

        return cls(
            self_attn=attn("self"),
            cross_attn=attn("cross"),
            ffn_w1=t["ffn_w1"], ffn_b1=t["ffn_b1"], ffn_w2=t["ffn_w2"], ffn_b2=t["ffn_b2"],
            norms=tuple((t[f"norm{i}.gain"], t[f"norm{i}.bias"]) for i in range(3)),
            mod_w=t["mod_w"], mod_b=t["mod_b"],
        )

    def modulation(self, temb: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        m = linear(temb[None, :], self.mod_w, self.mod_b)[0]
        d = self.ffn_b2.shape[0]
        return [(m[(2 * k) * d:(2 * k + 1) * d], m[(2 * k + 1) * d:(2 * k + 2) * d]) for k in range(3)]

    def __call__(self, x: np.ndarray, temb: np.ndarray, cross) -> np.ndarray:
        mods = self.modulation(temb)

        def pre(k):
            gain, bias = self.norms[k]
            shift, scale = mods[k]
            return layer_norm(x, gain, bias) * (1 + scale) + shift

        x = x + self_attention(pre(0), self.self_attn)
        x = x + cross(pre(1), self.cross_attn)
        h = gelu(linear(pre(2), self.ffn_w1, self.ffn_b1))
        return x + linear(h, self.ffn_w2, self.ffn_b2)


class Stack:
    """Immutable sequence of blocks built from a :class:`StackConfig`."""

    def __init__(self, cfg: StackConfig, blocks: list[DiTBlock]):
        if len(blocks) != cfg.num_blocks:
            raise ValueError(f"config wants {cfg.num_blocks} blocks, got {len(blocks)}")
        self.cfg = cfg
        self.blocks = tuple(blocks)

    @property
    def d_model(self) -> int:
        return self.cfg.d_model

    @property
    def injected_count(self) -> int:
        return len(self.cfg.injected)

    def block_mode(self, i: int) -> AttentionMode:
        if not 0 <= i < self.cfg.num_blocks:
            raise IndexError(i)
        return self.cfg.mode if i in self.cfg.injected else AttentionMode.STANDARD

    def with_injection(self, injected) -> "Stack":
        """Same weights, different injection set."""
        return Stack(replace(self.cfg, injected=frozenset(injected)), list(self.blocks))

    def _run(self, latent, timestep, cross_for_block) -> np.ndarray:
        x = np.asarray(latent, dtype=DTYPE)
        temb = timestep_embedding(timestep)
        for i, block in enumerate(self.blocks):
            try:
                x = block(x, temb, cross_for_block(i))
            except RegionDitError as exc:
                raise BlockError(i, exc) from exc
        return x

    def forward(self, latent, timestep: float, states: list, masks: list[RegionMask], *, merged=None) -> np.ndarray:
        """Positive branch. ``states`` holds N regional states plus the negative (ignored here);
        standard blocks attend to ``merged``, injected blocks to the regional states."""
        if len(states) != len(masks) + 1:
            raise ValueError(f"expected {len(masks) + 1} states (N regions + negative), got {len(states)}")
        regional = list(states[:-1])
        if merged is None and len(self.cfg.injected) < self.cfg.num_blocks:
            raise ValueError("standard blocks need the merged prompt state")
        mode = self.cfg.mode

        def cross_for_block(i):
            if i in self.cfg.injected:
                return lambda h, w: region_attention(h, masks, regional, w, mode)
            return lambda h, w: cross_attention(h, merged, w)

        return self._run(latent, timestep, cross_for_block)

    def forward_negative(self, latent, timestep: float, negative_state) -> np.ndarray:
        """Negative branch: standard cross-attention against the negative state in every block."""
        return self._run(latent, timestep, lambda i: (lambda h, w: cross_attention(h, negative_state, w)))

    # -- persistence --------------------------------------------------------

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for i, block in enumerate(self.blocks):
            name = f"block_{i:03d}.txt"
            write_tensors(directory / name, block.tensors())
            files.append(name)
        manifest = {
            "num_blocks": self.cfg.num_blocks,
            "injected": sorted(self.cfg.injected),
            "mode": self.cfg.mode.value,
            "d_model": self.cfg.d_model,
            "heads": self.cfg.heads,
            "head_dim": self.cfg.head_dim,
            "seed": self.cfg.seed,
            "blocks": files,
        }
        path = directory / "manifest.json"
        path.write_text(json.dumps(manifest, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, directory) -> "Stack":
        directory = Path(directory)
        m = json.loads((directory / "manifest.json").read_text())
        cfg = StackConfig(
            num_blocks=m["num_blocks"], injected=frozenset(m["injected"]), mode=m["mode"],
            d_model=m["d_model"], heads=m["heads"], head_dim=m["head_dim"], seed=m["seed"],
        )
        blocks = [DiTBlock.from_tensors(read_tensors(directory / f), cfg.heads, cfg.head_dim) for f in m["blocks"]]
        return cls(cfg, blocks)


def build_stack(cfg: StackConfig) -> Stack:
    return Stack(cfg, [DiTBlock.seeded(cfg, i) for i in range(cfg.num_blocks)])


def forward(stack: Stack, latent, timestep, states, masks, *, merged=None) -> np.ndarray:
    return stack.forward(latent, timestep, states, masks, merged=merged)


def forward_negative(stack: Stack, latent, timestep, negative_state) -> np.ndarray:
    return stack.forward_negative(latent, timestep, negative_state)

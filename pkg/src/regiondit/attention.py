"""Cross-attention and Controllable Region-Attention.

``region_attention`` injects one text state per region. Two fusion modes:

* ``REGION_LITERAL``: queries outside region ``i`` are zeroed, every region
  attends with its own state, and the raw per-region outputs are summed. A
  zeroed query row yields a uniform softmax, so each position also receives the
  mean value vector of every *other* region's state.
* ``REGION_OUTPUT_MASKED`` (default): each per-region output is kept only on
  its own region before summing, so position ``p`` sees exactly the ordinary
  cross-attention against the state of the region containing ``p``.

All regions share one set of projection weights.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, PartitionError
from .masks import RegionMask, check_partition
from .tensor import DTYPE, check_finite, derive_seed, linear, seeded_normal, softmax_rows


class AttentionMode(str, enum.Enum):
    STANDARD = "standard"
    REGION_LITERAL = "region-literal"
    REGION_OUTPUT_MASKED = "region-output-masked"


@dataclass(frozen=True, eq=False)
class CrossAttnWeights:
    heads: int
    head_dim: int
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray

    def __post_init__(self):
        inner = self.heads * self.head_dim
        d = self.wq.shape[0]
        for name in ("wq", "wk", "wv"):
            w = getattr(self, name)
            if w.shape != (d, inner):
                raise DimensionError(f"{name} must be {d}x{inner}, got {w.shape}")
        if self.wo.shape != (inner, d):
            raise DimensionError(f"wo must be {inner}x{d}, got {self.wo.shape}")
        for name, n in (("bq", inner), ("bk", inner), ("bv", inner), ("bo", d)):
            if getattr(self, name).shape != (n,):
                raise DimensionError(f"{name} must have length {n}")

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)

    @classmethod
    def seeded(cls, d_model: int, heads: int, head_dim: int, seed: int, scale: float = 0.02):
        inner = heads * head_dim

        def w(name, shape):
            return seeded_normal(shape, derive_seed(seed, name), scale)

        return cls(
            heads, head_dim,
            wq=w("wq", (d_model, inner)), bq=np.zeros(inner, DTYPE),
            wk=w("wk", (d_model, inner)), bk=np.zeros(inner, DTYPE),
            wv=w("wv", (d_model, inner)), bv=np.zeros(inner, DTYPE),
            wo=w("wo", (inner, d_model)), bo=np.zeros(d_model, DTYPE),
        )

    @classmethod
    def identity(cls, d: int):
        """Single head, all projections the identity, zero biases."""
        eye = np.eye(d, dtype=DTYPE)
        z = np.zeros(d, DTYPE)
        return cls(1, d, eye, z, eye.copy(), z, eye.copy(), z, eye.copy(), z)

    def tensors(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")}


def _state_array(state) -> np.ndarray:
    return np.asarray(getattr(state, "values", state), dtype=DTYPE)


def _heads_split(x: np.ndarray, heads: int, head_dim: int) -> np.ndarray:
    # (L, H*hd) -> (H, L, hd)
    return np.ascontiguousarray(x.reshape(x.shape[0], heads, head_dim).transpose(1, 0, 2))


def _attend(q: np.ndarray, k: np.ndarray, v: np.ndarray, w: CrossAttnWeights) -> np.ndarray:
    """Multi-head softmax(q k^T * scale) v on projected inputs; returns (Lq, H*hd) pre-output-projection."""
    H, hd = w.heads, w.head_dim
    qh = _heads_split(q, H, hd)
    kh = _heads_split(k, H, hd)
    vh = _heads_split(v, H, hd)
    scores = np.matmul(qh, kh.transpose(0, 2, 1)) * DTYPE(w.scale)
    probs = softmax_rows(scores)
    out = np.matmul(probs, vh)  # (H, Lq, hd)
    return np.ascontiguousarray(out.transpose(1, 0, 2)).reshape(q.shape[0], H * hd)


def _project_kv(state, w: CrossAttnWeights) -> tuple[np.ndarray, np.ndarray]:
    s = _state_array(state)
    if s.ndim != 2 or s.shape[1] != w.d_model:
        raise DimensionError(f"text state must be S x {w.d_model}, got {s.shape}")
    return linear(s, w.wk, w.bk), linear(s, w.wv, w.bv)


def _check_latent(latent_seq, w: CrossAttnWeights) -> np.ndarray:
    x = np.asarray(latent_seq, dtype=DTYPE)
    if x.ndim != 2 or x.shape[1] != w.d_model:
        raise DimensionError(f"latent sequence must be L x {w.d_model}, got {x.shape}")
    return x


def cross_attention(latent_seq, state, w: CrossAttnWeights) -> np.ndarray:
    x = _check_latent(latent_seq, w)
    q = linear(x, w.wq, w.bq)
    k, v = _project_kv(state, w)
    return linear(_attend(q, k, v, w), w.wo, w.bo)


def self_attention(x, w: CrossAttnWeights) -> np.ndarray:
    x = _check_latent(x, w)
    return cross_attention(x, x, w)


def region_attention(
    latent_seq,
    masks: list[RegionMask],
    states: list,
    w: CrossAttnWeights,
    mode: AttentionMode | str = AttentionMode.REGION_OUTPUT_MASKED,
) -> np.ndarray:
    mode = AttentionMode(mode)
    x = _check_latent(latent_seq, w)
    if len(masks) != len(states):
        raise PartitionError(f"{len(masks)} masks but {len(states)} text states")
    check_partition(masks, x.shape[0])

    if mode is AttentionMode.STANDARD:
        if len(states) != 1:
            raise ValueError("standard mode takes exactly one state")
        return cross_attention(x, states[0], w)

    q = linear(x, w.wq, w.bq)
    if mode is AttentionMode.REGION_LITERAL:
        fused = None
        for m, s in zip(masks, states):
            k, v = _project_kv(s, w)
            qi = q * m.values.astype(DTYPE)[:, None]
            fi = _attend(qi, k, v, w)
            fused = fi if fused is None else fused + fi
    else:
        # Same result as masking each f_i by its region, but only the region's rows are computed.
        fused = np.empty((x.shape[0], w.heads * w.head_dim), DTYPE)
        for m, s in zip(masks, states):
            k, v = _project_kv(s, w)
            idx = m.indices
            fused[idx] = _attend(q[idx], k, v, w)
    return linear(check_finite(fused, "region_attention"), w.wo, w.bo)


def negative_path(latent_seq, negative_state, w: CrossAttnWeights) -> np.ndarray:
    """Plain cross-attention against the global negative state."""
    return cross_attention(latent_seq, negative_state, w)


def stack_branches(negative: np.ndarray, positive: np.ndarray) -> np.ndarray:
    """Batch the two branches as ``[negative, positive]`` along a new leading axis."""
    if negative.shape != positive.shape:
        raise DimensionError(f"branch shapes differ: {negative.shape} vs {positive.shape}")
    return np.stack([negative, positive])

"""Region division of the latent grid into adjacent bands (or a rows x cols grid).

Region ``i`` of ``N`` along an axis of length ``L`` covers indices
``floor(i*L/N) .. floor((i+1)*L/N) - 1``. Masks are flattened row-major and
always form an exact partition of the grid.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PartitionError, RegionError, RegionTooSmallError, UnsupportedRatioError


class Axis(str, enum.Enum):
    HEIGHT = "height"
    WIDTH = "width"


@dataclass(frozen=True)
class LatentGrid:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise RegionError(f"latent grid must be at least 1x1, got {self.height}x{self.width}")

    @property
    def size(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class RegionSpec:
    """``count`` regions along ``axis``; ``layout=(rows, cols)`` selects a 2-D grid instead."""

    axis: Axis = Axis.HEIGHT
    count: int = 2
    layout: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "axis", Axis(self.axis))
        if self.count < 1:
            raise RegionError(f"region count must be >= 1, got {self.count}")
        if self.layout is not None:
            rows, cols = self.layout
            if rows < 1 or cols < 1 or rows * cols != self.count:
                raise RegionError(f"layout {rows}x{cols} does not give {self.count} regions")


@dataclass(frozen=True, eq=False)
class RegionMask:
    region_index: int
    values: np.ndarray  # uint8, length h*w

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.uint8).ravel()
        if not np.isin(v, (0, 1)).all():
            raise RegionError("mask values must be 0 or 1")
        if not v.any():
            raise RegionError(f"mask {self.region_index} is empty")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.values)

    def __eq__(self, other):
        if not isinstance(other, RegionMask):
            return NotImplemented
        return self.region_index == other.region_index and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.region_index, self.values.tobytes()))


def band_bounds(length: int, n: int) -> list[tuple[int, int]]:
    """Half-open ``[start, stop)`` bounds of ``n`` adjacent bands over ``length`` cells."""
    if n < 1:
        raise RegionError(f"region count must be >= 1, got {n}")
    if n > length:
        raise RegionTooSmallError(f"cannot split an axis of length {length} into {n} regions")
    return [(i * length // n, (i + 1) * length // n) for i in range(n)]


def _stripes(axis: Axis, n: int, grid: LatentGrid) -> list[np.ndarray]:
    length = grid.height if axis is Axis.HEIGHT else grid.width
    out = []
    for lo, hi in band_bounds(length, n):
        m = np.zeros((grid.height, grid.width), dtype=np.uint8)
        if axis is Axis.HEIGHT:
            m[lo:hi, :] = 1
        else:
            m[:, lo:hi] = 1
        out.append(m)
    return out


def divide_regions(spec: RegionSpec, grid: LatentGrid) -> list[RegionMask]:
    if spec.layout is None:
        planes = _stripes(spec.axis, spec.count, grid)
    else:
        rows, cols = spec.layout
        row_bands = _stripes(Axis.HEIGHT, rows, grid)
        col_bands = _stripes(Axis.WIDTH, cols, grid)
        planes = [r * c for r in row_bands for c in col_bands]
    return [RegionMask(i, p.ravel()) for i, p in enumerate(planes)]


def flatten_mask(mask2d, region_index: int = 0) -> RegionMask:
    m = np.asarray(mask2d)
    if m.ndim != 2:
        raise RegionError(f"expected a 2-D mask, got shape {m.shape}")
    return RegionMask(region_index, m.reshape(-1))


def unflatten_mask(mask: RegionMask, grid: LatentGrid) -> np.ndarray:
    if len(mask) != grid.size:
        raise RegionError(f"mask of length {len(mask)} does not fit grid {grid.height}x{grid.width}")
    return mask.values.reshape(grid.height, grid.width).copy()


def downsample_mask(full, grid: LatentGrid, region_index: int = 0) -> RegionMask:
    """Nearest-neighbour downsample taking each block's centre cell."""
    full = np.asarray(full)
    if full.ndim != 2:
        raise RegionError(f"expected a 2-D full-resolution mask, got shape {full.shape}")
    H, W = full.shape
    if H < grid.height or W < grid.width or H % grid.height or W % grid.width:
        raise UnsupportedRatioError(
            f"{H}x{W} is not an integer multiple of the latent grid {grid.height}x{grid.width}"
        )
    fy, fx = H // grid.height, W // grid.width
    small = full[fy // 2::fy, fx // 2::fx]
    return flatten_mask(small, region_index)


def check_partition(masks, size: int | None = None) -> None:
    """Raise :class:`PartitionError` unless the masks sum to exactly one everywhere."""
    if not masks:
        raise PartitionError("no region masks given")
    n = len(masks[0])
    if size is not None and n != size:
        raise PartitionError(f"masks cover {n} positions, sequence has {size}")
    total = np.zeros(n, dtype=np.int64)
    for m in masks:
        if len(m) != n:
            raise PartitionError("masks have differing lengths")
        total += m.values
    if not (total == 1).all():
        bad = int(np.flatnonzero(total != 1)[0])
        raise PartitionError(f"masks are not a partition: position {bad} covered {total[bad]} times")


def region_of(masks) -> np.ndarray:
    """Index of the region containing each position."""
    check_partition(masks)
    out = np.empty(len(masks[0]), dtype=np.int64)
    for i, m in enumerate(masks):
        out[m.values.astype(bool)] = i
    return out


def write_pgm(path, mask: RegionMask, grid: LatentGrid) -> None:
    """Plain (P2) greymap; 255 inside the region."""
    img = unflatten_mask(mask, grid).astype(np.int64) * 255
    lines = ["P2", f"{grid.width} {grid.height}", "255"]
    lines += [" ".join(str(v) for v in row) for row in img]
    Path(path).write_text("\n".join(lines) + "\n")

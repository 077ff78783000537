"""Dense float32 substrate: checked matmul/affine/softmax/norm ops, seeded init,
and the plain-text tensor fixture format.

Tensors are row-major ``numpy.float32`` arrays. Every op here rejects
non-finite results.
"""

from __future__ import annotations

import hashlib
import io
import math
import os
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import kernels
from .errors import DimensionError, FixtureFormatError, NonFiniteError

DTYPE = np.float32

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def check_finite(x: np.ndarray, op: str) -> np.ndarray:
    if not kernels.all_finite(x):
        raise NonFiniteError(f"{op} produced non-finite values")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul")


def softmax_rows(x) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim < 1 or x.shape[-1] == 0:
        raise DimensionError(f"softmax_rows needs a non-empty last axis, got {x.shape}")
    check_finite(x, "softmax_rows input")
    return check_finite(kernels.softmax_rows(x), "softmax_rows")


def linear(x, w, b=None) -> np.ndarray:
    x = as_tensor(x)
    w = as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    y = x @ w
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} does not match output width {w.shape[1]}")
        y += b
    return check_finite(y, "linear")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] < 1:
        raise DimensionError(f"layer_norm expects m x d with d >= 1, got {x.shape}")
    d = x.shape[1]
    if np.shape(gain) != (d,) or np.shape(bias) != (d,):
        raise DimensionError("layer_norm gain/bias must have length d")
    return check_finite(kernels.layer_norm(x, gain, bias, eps), "layer_norm")


def gelu(x) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim != 2:
        x2 = x.reshape(-1, x.shape[-1] if x.ndim else 1)
        return check_finite(kernels.gelu(x2).reshape(x.shape), "gelu")
    return check_finite(kernels.gelu(x), "gelu")


# --------------------------------------------------------------------------
# seeded init
# --------------------------------------------------------------------------

def splitmix64(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of a SplitMix64 generator started at ``seed``."""
    state0 = np.uint64(seed & _MASK64)
    k = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = state0 + k * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def seeded_normal(shape, seed: int, scale: float = 0.02) -> np.ndarray:
    """Deterministic N(0, scale^2) fill via SplitMix64 + Box-Muller."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    n = int(np.prod(shape, dtype=np.int64))
    pairs = (n + 1) // 2
    bits = splitmix64(seed, 2 * pairs) >> np.uint64(11)
    u = bits.astype(np.float64) * 2.0 ** -53
    u1 = u[0::2] + 2.0 ** -53  # in (0, 1], keeps log finite
    u2 = u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs, dtype=np.float64)
    z[0::2] = r * np.cos(2.0 * math.pi * u2)
    z[1::2] = r * np.sin(2.0 * math.pi * u2)
    return (z[:n] * scale).astype(DTYPE).reshape(shape)


def derive_seed(seed: int, *labels) -> int:
    """Stable child seed for a named sub-stream (independent of PYTHONHASHSEED)."""
    key = ":".join([str(seed & _MASK64)] + [str(x) for x in labels]).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


# --------------------------------------------------------------------------
# fixture format
# --------------------------------------------------------------------------
#
#   name: wq            (optional; multi-tensor files only)
#   shape: 4 8
#   0.1 0.2 ...
#
# Extra ``key: value`` header lines (e.g. ``source: long``) are preserved.

def _format_values(x: np.ndarray, per_line: int) -> str:
    flat = np.asarray(x, dtype=DTYPE).ravel()
    lines = []
    for i in range(0, flat.size, per_line):
        lines.append(" ".join(f"{float(v):.9g}" for v in flat[i:i + per_line]))
    return "\n".join(lines)


def format_tensor(x, headers: Mapping[str, str] | None = None) -> str:
    x = np.asarray(x, dtype=DTYPE)
    out = io.StringIO()
    for key, val in (headers or {}).items():
        out.write(f"{key}: {val}\n")
    out.write("shape: " + " ".join(str(d) for d in x.shape) + "\n")
    per_line = x.shape[-1] if x.ndim else 1
    body = _format_values(x, max(per_line, 1))
    if body:
        out.write(body + "\n")
    return out.getvalue()


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_tensor(path, x, headers: Mapping[str, str] | None = None) -> None:
    _atomic_write(Path(path), format_tensor(x, headers))


def _parse_sections(text: str, where: str) -> list[tuple[dict[str, str], np.ndarray]]:
    sections: list[tuple[dict[str, str], list[str]]] = []
    headers: dict[str, str] = {}
    body: list[str] | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, sep, rest = line.partition(":")
        if sep and head.replace("_", "").isalpha():
            if body is not None:
                sections.append((headers, body))
                headers, body = {}, None
            headers[head.strip()] = rest.strip()
            if head.strip() == "shape":
                body = []
        elif body is None:
            raise FixtureFormatError(f"{where}:{lineno}: values before 'shape:' header")
        else:
            body.append(line)
    if body is not None:
        sections.append((headers, body))
    elif headers:
        raise FixtureFormatError(f"{where}: missing 'shape:' header")

    parsed = []
    for hdr, lines in sections:
        try:
            shape = tuple(int(t) for t in hdr["shape"].split())
        except ValueError as exc:
            raise FixtureFormatError(f"{where}: malformed shape header {hdr['shape']!r}") from exc
        if any(d < 0 for d in shape):
            raise FixtureFormatError(f"{where}: negative dimension in {shape}")
        try:
            vals = np.array(" ".join(lines).split(), dtype=np.float64)
        except ValueError as exc:
            raise FixtureFormatError(f"{where}: non-numeric value") from exc
        expected = int(np.prod(shape, dtype=np.int64))
        if vals.size != expected:
            raise FixtureFormatError(
                f"{where}: shape {shape} needs {expected} values, found {vals.size}"
            )
        parsed.append((hdr, vals.astype(DTYPE).reshape(shape)))
    return parsed


def read_tensor(path) -> tuple[np.ndarray, dict[str, str]]:
    """Read a single-tensor fixture. Returns ``(array, headers)``."""
    path = Path(path)
    sections = _parse_sections(path.read_text(), str(path))
    if len(sections) != 1:
        raise FixtureFormatError(f"{path}: expected one tensor, found {len(sections)}")
    hdr, arr = sections[0]
    return arr, hdr


def write_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    text = "".join(format_tensor(v, {"name": k}) for k, v in tensors.items())
    _atomic_write(Path(path), text)


def read_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    out = {}
    for hdr, arr in _parse_sections(path.read_text(), str(path)):
        if "name" not in hdr:
            raise FixtureFormatError(f"{path}: multi-tensor section without 'name:'")
        out[hdr["name"]] = arr
    return out


def checksum(arrays: Iterable[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=DTYPE)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()

"""Netpbm greymap/pixmap I/O (P2, P3, P5, P6). Images are float arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _tokens(data: bytes):
    """Yield header tokens, skipping comments; returns offset after the maxval's whitespace."""
    pos = 0
    out = []
    while len(out) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        out.append(data[start:pos].decode("ascii"))
    return out, pos + 1


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), offset = _tokens(data)
    w, h, maxval = int(w), int(h), int(maxval)
    channels = {"P2": 1, "P5": 1, "P3": 3, "P6": 3}.get(magic)
    if channels is None:
        raise ValueError(f"{path}: unsupported netpbm magic {magic!r}")
    count = w * h * channels
    if magic in ("P2", "P3"):
        vals = np.array(data[offset:].split(), dtype=np.int64)[:count]
    else:
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        vals = np.frombuffer(data, dtype=dtype, count=count, offset=offset).astype(np.int64)
    if vals.size != count:
        raise ValueError(f"{path}: expected {count} samples, found {vals.size}")
    img = vals.reshape(h, w, channels).astype(np.float64) / maxval
    return img[:, :, 0] if channels == 1 else img


def write_pnm(path, img, binary: bool = True, maxval: int = 255) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        channels = 1
    elif img.ndim == 3 and img.shape[2] in (1, 3):
        channels = img.shape[2]
    else:
        raise ValueError(f"image must be HxW or HxWx{{1,3}}, got {img.shape}")
    h, w = img.shape[:2]
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval).astype(np.int64).reshape(h, w * channels)
    magic = {(1, False): "P2", (1, True): "P5", (3, False): "P3", (3, True): "P6"}[channels, binary]
    header = f"{magic}\n{w} {h}\n{maxval}\n".encode("ascii")
    if binary:
        body = q.astype(">u2" if maxval > 255 else np.uint8).tobytes()
    else:
        body = ("\n".join(" ".join(str(v) for v in row) for row in q) + "\n").encode("ascii")
    Path(path).write_bytes(header + body)

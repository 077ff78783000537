"""Brute-force double-precision attention oracles.

Pure Python loops over nested lists; nothing here imports the production
attention or tensor code. Only meant for tiny instances.
"""

from __future__ import annotations

import math

MAX_SIZE = 8


def _tolist(x):
    return x.tolist() if hasattr(x, "tolist") else [list(r) for r in x]


def _check(name, rows, cols=None):
    if len(rows) > MAX_SIZE or (cols is not None and cols > MAX_SIZE):
        raise ValueError(f"oracle size cap exceeded for {name}: {len(rows)}x{cols} > {MAX_SIZE}")


def oracle_linear(x, w, b):
    x, w = _tolist(x), _tolist(w)
    b = list(b)
    return [[sum(float(xr[i]) * float(w[i][j]) for i in range(len(xr))) + float(b[j])
             for j in range(len(b))] for xr in x]


def oracle_attention(q, k, v, heads: int):
    """softmax(q_h k_h^T / sqrt(d_h)) v_h per head, heads concatenated (no output projection)."""
    q, k, v = _tolist(q), _tolist(k), _tolist(v)
    inner = len(q[0])
    _check("q", q, inner)
    _check("k", k, len(k[0]))
    if inner % heads:
        raise ValueError("width not divisible by heads")
    hd = inner // heads
    scale = 1.0 / math.sqrt(hd)
    out = [[0.0] * inner for _ in q]
    for h in range(heads):
        lo = h * hd
        for p, qrow in enumerate(q):
            logits = []
            for krow in k:
                s = 0.0
                for c in range(lo, lo + hd):
                    s += float(qrow[c]) * float(krow[c])
                logits.append(s * scale)
            mx = max(logits)
            ex = [math.exp(z - mx) for z in logits]
            tot = sum(ex)
            for t, e in enumerate(ex):
                wgt = e / tot
                for c in range(lo, lo + hd):
                    out[p][c] += wgt * float(v[t][c])
    return out


def oracle_region_literal(q, k_list, v_list, masks, heads: int):
    """Zero the query rows outside each region, attend with that region's keys/values, sum."""
    q = _tolist(q)
    out = [[0.0] * len(q[0]) for _ in q]
    for k, v, m in zip(k_list, v_list, masks):
        m = list(m)
        qi = [[float(val) * float(m[p]) for val in row] for p, row in enumerate(q)]
        fi = oracle_attention(qi, k, v, heads)
        for p in range(len(q)):
            for c in range(len(q[0])):
                out[p][c] += fi[p][c]
    return out


def oracle_region_masked(q, k_list, v_list, masks, heads: int):
    """Each position attends only to the state of the region that contains it."""
    q = _tolist(q)
    out = [[0.0] * len(q[0]) for _ in q]
    for k, v, m in zip(k_list, v_list, masks):
        fi = oracle_attention(q, k, v, heads)
        for p in range(len(q)):
            if m[p]:
                out[p] = list(fi[p])
    return out


def oracle_uniform_term(v, heads: int):
    """Output of an all-zero query row: the column mean of ``v``."""
    v = _tolist(v)
    n = len(v)
    return [sum(float(r[c]) for r in v) / n for c in range(len(v[0]))]


def oracle_cross_attention(x, s, w: dict, heads: int):
    """Full cross-attention including projections, given weights as a dict of arrays."""
    q = oracle_linear(x, w["wq"], w["bq"])
    k = oracle_linear(s, w["wk"], w["bk"])
    v = oracle_linear(s, w["wv"], w["bv"])
    return oracle_linear(oracle_attention(q, k, v, heads), w["wo"], w["bo"])

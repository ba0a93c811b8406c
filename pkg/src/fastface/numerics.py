"""Small numeric kernels shared by the guidance, attention and eval code.

Everything here works in float64. Reductions that act on an attention map
accept an ``axis`` argument so a stack of maps (heads, batches) can be
processed at once; ``axis=None`` means "all entries".
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError

EPS = 1e-8


@dataclass(frozen=True)
class MapStats:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std >= 0:
            raise ValueError(f"std must be >= 0, got {self.std}")


def _finite(x, what="input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NumericError(f"{what} contains {bad} non-finite value(s)")
    return arr


def softmax_rows(m, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``scale * m`` along the last axis."""
    if not scale > 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    m = _finite(m, "softmax input")
    z = m * scale
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def minmax_norm(v, axis=None) -> np.ndarray:
    """Affine rescale to [0, 1]. Zero-range slices map to all zeros."""
    v = np.asarray(v, dtype=np.float64)
    lo = v.min(axis=axis, keepdims=True)
    rng = v.max(axis=axis, keepdims=True) - lo
    flat = rng <= EPS
    out = (v - lo) / np.where(flat, 1.0, rng)
    return np.where(flat, 0.0, out)


def quantile(v, p: float, axis=None):
    """Linear-interpolation quantile between order statistics."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"quantile level must lie in [0, 1], got {p}")
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("quantile of an empty vector")
    q = np.quantile(v, p, axis=axis, method="linear", keepdims=axis is not None)
    return float(q) if axis is None else q


def mean_std(v) -> MapStats:
    """Population mean and std (divide by N) over all entries."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("mean_std of an empty vector")
    return MapStats(float(v.mean()), float(v.std()))


def adain(source: MapStats, x) -> np.ndarray:
    """Re-impose ``source`` mean/std on ``x`` (statistics over all entries).

    A flat ``x`` (std at or below the epsilon guard) has no direction to
    scale along and comes back as a constant ``source.mean``.
    """
    return adain_axes(source.mean, source.std, x, axis=None)


def adain_axes(source_mean, source_std, x, axis) -> np.ndarray:
    """Batched AdaIN: statistics taken over ``axis`` of both operands."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=axis, keepdims=True)
    sd = x.std(axis=axis, keepdims=True)
    flat = sd <= EPS
    out = source_std * (x - mu) / np.where(flat, 1.0, sd) + source_mean
    return np.where(flat, np.broadcast_to(source_mean, out.shape), out)

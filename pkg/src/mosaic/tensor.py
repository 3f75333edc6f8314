"""Dense float32 kernels the model, ranking, and pruning layers build on.

Values are stored as 32-bit floats; reductions (norms, softmax denominators,
mean squares) accumulate in 64-bit before rounding back. Every cutoff taken
from a ranking breaks ties by element index so pruning masks are reproducible
across runs and platforms.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError, ShapeError

__all__ = [
    "matmul",
    "column_l2_norms",
    "softmax_rows",
    "rms_norm",
    "rms_norm_rows",
    "silu",
    "threshold_for_fraction",
    "lowest_k_mask",
    "lowest_fraction_mask",
]


def _as_f32(x, ndim: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != ndim:
        raise ShapeError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product of two 2-D float32 arrays."""
    a = _as_f32(a, 2, "a")
    b = _as_f32(b, 2, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def column_l2_norms(x) -> np.ndarray:
    """Per-column Euclidean norms, accumulated in float64."""
    x = _as_f32(x, 2, "x")
    if x.size == 0:
        raise ShapeError("x must be nonempty")
    sums = np.sum(np.square(x, dtype=np.float64), axis=0)
    return np.sqrt(sums).astype(np.float32)


def softmax_rows(x) -> np.ndarray:
    """Row-wise softmax, stabilized by row-max subtraction.

    Rows may contain -inf entries (masked positions); those get probability
    exactly 0. Each output row sums to 1 within 1e-5.
    """
    x = _as_f32(x, 2, "x")
    row_max = np.max(x, axis=1, keepdims=True)
    shifted = x - row_max
    # exp(-inf - -inf) would be nan; a fully masked row is a caller bug.
    exps = np.exp(shifted, dtype=np.float64)
    denom = np.sum(exps, axis=1, keepdims=True)
    return (exps / denom).astype(np.float32)


def rms_norm(x, gain, eps: float) -> np.ndarray:
    """Root-mean-square normalization of a vector with per-channel gain."""
    x = _as_f32(x, 1, "x")
    gain = _as_f32(gain, 1, "gain")
    if x.shape != gain.shape:
        raise ShapeError(f"x {x.shape} and gain {gain.shape} differ")
    ms = np.mean(np.square(x, dtype=np.float64))
    scale = 1.0 / math.sqrt(ms + eps)
    return (x.astype(np.float64) * scale * gain.astype(np.float64)).astype(np.float32)


def rms_norm_rows(x, gain, eps: float) -> np.ndarray:
    """rms_norm applied independently to every row of a matrix."""
    x = _as_f32(x, 2, "x")
    gain = _as_f32(gain, 1, "gain")
    if x.shape[1] != gain.shape[0]:
        raise ShapeError(f"row width {x.shape[1]} != gain length {gain.shape[0]}")
    ms = np.mean(np.square(x, dtype=np.float64), axis=1, keepdims=True)
    scale = 1.0 / np.sqrt(ms + eps)
    return (x.astype(np.float64) * scale * gain.astype(np.float64)).astype(np.float32)


def silu(x) -> np.ndarray:
    """x * sigmoid(x), computed without overflow for large |x|."""
    x = np.asarray(x, dtype=np.float32)
    x64 = x.astype(np.float64)
    out = np.empty_like(x64)
    pos = x64 >= 0
    out[pos] = x64[pos] / (1.0 + np.exp(-x64[pos]))
    ex = np.exp(x64[~pos])
    out[~pos] = x64[~pos] * ex / (1.0 + ex)
    return out.astype(np.float32)


def _prune_count(n: int, fraction: float) -> int:
    if not 0.0 <= fraction < 1.0:
        raise InputError(f"fraction must be in [0, 1), got {fraction}")
    return int(math.floor(fraction * n))


def threshold_for_fraction(values, fraction: float) -> float:
    """Cutoff below which exactly floor(fraction * len) values fall.

    Returns -inf when the fraction rounds down to zero elements. When ties
    sit at the cutoff, the count of values strictly below it can be short;
    lowest_fraction_mask resolves those ties by index.
    """
    values = np.asarray(values).ravel()
    if values.size == 0:
        raise InputError("values must be nonempty")
    k = _prune_count(values.size, fraction)
    if k == 0:
        return float("-inf")
    return float(np.partition(values, k)[k])


def lowest_k_mask(values, k: int) -> np.ndarray:
    """Boolean mask selecting the k smallest values, ties to lower index."""
    values = np.asarray(values).ravel()
    if not 0 <= k <= values.size:
        raise InputError(f"k must be in [0, {values.size}], got {k}")
    mask = np.zeros(values.size, dtype=bool)
    if k == 0:
        return mask
    if k == values.size:
        mask[:] = True
        return mask
    cutoff = np.partition(values, k)[k]
    mask[values < cutoff] = True
    short = k - int(mask.sum())
    if short > 0:
        ties = np.flatnonzero(values == cutoff)[:short]
        mask[ties] = True
    return mask


def lowest_fraction_mask(values, fraction: float) -> np.ndarray:
    """Mask of exactly floor(fraction * len) smallest values (stable ties)."""
    values = np.asarray(values).ravel()
    if values.size == 0:
        raise InputError("values must be nonempty")
    return lowest_k_mask(values, _prune_count(values.size, fraction))

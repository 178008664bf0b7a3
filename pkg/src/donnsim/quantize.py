"""Affine 8-bit quantization and image downsampling.

    quantized = quantized_min + (x - floating_min) / scale
    scale     = (floating_max - floating_min) / (2**num_bits - 1 - quantized_min)

Rounding is half-to-even (``np.rint``), then values are clamped to the
quantized range.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import UsageError


@dataclass(frozen=True)
class QuantParams:
    scale: float
    floating_min: float
    quantized_min: int = 0
    num_bits: int = 8
    degenerate: bool = False  # fit on a constant tensor; scale forced to 1

    @property
    def quantized_max(self) -> int:
        return (1 << self.num_bits) - 1

    @property
    def floating_max(self) -> float:
        return self.floating_min + (self.quantized_max - self.quantized_min) * self.scale


@dataclass
class QuantTensor:
    data: np.ndarray
    params: QuantParams

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape


def _storage_dtype(num_bits: int):
    if num_bits <= 8:
        return np.uint8
    if num_bits <= 16:
        return np.uint16
    return np.uint32


def fit_quant_params(tensor, num_bits: int = 8) -> QuantParams:
    x = np.asarray(tensor, dtype=np.float64)
    if x.size == 0:
        raise UsageError("cannot fit quantization parameters to an empty tensor")
    if not 1 <= num_bits <= 32:
        raise UsageError(f"num_bits must be in [1, 32], got {num_bits}")
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return QuantParams(scale=1.0, floating_min=lo, num_bits=num_bits, degenerate=True)
    return QuantParams(scale=(hi - lo) / ((1 << num_bits) - 1), floating_min=lo, num_bits=num_bits)


def quantize(tensor, params: QuantParams) -> QuantTensor:
    x = np.asarray(tensor, dtype=np.float64)
    if params.degenerate:
        q = np.full(x.shape, params.quantized_min, dtype=np.float64)
    else:
        q = np.rint(params.quantized_min + (x - params.floating_min) / params.scale)
    q = np.clip(q, params.quantized_min, params.quantized_max)
    return QuantTensor(q.astype(_storage_dtype(params.num_bits)), params)


def dequantize(q: QuantTensor) -> np.ndarray:
    p = q.params
    return p.floating_min + (q.data.astype(np.float64) - p.quantized_min) * p.scale


def _interp_matrix(n_in: int, n_out: int, method: str) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix resampling one axis."""
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    if method == "antialias":
        # Triangle kernel stretched by the downscale factor (PIL BILINEAR);
        # reduces to plain half-pixel bilinear when not shrinking.
        scale = n_in / n_out
        support = max(scale, 1.0)
        centers = (rows + 0.5) * scale - 0.5
        x = np.arange(n_in)
        m = np.maximum(0.0, 1.0 - np.abs(x[None, :] - centers[:, None]) / support)
        return m / m.sum(axis=1, keepdims=True)
    if method == "corners":
        pos = rows * (n_in - 1) / (n_out - 1) if n_out > 1 else np.full(1, (n_in - 1) / 2)
    elif method == "half_pixel":
        pos = np.clip((rows + 0.5) * n_in / n_out - 0.5, 0, n_in - 1)
    else:
        raise UsageError(f"unknown interpolation method {method!r}")
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    np.add.at(m, (rows, i0), 1 - frac)
    np.add.at(m, (rows, i1), frac)
    return m


def bilinear_downsample(image, target: tuple[int, int] = (7, 7), method: str = "antialias") -> np.ndarray:
    """Resample a 2-D image (or a stack of them, shape (n, rows, cols)) to ``target``.

    ``method`` is one of ``antialias`` (default), ``half_pixel`` or ``corners``.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise UsageError(f"expected a 2-D image or a stack of images, got shape {img.shape}")
    rows, cols = img.shape[-2:]
    t_rows, t_cols = target
    if not (1 <= t_rows <= rows and 1 <= t_cols <= cols):
        raise UsageError(f"target {target} must be between (1, 1) and the source size {(rows, cols)}")
    mr = _interp_matrix(rows, t_rows, method)
    mc = _interp_matrix(cols, t_cols, method)
    return np.einsum("ij,...jk,lk->...il", mr, img, mc)


def preprocess_images(images, target=(7, 7), method: str = "antialias") -> np.ndarray:
    """uint8 (n, 28, 28) -> float (n, rows*cols) in [0, 1]."""
    small = bilinear_downsample(np.asarray(images, dtype=np.float64) / 255.0, target, method)
    return small.reshape(small.shape[0], -1)

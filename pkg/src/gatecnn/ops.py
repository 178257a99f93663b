"""Shape-checked tensor operations over numpy arrays.

Tensors are C-contiguous numpy arrays laid out (channel, Doppler, time);
element (c, h, w) sits at flat offset ``(c*H + h)*W + w``.  Float ops take
float64 arrays, the ``*_fixed`` variants take int32 codes plus a
:class:`~gatecnn.fixed.FixedPointSpec`.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .fixed import FixedPointSpec, Q16_16


class DimensionError(ValueError):
    """Raised when tensor extents do not fit an operation."""


def _pair(v) -> tuple[int, int]:
    if isinstance(v, int):
        return (v, v)
    a, b = v
    return (int(a), int(b))


def _check_conv2d(x, kernel, bias, stride, padding):
    if x.ndim != 3:
        raise DimensionError(f"conv2d input must be (channel, height, width), got shape {x.shape}")
    if kernel.ndim != 4:
        raise DimensionError(f"conv2d kernel must be (out, in, kh, kw), got shape {kernel.shape}")
    if kernel.shape[1] != x.shape[0]:
        raise DimensionError(
            f"channel axis: kernel expects {kernel.shape[1]} input channels, input has {x.shape[0]}")
    if bias.shape != (kernel.shape[0],):
        raise DimensionError(f"bias axis: expected ({kernel.shape[0]},), got {bias.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1 or ph < 0 or pw < 0:
        raise DimensionError(f"invalid stride {stride} or padding {padding}")
    if x.shape[1] + 2 * ph < kernel.shape[2]:
        raise DimensionError(
            f"height axis: padded extent {x.shape[1] + 2 * ph} < kernel height {kernel.shape[2]}")
    if x.shape[2] + 2 * pw < kernel.shape[3]:
        raise DimensionError(
            f"width axis: padded extent {x.shape[2] + 2 * pw} < kernel width {kernel.shape[3]}")
    return sh, sw, ph, pw


def _check_conv1d(x, kernel, bias):
    if x.ndim != 2:
        raise DimensionError(f"conv1d_time input must be (channel, length), got shape {x.shape}")
    if kernel.ndim != 2 or kernel.shape[0] != x.shape[0]:
        raise DimensionError(
            f"channel axis: depthwise kernel must be ({x.shape[0]}, k), got {kernel.shape}")
    if kernel.shape[1] % 2 == 0:
        raise DimensionError(f"time axis: kernel width {kernel.shape[1]} is even; same padding needs odd")
    if bias.shape != (x.shape[0],):
        raise DimensionError(f"bias axis: expected ({x.shape[0]},), got {bias.shape}")


def _check_pool(x, window, stride):
    if x.ndim != 3:
        raise DimensionError(f"maxpool2d input must be (channel, height, width), got shape {x.shape}")
    wh, ww = _pair(window)
    sh, sw = _pair(stride if stride is not None else window)
    if wh < 1 or ww < 1 or sh < 1 or sw < 1:
        raise DimensionError(f"invalid window {window} or stride {stride}")
    if wh > x.shape[1]:
        raise DimensionError(f"height axis: window {wh} larger than input {x.shape[1]}")
    if ww > x.shape[2]:
        raise DimensionError(f"width axis: window {ww} larger than input {x.shape[2]}")
    return wh, ww, sh, sw


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i32(a):
    return np.ascontiguousarray(a, dtype=np.int32)


def conv2d(x, kernel, bias=None, stride=1, padding=0) -> np.ndarray:
    """Cross-correlation (no kernel flip) with zero padding."""
    x, kernel = _f64(x), _f64(kernel)
    bias = np.zeros(kernel.shape[0]) if bias is None else _f64(bias)
    sh, sw, ph, pw = _check_conv2d(x, kernel, bias, stride, padding)
    return kernels.active.conv2d_f64(x, kernel, bias, sh, sw, ph, pw)


def conv1d_time(x, kernel, bias=None) -> np.ndarray:
    """Depthwise same-padded convolution along the last axis of a (D, L) map."""
    x, kernel = _f64(x), _f64(kernel)
    bias = np.zeros(x.shape[0]) if bias is None else _f64(bias)
    _check_conv1d(x, kernel, bias)
    return kernels.active.conv1d_dw_f64(x, kernel, bias)


def maxpool2d(x, window=2, stride=None) -> np.ndarray:
    x = np.ascontiguousarray(x)
    if x.dtype != np.int32:
        x = _f64(x)
    wh, ww, sh, sw = _check_pool(x, window, stride)
    return kernels.active.maxpool2d(x, wh, ww, sh, sw)


def relu(x) -> np.ndarray:
    return np.maximum(x, 0)


def conv2d_fixed(x, kernel, bias, spec: FixedPointSpec = Q16_16, stride=1, padding=0) -> np.ndarray:
    x, kernel, bias = _i32(x), _i32(kernel), _i32(bias)
    sh, sw, ph, pw = _check_conv2d(x, kernel, bias, stride, padding)
    return kernels.active.conv2d_fx(x, kernel, bias, sh, sw, ph, pw,
                                    spec.frac_bits, spec.rounding_id, spec.overflow_id)


def conv1d_time_fixed(x, kernel, bias, spec: FixedPointSpec = Q16_16) -> np.ndarray:
    x, kernel, bias = _i32(x), _i32(kernel), _i32(bias)
    _check_conv1d(x, kernel, bias)
    return kernels.active.conv1d_dw_fx(x, kernel, bias,
                                       spec.frac_bits, spec.rounding_id, spec.overflow_id)


def gated_combine_fixed(content, gate, residual, spec: FixedPointSpec = Q16_16) -> np.ndarray:
    """``content * relu(gate) + residual`` on codes, rounded once."""
    content, gate, residual = _i32(content), _i32(gate), _i32(residual)
    if not (content.shape == gate.shape == residual.shape) or content.ndim != 2:
        raise DimensionError(
            f"gated combine needs three equal (D, L) maps, got {content.shape}, {gate.shape}, {residual.shape}")
    return kernels.active.gated_combine_fx(content, gate, residual,
                                           spec.frac_bits, spec.rounding_id, spec.overflow_id)

"""Numpy implementations of the hot kernels.

Every kernel accumulates each output element over taps in the order
(in_channel, kernel_row, kernel_col), starting from zero and adding the bias
last, so float results are bit-identical to the compiled kernels and to a
plain nested loop.
"""

import numpy as np

BACKEND = "python"

_MASK32 = np.int64(0xFFFFFFFF)
_HI_CLIP = 1 << 30


def _out_extent(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d_f64(x, w, b, sh, sw, ph, pw):
    C, H, W = x.shape
    O, _, KH, KW = w.shape
    OH = _out_extent(H, KH, sh, ph)
    OW = _out_extent(W, KW, sw, pw)
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    acc = np.zeros((O, OH, OW))
    for c in range(C):
        for i in range(KH):
            for j in range(KW):
                patch = xp[c, i:i + sh * (OH - 1) + 1:sh, j:j + sw * (OW - 1) + 1:sw]
                acc += w[:, c, i, j, None, None] * patch
    acc += b[:, None, None]
    return acc


def conv1d_dw_f64(x, w, b):
    D, L = x.shape
    K = w.shape[1]
    xp = np.pad(x, ((0, 0), (K // 2, K // 2)))
    acc = np.zeros((D, L))
    for k in range(K):
        acc += w[:, k, None] * xp[:, k:k + L]
    acc += b[:, None]
    return acc


def maxpool2d(x, wh, ww, sh, sw):
    C, H, W = x.shape
    OH = (H - wh) // sh + 1
    OW = (W - ww) // sw + 1
    out = None
    for i in range(wh):
        for j in range(ww):
            tap = x[:, i:i + sh * (OH - 1) + 1:sh, j:j + sw * (OW - 1) + 1:sw]
            out = tap.copy() if out is None else np.maximum(out, tap)
    return out


def _split_add(hi, lo, p):
    hi += p >> 32
    lo += p & _MASK32


def _renormalize_split(hi, lo, frac_bits, rounding, overflow):
    """Round ``hi * 2**32 + lo`` (scale ``2**-2f``) to int32 codes."""
    hi = hi + (lo >> 32)
    lo = lo & _MASK32
    if overflow == 0:
        # beyond +-2**30 the result saturates either way
        hi = np.clip(hi, -_HI_CLIP, _HI_CLIP)
    else:
        # wrapping only depends on the total modulo 2**(32+f)
        hi = hi & np.int64((1 << frac_bits) - 1)
    q = (hi << (32 - frac_bits)) + (lo >> frac_bits)
    if rounding == 0:
        rem = lo & np.int64((1 << frac_bits) - 1)
        half = np.int64(1 << (frac_bits - 1))
        q += (rem > half) | ((rem == half) & ((q & 1) == 1))
    if overflow == 0:
        q = np.clip(q, -(1 << 31), (1 << 31) - 1)
    else:
        q = ((q + (1 << 31)) & _MASK32) - (1 << 31)
    return q.astype(np.int32)


def conv2d_fx(x, w, b, sh, sw, ph, pw, frac_bits, rounding, overflow):
    C, H, W = x.shape
    O, _, KH, KW = w.shape
    OH = _out_extent(H, KH, sh, ph)
    OW = _out_extent(W, KW, sw, pw)
    xp = np.pad(x.astype(np.int64), ((0, 0), (ph, ph), (pw, pw)))
    w = w.astype(np.int64)
    hi = np.zeros((O, OH, OW), dtype=np.int64)
    lo = np.zeros((O, OH, OW), dtype=np.int64)
    _split_add(hi, lo, (b.astype(np.int64) << frac_bits)[:, None, None])
    for c in range(C):
        for i in range(KH):
            for j in range(KW):
                patch = xp[c, i:i + sh * (OH - 1) + 1:sh, j:j + sw * (OW - 1) + 1:sw]
                _split_add(hi, lo, w[:, c, i, j, None, None] * patch)
    return _renormalize_split(hi, lo, frac_bits, rounding, overflow)


def conv1d_dw_fx(x, w, b, frac_bits, rounding, overflow):
    D, L = x.shape
    K = w.shape[1]
    xp = np.pad(x.astype(np.int64), ((0, 0), (K // 2, K // 2)))
    w = w.astype(np.int64)
    hi = np.zeros((D, L), dtype=np.int64)
    lo = np.zeros((D, L), dtype=np.int64)
    _split_add(hi, lo, (b.astype(np.int64) << frac_bits)[:, None])
    for k in range(K):
        _split_add(hi, lo, w[:, k, None] * xp[:, k:k + L])
    return _renormalize_split(hi, lo, frac_bits, rounding, overflow)


def gated_combine_fx(content, gate, residual, frac_bits, rounding, overflow):
    """``content * relu(gate) + residual`` with a single rounding step."""
    hi = np.zeros(content.shape, dtype=np.int64)
    lo = np.zeros(content.shape, dtype=np.int64)
    _split_add(hi, lo, content.astype(np.int64) * np.maximum(gate, 0).astype(np.int64))
    _split_add(hi, lo, residual.astype(np.int64) << frac_bits)
    return _renormalize_split(hi, lo, frac_bits, rounding, overflow)

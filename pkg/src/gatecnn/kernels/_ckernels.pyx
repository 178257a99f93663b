# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same signatures and results as ``_pykernels``.

Float kernels accumulate per output element in (in_channel, row, col) tap
order from 0.0 and add the bias last. Fixed kernels accumulate in __int128.
"""

import numpy as np

BACKEND = "cython"

cdef extern from *:
    ctypedef long long i128 "__int128"

cdef long long _I32_MAX = 2147483647
cdef long long _I32_MIN = -2147483647 - 1
cdef long long _MASK32 = 0xFFFFFFFF

ctypedef fused pool_t:
    double
    int


cdef inline int _renorm(i128 acc, int f, int rounding, int overflow) nogil:
    cdef i128 q = acc >> f
    cdef i128 rem, half
    if rounding == 0:
        rem = acc - (q << f)
        half = (<i128>1) << (f - 1)
        if rem > half or (rem == half and (q & 1)):
            q += 1
    if overflow == 0:
        if q > _I32_MAX:
            return <int>_I32_MAX
        if q < _I32_MIN:
            return <int>_I32_MIN
        return <int>q
    return <int>((<long long>((q - _I32_MIN) & _MASK32)) + _I32_MIN)


def conv2d_f64(const double[:, :, ::1] x, const double[:, :, :, ::1] w,
               const double[::1] b, int sh, int sw, int ph, int pw):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t OH = (H + 2 * ph - KH) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - KW) // sw + 1
    out_arr = np.empty((O, OH, OW), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, oh, ow, c, i, j, ih, iw
    cdef double s
    with nogil:
        for o in range(O):
            for oh in range(OH):
                for ow in range(OW):
                    s = 0.0
                    for c in range(C):
                        for i in range(KH):
                            ih = oh * sh + i - ph
                            if ih < 0 or ih >= H:
                                continue
                            for j in range(KW):
                                iw = ow * sw + j - pw
                                if iw < 0 or iw >= W:
                                    continue
                                s = s + w[o, c, i, j] * x[c, ih, iw]
                    out[o, oh, ow] = s + b[o]
    return out_arr


def conv1d_dw_f64(const double[:, ::1] x, const double[:, ::1] w, const double[::1] b):
    cdef Py_ssize_t D = x.shape[0], L = x.shape[1], K = w.shape[1]
    cdef Py_ssize_t half = K // 2
    out_arr = np.empty((D, L), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t d, t, k, src
    cdef double s
    with nogil:
        for d in range(D):
            for t in range(L):
                s = 0.0
                for k in range(K):
                    src = t + k - half
                    if 0 <= src < L:
                        s = s + w[d, k] * x[d, src]
                out[d, t] = s + b[d]
    return out_arr


def maxpool2d(pool_t[:, :, ::1] x, int wh, int ww, int sh, int sw):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t OH = (H - wh) // sh + 1
    cdef Py_ssize_t OW = (W - ww) // sw + 1
    dtype = np.float64 if pool_t is double else np.int32
    out_arr = np.empty((C, OH, OW), dtype=dtype)
    cdef pool_t[:, :, ::1] out = out_arr
    cdef Py_ssize_t c, oh, ow, i, j
    cdef pool_t m, v
    with nogil:
        for c in range(C):
            for oh in range(OH):
                for ow in range(OW):
                    m = x[c, oh * sh, ow * sw]
                    for i in range(wh):
                        for j in range(ww):
                            v = x[c, oh * sh + i, ow * sw + j]
                            if v > m:
                                m = v
                    out[c, oh, ow] = m
    return out_arr


def conv2d_fx(const int[:, :, ::1] x, const int[:, :, :, ::1] w, const int[::1] b,
              int sh, int sw, int ph, int pw, int frac_bits, int rounding, int overflow):
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t OH = (H + 2 * ph - KH) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - KW) // sw + 1
    out_arr = np.empty((O, OH, OW), dtype=np.int32)
    cdef int[:, :, ::1] out = out_arr
    cdef Py_ssize_t o, oh, ow, c, i, j, ih, iw
    cdef i128 acc
    with nogil:
        for o in range(O):
            for oh in range(OH):
                for ow in range(OW):
                    acc = (<i128>b[o]) << frac_bits
                    for c in range(C):
                        for i in range(KH):
                            ih = oh * sh + i - ph
                            if ih < 0 or ih >= H:
                                continue
                            for j in range(KW):
                                iw = ow * sw + j - pw
                                if iw < 0 or iw >= W:
                                    continue
                                acc += <i128>(<long long>w[o, c, i, j] * <long long>x[c, ih, iw])
                    out[o, oh, ow] = _renorm(acc, frac_bits, rounding, overflow)
    return out_arr


def conv1d_dw_fx(const int[:, ::1] x, const int[:, ::1] w, const int[::1] b,
                 int frac_bits, int rounding, int overflow):
    cdef Py_ssize_t D = x.shape[0], L = x.shape[1], K = w.shape[1]
    cdef Py_ssize_t half = K // 2
    out_arr = np.empty((D, L), dtype=np.int32)
    cdef int[:, ::1] out = out_arr
    cdef Py_ssize_t d, t, k, src
    cdef i128 acc
    with nogil:
        for d in range(D):
            for t in range(L):
                acc = (<i128>b[d]) << frac_bits
                for k in range(K):
                    src = t + k - half
                    if 0 <= src < L:
                        acc += <i128>(<long long>w[d, k] * <long long>x[d, src])
                out[d, t] = _renorm(acc, frac_bits, rounding, overflow)
    return out_arr


def gated_combine_fx(const int[:, ::1] content, const int[:, ::1] gate,
                     const int[:, ::1] residual, int frac_bits, int rounding, int overflow):
    cdef Py_ssize_t D = content.shape[0], L = content.shape[1]
    out_arr = np.empty((D, L), dtype=np.int32)
    cdef int[:, ::1] out = out_arr
    cdef Py_ssize_t d, t
    cdef long long g
    cdef i128 acc
    with nogil:
        for d in range(D):
            for t in range(L):
                g = gate[d, t]
                if g < 0:
                    g = 0
                acc = <i128>(<long long>content[d, t] * g)
                acc += (<i128>residual[d, t]) << frac_bits
                out[d, t] = _renorm(acc, frac_bits, rounding, overflow)
    return out_arr

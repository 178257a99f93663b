"""32-bit fixed-point number format and scalar arithmetic.

A code ``q`` under a :class:`FixedPointSpec` with ``f`` fraction bits stands
for the real value ``q * 2**-f``.  Products of two codes live in a wide
accumulator at scale ``2**-2f``; :func:`renormalize` rounds such an
accumulator back to ``f`` fraction bits exactly once.

Accumulator width
-----------------
Codes satisfy ``|q| <= 2**31`` so one product is bounded by ``2**62``.  A
dot product of ``n`` terms needs ``62 + ceil(log2 n)`` bits plus sign, which
exceeds 64 bits as soon as ``n > 1``.  Two strategies are used, both exact:

* scalar helpers here accumulate in Python ``int`` (unbounded);
* the compiled kernels accumulate in ``__int128``;
* the numpy fallback splits every product ``p = hi * 2**32 + lo`` with
  ``0 <= lo < 2**32`` and keeps two int64 sums.  With ``n <= 2**20`` terms the
  ``lo`` sum stays below ``2**52`` and the ``hi`` sum below ``2**51``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROUNDING_MODES = ("nearest-even", "truncate")
OVERFLOW_MODES = ("saturate", "wrap")


@dataclass(frozen=True)
class FixedPointSpec:
    """Q-format contract: ``total_bits`` wide with ``frac_bits`` fraction bits.

    ``truncate`` rounds toward negative infinity (drop low bits), which is
    what an arithmetic right shift does in hardware.
    """

    total_bits: int = 32
    frac_bits: int = 16
    rounding: str = "nearest-even"
    overflow: str = "saturate"

    def __post_init__(self):
        if self.total_bits != 32:
            raise ValueError(f"only 32-bit formats are supported, got {self.total_bits}")
        if not 1 <= self.frac_bits <= 30:
            raise ValueError(f"frac_bits must be in [1, 30], got {self.frac_bits}")
        if self.rounding not in ROUNDING_MODES:
            raise ValueError(f"unknown rounding mode {self.rounding!r}")
        if self.overflow not in OVERFLOW_MODES:
            raise ValueError(f"unknown overflow mode {self.overflow!r}")

    @property
    def int_bits(self) -> int:
        return self.total_bits - self.frac_bits

    @property
    def min_code(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_code(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return self.min_code * self.lsb

    @property
    def max_value(self) -> float:
        return self.max_code * self.lsb

    @property
    def rounding_id(self) -> int:
        return ROUNDING_MODES.index(self.rounding)

    @property
    def overflow_id(self) -> int:
        return OVERFLOW_MODES.index(self.overflow)

    def describe(self) -> str:
        return f"Q{self.int_bits}.{self.frac_bits}"


Q16_16 = FixedPointSpec()


def _fit(code: int, spec: FixedPointSpec) -> int:
    if spec.overflow == "saturate":
        return min(max(code, spec.min_code), spec.max_code)
    span = 1 << spec.total_bits
    return ((code - spec.min_code) % span) + spec.min_code


@dataclass(frozen=True)
class FixedScalar:
    code: int
    spec: FixedPointSpec = Q16_16

    @property
    def value(self) -> float:
        return self.code * self.spec.lsb

    def __add__(self, other: FixedScalar) -> FixedScalar:
        _check_same(self, other)
        return FixedScalar(_fit(self.code + other.code, self.spec), self.spec)

    def __sub__(self, other: FixedScalar) -> FixedScalar:
        _check_same(self, other)
        return FixedScalar(_fit(self.code - other.code, self.spec), self.spec)

    def __mul__(self, other: FixedScalar) -> FixedScalar:
        _check_same(self, other)
        return renormalize(self.code * other.code, self.spec)

    def __float__(self) -> float:
        return self.value


def _check_same(a: FixedScalar, b: FixedScalar) -> None:
    if a.spec != b.spec:
        raise ValueError(f"mixed fixed-point formats {a.spec.describe()} and {b.spec.describe()}")


def quantize_array(x, spec: FixedPointSpec = Q16_16) -> np.ndarray:
    """Quantize an array of reals to int32 codes. NaN maps to code 0."""
    x = np.asarray(x, dtype=np.float64)
    # scaling by a power of two is exact in float64; huge inputs go to inf and then saturate
    with np.errstate(over="ignore"):
        scaled = np.nan_to_num(x * float(1 << spec.frac_bits), nan=0.0)
    if spec.rounding == "nearest-even":
        r = np.rint(scaled)
    else:
        r = np.floor(scaled)
    if spec.overflow == "saturate":
        r = np.clip(r, spec.min_code, spec.max_code)
    else:
        r = np.where(np.isfinite(r), r, 0.0)
        span = float(1 << spec.total_bits)
        r = np.mod(r - spec.min_code, span) + spec.min_code
    return r.astype(np.int32)


def dequantize_array(codes, spec: FixedPointSpec = Q16_16) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) * spec.lsb


def quantize(x: float, spec: FixedPointSpec = Q16_16) -> FixedScalar:
    """Nearest representable code under ``spec`` (total; out-of-range inputs saturate or wrap)."""
    return FixedScalar(int(quantize_array(x, spec)), spec)


def dequantize(q: FixedScalar) -> float:
    return q.value


def fixed_mac(acc: int, a: FixedScalar, b: FixedScalar) -> int:
    """``acc + a*b`` in the double-width ``2*frac_bits`` scale, exactly."""
    _check_same(a, b)
    return acc + a.code * b.code


def renormalize(acc: int, spec: FixedPointSpec = Q16_16) -> FixedScalar:
    """Round a ``2*frac_bits``-scale accumulator back to a ``frac_bits`` code."""
    f = spec.frac_bits
    q = acc >> f
    if spec.rounding == "nearest-even":
        rem = acc - (q << f)
        half = 1 << (f - 1)
        if rem > half or (rem == half and q & 1):
            q += 1
    return FixedScalar(_fit(q, spec), spec)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatecnn.fixed import (
    FixedPointSpec, FixedScalar, Q16_16, dequantize, dequantize_array, fixed_mac, quantize,
    quantize_array, renormalize,
)
from oracles import int_round


def test_spec_range():
    assert Q16_16.min_value == -32768.0
    assert Q16_16.max_value == 32768.0 - 2.0 ** -16
    assert Q16_16.describe() == "Q16.16"


@pytest.mark.parametrize("kwargs", [
    {"total_bits": 16}, {"frac_bits": 0}, {"frac_bits": 31}, {"rounding": "up"}, {"overflow": "clamp"},
])
def test_spec_rejects_invalid(kwargs):
    with pytest.raises(ValueError):
        FixedPointSpec(**kwargs)


def test_quantize_examples():
    assert quantize(0.0).code == 0
    assert quantize(1.0).code == 65536


def test_quantize_point_one_picks_nearer_neighbour():
    scaled = 0.1 * 65536
    lo, hi = math.floor(scaled), math.ceil(scaled)
    nearer = lo if scaled - lo < hi - scaled else hi
    assert (lo, hi, nearer) == (6553, 6554, 6554)
    assert quantize(0.1).code == nearer


def test_nearest_even_ties():
    lsb = 2.0 ** -16
    assert quantize(0.5 * lsb).code == 0
    assert quantize(1.5 * lsb).code == 2
    assert quantize(2.5 * lsb).code == 2
    assert quantize(-0.5 * lsb).code == 0


def test_truncate_rounds_down():
    spec = FixedPointSpec(rounding="truncate")
    lsb = spec.lsb
    assert quantize(1.9 * lsb, spec).code == 1
    assert quantize(-0.1 * lsb, spec).code == -1


def test_saturation_and_wrap():
    assert quantize(1e9).code == Q16_16.max_code
    assert quantize(-1e9).code == Q16_16.min_code
    assert quantize(float("inf")).code == Q16_16.max_code
    wrap = FixedPointSpec(overflow="wrap")
    assert quantize(32768.0, wrap).code == Q16_16.min_code
    assert quantize(32769.0, wrap).code == Q16_16.min_code + 65536


def test_nan_maps_to_zero():
    assert quantize(float("nan")).code == 0


@given(st.integers(min_value=-(2**31), max_value=2**31 - 1), st.integers(min_value=1, max_value=30))
def test_code_round_trip(code, frac):
    spec = FixedPointSpec(frac_bits=frac)
    assert quantize(dequantize(FixedScalar(code, spec)), spec).code == code


@given(st.floats(min_value=-32768.0, max_value=32767.99, allow_nan=False))
def test_round_trip_error_bound(x):
    err = dequantize(quantize(x)) - x
    assert -(2.0 ** -17) <= err <= 2.0 ** -17


@given(st.floats(allow_nan=False), st.floats(allow_nan=False))
def test_quantize_monotone(x, y):
    if x > y:
        x, y = y, x
    assert quantize(x).code <= quantize(y).code


def test_vector_matches_scalar(rng):
    x = rng.uniform(-40000, 40000, 500)
    codes = quantize_array(x)
    assert codes.dtype == np.int32
    assert [quantize(v).code for v in x] == codes.tolist()
    assert np.array_equal(dequantize_array(codes), codes * 2.0 ** -16)


def test_fixed_mac_examples():
    one, half = quantize(1.0), quantize(0.5)
    assert renormalize(fixed_mac(0, one, one)).value == 1.0
    assert renormalize(fixed_mac(0, half, half)).value == 0.25


def test_dot_product_matches_float(rng):
    for _ in range(50):
        a, b = rng.uniform(-4, 4, 16), rng.uniform(-4, 4, 16)
        qa, qb = [quantize(v) for v in a], [quantize(v) for v in b]
        acc = 0
        for x, y in zip(qa, qb):
            acc = fixed_mac(acc, x, y)
        ref = float(np.dot(dequantize_array([q.code for q in qa]), dequantize_array([q.code for q in qb])))
        assert abs(renormalize(acc).value - ref) <= 2.0 ** -16 * 16


@given(st.integers(min_value=-(2**75), max_value=2**75), st.integers(min_value=1, max_value=30),
       st.sampled_from(["nearest-even", "truncate"]), st.sampled_from(["saturate", "wrap"]))
def test_renormalize_matches_rational_oracle(acc, frac, rounding, overflow):
    spec = FixedPointSpec(frac_bits=frac, rounding=rounding, overflow=overflow)
    assert renormalize(acc, spec).code == int_round(acc, frac, rounding, overflow)


@settings(max_examples=200)
@given(st.integers(min_value=-(2**31), max_value=2**31 - 1),
       st.integers(min_value=-(2**31), max_value=2**31 - 1))
def test_saturating_add_mul_stay_in_range(a, b):
    x, y = FixedScalar(a), FixedScalar(b)
    for r in (x + y, x - y, x * y):
        assert Q16_16.min_code <= r.code <= Q16_16.max_code
    assert (x + y).code == max(min(a + b, Q16_16.max_code), Q16_16.min_code)


def test_mixed_formats_rejected():
    with pytest.raises(ValueError):
        FixedScalar(1) + FixedScalar(1, FixedPointSpec(frac_bits=8))

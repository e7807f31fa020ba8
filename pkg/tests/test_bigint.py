import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppadmm import bigint as bi

bases = st.sampled_from(bi.SUPPORTED_BASES)
naturals = st.integers(min_value=0, max_value=(1 << 4096) - 1)


@given(naturals, bases)
def test_limb_round_trip(value, base):
    x = bi.to_limbs(value, base)
    assert bi.from_limbs(x) == value
    assert int(x.limbs.max()) < base and int(x.limbs.min()) >= 0
    assert len(x) == 1 or x.limbs[-1] != 0


@given(naturals, bases, bases)
def test_rebase_preserves_value(value, b1, b2):
    assert int(bi.to_limbs(value, b1).rebase(b2)) == value


def test_decimal_round_trip():
    text = "123456789012345678901234567890"
    assert bi.BigNat.from_decimal(text).to_decimal() == text


def test_unsupported_base():
    with pytest.raises(bi.UnsupportedBaseError):
        bi.to_limbs(5, 10)


def test_negative_rejected():
    with pytest.raises(ValueError):
        bi.to_limbs(-1)


@given(naturals)
def test_wire_round_trip(value):
    buf = bi.encode_wire(value)
    assert bi.decode_wire(buf) == (value, len(buf))


def test_wire_rejects_padding():
    with pytest.raises(ValueError):
        bi.decode_wire(b"\x00\x00\x00\x02\x00\x01")


@settings(max_examples=200)
@given(naturals, naturals, bases)
def test_fft_mul_matches_integer_product(a, b, base):
    x, y = bi.to_limbs(a, base), bi.to_limbs(b, base)
    assert int(bi.fft_mul(x, y)) == a * b
    assert bi.fft_mul(x, y) == bi.schoolbook_mul(x, y)


def test_fft_mul_zero_and_one():
    x = bi.to_limbs(12345)
    assert int(bi.fft_mul(x, bi.to_limbs(0))) == 0
    assert int(bi.fft_mul(x, bi.to_limbs(1))) == 12345


def test_precision_fault_falls_back(monkeypatch):
    monkeypatch.setattr(bi, "PRECISION_LIMIT", -1.0)
    x, y = bi.to_limbs(3 ** 200), bi.to_limbs(7 ** 150)
    with pytest.raises(bi.PrecisionFault):
        bi.fft_mul(x, y)
    assert int(bi.multiply(x, y)) == 3 ** 200 * 7 ** 150


def test_fft_plan_round_trip():
    plan = bi.FftPlan.create(16)
    vals = np.arange(16, dtype=float)
    assert np.allclose(plan.inverse(plan.forward(vals)).real, vals)


@settings(max_examples=200)
@given(st.integers(min_value=2, max_value=(1 << 2048) - 1), st.data(), bases)
def test_barrett_matches_remainder(modulus, data, base):
    a = data.draw(st.integers(min_value=0, max_value=modulus * modulus - 1))
    ctx = bi.BarrettCtx.create(modulus, base)
    assert int(bi.barrett_reduce(bi.to_limbs(a, base), ctx)) == a % modulus


def test_barrett_reciprocal_invariant():
    n = (1 << 1000) + 297
    ctx = bi.BarrettCtx.create(n)
    b = ctx.base
    assert int(ctx.R) * n <= b ** (2 * ctx.length) < (int(ctx.R) + 1) * n


def test_barrett_rejects_oversized_input():
    ctx = bi.BarrettCtx.create(1009)
    with pytest.raises(ValueError):
        bi.barrett_reduce(bi.to_limbs(1009 * 1009), ctx)


def test_mod_exp_oracle():
    counter = bi.MulCounter()
    assert int(bi.mod_exp(2, 10, bi.BarrettCtx.create(1000), counter)) == 24
    # exponent 0b1010: three squarings and two multiplies
    assert counter.count == 5


def test_mod_exp_edge_cases():
    ctx = bi.BarrettCtx.create(97)
    assert int(bi.mod_exp(5, 0, ctx)) == 1
    assert int(bi.mod_exp(0, 5, ctx)) == 0
    assert bi.powmod(3, 5, 1) == 0
    with pytest.raises(ValueError):
        bi.mod_exp(100, 2, ctx)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=2, max_value=(1 << 1024) - 1), st.data())
def test_mod_exp_matches_pow(modulus, data):
    g = data.draw(st.integers(min_value=0, max_value=modulus - 1))
    m = data.draw(st.integers(min_value=0, max_value=(1 << 96) - 1))
    assert int(bi.mod_exp(g, m, bi.BarrettCtx.create(modulus))) == pow(g, m, modulus)


@pytest.mark.parametrize("workers", [1, 4])
def test_parallel_mod_exp_order(workers):
    rng = random.Random(3)
    n = rng.getrandbits(512) | 1
    gs = [rng.randrange(n) for _ in range(12)]
    ms = [rng.getrandbits(64) for _ in range(12)]
    out = bi.parallel_mod_exp(gs, ms, bi.BarrettCtx.create(n), workers)
    assert [int(r) for r in out] == [pow(g, m, n) for g, m in zip(gs, ms)]


def test_parallel_mod_exp_length_mismatch():
    with pytest.raises(ValueError):
        bi.parallel_mod_exp([1, 2], [3], bi.BarrettCtx.create(7))

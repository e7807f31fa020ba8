"""Unsigned big integers held as little-endian digit vectors.

Digits live in a numpy ``int64`` array in a power-of-two base so that
convolution, carry propagation and comparison are vectorised.  Products go
through a hand-rolled radix-2 complex FFT; reduction modulo a fixed modulus
uses Barrett's reciprocal trick, and the two together drive a right-to-left
square-and-multiply exponentiation.
"""
from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np

SUPPORTED_BASES = (2, 4, 16, 256, 65536)
# largest pre-rounding residue tolerated after the inverse transform
PRECISION_LIMIT = 0.25

IntLike = Union[int, "BigNat"]


class UnsupportedBaseError(ValueError):
    pass


class PrecisionFault(ArithmeticError):
    """Raised when an FFT product cannot be rounded back to exact digits."""

    def __init__(self, residue: float):
        super().__init__(f"FFT rounding residue {residue:.3g} exceeds {PRECISION_LIMIT}")
        self.residue = residue


def _digit_bits(base: int) -> int:
    if base not in SUPPORTED_BASES:
        raise UnsupportedBaseError(f"base {base} not in {SUPPORTED_BASES}")
    return base.bit_length() - 1


def default_base(modulus_bits: int) -> int:
    """Digit base keeping worst-case convolution terms well inside a double."""
    return 65536 if modulus_bits <= 4096 else 256


def _trim(limbs: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(limbs)
    if nz.size == 0:
        return np.zeros(1, dtype=np.int64)
    return limbs[: nz[-1] + 1]


@dataclass(frozen=True, eq=False)
class BigNat:
    limbs: np.ndarray
    base: int = 65536

    def __post_init__(self):
        _digit_bits(self.base)
        arr = np.ascontiguousarray(self.limbs, dtype=np.int64)
        arr.setflags(write=False)
        object.__setattr__(self, "limbs", arr)

    @classmethod
    def from_int(cls, value: int, base: int = 65536) -> "BigNat":
        return to_limbs(value, base)

    @classmethod
    def from_decimal(cls, text: str, base: int = 65536) -> "BigNat":
        return to_limbs(int(text.strip(), 10), base)

    def to_decimal(self) -> str:
        return str(from_limbs(self))

    def __int__(self) -> int:
        return from_limbs(self)

    def __index__(self) -> int:
        return from_limbs(self)

    def __len__(self) -> int:
        return int(self.limbs.size)

    def __eq__(self, other) -> bool:
        if isinstance(other, BigNat):
            return self.base == other.base and np.array_equal(self.limbs, other.limbs)
        if isinstance(other, int):
            return from_limbs(self) == other
        return NotImplemented

    def __hash__(self) -> int:
        return hash((self.base, self.limbs.tobytes()))

    def __repr__(self) -> str:
        return f"BigNat({from_limbs(self)}, base={self.base})"

    def is_zero(self) -> bool:
        return self.limbs.size == 1 and self.limbs[0] == 0

    def bit_length(self) -> int:
        if self.is_zero():
            return 0
        bits = _digit_bits(self.base)
        return (len(self) - 1) * bits + int(self.limbs[-1]).bit_length()

    def rebase(self, base: int) -> "BigNat":
        return self if base == self.base else to_limbs(from_limbs(self), base)

    def to_wire(self) -> bytes:
        return encode_wire(from_limbs(self))


def to_limbs(value: int, base: int = 65536) -> BigNat:
    """Split ``value`` into minimal little-endian digits in ``base``."""
    bits = _digit_bits(base)
    value = int(value)
    if value < 0:
        raise ValueError("BigNat holds nonnegative integers only")
    if value == 0:
        return BigNat(np.zeros(1, dtype=np.int64), base)
    nbytes = (value.bit_length() + 7) // 8
    if bits == 16:
        nbytes += nbytes & 1
    raw = np.frombuffer(value.to_bytes(nbytes, "little"), dtype=np.uint8)
    if bits == 16:
        limbs = raw.view("<u2").astype(np.int64)
    elif bits == 8:
        limbs = raw.astype(np.int64)
    else:
        shifts = np.arange(8 // bits, dtype=np.int64) * bits
        limbs = ((raw.astype(np.int64)[:, None] >> shifts) & (base - 1)).ravel()
    return BigNat(_trim(limbs), base)


def from_limbs(x: BigNat) -> int:
    bits = _digit_bits(x.base)
    limbs = x.limbs
    if bits == 16:
        data = limbs.astype("<u2").tobytes()
    elif bits == 8:
        data = limbs.astype(np.uint8).tobytes()
    else:
        per = 8 // bits
        pad = (-limbs.size) % per
        grouped = np.concatenate([limbs, np.zeros(pad, dtype=np.int64)]).reshape(-1, per)
        shifts = np.arange(per, dtype=np.int64) * bits
        data = (grouped << shifts).sum(axis=1).astype(np.uint8).tobytes()
    return int.from_bytes(data, "little")


# ---------------------------------------------------------------- wire format

def encode_wire(value: int) -> bytes:
    """4-byte big-endian byte count followed by the minimal big-endian magnitude."""
    if value < 0:
        raise ValueError("negative values have no wire form")
    body = value.to_bytes((value.bit_length() + 7) // 8, "big")
    return struct.pack("!I", len(body)) + body


def decode_wire(buf: bytes, offset: int = 0) -> Tuple[int, int]:
    """Inverse of :func:`encode_wire`; returns ``(value, next_offset)``."""
    if len(buf) - offset < 4:
        raise ValueError("truncated BigNat length prefix")
    (size,) = struct.unpack_from("!I", buf, offset)
    start = offset + 4
    if len(buf) - start < size:
        raise ValueError("truncated BigNat magnitude")
    body = bytes(buf[start:start + size])
    if size and body[0] == 0:
        raise ValueError("non-minimal BigNat magnitude")
    return int.from_bytes(body, "big"), start + size


# ------------------------------------------------------------ carry handling

def _normalize(coeffs: np.ndarray, base: int) -> np.ndarray:
    """Propagate carries low-to-high so every digit is below ``base``.

    ``coeffs`` must be nonnegative.  Bulk carries are split off in vectorised
    rounds; once every pending carry is a single unit the remaining ripple is
    resolved with a generate/propagate scan instead of a Python loop.
    """
    bits = _digit_bits(base)
    mask = base - 1
    if coeffs.size == 0:
        return np.zeros(1, dtype=np.int64)
    top = int(coeffs.max())
    if top < base:
        return _trim(coeffs.astype(np.int64, copy=True))
    room = (top.bit_length() + bits - 1) // bits + 1
    c = np.concatenate([coeffs.astype(np.int64), np.zeros(room, dtype=np.int64)])
    while True:
        high = c >> bits
        peak = int(high.max())
        if peak == 0:
            return _trim(c)
        c &= mask
        c[1:] += high[:-1]
        if peak == 1:
            break
    # every digit is now in [0, base]; carries are 0/1
    gen = c == base
    prop = c == mask
    idx = np.where(prop, -1, np.arange(c.size))
    last = np.maximum.accumulate(idx)
    carry_out = np.where(last >= 0, gen[np.maximum(last, 0)], False)
    c[1:] += carry_out[:-1]
    return _trim(c & mask)


def _compare(a: BigNat, b: BigNat) -> int:
    if len(a) != len(b):
        return 1 if len(a) > len(b) else -1
    diff = np.flatnonzero(a.limbs != b.limbs)
    if diff.size == 0:
        return 0
    i = diff[-1]
    return 1 if a.limbs[i] > b.limbs[i] else -1


def _sub(a: BigNat, b: BigNat) -> BigNat:
    """a - b for a >= b, via complement addition (carries only, no borrows)."""
    size = len(a)
    mask = a.base - 1
    comp = np.full(size, mask, dtype=np.int64)
    comp[: len(b)] -= b.limbs
    c = a.limbs + comp
    c[0] += 1
    out = _normalize(c, a.base)
    # drop the base**size overflow digit introduced by the complement
    out = out[:size] if out.size > size else out
    return BigNat(_trim(out.copy()), a.base)


def _shift_down(a: BigNat, count: int) -> BigNat:
    if len(a) <= count:
        return BigNat(np.zeros(1, dtype=np.int64), a.base)
    return BigNat(a.limbs[count:], a.base)


# ------------------------------------------------------------------------ FFT

@dataclass(frozen=True, eq=False)
class FftPlan:
    """Precomputed twiddles and bit-reversal order for one transform length."""

    length: int
    roots: np.ndarray
    inverse_roots: np.ndarray
    bitrev: np.ndarray

    @classmethod
    def create(cls, length: int) -> "FftPlan":
        if length < 1 or length & (length - 1):
            raise ValueError(f"FFT length {length} is not a power of two")
        k = np.arange(length // 2)
        roots = np.exp(-2j * np.pi * k / length)
        logn = length.bit_length() - 1
        idx = np.arange(length)
        rev = np.zeros(length, dtype=np.int64)
        for i in range(logn):
            rev |= ((idx >> i) & 1) << (logn - 1 - i)
        return cls(length, roots, np.conj(roots), rev)

    @staticmethod
    def for_sizes(na: int, nb: int) -> "FftPlan":
        need = na + nb
        return plan_of_length(1 << max(need - 1, 0).bit_length())

    def _run(self, values: np.ndarray, roots: np.ndarray) -> np.ndarray:
        n = self.length
        a = np.zeros(n, dtype=np.complex128)
        a[: values.size] = values
        a = a[self.bitrev]
        half = 1
        while half < n:
            w = roots[:: n // (2 * half)]
            blocks = a.reshape(-1, 2 * half)
            even = blocks[:, :half]
            odd = blocks[:, half:] * w
            a = np.concatenate((even + odd, even - odd), axis=1).ravel()
            half *= 2
        return a

    def forward(self, values: np.ndarray) -> np.ndarray:
        return self._run(values, self.roots)

    def inverse(self, spectrum: np.ndarray) -> np.ndarray:
        return self._run(spectrum, self.inverse_roots) / self.length


@lru_cache(maxsize=64)
def plan_of_length(length: int) -> FftPlan:
    return FftPlan.create(length)


def _round_exact(values: np.ndarray) -> np.ndarray:
    rounded = np.rint(values)
    residue = float(np.abs(values - rounded).max()) if values.size else 0.0
    if residue > PRECISION_LIMIT:
        raise PrecisionFault(residue)
    return rounded.astype(np.int64)


def _zero(base: int) -> BigNat:
    return BigNat(np.zeros(1, dtype=np.int64), base)


def _product_from_spectrum(spec: np.ndarray, size: int, plan: FftPlan, base: int) -> BigNat:
    coeffs = _round_exact(plan.inverse(spec).real[:size])
    # rounding noise can make an exact zero come out as -0 or tiny negatives
    np.maximum(coeffs, 0, out=coeffs)
    return BigNat(_normalize(coeffs, base), base)


def fft_mul(a: BigNat, b: BigNat, plan: Optional[FftPlan] = None) -> BigNat:
    """Exact product by forward transforms, pointwise product, inverse transform."""
    if a.base != b.base:
        raise ValueError("operands use different bases")
    if a.is_zero() or b.is_zero():
        return _zero(a.base)
    size = len(a) + len(b) - 1
    if plan is None:
        plan = FftPlan.for_sizes(len(a), len(b))
    elif plan.length < len(a) + len(b):
        raise ValueError(f"plan length {plan.length} too short for {len(a)}+{len(b)} limbs")
    fa = plan.forward(a.limbs)
    fb = fa if b is a else plan.forward(b.limbs)
    return _product_from_spectrum(fa * fb, size, plan, a.base)


def schoolbook_mul(a: BigNat, b: BigNat) -> BigNat:
    """Direct O(L^2) digit convolution; the fallback when FFT rounding faults."""
    if a.base != b.base:
        raise ValueError("operands use different bases")
    if a.is_zero() or b.is_zero():
        return _zero(a.base)
    return BigNat(_normalize(np.convolve(a.limbs, b.limbs), a.base), a.base)


def multiply(a: BigNat, b: BigNat) -> BigNat:
    try:
        return fft_mul(a, b)
    except PrecisionFault:
        return schoolbook_mul(a, b)


# -------------------------------------------------------------------- Barrett

@dataclass(frozen=True, eq=False)
class _Spectrum:
    plan: FftPlan
    values: np.ndarray
    limbs: int


@dataclass(frozen=True, eq=False)
class BarrettCtx:
    modulus: BigNat
    length: int
    R: BigNat
    modulus_squared: BigNat
    _r_spec: _Spectrum
    _mod_spec: _Spectrum

    @classmethod
    def create(cls, modulus: IntLike, base: Optional[int] = None) -> "BarrettCtx":
        value = int(modulus)
        if value < 1:
            raise ValueError("modulus must be positive")
        if base is None:
            base = modulus.base if isinstance(modulus, BigNat) else default_base(value.bit_length())
        mod = to_limbs(value, base)
        length = len(mod)
        recip = to_limbs(base ** (2 * length) // value, base)
        # a < base**(2*length) so a*R needs 2*length + len(R) digits
        r_plan = FftPlan.for_sizes(2 * length, len(recip))
        # the quotient estimate has at most length + 1 digits
        m_plan = FftPlan.for_sizes(length + 1, length)
        return cls(
            modulus=mod,
            length=length,
            R=recip,
            modulus_squared=to_limbs(value * value, base),
            _r_spec=_Spectrum(r_plan, r_plan.forward(recip.limbs), len(recip)),
            _mod_spec=_Spectrum(m_plan, m_plan.forward(mod.limbs), length),
        )

    @property
    def base(self) -> int:
        return self.modulus.base


def _mul_cached(a: BigNat, cached: _Spectrum, other: BigNat) -> BigNat:
    if a.is_zero():
        return _zero(a.base)
    size = len(a) + cached.limbs - 1
    try:
        spec = cached.plan.forward(a.limbs) * cached.values
        return _product_from_spectrum(spec, size, cached.plan, a.base)
    except PrecisionFault:
        return schoolbook_mul(a, other)


def barrett_reduce(a: BigNat, ctx: BarrettCtx) -> BigNat:
    """a mod n for a < n**2, using only products, digit shifts and subtraction."""
    if a.base != ctx.base:
        a = a.rebase(ctx.base)
    if len(a) > 2 * ctx.length or _compare(a, ctx.modulus_squared) >= 0:
        raise ValueError("barrett_reduce requires a < modulus**2")
    if _compare(a, ctx.modulus) < 0:
        return a
    q = _shift_down(_mul_cached(a, ctx._r_spec, ctx.R), 2 * ctx.length)
    qn = _mul_cached(q, ctx._mod_spec, ctx.modulus)
    r = _sub(a, qn)
    steps = 0
    while _compare(r, ctx.modulus) >= 0:
        r = _sub(r, ctx.modulus)
        steps += 1
        if steps > 2:  # pragma: no cover - excluded by the quotient error bound
            raise AssertionError("Barrett correction exceeded two subtractions")
    return r


# --------------------------------------------------------------------- ModExp

@dataclass
class MulCounter:
    """Counts modular multiplications performed by :func:`mod_exp`."""

    count: int = 0


def _mulmod(a: BigNat, b: BigNat, ctx: BarrettCtx) -> BigNat:
    return barrett_reduce(multiply(a, b), ctx)


def mod_exp(g: IntLike, m: IntLike, ctx: BarrettCtx,
            counter: Optional[MulCounter] = None) -> BigNat:
    """g**m mod n by right-to-left binary square-and-multiply."""
    gb = g.rebase(ctx.base) if isinstance(g, BigNat) else to_limbs(int(g), ctx.base)
    if _compare(gb, ctx.modulus) >= 0:
        raise ValueError("base must be reduced below the modulus")
    exponent = int(m)
    if exponent < 0:
        raise ValueError("exponent must be nonnegative")
    one = to_limbs(1 % int(ctx.modulus), ctx.base)
    result = one
    power = gb
    nbits = exponent.bit_length()
    muls = 0
    for i in range(nbits):
        if (exponent >> i) & 1:
            result = _mulmod(result, power, ctx)
            muls += 1
        if i + 1 < nbits:
            power = _mulmod(power, power, ctx)
            muls += 1
    if counter is not None:
        counter.count += muls
    return result


def parallel_mod_exp(gs: Sequence[IntLike], ms: Sequence[IntLike], ctx: BarrettCtx,
                     workers: Optional[int] = None,
                     counter: Optional[MulCounter] = None) -> list:
    """Element-wise mod_exp; results come back in input order whatever the worker count."""
    if len(gs) != len(ms):
        raise ValueError(f"length mismatch: {len(gs)} bases vs {len(ms)} exponents")
    if not gs:
        return []
    workers = workers or os.cpu_count() or 1
    counters = [MulCounter() for _ in gs]

    def one(i: int) -> BigNat:
        return mod_exp(gs[i], ms[i], ctx, counters[i])

    if workers == 1:
        out = [one(i) for i in range(len(gs))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, range(len(gs))))
    if counter is not None:
        counter.count += sum(c.count for c in counters)
    return out


@lru_cache(maxsize=32)
def barrett_context(modulus: int, base: Optional[int] = None) -> BarrettCtx:
    return BarrettCtx.create(modulus, base)


def powmod(g: int, m: int, modulus: int, counter: Optional[MulCounter] = None) -> int:
    """Integer convenience wrapper around :func:`mod_exp` with a cached context."""
    if modulus == 1:
        return 0
    ctx = barrett_context(modulus)
    return int(mod_exp(g % modulus, m, ctx, counter))

"""Affine maps from a real interval to nonnegative integers and back.

One global bound pair ``[z_min, z_max]`` is shared by every quantizer so the
combined update can be decoded with a single closed-form correction.  Scaling
and rounding are done in exact rational arithmetic; floats enter only as the
exact binary fractions they already are.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_DELTA = 10 ** 15


class DegenerateRangeError(ValueError):
    pass


@dataclass
class ClampStats:
    """Running count of entries clipped into the quantization range."""

    clamped: int = 0
    seen: int = 0


@dataclass(frozen=True)
class QuantSpec:
    delta: int
    z_min: float
    z_max: float

    def __post_init__(self):
        if int(self.delta) != self.delta or self.delta <= 0:
            raise ValueError("delta must be a positive integer")
        object.__setattr__(self, "delta", int(self.delta))
        if not self.z_min < self.z_max:
            raise DegenerateRangeError(f"empty range [{self.z_min}, {self.z_max}]")

    @property
    def width(self) -> Fraction:
        return Fraction(self.z_max) - Fraction(self.z_min)

    @property
    def linear_max(self) -> int:
        return self.delta

    @property
    def squared_max(self) -> int:
        return round_half_away(Fraction(self.delta ** 2) / self.width)

    @classmethod
    def around(cls, values: Sequence[float], delta: int = DEFAULT_DELTA,
               margin: float = 4.0) -> "QuantSpec":
        """Bounds centred on the data's range, widened by ``margin``."""
        arr = np.asarray(values, dtype=float)
        lo, hi = float(arr.min()), float(arr.max())
        mid, half = (lo + hi) / 2, max((hi - lo) / 2, 1e-12) * margin
        return cls(delta, mid - half, mid + half)


def round_half_away(x: Fraction) -> int:
    """Nearest integer, ties away from zero."""
    if x >= 0:
        return (2 * x.numerator + x.denominator) // (2 * x.denominator)
    return -((-2 * x.numerator + x.denominator) // (2 * x.denominator))


def _scaled(values, spec: QuantSpec, factor: Fraction, stats: Optional[ClampStats]) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("cannot quantize NaN")
    clipped = np.clip(arr, spec.z_min, spec.z_max)
    n_clamped = int(np.count_nonzero(clipped != arr))
    if stats is not None:
        stats.clamped += n_clamped
        stats.seen += arr.size
    if n_clamped:
        log.warning("clamped %d of %d entries into [%g, %g]", n_clamped, arr.size,
                    spec.z_min, spec.z_max)
    lo = Fraction(spec.z_min)
    out = np.empty(arr.shape, dtype=object)
    flat = out.reshape(-1)
    for i, v in enumerate(clipped.reshape(-1).tolist()):
        flat[i] = round_half_away((Fraction(v) - lo) * factor)
    return out


def gamma2(values, spec: QuantSpec, stats: Optional[ClampStats] = None) -> np.ndarray:
    """Linear-scale quantizer: round(delta * (v - z_min) / (z_max - z_min))."""
    return _scaled(values, spec, Fraction(spec.delta) / spec.width, stats)


def gamma1(values, spec: QuantSpec, stats: Optional[ClampStats] = None) -> np.ndarray:
    """Squared-scale quantizer: round(delta^2 * (v - z_min) / (z_max - z_min)^2)."""
    return _scaled(values, spec, Fraction(spec.delta ** 2) / spec.width ** 2, stats)


def dequantize2(q, spec: QuantSpec) -> np.ndarray:
    """Inverse of :func:`gamma2` up to rounding."""
    qa = np.asarray(q, dtype=object)
    scale = spec.width / spec.delta
    lo = Fraction(spec.z_min)
    return np.array([float(lo + int(v) * scale) for v in qa.reshape(-1)],
                    dtype=float).reshape(qa.shape)


def combined_quantized_update(q_alpha, q_B, q_z, q_negv) -> np.ndarray:
    """Integer image of alpha + B (z - v): q_alpha + q_B @ (q_z + q_negv)."""
    qa = np.asarray(q_alpha, dtype=object)
    qb = np.asarray(q_B, dtype=object)
    s = np.asarray(q_z, dtype=object) + np.asarray(q_negv, dtype=object)
    return qa + qb.dot(s)


def inverse_quantize_x(q_x, spec: QuantSpec, B_bar, z_prev, v_prev) -> np.ndarray:
    """Recover alpha + B_bar (z_prev - v_prev) from its decrypted integer image.

    Expanding the three quantizers around ``z_min`` gives
    ``q * w^2 / delta^2 + z_min * (1 + 2 B_bar 1 + sum(z - v)) - 2 z_min^2 n``
    with ``w`` the range width and ``n`` the block length.  The terms nearly
    cancel, so they are combined exactly and rounded to double once.
    """
    B = np.asarray(B_bar, dtype=float)
    u = np.asarray(z_prev, dtype=float) - np.asarray(v_prev, dtype=float)
    size = B.shape[1]
    scale = spec.width ** 2 / spec.delta ** 2
    zmin = Fraction(spec.z_min)
    total_u = Fraction(math.fsum(u.tolist()))
    base = zmin * (1 + total_u) - 2 * zmin * zmin * size
    out = np.empty(len(q_x), dtype=float)
    for i, (q, row) in enumerate(zip(np.asarray(q_x, dtype=object).tolist(), B.tolist())):
        out[i] = float(int(q) * scale + base + 2 * zmin * Fraction(math.fsum(row)))
    return out


def plaintext_bound(spec: QuantSpec, block: int) -> int:
    """Largest combined-update integer for in-range inputs on a block of ``block`` columns."""
    return spec.squared_max + block * spec.linear_max * 2 * spec.linear_max

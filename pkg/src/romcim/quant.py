"""Quantized tensor container and requantization arithmetic.

Fixed-point convention: value = integer * scale, symmetric around zero
(no zero points). Rounding is half-away-from-zero everywhere so positive
and negative values behave symmetrically; out-of-range results saturate
to the declared bit range. The integer/rational requantize path is exact,
so the digital reference and the macro model agree bit for bit.
"""

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ValidationError


def qrange(bits: int, signed: bool) -> tuple[int, int]:
    """Inclusive (min, max) integer range of a bits-wide code."""
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero (float input)."""
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, np.floor(x + 0.5), np.ceil(x - 0.5)).astype(np.int64)


@dataclass(frozen=True)
class QuantTensor:
    """Integer tensor with quantization metadata.

    data is held as int64 regardless of the declared bit-width; bits/signed
    define the representable range and every element must lie inside it.
    """

    data: np.ndarray
    bits: int
    signed: bool
    scale: float
    shape: tuple = field(default=None)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.int64)
        object.__setattr__(self, "data", arr)
        shape = tuple(arr.shape) if self.shape is None else tuple(self.shape)
        object.__setattr__(self, "shape", shape)
        if int(np.prod(shape, dtype=np.int64)) != arr.size:
            raise ValidationError(f"shape {shape} does not match {arr.size} elements")
        if arr.shape != shape:
            object.__setattr__(self, "data", arr.reshape(shape))
        if not (1 <= self.bits <= 8):
            raise ValidationError(f"bits must be in 1..8, got {self.bits}")
        if not (self.scale > 0):
            raise ValidationError(f"scale must be positive, got {self.scale}")
        lo, hi = qrange(self.bits, self.signed)
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise ValidationError(
                f"values outside [{lo}, {hi}] for {self.bits}-bit "
                f"{'signed' if self.signed else 'unsigned'} tensor"
            )

    def to_float(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.scale

    @property
    def size(self) -> int:
        return self.data.size


def _rational_requantize(acc: np.ndarray, num: int, den: int) -> np.ndarray:
    """Exact round(acc * num / den), half away from zero, as int64.

    Falls back to python bignums when the intermediate product could
    overflow int64.
    """
    flat = acc.reshape(-1)
    bound = int(np.abs(flat).max(initial=0))
    if bound * abs(num) * 2 + den < (1 << 63):
        t = flat * num
        q = (2 * np.abs(t) + den) // (2 * den)
        out = np.sign(t) * q
    else:
        out = np.fromiter(
            (
                (1 if v >= 0 else -1) * ((2 * abs(int(v) * num) + den) // (2 * den))
                for v in flat
            ),
            dtype=np.int64,
            count=flat.size,
        )
    return out.reshape(acc.shape)


def requantize(acc, in_scale: float, out_scale: float, out_bits: int,
               signed: bool) -> QuantTensor:
    """Rescale a wide integer accumulator into a narrow quantized tensor.

    value = saturate(round(acc * in_scale / out_scale)), rounding half away
    from zero. The scale ratio is evaluated as an exact rational so ties
    cannot drift with float error.
    """
    if not (out_scale > 0):
        raise ValidationError(f"out_scale must be positive, got {out_scale}")
    if not (in_scale > 0):
        raise ValidationError(f"in_scale must be positive, got {in_scale}")
    acc = np.asarray(acc, dtype=np.int64)
    ratio = Fraction(in_scale) / Fraction(out_scale)
    vals = _rational_requantize(acc, ratio.numerator, ratio.denominator)
    lo, hi = qrange(out_bits, signed)
    vals = np.clip(vals, lo, hi)
    return QuantTensor(vals, bits=out_bits, signed=signed, scale=float(out_scale))


def quantize_float(arr: np.ndarray, bits: int, signed: bool,
                   scale: float) -> QuantTensor:
    """Quantize a float array at a given scale (round half away, saturate)."""
    if not (scale > 0):
        raise ValidationError(f"scale must be positive, got {scale}")
    vals = round_half_away(np.asarray(arr, dtype=np.float64) / scale)
    lo, hi = qrange(bits, signed)
    return QuantTensor(np.clip(vals, lo, hi), bits=bits, signed=signed,
                       scale=float(scale))


def pick_scale(arr: np.ndarray, bits: int, signed: bool) -> float:
    """Symmetric per-tensor scale covering the array's max magnitude."""
    arr = np.asarray(arr, dtype=np.float64)
    peak = float(np.abs(arr).max(initial=0.0))
    if peak == 0.0:
        return 1.0
    _, hi = qrange(bits, signed)
    return peak / hi

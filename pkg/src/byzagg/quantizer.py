"""Unbiased stochastic quantization of real gradients into F_q.

The grid has ``levels`` points spread evenly over ``[-clip, clip]`` with
step ``delta = 2 * clip / (levels - 1)``.  Grid point ``k`` (0-based) is
stored as the signed integer ``k - levels // 2``.  Odd ``levels`` put a grid
point exactly on zero; even ``levels`` shift the grid by ``delta / 2``, which
is carried as a per-term offset when dequantizing sums.

Entries outside ``[-clip, clip]`` are clipped first, so the quantizer is
unbiased only for the clipped gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FieldTooSmall, InvalidGradient, OverflowSuspected
from .field import M61, PrimeField, next_prime


@dataclass(frozen=True)
class QuantConfig:
    levels: int
    clip: float
    field: PrimeField

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least two quantization levels")
        if not self.clip > 0:
            raise ValueError("clip range must be positive")
        if self.levels // 2 > self.field.half:
            raise FieldTooSmall(self.field.q, 2 * (self.levels // 2) + 1)

    @property
    def delta(self) -> float:
        return 2.0 * self.clip / (self.levels - 1)

    @property
    def offset(self) -> float:
        """Grid offset in units of delta: 0 for odd levels, 1/2 for even."""
        return (self.levels // 2) - (self.levels - 1) / 2

    @property
    def max_index(self) -> int:
        """Largest magnitude of a stored grid index."""
        return self.levels // 2


def required_field_size(n: int, b: int, d: int, levels: int) -> int:
    """Lower bound on q so gradient aggregation never wraps: 2 d (n-b)^2 mu^2."""
    return 2 * d * (n - b) ** 2 * levels**2


def validate_field_size(cfg: QuantConfig, n: int, b: int, d: int) -> None:
    minimal = required_field_size(n, b, d, cfg.levels)
    if cfg.field.q < minimal:
        raise FieldTooSmall(cfg.field.q, minimal)


def choose_field(n: int, b: int, d: int, levels: int) -> PrimeField:
    """M61 when it satisfies the overflow bound, else the next prime above it."""
    minimal = required_field_size(n, b, d, levels)
    if M61 >= minimal:
        return PrimeField(M61)
    return PrimeField(next_prime(minimal))


def quantize(g, cfg: QuantConfig, rng: np.random.Generator) -> np.ndarray:
    """Stochastically round ``g`` onto the grid and embed into the field.

    Returns an object array of field elements.
    """
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise InvalidGradient("gradient has NaN or infinite entries")
    pos = (np.clip(g, -cfg.clip, cfg.clip) + cfg.clip) / cfg.delta
    # snap float noise so grid points round deterministically
    nearest = np.rint(pos)
    pos = np.where(np.abs(pos - nearest) < 1e-9, nearest, pos)
    low = np.floor(pos)
    up = rng.random(pos.shape) < (pos - low)
    k = np.minimum(low + up, cfg.levels - 1).astype(np.int64)
    return cfg.field.embed_signed(k - cfg.levels // 2)


def quantize_indices(g, cfg: QuantConfig, rng: np.random.Generator) -> np.ndarray:
    """Same as :func:`quantize` but returns the signed grid indices (int64)."""
    return cfg.field.unembed_signed(quantize(g, cfg, rng)).astype(np.int64)


def dequantize(values, cfg: QuantConfig, terms: int = 1) -> np.ndarray:
    """Map field elements (or a sum of ``terms`` quantized entries) back to reals."""
    s = cfg.field.unembed_signed(np.asarray(values, dtype=object))
    bound = terms * cfg.max_index
    if s.size and max(abs(int(v)) for v in s.ravel()) > bound:
        raise OverflowSuspected(f"aggregate magnitude exceeds {bound}")
    return (s.astype(np.float64) + terms * cfg.offset) * cfg.delta


"""Two-point zero-order gradient estimates along shared random directions.

Every client draws the same unit perturbations for a round from the shared
randomness source, so estimates differ only through local data.  Only the
R loss differences would need to travel; the protocol still aggregates the
reconstructed d-vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .errors import ConfigInvalid, InvalidLoss
from .sharing import SharedRandomness

PERTURBATION_TAG = "zo-perturbation"


@dataclass(frozen=True)
class ZoConfig:
    R: int = 64
    zo_mu: float = 1e-3
    tag: str = PERTURBATION_TAG
    average_perturbations: bool = False

    def __post_init__(self):
        if self.R < 1:
            raise ConfigInvalid("R must be at least 1")
        if not self.zo_mu > 0:
            raise ConfigInvalid("zo_mu must be positive")


def sample_perturbations(d: int, R: int, sr: SharedRandomness, round_id: int, tag: str = PERTURBATION_TAG) -> np.ndarray:
    """R directions uniform on the unit sphere in R^d, shape ``(R, d)``."""
    g = sr.generator(tag, round_id).standard_normal((R, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def projections(loss_fn: Callable[[np.ndarray, Any], float], w, dataset, directions, zo_mu: float) -> np.ndarray:
    """Central differences (F(w + mu z) - F(w - mu z)) / (2 mu), one per direction."""
    w = np.asarray(w, dtype=np.float64)
    out = np.empty(len(directions))
    for r, zr in enumerate(directions):
        hi = float(loss_fn(w + zo_mu * zr, dataset))
        lo = float(loss_fn(w - zo_mu * zr, dataset))
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise InvalidLoss(f"loss is not finite along perturbation {r}")
        out[r] = (hi - lo) / (2 * zo_mu)
    return out


def zo_estimate(
    loss_fn: Callable[[np.ndarray, Any], float],
    w,
    dataset,
    cfg: ZoConfig,
    sr: SharedRandomness | None = None,
    round_id: int = 0,
    directions: np.ndarray | None = None,
) -> np.ndarray:
    """Sum (or mean, per ``cfg``) over r of d * projection_r * z_r."""
    w = np.asarray(w, dtype=np.float64)
    d = w.size
    if directions is None:
        if sr is None:
            raise ConfigInvalid("need shared randomness or explicit directions")
        directions = sample_perturbations(d, cfg.R, sr, round_id, cfg.tag)
    proj = projections(loss_fn, w, dataset, directions, cfg.zo_mu)
    est = d * (proj[:, None] * directions).sum(axis=0)
    if cfg.average_perturbations:
        est = est / len(directions)
    return est


def compression_ratio(d: int, R: int) -> float:
    return d / R

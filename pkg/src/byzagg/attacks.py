"""Byzantine strategies: crafted input gradients and protocol-message corruption.

Gradient attacks (ALIE, FOE, SF, LF) decide what the Byzantine clients feed
into the protocol.  Message attacks (share, response and VSS corruption)
decide how they deviate while the protocol runs; those are expressed as a
:class:`~byzagg.protocol.ByzantineBehavior`.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import ByzAggError, ConfigInvalid, InvalidAttackTarget
from .protocol import ByzantineBehavior

DEFAULT_GRID = tuple(0.5 * k for k in range(1, 21))


class AttackKind(str, Enum):
    NONE = "none"
    ALIE = "alie"
    FOE = "foe"
    SF = "sf"
    LF = "lf"
    SHARE_CORRUPTION = "share-corruption"
    RESPONSE_CORRUPTION = "response-corruption"
    RANDOM_NOISE = "random-noise"

    @property
    def crafts_gradient(self) -> bool:
        return self in (AttackKind.ALIE, AttackKind.FOE, AttackKind.SF, AttackKind.RANDOM_NOISE)

    @property
    def corrupts_messages(self) -> bool:
        return self in (AttackKind.SHARE_CORRUPTION, AttackKind.RESPONSE_CORRUPTION)


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind = AttackKind.NONE
    grid: tuple = DEFAULT_GRID
    noise_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        object.__setattr__(self, "grid", tuple(float(g) for g in self.grid))
        if not self.grid:
            raise ConfigInvalid("attack grid must not be empty")


def _reference(rule: Callable, honest: np.ndarray) -> np.ndarray:
    # the rule's preconditions may fail on the honest subset alone (fewer vectors)
    try:
        return np.asarray(rule(list(honest)), dtype=np.float64)
    except ByzAggError:
        return honest.mean(axis=0)


def damage(rule: Callable, honest, byzantine, n_byz: int, reference=None) -> float:
    """Distance between the rule's output with and without the attack."""
    honest = np.asarray(honest, dtype=np.float64)
    ref = _reference(rule, honest) if reference is None else reference
    attacked = list(honest) + [np.asarray(byzantine, dtype=np.float64)] * n_byz
    return float(np.linalg.norm(np.asarray(rule(attacked), dtype=np.float64) - ref))


def optimize_scale(candidate: Callable[[float], np.ndarray], honest, n_byz: int, grid, rule: Callable):
    """Grid search for the most damaging scale; ties go to the earliest grid point.

    Returns ``(scale, vector)``.
    """
    honest = np.asarray(honest, dtype=np.float64)
    if honest.ndim != 2 or honest.shape[0] < 1:
        raise InvalidAttackTarget("need at least one honest gradient")
    ref = _reference(rule, honest)
    best = None
    for s in grid:
        vec = candidate(s)
        score = damage(rule, honest, vec, n_byz, ref)
        if best is None or score > best[0]:
            best = (score, s, vec)
    return best[1], best[2]


def alie(honest_gradients, b: int, grid=DEFAULT_GRID, rule: Callable | None = None, return_scale: bool = False):
    """A little is enough: mean minus tau standard deviations, tau from the grid."""
    h = np.asarray(honest_gradients, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise InvalidAttackTarget("need at least one honest gradient")
    mu, sigma = h.mean(axis=0), h.std(axis=0)
    if rule is None or len(grid) == 1:
        out = (grid[0], mu - grid[0] * sigma)
    else:
        out = optimize_scale(lambda t: mu - t * sigma, h, b, grid, rule)
    return out if return_scale else out[1]


def foe(honest_gradients, grid=DEFAULT_GRID, rule: Callable | None = None, b: int = 1, return_scale: bool = False):
    """Fall of empires: -eps times the honest mean, eps from the grid."""
    h = np.asarray(honest_gradients, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise InvalidAttackTarget("need at least one honest gradient")
    mu = h.mean(axis=0)
    if rule is None or len(grid) == 1:
        out = (grid[0], -grid[0] * mu)
    else:
        out = optimize_scale(lambda e: -e * mu, h, b, grid, rule)
    return out if return_scale else out[1]


def sf(own_gradient) -> np.ndarray:
    return -np.asarray(own_gradient)


def lf(labels, num_classes: int | None = None) -> np.ndarray:
    """Label flipping y -> L-1-y.  Returns a new array."""
    y = np.asarray(labels)
    if y.dtype.kind not in "iu":
        raise InvalidAttackTarget("label flipping needs integer class labels")
    if num_classes is None:
        num_classes = int(y.max()) + 1 if y.size else 0
    if num_classes < 2 or (y.size and (y.min() < 0 or y.max() >= num_classes)):
        raise InvalidAttackTarget(f"labels outside 0..{num_classes - 1}")
    return (num_classes - 1 - y).astype(y.dtype)


def random_noise(shape, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return rng.normal(0.0, scale, size=shape)


def byzantine_gradients(
    spec: AttackSpec,
    honest: np.ndarray,
    own: Sequence[np.ndarray],
    b: int,
    rule: Callable,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """Inputs for the Byzantine clients this round.

    ``own`` holds the gradients the Byzantine clients would have sent if
    honest (already computed on flipped labels for LF).
    """
    kind = spec.kind
    count = len(own)
    if kind == AttackKind.ALIE:
        return [alie(honest, count, spec.grid, rule)] * count
    if kind == AttackKind.FOE:
        return [foe(honest, spec.grid, rule, count)] * count
    if kind == AttackKind.SF:
        return [sf(g) for g in own]
    if kind == AttackKind.RANDOM_NOISE:
        return [random_noise(np.shape(g), rng, spec.noise_scale) for g in own]
    return [np.asarray(g) for g in own]


def message_behavior(spec: AttackSpec, clients) -> ByzantineBehavior:
    """Protocol-level deviation for the Byzantine clients."""
    clients = frozenset(clients)
    if spec.kind == AttackKind.SHARE_CORRUPTION:
        return ByzantineBehavior(clients, distance_shares=True, aggregate_shares=True)
    if spec.kind == AttackKind.RESPONSE_CORRUPTION:
        return ByzantineBehavior(clients, responses=True)
    return ByzantineBehavior(clients)


# every message-corruption pattern the simulator implements
MESSAGE_STRATEGIES = {
    "honest": dict(),
    "distance-shares": dict(distance_shares=True),
    "responses": dict(responses=True),
    "aggregate-shares": dict(aggregate_shares=True),
    "all-shares": dict(distance_shares=True, responses=True, aggregate_shares=True),
    "all-shares-shift": dict(distance_shares=True, responses=True, aggregate_shares=True, corruption="shift"),
    "vss-liars": dict(vss_lies=True),
    "inconsistent-dealing": dict(dealing="inconsistent"),
    "victim-dealing": dict(dealing="victim"),
}


def strategy(name: str, clients) -> ByzantineBehavior:
    if name not in MESSAGE_STRATEGIES:
        raise ConfigInvalid(f"unknown message strategy {name!r}")
    return ByzantineBehavior(frozenset(clients), **MESSAGE_STRATEGIES[name])

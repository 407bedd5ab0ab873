"""Plaintext robust aggregation: NNM, Krum, Multi-Krum and trimmed mean.

These serve two purposes.  They are the oracle the private protocol is
checked against, and the selection logic the federator runs on decoded
(integer) distance matrices.  Client ids are 1-based in every public
result; ties are always broken by ascending id.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigInvalid


@dataclass
class SelectionResult:
    selected: list[int]
    scores: dict[int, float]


def _stack(vectors) -> np.ndarray:
    arr = np.asarray(vectors)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def pairwise_distances(vectors) -> np.ndarray:
    """Squared Euclidean distances; exact for integer inputs."""
    x = _stack(vectors)
    if x.dtype.kind in "iu":
        x = x.astype(np.int64)
    n = x.shape[0]
    out = np.zeros((n, n), dtype=x.dtype if x.dtype.kind in "iuO" else np.float64)
    for i in range(n):
        diff = x[i + 1 :] - x[i]
        row = (diff * diff).sum(axis=1)
        out[i, i + 1 :] = row
        out[i + 1 :, i] = row
    return out


def neighbor_sets(dist, b: int) -> list[list[int]]:
    """N_j for every j: the n-b nearest clients, self first, then (distance, id)."""
    dist = np.asarray(dist)
    n = dist.shape[0]
    if not 0 <= b < n:
        raise ConfigInvalid(f"need 0 <= b < n, got b={b}, n={n}")
    sets = []
    for j in range(n):
        others = sorted((k for k in range(n) if k != j), key=lambda k: (dist[j, k], k))
        sets.append([j + 1] + [k + 1 for k in others[: n - b - 1]])
    return sets


def nnm_mix(vectors, b: int, dist=None) -> np.ndarray:
    """Unnormalized nearest neighbor mixing: row j is the sum over N_j."""
    x = _stack(vectors)
    if dist is None:
        dist = pairwise_distances(x)
    sets = neighbor_sets(dist, b)
    return np.stack([x[[k - 1 for k in s]].sum(axis=0) for s in sets])


def _scores(dist, candidates: Sequence[int], count: int) -> dict[int, float]:
    scores = {}
    for j in candidates:
        row = sorted(dist[j, k] for k in candidates if k != j)
        scores[j] = sum(row[:count])
    return scores


def krum_select(dist, b: int) -> SelectionResult:
    dist = np.asarray(dist)
    n = dist.shape[0]
    if n < b + 3:
        raise ConfigInvalid(f"Krum needs n >= b + 3 (n={n}, b={b})")
    scores = _scores(dist, range(n), n - b - 2)
    best = min(scores, key=lambda j: (scores[j], j))
    return SelectionResult([best + 1], {j + 1: s for j, s in scores.items()})


def multikrum_select(dist, b: int) -> SelectionResult:
    """Greedy Multi-Krum: n-2b-3 picks, scores recomputed on the remaining set."""
    dist = np.asarray(dist)
    n = dist.shape[0]
    if n < 2 * b + 4:
        raise ConfigInvalid(f"Multi-Krum needs n >= 2b + 4 (n={n}, b={b})")
    chosen: list[int] = []
    first_scores = None
    for _ in range(n - 2 * b - 3):
        remaining = [j for j in range(n) if j not in chosen]
        scores = _scores(dist, remaining, n - b - len(chosen) - 2)
        if first_scores is None:
            first_scores = scores
        chosen.append(min(scores, key=lambda j: (scores[j], j)))
    return SelectionResult([j + 1 for j in chosen], {j + 1: s for j, s in first_scores.items()})


def select(rule: str, dist, b: int) -> SelectionResult:
    if rule == "krum":
        return krum_select(dist, b)
    if rule == "multikrum":
        return multikrum_select(dist, b)
    raise ConfigInvalid(f"unknown selection rule {rule!r}")


def trimmed_mean(vectors, b: int) -> np.ndarray:
    x = _stack(vectors).astype(np.float64)
    n = x.shape[0]
    if n <= 2 * b:
        raise ConfigInvalid(f"trimmed mean needs n > 2b (n={n}, b={b})")
    s = np.sort(x, axis=0)
    return s[b : n - b].mean(axis=0)


def compose(vectors, b: int, rule: str = "krum", nnm: bool = True):
    """Selection-based R (optionally after NNM) in the integer domain.

    Returns ``(selected_sum, selection, mixed)`` where ``selected_sum`` is the
    unnormalized sum of the selected (mixed) vectors.
    """
    x = _stack(vectors)
    mixed = nnm_mix(x, b) if nnm else x
    sel = select(rule, pairwise_distances(mixed), b)
    total = mixed[[j - 1 for j in sel.selected]].sum(axis=0)
    return total, sel, mixed


def aggregate(vectors, b: int, rule: str = "krum", nnm: bool = True) -> np.ndarray:
    """Normalized R o NNM output, comparable with the honest mean."""
    total, sel, _ = compose(vectors, b, rule, nnm)
    scale = len(sel.selected) * ((_stack(vectors).shape[0] - b) if nnm else 1)
    return np.asarray(total, dtype=np.float64) / scale


def make_rule(rule: str, b: int, nnm: bool = True) -> Callable[[Sequence], np.ndarray]:
    """Aggregation callable over a list of vectors (used by attacks and audits)."""
    if rule == "tm":
        if nnm:
            return lambda vs: trimmed_mean(nnm_mix(vs, b) / (len(vs) - b), b)
        return lambda vs: trimmed_mean(vs, b)
    if rule == "mean":
        return lambda vs: _stack(vs).astype(np.float64).mean(axis=0)
    return lambda vs: aggregate(vs, b, rule, nnm)


def robustness_check(rule: Callable, vectors, honest: Sequence[int], kappa: float, atol: float = 0.0) -> bool:
    """Evaluate ||R(g) - mean_H||^2 <= kappa / |H| * sum_H ||g_i - mean_H||^2.

    ``honest`` holds 1-based client ids.
    """
    x = _stack(vectors).astype(np.float64)
    h = x[[i - 1 for i in honest]]
    mean_h = h.mean(axis=0)
    lhs = float(np.sum((np.asarray(rule(vectors), dtype=np.float64) - mean_h) ** 2))
    rhs = kappa / len(honest) * float(np.sum((h - mean_h) ** 2))
    return lhs <= rhs + atol


def empirical_kappa(rule: Callable, vectors, honest: Sequence[int]) -> float:
    """Smallest kappa for which :func:`robustness_check` passes on this instance."""
    x = _stack(vectors).astype(np.float64)
    h = x[[i - 1 for i in honest]]
    mean_h = h.mean(axis=0)
    lhs = float(np.sum((np.asarray(rule(vectors), dtype=np.float64) - mean_h) ** 2))
    spread = float(np.sum((h - mean_h) ** 2)) / len(honest)
    if spread == 0:
        return 0.0 if lhs == 0 else float("inf")
    return lhs / spread

"""Shamir sharing of gradient vectors, bivariate VSS and shared randomness.

Shares of a d-vector are evaluations of ``d`` independent degree-``z``
polynomials (one per coordinate) at a client's evaluation point.  Arrays
of coefficients use the layout ``(degree + 1, d)``, constant term first.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InsufficientClients
from .field import PrimeField, lagrange_interpolate, poly_eval, vandermonde


class ShareKind(str, Enum):
    GRADIENT = "GradientShare"
    DISTANCE = "DistanceShare"
    PADDED_GRADIENT = "PaddedGradientShare"
    MIXTURE = "MixtureShare"
    QUERY = "QueryShare"
    RESPONSE = "ResponseShare"


@dataclass
class Share:
    owner: int
    source: int | str
    kind: ShareKind
    payload: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def _purpose_code(purpose: str) -> int:
    return int.from_bytes(hashlib.sha256(purpose.encode()).digest()[:8], "big")


class SharedRandomness:
    """Randomness common to all clients and hidden from the federator.

    Every draw is a pure function of ``(seed, purpose, *index)``, so clients
    that ask for the same purpose and index get bitwise identical values
    without any coordination.
    """

    def __init__(self, seed: int):
        self._seed = int(seed)

    def generator(self, purpose: str, *index: int) -> np.random.Generator:
        entropy = [self._seed, _purpose_code(purpose), *[int(i) for i in index]]
        return np.random.default_rng(np.random.SeedSequence(entropy))

    def field_elements(self, field: PrimeField, purpose: str, shape, *index: int) -> np.ndarray:
        return field.random(self.generator(purpose, *index), shape)


# ---------------------------------------------------------------------------
# Shamir sharing
# ---------------------------------------------------------------------------


def shamir_polynomial(field: PrimeField, secret, z: int, rng: np.random.Generator) -> np.ndarray:
    """Coefficients ``(z + 1, d)``: the secret followed by z uniform vectors."""
    secret = field.array(np.atleast_1d(secret))
    return np.vstack([secret[None, :], field.random(rng, (z, secret.shape[0]))])


def evaluate_shares(field: PrimeField, coeffs: np.ndarray, points: Sequence[int]) -> np.ndarray:
    """Evaluate a vector polynomial at every point; returns ``(len(points), d)``."""
    coeffs = np.asarray(coeffs, dtype=object).reshape(len(coeffs), -1)
    return vandermonde(field, points, coeffs.shape[0]).dot(coeffs) % field.q


def share_vector(
    field: PrimeField,
    secret,
    z: int,
    points: Sequence[int],
    rng: np.random.Generator,
    source: int | str = 0,
) -> list[Share]:
    if z < 1:
        raise ValueError("privacy threshold z must be at least 1")
    if len(points) <= z:
        raise InsufficientClients(f"{len(points)} clients cannot hold a degree-{z} sharing")
    coeffs = shamir_polynomial(field, secret, z, rng)
    values = evaluate_shares(field, coeffs, points)
    return [
        Share(owner=a, source=source, kind=ShareKind.GRADIENT, payload=values[i], degree=z)
        for i, a in enumerate(points)
    ]


def reconstruct(field: PrimeField, points: Sequence[int], payloads: Sequence[np.ndarray]) -> np.ndarray:
    """Interpolate at zero from error-free shares."""
    return lagrange_interpolate(field, list(zip(points, payloads)), 0)


# ---------------------------------------------------------------------------
# re-randomization and pads
# ---------------------------------------------------------------------------


def rerandomizer(field: PrimeField, z: int, sr: SharedRandomness, tag: str, *index: int) -> list[int]:
    """Scalar polynomial of degree 2z with zero constant term, from shared randomness."""
    return [0] + [int(c) for c in sr.field_elements(field, tag, 2 * z, *index)]


def rerandomizer_values(
    field: PrimeField, z: int, sr: SharedRandomness, tag: str, count: int, alpha: int, *index: int
) -> np.ndarray:
    """Values at ``alpha`` of ``count`` independent zero-constant degree-2z polynomials."""
    coeffs = sr.field_elements(field, tag, (count, 2 * z), *index)
    powers = np.array([pow(alpha, e, field.q) for e in range(1, 2 * z + 1)], dtype=object)
    return coeffs.dot(powers) % field.q


def mask_polynomial(field: PrimeField, z: int, d: int, sr: SharedRandomness, tag: str, *index: int) -> np.ndarray:
    """Vector polynomial ``(2z + 1, d)`` with zero constant row."""
    rows = sr.field_elements(field, tag, (2 * z, d), *index)
    return np.vstack([field.zeros((1, d)), rows])


def make_pad(field: PrimeField, d: int, sr: SharedRandomness, target: int, *round_index: int) -> np.ndarray:
    """One-time pad m_j for the neighbor query of ``target`` in a given round."""
    return sr.field_elements(field, "pad", d, *round_index, target)


def pad_shares(field: PrimeField, shares, pad: np.ndarray):
    """Add the pad to every share; this pads the constant coefficient."""
    return (np.asarray(shares, dtype=object) + pad) % field.q


# ---------------------------------------------------------------------------
# bivariate verifiable secret sharing
# ---------------------------------------------------------------------------


def deal_bivariate(field: PrimeField, secret, z: int, rng: np.random.Generator) -> np.ndarray:
    """Symmetric S(x, y) of degree z in each variable with S(0, 0) = secret.

    Returns coefficients ``(z + 1, z + 1, d)`` with ``C[a, b] == C[b, a]``.
    """
    secret = field.array(np.atleast_1d(secret))
    d = secret.shape[0]
    c = field.zeros((z + 1, z + 1, d))
    for a in range(z + 1):
        for b in range(a, z + 1):
            if a == b == 0:
                c[0, 0] = secret
                continue
            r = field.random(rng, d)
            c[a, b] = r
            c[b, a] = r
    return c


def row_polynomials(field: PrimeField, coeffs: np.ndarray, points: Sequence[int]) -> dict[int, np.ndarray]:
    """Rows S(x, alpha) for every alpha in ``points``, each ``(z + 1, d)``."""
    vander = vandermonde(field, points, coeffs.shape[1])
    rows = np.tensordot(vander, coeffs, axes=([1], [1])) % field.q  # (len(points), z + 1, d)
    return {a: rows[k] for k, a in enumerate(points)}


def row_polynomial(field: PrimeField, coeffs: np.ndarray, alpha: int) -> np.ndarray:
    """Row f(x) = S(x, alpha) as coefficients ``(z + 1, d)``."""
    z1 = coeffs.shape[0]
    powers = np.array([pow(alpha, b, field.q) for b in range(z1)], dtype=object)
    return np.tensordot(coeffs, powers, axes=([1], [0])) % field.q


def bivariate_eval(field: PrimeField, coeffs: np.ndarray, x: int, y: int) -> np.ndarray:
    return poly_eval(field, row_polynomial(field, coeffs, y), x)


def _row_evaluations(field: PrimeField, rows: dict[int, np.ndarray], points: Sequence[int]) -> dict:
    """``out[i][j]``: row of client i at client j's point, as a tuple of ints."""
    stacked = np.stack([rows[c] for c in points])  # (m, z + 1, d)
    vander = vandermonde(field, points, stacked.shape[1])
    values = (np.tensordot(stacked, vander, axes=([1], [1])) % field.q).tolist()  # (m, d, m)
    m = len(points)
    return {
        c: {points[k]: tuple(values[a][t][k] for t in range(len(values[a]))) for k in range(m)}
        for a, c in enumerate(points)
    }


@dataclass
class VSSOutcome:
    dealer: int
    accepted: bool
    rows: dict[int, np.ndarray]
    complaints: dict[int, set[int]]
    accused: set[int]
    rejects: set[int]
    messages: list[tuple] = dc_field(default_factory=list)

    def share(self, client: int) -> np.ndarray:
        return self.rows[client][0]


def verify_shares(
    field: PrimeField,
    dealer: int,
    rows: dict[int, np.ndarray],
    b: int,
    answer: Callable[[int, int], np.ndarray],
    publish_row: Callable[[int], np.ndarray],
    liars: Iterable[int] = (),
    rng: np.random.Generator | None = None,
) -> VSSOutcome:
    """Pairwise cross-check of dealt rows with one public complaint round.

    ``rows[i]`` is the row client i received.  ``answer(i, j)`` is the
    dealer's broadcast value of S(alpha_i, alpha_j) for a disputed pair and
    ``publish_row(i)`` its broadcast row for an accused client.  ``liars``
    are Byzantine verifiers: they send garbage cross-checks, complain about
    everyone, claim to be accused and vote to reject.

    The dealer is rejected when more than ``b`` clients are accused or more
    than ``b`` clients vote to reject.  Messages are returned as tuples
    ``(sender, receiver, kind, n_elements[, payload])`` for the transcript;
    broadcasts carry a tuple of receivers (which may include the sender).
    """
    liars = set(liars)
    rng = rng if rng is not None else np.random.default_rng(0)
    clients = sorted(rows)
    d = rows[clients[0]].shape[1]
    msgs: list[tuple] = []

    for i in clients:
        msgs.append((dealer, i, "vss-row", rows[i].size, rows[i]))

    # ev[i][j] = f_i(alpha_j) as a tuple of ints
    ev = _row_evaluations(field, rows, clients)

    # cross-checks: i sends f_i(alpha_j) to j
    received: dict[int, dict[int, tuple]] = {j: {} for j in clients}
    for i in clients:
        garbage = i in liars
        for j in clients:
            if i == j:
                continue
            value = tuple(int(v) for v in field.random(rng, d)) if garbage else ev[i][j]
            received[j][i] = value
            msgs.append((i, j, "vss-cross", d, value))

    complaints: dict[int, set[int]] = {}
    for j in clients:
        if j in liars:
            complaints[j] = set(clients) - {j}
        else:
            own = ev[j]
            complaints[j] = {i for i, v in received[j].items() if own[i] != v}
    everyone = tuple(clients)
    for j in clients:
        msgs.append((j, everyone, "vss-complaint", len(complaints[j])))

    disputed = sorted({tuple(sorted((i, j))) for j, s in complaints.items() for i in s})
    public_values = {pair: tuple(int(v) for v in field.array(answer(*pair))) for pair in disputed}
    for pair in disputed:
        msgs.append((dealer, everyone, "vss-public-value", d, public_values[pair]))

    accused = set(liars)
    for (i, j), value in public_values.items():
        for who, other in ((i, j), (j, i)):
            if who not in liars and ev[who][other] != value:
                accused.add(who)
    for who in clients:
        msgs.append((who, everyone, "vss-accuse", 1))

    final_rows = dict(rows)
    public_rows = {}
    for i in sorted(accused):
        public_rows[i] = field.array(publish_row(i))
        final_rows[i] = public_rows[i]
        msgs.append((dealer, everyone, "vss-public-row", public_rows[i].size, public_rows[i]))
    if public_rows:
        ev = _row_evaluations(field, final_rows, clients)

    rejects = set(liars)
    for j in clients:
        if j in liars:
            continue
        # a public row must agree with j's own row where they cross
        bad = any(ev[j][i] != ev[i][j] for i in public_rows if i != j)
        bad = bad or any(
            ev[j][c if j == a else a] != value for (a, c), value in public_values.items() if j in (a, c)
        )
        if bad:
            rejects.add(j)
    for who in clients:
        msgs.append((who, everyone, "vss-vote", 1))

    accepted = len(accused) <= b and len(rejects) <= b
    return VSSOutcome(dealer, accepted, final_rows, complaints, accused, rejects, msgs)

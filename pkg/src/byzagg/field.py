"""Prime-field arithmetic, polynomials and Reed-Solomon decoding.

Field elements are plain Python ints in ``[0, q)``.  Vectors of field
elements are numpy arrays of ``dtype=object`` holding Python ints, so every
multiply-reduce is exact regardless of the size of ``q``.

Polynomials are coefficient sequences with the constant term first.  The
same helpers accept vector-valued coefficients (one polynomial per
coordinate), which is how secret shares of gradients are handled.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DecodingFailure, DivisionByZero, DuplicateEvalPoint, EmbeddingOverflow

M61 = (1 << 61) - 1

# Deterministic Miller-Rabin witnesses, valid for n < 3.3 * 10**24.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def next_prime(n: int) -> int:
    """Smallest prime >= n."""
    n = max(n, 2)
    while not is_prime(n):
        n += 1
    return n


@dataclass(frozen=True)
class PrimeField:
    """The prime field F_q."""

    q: int

    def __post_init__(self):
        if not is_prime(self.q):
            raise ValueError(f"{self.q} is not prime")

    @property
    def bit_width(self) -> int:
        return (self.q - 1).bit_length()

    @property
    def elem_bytes(self) -> int:
        return (self.bit_width + 7) // 8

    @property
    def half(self) -> int:
        """Largest magnitude representable by the signed embedding."""
        return (self.q - 1) // 2

    # scalar ops -----------------------------------------------------------

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.q

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.q

    def mul(self, a: int, b: int) -> int:
        return (a * b) % self.q

    def neg(self, a: int) -> int:
        return (-a) % self.q

    def inv(self, a: int) -> int:
        a %= self.q
        if a == 0:
            raise DivisionByZero("zero has no inverse")
        return pow(a, -1, self.q)

    def div(self, a: int, b: int) -> int:
        return self.mul(a, self.inv(b))

    # signed embedding -----------------------------------------------------

    def embed_signed(self, x):
        """Map signed integers into the field (negatives wrap to ``q + x``).

        Accepts an int or an integer array; arrays come back as object arrays.
        """
        if np.ndim(x) == 0:
            x = int(x)
            if abs(x) > self.half:
                raise EmbeddingOverflow(f"|{x}| exceeds (q-1)/2 = {self.half}")
            return x % self.q
        arr = np.asarray(x)
        flat = [int(v) for v in arr.ravel()]
        if flat and max(abs(v) for v in flat) > self.half:
            raise EmbeddingOverflow(f"vector entry exceeds (q-1)/2 = {self.half}")
        return np.array([v % self.q for v in flat], dtype=object).reshape(arr.shape)

    def unembed_signed(self, e):
        if np.ndim(e) == 0:
            e = int(e) % self.q
            return e - self.q if e > self.half else e
        arr = np.asarray(e, dtype=object) % self.q
        return np.where(arr > self.half, arr - self.q, arr)

    # vectors --------------------------------------------------------------

    def array(self, values) -> np.ndarray:
        """Reduce an integer array-like into an object array of field elements."""
        arr = np.asarray(values, dtype=object)
        return arr % self.q

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=object)

    def random(self, rng: np.random.Generator, shape) -> np.ndarray:
        """Uniform field elements drawn from ``rng``."""
        if self.q < 1 << 63:
            return rng.integers(0, self.q, size=shape, dtype=np.int64).astype(object)
        # big moduli: assemble 32-bit words, mask to the bit length, reject >= q
        bits = self.q.bit_length()
        words = (bits + 31) // 32
        count = int(np.prod(shape, dtype=np.int64))
        out: list[int] = []
        while len(out) < count:
            raw = rng.integers(0, 1 << 32, size=(count - len(out), words), dtype=np.uint64)
            for row in raw.tolist():
                v = 0
                for w in row:
                    v = (v << 32) | w
                v &= (1 << bits) - 1
                if v < self.q:
                    out.append(v)
        return np.array(out, dtype=object).reshape(shape)


def eval_points(n: int) -> list[int]:
    """Evaluation point alpha_i = i for clients 1..n; 0 is reserved for the secret."""
    return list(range(1, n + 1))


# ---------------------------------------------------------------------------
# polynomial helpers (scalar coefficients unless noted)
# ---------------------------------------------------------------------------


def poly_eval(field: PrimeField, coeffs: Sequence, x: int):
    """Horner evaluation; coefficients may be ints or equally shaped arrays."""
    q = field.q
    acc = 0
    for c in reversed(list(coeffs)):
        acc = (acc * x + c) % q
    return acc


def _trim(p: list[int]) -> list[int]:
    while p and p[-1] == 0:
        p.pop()
    return p


def _deg(p: list[int]) -> int:
    return len(p) - 1


def _padd(a: list[int], b: list[int], q: int) -> list[int]:
    out = [0] * max(len(a), len(b))
    for i, c in enumerate(a):
        out[i] = c
    for i, c in enumerate(b):
        out[i] = (out[i] + c) % q
    return _trim(out)


def _psub(a: list[int], b: list[int], q: int) -> list[int]:
    return _padd(a, [(-c) % q for c in b], q)


def _pmul(a: list[int], b: list[int], q: int) -> list[int]:
    if not a or not b:
        return []
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x:
            for j, y in enumerate(b):
                out[i + j] += x * y
    return _trim([c % q for c in out])


def _pdivmod(a: list[int], b: list[int], q: int) -> tuple[list[int], list[int]]:
    if not b:
        raise DivisionByZero("polynomial division by zero")
    rem = list(a)
    inv_lead = pow(b[-1], -1, q)
    db = _deg(b)
    quot = [0] * max(len(a) - db, 0)
    while len(rem) - 1 >= db and rem:
        shift = len(rem) - 1 - db
        coef = rem[-1] * inv_lead % q
        quot[shift] = coef
        for i, c in enumerate(b):
            rem[shift + i] = (rem[shift + i] - coef * c) % q
        _trim(rem)
    return _trim(quot), rem


def _check_distinct(xs: Sequence[int], q: int) -> None:
    if len({x % q for x in xs}) != len(xs):
        raise DuplicateEvalPoint("evaluation points must be distinct")


def interpolate(field: PrimeField, xs: Sequence[int], ys: Sequence[int]) -> list[int]:
    """Coefficients (length ``len(xs)``) of the unique interpolating polynomial.

    Newton divided differences, then expansion into the monomial basis.
    """
    q = field.q
    xs = [x % q for x in xs]
    _check_distinct(xs, q)
    n = len(xs)
    dd = [y % q for y in ys]
    for level in range(1, n):
        for i in range(n - 1, level - 1, -1):
            num = dd[i] - dd[i - 1]
            den = xs[i] - xs[i - level]
            dd[i] = num * pow(den, -1, q) % q
    coeffs = [0] * n
    for i in range(n - 1, -1, -1):
        # coeffs <- coeffs * (x - xs[i]) + dd[i]
        shifted = [0] + coeffs[:-1]
        coeffs = [(s - xs[i] * c) % q for s, c in zip(shifted, coeffs)]
        coeffs[0] = (coeffs[0] + dd[i]) % q
    return coeffs


def lagrange_coefficients(field: PrimeField, xs: Sequence[int], at: int = 0) -> list[int]:
    """Weights w_i with f(at) = sum_i w_i f(x_i) for every f of degree < len(xs)."""
    q = field.q
    xs = [x % q for x in xs]
    _check_distinct(xs, q)
    out = []
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if j != i:
                num = num * (at - xj) % q
                den = den * (xi - xj) % q
        out.append(num * pow(den, -1, q) % q)
    return out


def lagrange_interpolate(field: PrimeField, points: Sequence[tuple[int, int]], at: int):
    """Value at ``at`` of the polynomial through ``points`` (ys may be arrays)."""
    xs = [p[0] for p in points]
    w = lagrange_coefficients(field, xs, at)
    acc = 0
    for wi, (_, y) in zip(w, points):
        acc = acc + wi * y
    return acc % field.q


def vandermonde(field: PrimeField, xs: Sequence[int], k: int) -> np.ndarray:
    """Rows ``(1, x, ..., x^(k-1))`` for each x, as a read-only object array."""
    return _vandermonde(field, tuple(int(x) for x in xs), k)


@lru_cache(maxsize=4096)
def _vandermonde(field: PrimeField, xs: tuple, k: int) -> np.ndarray:
    out = np.array([[pow(x, e, field.q) for e in range(k)] for x in xs], dtype=object)
    out.setflags(write=False)
    return out


def _vandermonde_inverse(field: PrimeField, xs: Sequence[int]) -> np.ndarray:
    """Matrix M with coeffs = M @ values for the interpolant through ``xs``."""
    return _vandermonde_inverse_cached(field, tuple(int(x) for x in xs))


@lru_cache(maxsize=4096)
def _vandermonde_inverse_cached(field: PrimeField, xs: tuple) -> np.ndarray:
    k = len(xs)
    cols = []
    for i in range(k):
        e = [0] * k
        e[i] = 1
        cols.append(interpolate(field, xs, e))
    out = np.array(cols, dtype=object).T
    out.setflags(write=False)
    return out


def _count_disagreements(field: PrimeField, coeffs: list[int], xs, ys) -> int:
    return sum(1 for x, y in zip(xs, ys) if poly_eval(field, coeffs, x) != y % field.q)


def rs_decode(
    field: PrimeField,
    points: Sequence[tuple[int, int]],
    degree: int,
    max_errors: int,
) -> list[int]:
    """Gao decoder for a Reed-Solomon codeword given as polynomial evaluations.

    Returns ``degree + 1`` coefficients of the polynomial agreeing with all but
    at most ``max_errors`` points.  Raises :class:`DecodingFailure` otherwise.
    """
    q = field.q
    xs = [int(p[0]) % q for p in points]
    ys = [int(p[1]) % q for p in points]
    _check_distinct(xs, q)
    n, k = len(xs), degree + 1
    if n < k + 2 * max_errors:
        raise ValueError(f"need at least {k + 2 * max_errors} points, got {n}")

    g0 = [1]
    for x in xs:
        g0 = _pmul(g0, [(-x) % q, 1], q)
    g1 = _trim(interpolate(field, xs, ys))

    # partial extended Euclid on (g0, g1), tracking only the g1 cofactor
    r_prev, r = g0, g1
    v_prev, v = [], [1]
    while _deg(r) >= (n + k) / 2:
        quo, rem = _pdivmod(r_prev, r, q)
        r_prev, r = r, rem
        v_prev, v = v, _psub(v_prev, _pmul(quo, v, q), q)

    f, rem = _pdivmod(r, v, q)
    if rem or _deg(f) >= k:
        raise DecodingFailure("no codeword within the error radius")
    f = f + [0] * (k - len(f))
    if _count_disagreements(field, f, xs, ys) > max_errors:
        raise DecodingFailure(f"more than {max_errors} corrupted evaluations")
    return f


def rs_decode_batch(
    field: PrimeField,
    xs: Sequence[int],
    values: np.ndarray,
    degree: int,
    max_errors: int,
) -> np.ndarray:
    """Decode many codewords sharing evaluation points.

    ``values`` has shape ``(m, len(xs))``.  Rows consistent with a single
    degree-``degree`` polynomial are solved by one matrix product; only the
    remaining rows go through :func:`rs_decode`.  Returns ``(m, degree + 1)``.
    """
    q = field.q
    xs = [int(x) % q for x in xs]
    values = np.asarray(values, dtype=object) % q
    m, n = values.shape
    k = degree + 1
    if n < k + 2 * max_errors:
        raise ValueError(f"need at least {k + 2 * max_errors} points, got {n}")
    vander = vandermonde(field, xs, k)

    def fit(rows, support):
        inv = _vandermonde_inverse(field, [xs[i] for i in support])
        c = values[np.ix_(rows, support)].dot(inv.T) % q
        mismatches = (c.dot(vander.T) % q != values[rows]).sum(axis=1)
        return c, mismatches

    coeffs, mismatches = fit(np.arange(m), list(range(k)))
    pending = list(np.nonzero(mismatches)[0])
    while pending:
        # full decode of one row, then reuse its error locations for the rest
        row = pending.pop(0)
        coeffs[row] = rs_decode(field, list(zip(xs, values[row])), degree, max_errors)
        if not pending:
            break
        predicted = vander.dot(coeffs[row]) % q
        support = [i for i in range(n) if predicted[i] == values[row, i]][:k]
        rows = np.array(pending)
        c, mismatches = fit(rows, support)
        ok = mismatches <= max_errors
        coeffs[rows[ok]] = c[ok]
        pending = list(rows[~ok])
    return coeffs


def _solve_mod(field: PrimeField, rows: list[list[int]], rhs: list[int]) -> list[int] | None:
    """Any solution of a linear system mod q, or None when inconsistent."""
    q = field.q
    ncols = len(rows[0]) if rows else 0
    aug = [[c % q for c in row] + [b % q] for row, b in zip(rows, rhs)]
    pivots = []
    r = 0
    for c in range(ncols):
        piv = next((i for i in range(r, len(aug)) if aug[i][c]), None)
        if piv is None:
            continue
        aug[r], aug[piv] = aug[piv], aug[r]
        inv = pow(aug[r][c], -1, q)
        aug[r] = [v * inv % q for v in aug[r]]
        for i in range(len(aug)):
            if i != r and aug[i][c]:
                f = aug[i][c]
                aug[i] = [(a - f * b) % q for a, b in zip(aug[i], aug[r])]
        pivots.append(c)
        r += 1
    if any(all(v == 0 for v in row[:-1]) and row[-1] for row in aug):
        return None
    sol = [0] * ncols
    for i, c in enumerate(pivots):
        sol[c] = aug[i][-1]
    return sol


def berlekamp_welch_decode(
    field: PrimeField,
    points: Sequence[tuple[int, int]],
    degree: int,
    max_errors: int,
) -> list[int]:
    """Berlekamp-Welch decoder; an independent check on :func:`rs_decode`."""
    q = field.q
    xs = [int(p[0]) % q for p in points]
    ys = [int(p[1]) % q for p in points]
    _check_distinct(xs, q)
    k, e = degree + 1, max_errors
    if len(xs) < k + 2 * e:
        raise ValueError(f"need at least {k + 2 * e} points, got {len(xs)}")
    # unknowns: E_0..E_{e-1} (E monic of degree e), Q_0..Q_{k+e-1}
    rows, rhs = [], []
    for x, y in zip(xs, ys):
        rows.append([(-y * pow(x, t, q)) % q for t in range(e)] + [pow(x, t, q) for t in range(k + e)])
        rhs.append(y * pow(x, e, q) % q)
    sol = _solve_mod(field, rows, rhs)
    if sol is None:
        raise DecodingFailure("Berlekamp-Welch system inconsistent")
    err_loc = _trim(sol[:e] + [1])
    numer = _trim(sol[e:])
    f, rem = _pdivmod(numer, err_loc, q)
    if rem or _deg(f) >= k:
        raise DecodingFailure("error locator does not divide")
    f = f + [0] * (k - len(f))
    if _count_disagreements(field, f, xs, ys) > max_errors:
        raise DecodingFailure(f"more than {max_errors} corrupted evaluations")
    return f

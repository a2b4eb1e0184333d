"""One-parameter families y^2 = x^3 + A(T) x + B(T) and their trace moments."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .apstore import ApDatabase

MAX_ORDER = 10


class FamilySpecError(ValueError):
    pass


class SingularFamilyError(ValueError):
    pass


@dataclass(frozen=True)
class IntPolynomial:
    """Integer polynomial, coefficients in ascending degree, no trailing zeros."""

    coeffs: tuple[int, ...] = ()

    def __post_init__(self):
        c = [int(x) for x in self.coeffs]
        while c and c[-1] == 0:
            c.pop()
        object.__setattr__(self, "coeffs", tuple(c))

    @property
    def degree(self) -> int:
        """Degree; -1 stands in for the zero polynomial."""
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return not self.coeffs

    def __add__(self, other: IntPolynomial) -> IntPolynomial:
        n = max(len(self.coeffs), len(other.coeffs))
        a = self.coeffs + (0,) * (n - len(self.coeffs))
        b = other.coeffs + (0,) * (n - len(other.coeffs))
        return IntPolynomial(tuple(x + y for x, y in zip(a, b)))

    def __mul__(self, other) -> IntPolynomial:
        if isinstance(other, int):
            return IntPolynomial(tuple(other * c for c in self.coeffs))
        if self.is_zero() or other.is_zero():
            return IntPolynomial()
        out = [0] * (len(self.coeffs) + len(other.coeffs) - 1)
        for i, x in enumerate(self.coeffs):
            for j, y in enumerate(other.coeffs):
                out[i + j] += x * y
        return IntPolynomial(tuple(out))

    __rmul__ = __mul__

    def __pow__(self, n: int) -> IntPolynomial:
        out = IntPolynomial((1,))
        for _ in range(n):
            out = out * self
        return out

    def __call__(self, t: int) -> int:
        v = 0
        for c in reversed(self.coeffs):
            v = v * t + c
        return v

    def eval_mod(self, t: int, p: int) -> int:
        v = 0
        for c in reversed(self.coeffs):
            v = (v * t + c % p) % p
        return v

    def eval_mod_array(self, t: np.ndarray, p: int) -> np.ndarray:
        """Horner over an int64 array; coefficients are reduced mod p first."""
        t = np.asarray(t, dtype=np.int64)
        v = np.zeros(t.shape, dtype=np.int64)
        for c in reversed(self.coeffs):
            v = (v * t + c % p) % p
        return v

    def to_spec(self) -> str:
        return ",".join(str(c) for c in self.coeffs) or "0"

    def pretty(self, var: str = "T") -> str:
        if self.is_zero():
            return "0"
        terms = []
        for d in range(self.degree, -1, -1):
            c = self.coeffs[d]
            if c == 0:
                continue
            mono = "" if d == 0 else (var if d == 1 else f"{var}^{d}")
            if mono and abs(c) == 1:
                body = mono
            else:
                body = f"{abs(c)}{mono}"
            sign = "-" if c < 0 else "+"
            terms.append((sign, body))
        first_sign, first = terms[0]
        out = ("-" if first_sign == "-" else "") + first
        for sign, body in terms[1:]:
            out += f" {sign} {body}"
        return out


def _proportional(f: IntPolynomial, g: IntPolynomial) -> bool:
    if f.is_zero() or g.is_zero():
        return True
    return f * g.coeffs[-1] == g * f.coeffs[-1]


@dataclass(frozen=True)
class Family:
    A: IntPolynomial
    B: IntPolynomial
    disc: IntPolynomial = field(init=False, compare=False)
    is_singular_surface: bool = field(init=False, compare=False)
    has_constant_j: bool = field(init=False, compare=False)

    def __post_init__(self):
        disc = 4 * self.A ** 3 + 27 * self.B ** 2
        object.__setattr__(self, "disc", disc)
        object.__setattr__(self, "is_singular_surface", disc.is_zero())
        # j = 1728 * 4A^3 / disc is constant iff the two polynomials are proportional.
        object.__setattr__(self, "has_constant_j", _proportional(4 * self.A ** 3, disc))

    @classmethod
    def from_coeffs(cls, a: Sequence[int], b: Sequence[int]) -> Family:
        return cls(IntPolynomial(tuple(a)), IntPolynomial(tuple(b)))

    def spec(self) -> str:
        return f"{self.A.to_spec()};{self.B.to_spec()}"

    def __str__(self) -> str:
        a = self.A.pretty()
        if self.A.degree > 0 and len([c for c in self.A.coeffs if c]) > 1:
            a = f"({a})"
        out = "y^2 = x^3"
        if not self.A.is_zero():
            out += f" + {a}x" if a != "1" else " + x"
        if not self.B.is_zero():
            out += f" + {self.B.pretty()}"
        return out

    def eval_mod(self, t: int, p: int) -> tuple[int, int]:
        return self.A.eval_mod(t, p), self.B.eval_mod(t, p)


def surface_checks(f: Family) -> tuple[bool, bool]:
    return f.is_singular_surface, f.has_constant_j


def eval_family_mod(f: Family, t: int, p: int) -> tuple[int, int]:
    return f.eval_mod(t, p)


def _parse_poly(text: str, side: str) -> IntPolynomial:
    text = text.strip()
    if not text:
        raise FamilySpecError(f"empty {side} polynomial")
    try:
        return IntPolynomial(tuple(int(tok) for tok in text.split(",")))
    except ValueError as exc:
        raise FamilySpecError(f"bad coefficient in {side} polynomial {text!r}") from exc


def parse_family(spec: str) -> Family:
    """Parse "c0,c1,...;d0,d1,..." (ascending coefficients of A, then B)."""
    if spec.count(";") != 1:
        raise FamilySpecError(f"family spec {spec!r} needs exactly one ';'")
    a_text, b_text = spec.split(";")
    f = Family(_parse_poly(a_text, "A"), _parse_poly(b_text, "B"))
    if f.A.is_zero() and f.B.is_zero():
        raise FamilySpecError("A and B are both zero")
    return f


def catalan(n: int) -> int:
    return math.comb(2 * n, n) // (n + 1)


def neg_traces(db: ApDatabase, f: Family, p: int) -> np.ndarray:
    """-a_t(p) for t = 0..p-1, read from the database."""
    t = np.arange(p, dtype=np.int64)
    return db.lookup(p).neg_ap(f.A.eval_mod_array(t, p), f.B.eval_mod_array(t, p))


def _power_sums(traces: np.ndarray, orders: Iterable[int]) -> dict[int, int]:
    # a_t is bounded by 2 sqrt(p); tally once, then sum exact Python-int powers.
    lo = int(traces.min())
    counts = np.bincount(traces - lo)
    values = [(lo + i, int(c)) for i, c in enumerate(counts) if c]
    return {n: sum(c * v ** n for v, c in values) for n in orders}


def raw_moment(db: ApDatabase, f: Family, n: int, p: int) -> int:
    """sum_t a_t(p)^n over every t in F_p, including singular fibres."""
    if n < 1:
        raise ValueError("moment order must be >= 1")
    return _power_sums(-neg_traces(db, f, p), [n])[n]


def raw_moments(db: ApDatabase, f: Family, orders: Iterable[int], p: int) -> dict[int, int]:
    return _power_sums(-neg_traces(db, f, p), list(orders))


def normalized_second_moment(raw: int, p: int) -> float:
    """(A_2 - p^2) / p^(3/2)."""
    return (raw - p * p) / (p * p) * math.sqrt(p)


def normalized_moment(raw: int, order: int, p: int) -> tuple[float, float]:
    """(B, B') for an even order 2n.

    B = (A/C_n - p^(n+1)) / p^(n+1/2) and B' = (A - C_n p^(n+1)) / p^(n+1/2) = C_n B.
    The numerator is formed exactly in integers before the single division.
    """
    if order < 2 or order % 2:
        raise ValueError(f"normalisation is defined for even orders only, got {order}")
    n = order // 2
    c = catalan(n)
    b = (raw - c * p ** (n + 1)) / (c * p ** (n + 1)) * math.sqrt(p)
    return b, c * b


@dataclass
class MomentSeries:
    family: Family
    orders: tuple[int, ...]
    primes: list[int]
    raw: dict[int, list[int]]
    B: dict[int, np.ndarray]
    Bprime: dict[int, np.ndarray]

    def b2(self) -> tuple[list[int], np.ndarray]:
        return self.primes, self.B[2]

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "n", "raw", "B", "Bprime"])
        for i, p in enumerate(self.primes):
            for n in self.orders:
                if n % 2 == 0:
                    w.writerow([p, n, self.raw[n][i], repr(float(self.B[n][i])), repr(float(self.Bprime[n][i]))])
                else:
                    w.writerow([p, n, self.raw[n][i], "", ""])


def select_primes(
    db: ApDatabase,
    p_min: int | None = None,
    p_max: int | None = None,
    skip: int = 0,
    mod: int | None = None,
    residue: int | None = None,
) -> list[int]:
    primes = [
        p for p in db.primes()
        if (p_min is None or p >= p_min) and (p_max is None or p <= p_max)
    ]
    if p_max is not None and p_max > db.p_max:
        raise ValueError(f"p_max={p_max} exceeds the database bound {db.p_max}")
    primes = primes[skip:]
    if mod is not None and residue is not None:
        primes = [p for p in primes if p % mod == residue % mod]
    return primes


def moment_series(
    db: ApDatabase,
    f: Family,
    orders: Iterable[int] = (2,),
    primes: Sequence[int] | None = None,
    p_min: int | None = None,
    p_max: int | None = None,
    skip: int = 0,
) -> MomentSeries:
    """Raw and normalised moments for each prime, one database block at a time."""
    if f.is_singular_surface:
        raise SingularFamilyError(f"{f}: 4A^3 + 27B^2 vanishes identically")
    orders = tuple(sorted(set(orders)))
    if not orders or orders[0] < 1 or orders[-1] > MAX_ORDER:
        raise ValueError(f"orders must lie in 1..{MAX_ORDER}")
    if primes is None:
        primes = select_primes(db, p_min, p_max)
    else:
        for p in primes:
            if p not in db:
                db.lookup(p)  # raises PrimeNotInDatabase
    primes = list(primes)[skip:]
    if not primes:
        raise ValueError("no primes left in range after skip")

    raw: dict[int, list[int]] = {n: [] for n in orders}
    for p in primes:
        sums = raw_moments(db, f, orders, p)
        for n in orders:
            raw[n].append(sums[n])
    B, Bp = {}, {}
    for n in orders:
        if n % 2 == 0:
            pairs = [normalized_moment(r, n, p) for r, p in zip(raw[n], primes)]
            B[n] = np.array([x for x, _ in pairs])
            Bp[n] = np.array([y for _, y in pairs])
    return MomentSeries(f, orders, primes, raw, B, Bp)

"""Exact arithmetic in F_p for odd primes p < 2**31.

Scalar routines work on Python ints. The ``*_array`` helpers are numpy
versions used by the table builder and the vectorised lookup path; all
intermediate products stay below 2**62 so int64 never overflows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import gcd

import numpy as np

P_LIMIT = 1 << 31

# Miller-Rabin with these bases is deterministic for n < 3,317,044,064,679,887,385,961,981.
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    for q in _MR_BASES:
        if n % q == 0:
            return n == q
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class PrimeModulus:
    """An odd prime below 2**31 together with its residues mod 4 and mod 3."""

    p: int
    p_mod4: int = field(init=False)
    p_mod3: int = field(init=False)

    def __post_init__(self):
        p = int(self.p)
        if p < 3 or p >= P_LIMIT or not is_prime(p):
            raise ValueError(f"{self.p} is not an odd prime below 2**31")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_mod4", p % 4)
        object.__setattr__(self, "p_mod3", p % 3)

    def __int__(self) -> int:
        return self.p

    def __index__(self) -> int:
        return self.p


def _int(p) -> int:
    return p.p if isinstance(p, PrimeModulus) else int(p)


def mod_pow(x: int, e: int, p) -> int:
    """x**e mod p by square-and-multiply."""
    p = _int(p)
    if e < 0:
        raise ValueError("negative exponent")
    result = 1
    base = x % p
    while e:
        if e & 1:
            result = result * base % p
        base = base * base % p
        e >>= 1
    return result % p


def mod_inv(x: int, p) -> int:
    p = _int(p)
    x %= p
    if x == 0:
        raise ZeroDivisionError(f"0 has no inverse mod {p}")
    return pow(x, p - 2, p)


def legendre(a: int, p) -> int:
    """Legendre symbol (a/p) via Euler's criterion, in {-1, 0, 1}."""
    p = _int(p)
    a %= p
    if a == 0:
        return 0
    return 1 if pow(a, (p - 1) // 2, p) == 1 else -1


def _cipolla(x: int, p: int) -> int:
    # Deterministic scan for a with a^2 - x a non-residue.
    a = 0
    while True:
        d = (a * a - x) % p
        if legendre(d, p) == -1:
            break
        a += 1
    # (a + w)^((p+1)/2) in F_p[w]/(w^2 - d); elements are pairs (u, v) = u + v*w.
    ru, rv = 1, 0
    bu, bv = a, 1
    e = (p + 1) // 2
    while e:
        if e & 1:
            ru, rv = (ru * bu + rv * bv % p * d) % p, (ru * bv + rv * bu) % p
        bu, bv = (bu * bu + bv * bv % p * d) % p, 2 * bu * bv % p
        e >>= 1
    return ru


def sqrt_mod(x: int, p) -> int:
    """The smaller square root of x mod p.

    Uses x^((p+1)/4) when p = 3 mod 4 and Cipolla's method otherwise.
    Raises ValueError when x is a non-residue.
    """
    p = _int(p)
    x %= p
    if x == 0:
        return 0
    if legendre(x, p) != 1:
        raise ValueError(f"{x} is not a square mod {p}")
    if p % 4 == 3:
        s = pow(x, (p + 1) // 4, p)
    else:
        s = _cipolla(x, p)
    return min(s, p - s)


def is_kth_power(x: int, k: int, p) -> bool:
    p = _int(p)
    x %= p
    if x == 0:
        return True
    return pow(x, (p - 1) // gcd(k, p - 1), p) == 1


def kth_root(x: int, k: int, p) -> int:
    """Return l with l**k = x mod p for k in {2, 4}.

    Fourth roots are two nested square roots. The inner root is chosen to be a
    square itself: for p = 3 mod 4 exactly one of +-s qualifies, for p = 1 mod 4
    both do and the smaller is kept.
    """
    p = _int(p)
    x %= p
    if k not in (2, 4):
        raise ValueError(f"unsupported root order {k}")
    if not is_kth_power(x, k, p):
        raise ValueError(f"{x} is not a {k}-th power mod {p}")
    s = sqrt_mod(x, p)
    if k == 2:
        return s
    if legendre(s, p) == -1:
        s = p - s
    return sqrt_mod(s, p)


@dataclass(frozen=True)
class ResidueClassReps:
    """Smallest representatives of the quartic and sextic power classes."""

    p: int
    quartic_reps: tuple[int, ...]
    sextic_reps: tuple[int, ...]

    @property
    def nonzero_quartic(self) -> tuple[int, ...]:
        return self.quartic_reps[1:]


def _coset_reps(p: int, k: int) -> tuple[int, ...]:
    count = gcd(k, p - 1)
    reps: list[int] = []
    a = 1
    while len(reps) < count:
        if not any(is_kth_power(a * mod_inv(r, p), k, p) for r in reps):
            reps.append(a)
        a += 1
    return tuple(reps)


@lru_cache(maxsize=4096)
def class_reps(p) -> ResidueClassReps:
    p = _int(p)
    PrimeModulus(p)
    quartic = (0,) + _coset_reps(p, 4)
    sextic = _coset_reps(p, 6) if p % 3 == 1 else ()
    return ResidueClassReps(p, quartic, sextic)


# numpy helpers

def mod_pow_array(x: np.ndarray, e: int, p: int) -> np.ndarray:
    """Elementwise x**e mod p on an int64 array (p < 2**31)."""
    result = np.ones_like(x, dtype=np.int64)
    base = np.asarray(x, dtype=np.int64) % p
    while e:
        if e & 1:
            result = result * base % p
        base = base * base % p
        e >>= 1
    return result


@lru_cache(maxsize=8)
def legendre_table(p: int) -> np.ndarray:
    """int8 array chi with chi[v] = (v/p) for 0 <= v < p."""
    p = _int(p)
    chi = np.full(p, -1, dtype=np.int8)
    x = np.arange(1, (p - 1) // 2 + 1, dtype=np.int64)
    chi[x * x % p] = 1
    chi[0] = 0
    chi.setflags(write=False)
    return chi

"""Per-prime tables of -a_p over isomorphism-class representatives.

For y^2 = x^3 + a x + b over F_p (p odd) the negated trace is the character
sum  -a_p = sum_x chi(x^3 + a x + b).  Only one ``a`` per quartic power class
is needed (the other curves are isomorphic via x -> l^2 x, y -> l^3 y), plus
one ``b`` per sextic class when a = 0 and p = 1 mod 3.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from .modarith import (
    PrimeModulus,
    ResidueClassReps,
    _int,
    class_reps,
    legendre_table,
)

KERNELS = ("naive", "convolution")

# |a_p| <= 2 sqrt(p) must fit in int16.
INT16_MAX = 32767
P_STORE_LIMIT = (INT16_MAX // 2) ** 2  # 268_402_689

_CHUNK_ELEMENTS = 1 << 22


class KernelError(RuntimeError):
    """The convolution kernel produced a non-integral or out-of-bound value."""


def hasse_ok(value: int, p: int) -> bool:
    return value * value <= 4 * p


def trace_char_sum(a: int, b: int, p) -> int:
    """-a_p of y^2 = x^3 + a x + b, defined for every (a, b) including singular curves."""
    p = _int(p)
    chi = legendre_table(p)
    x = np.arange(p, dtype=np.int64)
    v = (x * x % p * x + (a % p) * x + (b % p)) % p
    return int(chi[v].sum(dtype=np.int64))


def expected_count(p) -> int:
    """Number of stored values for p: (4p or 2p) + (6 or 0)."""
    p = _int(p)
    return (4 * p if p % 4 == 1 else 2 * p) + (6 if p % 3 == 1 else 0)


@dataclass
class PrimeTable:
    p: int
    reps: ResidueClassReps
    rows: np.ndarray  # shape (n_reps, p), int16, row i is rep reps.nonzero_quartic[i]
    sextic_values: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int16))

    @property
    def stored_count(self) -> int:
        return int(self.rows.size + self.sextic_values.size)

    def row(self, a: int) -> np.ndarray:
        return self.rows[self.reps.nonzero_quartic.index(a)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PrimeTable):
            return NotImplemented
        return (
            self.p == other.p
            and self.reps == other.reps
            and self.rows.dtype == other.rows.dtype
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.sextic_values, other.sextic_values)
        )


def _multiplicity(a: int, p: int) -> np.ndarray:
    """N[v] = #{x : x^3 + a x = v mod p}."""
    x = np.arange(p, dtype=np.int64)
    g = (x * x % p * x + a * x) % p
    return np.bincount(g, minlength=p)


def _row_naive(a: int, p: int, chi: np.ndarray) -> np.ndarray:
    x = np.arange(p, dtype=np.int64)
    g = (x * x % p * x + a * x) % p
    chi2 = np.concatenate([chi, chi])  # index g + b < 2p without a modulo
    out = np.empty(p, dtype=np.int64)
    step = max(1, _CHUNK_ELEMENTS // p)
    for start in range(0, p, step):
        b = np.arange(start, min(start + step, p), dtype=np.int64)
        out[start:start + len(b)] = chi2[g[None, :] + b[:, None]].sum(axis=1, dtype=np.int64)
    return out


def _row_convolution(a: int, p: int, chi: np.ndarray) -> np.ndarray:
    # row[b] = sum_v N[v] chi[v + b]: a cyclic cross-correlation of length p.
    n = _multiplicity(a, p).astype(np.float64)
    spectrum = np.conj(np.fft.rfft(n)) * np.fft.rfft(chi.astype(np.float64))
    raw = np.fft.irfft(spectrum, n=p)
    out = np.rint(raw)
    if p > 1 and np.max(np.abs(raw - out)) >= 0.25:
        raise KernelError(f"convolution residual too large at p={p}, a={a}")
    return out.astype(np.int64)


def _spot_check(row: np.ndarray, a: int, p: int, samples: int = 3) -> None:
    if np.any(row.astype(np.int64) ** 2 > 4 * p):
        raise KernelError(f"Hasse bound violated at p={p}, a={a}")
    rng = random.Random(p * 1_000_003 + a)
    for b in [0] + [rng.randrange(p) for _ in range(samples)]:
        if int(row[b]) != trace_char_sum(a, b, p):
            raise KernelError(f"spot re-derivation failed at p={p}, a={a}, b={b}")


def build_row(a: int, p: int, kernel: str = "naive") -> np.ndarray:
    chi = legendre_table(p)
    if kernel == "naive":
        return _row_naive(a, p, chi)
    if kernel == "convolution":
        try:
            row = _row_convolution(a, p, chi)
            _spot_check(row, a, p)
            return row
        except KernelError:
            return _row_naive(a, p, chi)
    raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def build_prime_table(p, kernel: str = "naive") -> PrimeTable:
    """Compute every stored -a_p value for one prime."""
    if kernel not in KERNELS:
        raise ValueError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
    p = PrimeModulus(_int(p)).p
    if p > P_STORE_LIMIT:
        raise ValueError(f"p={p} exceeds the int16 storage bound {P_STORE_LIMIT}")
    reps = class_reps(p)
    rows = np.empty((len(reps.nonzero_quartic), p), dtype=np.int16)
    for i, a in enumerate(reps.nonzero_quartic):
        rows[i] = build_row(a, p, kernel)
    sextic = np.array([trace_char_sum(0, b, p) for b in reps.sextic_reps], dtype=np.int16)
    return PrimeTable(p, reps, rows, sextic)


@dataclass
class VerificationReport:
    p: int
    ok: bool
    checked: int = 0
    failure: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def verify_table(t: PrimeTable, sample_size: int = 64, seed: int = 0) -> VerificationReport:
    """Check Hasse, stored count, b <-> -b symmetry and re-derive sampled entries.

    Failures are reported in the returned object, never raised.
    """
    p = t.p
    report = VerificationReport(p, ok=True)

    def fail(msg: str) -> VerificationReport:
        report.ok = False
        report.failure = msg
        return report

    if t.stored_count != expected_count(p):
        return fail(f"stored count {t.stored_count} != expected {expected_count(p)}")
    for i, a in enumerate(t.reps.nonzero_quartic):
        row = t.rows[i].astype(np.int64)
        bad = np.nonzero(row * row > 4 * p)[0]
        if bad.size:
            b = int(bad[0])
            return fail(f"Hasse violation at a={a}, b={b}: value {int(row[b])}")
        if p % 4 == 1:
            mirrored = row[(-np.arange(p)) % p]
            asym = np.nonzero(row != mirrored)[0]
            if asym.size:
                return fail(f"b <-> p-b symmetry broken at a={a}, b={int(asym[0])}")
    for j, b in enumerate(t.reps.sextic_reps):
        v = int(t.sextic_values[j])
        if v * v > 4 * p:
            return fail(f"Hasse violation at a=0, b={b}: value {v}")

    n_entries = t.rows.size
    rng = random.Random(seed)
    if sample_size >= n_entries:
        flat = range(n_entries)
    else:
        flat = sorted(rng.sample(range(n_entries), sample_size))
    for k in flat:
        i, b = divmod(k, p)
        a = t.reps.nonzero_quartic[i]
        stored = int(t.rows[i, b])
        direct = trace_char_sum(a, b, p)
        report.checked += 1
        if stored != direct:
            return fail(f"entry a={a}, b={b}: stored {stored}, direct {direct}")
    for j, b in enumerate(t.reps.sextic_reps):
        direct = trace_char_sum(0, b, p)
        report.checked += 1
        if int(t.sextic_values[j]) != direct:
            return fail(f"sextic entry b={b}: stored {int(t.sextic_values[j])}, direct {direct}")
    return report

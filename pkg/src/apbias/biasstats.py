"""Bias and distribution statistics over per-prime normalised moments."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np
from scipy import optimize, stats

from .apstore import ApDatabase
from .families import Family, raw_moment


@dataclass
class BiasReport:
    primes: list[int]
    values: np.ndarray
    run_avg: np.ndarray
    log_avg: np.ndarray
    filters: dict = field(default_factory=dict)
    by_class: dict[int, "BiasReport"] = field(default_factory=dict)

    @property
    def final_run_avg(self) -> float:
        return float(self.run_avg[-1])

    @property
    def final_log_avg(self) -> float:
        return float(self.log_avg[-1])

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "B2", "run_avg", "log_avg"])
        for p, v, r, g in zip(self.primes, self.values, self.run_avg, self.log_avg):
            w.writerow([p, repr(float(v)), repr(float(r)), repr(float(g))])


def _weighted_running_mean(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # Incremental update m += (w / W) (x - m): a constant series stays exact.
    out = np.empty(len(values))
    m = 0.0
    total = 0.0
    for i, (x, w) in enumerate(zip(values.tolist(), weights.tolist())):
        total += w
        m = x if i == 0 else m + (w / total) * (x - m)
        out[i] = m
    return out


def running_averages(primes: Sequence[int], values: Sequence[float], filters: dict | None = None) -> BiasReport:
    """Unweighted and log p weighted running means of B_2 over the primes given."""
    primes = [int(p) for p in primes]
    values = np.asarray(values, dtype=float)
    if len(primes) == 0 or len(primes) != len(values):
        raise ValueError("series must be nonempty with one value per prime")
    if any(b <= a for a, b in zip(primes, primes[1:])):
        raise ValueError("primes must be strictly ascending")
    if primes[0] <= 2:
        raise ValueError("p = 2 is never part of a series")
    run = _weighted_running_mean(values, np.ones(len(values)))
    logs = _weighted_running_mean(values, np.log(np.asarray(primes, dtype=float)))
    return BiasReport(primes, values, run, logs, dict(filters or {}))


def rank_statistic(db: ApDatabase, f: Family, X: int) -> float:
    """-(1/X) sum_{3 <= p <= X} A_1(p) log p / p."""
    if X < 3:
        raise ValueError("X must be at least 3")
    if X > db.p_max:
        raise ValueError(f"X={X} exceeds the database bound {db.p_max}")
    total = math.fsum(raw_moment(db, f, 1, p) * math.log(p) / p for p in db.primes() if p <= X)
    return -total / X


def variance_trace(values: Sequence[float]) -> np.ndarray:
    """Population variance of every prefix (Welford); a one-element prefix gives 0."""
    out = np.empty(len(values))
    mean = 0.0
    m2 = 0.0
    for i, x in enumerate(np.asarray(values, dtype=float).tolist(), start=1):
        delta = x - mean
        mean += delta / i
        m2 += delta * (x - mean)
        out[i - 1] = m2 / i
    return out


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    underflow: int = 0
    overflow: int = 0

    def write_csv(self, fh: TextIO) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bucket_low", "bucket_high", "count"])
        for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def histogram(sample: Sequence[float], bucket_count: int = 100, bounds: tuple[float, float] | None = None) -> Histogram:
    """Equal-width buckets, closed on the right: (e_i, e_i+1], the first also holds its lower edge.

    A value on an interior edge goes to the lower bucket and the upper bound
    lands in the last bucket. Values outside explicit bounds are tallied as
    under/overflow. A degenerate range gives one bucket holding everything.
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    if bucket_count < 1:
        raise ValueError("bucket_count must be >= 1")
    lo, hi = (float(x.min()), float(x.max())) if bounds is None else map(float, bounds)
    if hi < lo:
        raise ValueError("upper bound below lower bound")
    under = int(np.count_nonzero(x < lo))
    over = int(np.count_nonzero(x > hi))
    inside = x[(x >= lo) & (x <= hi)]
    if hi == lo:
        return Histogram(np.array([lo, hi]), np.array([inside.size]), under, over)
    idx = np.ceil((inside - lo) / (hi - lo) * bucket_count).astype(np.int64) - 1
    idx = np.clip(idx, 0, bucket_count - 1)
    counts = np.bincount(idx, minlength=bucket_count)
    return Histogram(np.linspace(lo, hi, bucket_count + 1), counts, under, over)


@dataclass
class TruncatedNormalFit:
    """Parent normal N(mu, sigma^2) truncated to [lower, upper]."""

    mu: float
    sigma: float
    lower: float
    upper: float

    @property
    def dist(self):
        a = (self.lower - self.mu) / self.sigma
        b = (self.upper - self.mu) / self.sigma
        return stats.truncnorm(a, b, loc=self.mu, scale=self.sigma)

    def pdf(self, x):
        return self.dist.pdf(x)

    def cdf(self, x):
        return self.dist.cdf(x)

    def as_dict(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma, "lower": self.lower, "upper": self.upper}


def truncated_normal_fit(sample: Sequence[float], match: str = "parent") -> TruncatedNormalFit:
    """Fit a normal truncated to [min, max] of the sample.

    match="parent" gives the parent normal the sample mean and population
    standard deviation. match="truncated" instead solves for parent
    parameters whose truncated law has the sample mean and variance.
    """
    x = np.asarray(sample, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two sample points")
    mean, sd = float(x.mean()), float(x.std())
    if sd == 0.0:
        raise ValueError("sample has zero variance")
    lower, upper = float(x.min()), float(x.max())
    if match == "parent":
        return TruncatedNormalFit(mean, sd, lower, upper)
    if match != "truncated":
        raise ValueError(f"unknown match mode {match!r}")

    def residual(params):
        mu, log_sigma = params
        s = math.exp(log_sigma)
        m, v = stats.truncnorm.stats((lower - mu) / s, (upper - mu) / s, loc=mu, scale=s, moments="mv")
        m, v = float(m), float(v)
        if not (math.isfinite(m) and math.isfinite(v) and v > 0):
            return [1e6, 1e6]
        return [(m - mean) / sd, (math.sqrt(v) - sd) / sd]

    # A sample flatter than uniform has no exact solution; the bounds keep the search finite.
    width = upper - lower
    lo_b = [lower - 10 * width, math.log(sd) - 5]
    hi_b = [upper + 10 * width, math.log(sd) + 5]
    sol = optimize.least_squares(residual, [mean, math.log(sd)], bounds=(lo_b, hi_b), xtol=1e-12, ftol=1e-12)
    return TruncatedNormalFit(float(sol.x[0]), math.exp(sol.x[1]), lower, upper)


def kolmogorov_sf(lam: float, tol: float = 1e-12) -> float:
    """P(K > lam) for the limiting Kolmogorov distribution."""
    if lam < 0.05:
        # the CDF is below 1e-300 here
        return 1.0
    if lam < 1.0:
        # Theta-function form; the alternating series converges too slowly here.
        c = math.sqrt(2 * math.pi) / lam
        s = 0.0
        k = 1
        while True:
            term = math.exp(-((2 * k - 1) ** 2) * math.pi ** 2 / (8 * lam * lam))
            s += term
            if term < tol:
                break
            k += 1
        return min(1.0, max(0.0, 1.0 - c * s))
    s = 0.0
    k = 1
    while True:
        term = math.exp(-2 * k * k * lam * lam)
        s += term if k % 2 else -term
        if term < tol:
            break
        k += 1
    return min(1.0, max(0.0, 2 * s))


def ks_statistic(sample: Sequence[float], cdf: Callable) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov D and its asymptotic p-value."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("empty sample")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - f), np.max(f - (i - 1) / n), 0.0))
    return d, kolmogorov_sf(math.sqrt(n) * d)


def partition_by_residue(primes: Sequence[int], values: Sequence[float], m: int) -> dict[int, tuple[list[int], np.ndarray]]:
    """Split a series by p mod m, keeping prime order inside each class."""
    if m < 2:
        raise ValueError("modulus must be >= 2")
    values = np.asarray(values, dtype=float)
    out: dict[int, tuple[list[int], list[float]]] = {}
    for p, v in zip(primes, values):
        ps, vs = out.setdefault(p % m, ([], []))
        ps.append(int(p))
        vs.append(float(v))
    return {r: (ps, np.array(vs)) for r, (ps, vs) in sorted(out.items())}


@dataclass
class DistributionSummary:
    sample: np.ndarray
    mean: float
    variance: float
    hist: Histogram
    fit: TruncatedNormalFit
    ks_d: float
    ks_p: float
    variance_trace: np.ndarray

    def fit_json(self) -> str:
        return json.dumps({**self.fit.as_dict(), "ks_d": self.ks_d, "ks_p": self.ks_p}, sort_keys=False)


def summarize(sample: Sequence[float], bucket_count: int = 100, bounds=None, match: str = "parent") -> DistributionSummary:
    x = np.asarray(sample, dtype=float)
    fit = truncated_normal_fit(x, match=match)
    d, pv = ks_statistic(x, fit.cdf)
    trace = variance_trace(x)
    return DistributionSummary(
        x, float(x.mean()), float(trace[-1]), histogram(x, bucket_count, bounds), fit, d, pv, trace
    )

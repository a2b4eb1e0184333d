"""Exhaustive search for families whose B_2 running average stays positive."""

from __future__ import annotations

import csv
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence, TextIO

import numpy as np

from .apstore import ApDatabase
from .biasstats import running_averages
from .families import Family, IntPolynomial, SingularFamilyError, normalized_second_moment, select_primes

_BATCH = 256


@dataclass(frozen=True)
class SearchConfig:
    max_degree: int = 5
    coefficients: tuple[int, ...] = (0, 1)
    filter_p_max: int = 1000
    threshold: float = 0.95
    skip: int = 0
    stage2_p_max: int | None = None

    def __post_init__(self):
        if not 0 < self.threshold <= 1.01:
            # 1.01 is accepted so an impossible threshold can be requested.
            raise ValueError("threshold must lie in (0, 1.01]")
        if self.max_degree < 0 or self.max_degree > 10:
            raise ValueError("max_degree must lie in 0..10")


@dataclass
class SearchResult:
    family: Family
    fraction_positive: float
    final_run_avg: float
    final_log_avg: float
    passed: bool
    stage2_run_avg: float | None = None
    stage2_log_avg: float | None = None

    @property
    def rank_key(self) -> float:
        return self.final_run_avg if self.stage2_run_avg is None else self.stage2_run_avg


def enumerate_families(cfg: SearchConfig = SearchConfig()) -> Iterator[Family]:
    """All (A, B) with coefficients from the set and degree <= max_degree.

    Coefficient vectors run in lexicographic order, A-major. Singular surfaces
    and constant-j families are dropped.
    """
    vectors = list(itertools.product(sorted(set(cfg.coefficients)), repeat=cfg.max_degree + 1))
    for a in vectors:
        for b in vectors:
            f = Family(IntPolynomial(a), IntPolynomial(b))
            if f.is_singular_surface or f.has_constant_j:
                continue
            yield f


def count_raw_pairs(cfg: SearchConfig) -> int:
    return len(set(cfg.coefficients)) ** (2 * (cfg.max_degree + 1))


def _eval_batch(polys: Sequence[IntPolynomial], t: np.ndarray, p: int) -> np.ndarray:
    width = max((len(q.coeffs) for q in polys), default=0)
    coeffs = np.zeros((len(polys), width), dtype=np.int64)
    for i, q in enumerate(polys):
        coeffs[i, : len(q.coeffs)] = [c % p for c in q.coeffs]
    v = np.zeros((len(polys), t.size), dtype=np.int64)
    for k in range(width - 1, -1, -1):
        v = (v * t[None, :] + coeffs[:, k:k + 1]) % p
    return v


def second_moments_batch(db: ApDatabase, families: Sequence[Family], p: int) -> list[int]:
    """A_2(p) for many families at once; agrees with raw_moment(db, f, 2, p)."""
    if 4 * p * p >= 1 << 63:
        raise ValueError("batched second moment needs 4 p^2 < 2^63")
    t = np.arange(p, dtype=np.int64)
    A = _eval_batch([f.A for f in families], t, p)
    B = _eval_batch([f.B for f in families], t, p)
    neg = db.lookup(p).neg_ap(A, B)
    return [int(x) for x in (neg * neg).sum(axis=1)]


def b2_matrix(db: ApDatabase, families: Sequence[Family], primes: Sequence[int]) -> np.ndarray:
    """B_2 values, one row per family and one column per prime."""
    out = np.empty((len(families), len(primes)))
    for j, p in enumerate(primes):
        raws = second_moments_batch(db, families, p)
        out[:, j] = [normalized_second_moment(r, p) for r in raws]
    return out


def _summaries(primes: Sequence[int], rows: np.ndarray) -> list[tuple[float, float, float]]:
    out = []
    for values in rows:
        rep = running_averages(primes, values)
        frac = float(np.count_nonzero(rep.run_avg > 0)) / len(primes)
        out.append((frac, rep.final_run_avg, rep.final_log_avg))
    return out


def _filter_primes(db: ApDatabase, cfg: SearchConfig, p_max: int) -> list[int]:
    if p_max > db.p_max:
        raise ValueError(f"bound {p_max} exceeds the database bound {db.p_max}")
    primes = select_primes(db, p_max=p_max, skip=cfg.skip)
    if not primes:
        raise ValueError("no primes in the filter range")
    return primes


def bias_filter(db: ApDatabase, f: Family, cfg: SearchConfig = SearchConfig()) -> SearchResult:
    """Fraction of prefixes 2 < p <= filter_p_max whose running B_2 average is > 0."""
    if f.is_singular_surface:
        raise SingularFamilyError(f"{f}: singular surface")
    primes = _filter_primes(db, cfg, cfg.filter_p_max)
    (frac, run, log_avg), = _summaries(primes, b2_matrix(db, [f], primes))
    return SearchResult(f, frac, run, log_avg, frac > cfg.threshold)


def _evaluate_chunk(args) -> list[tuple[str, float, float, float]]:
    path, specs, primes = args
    from .families import parse_family

    with ApDatabase(path) as db:
        fams = [parse_family(s) for s in specs]
        return [(s, *summary) for s, summary in zip(specs, _summaries(primes, b2_matrix(db, fams, primes)))]


def _read_checkpoint(path) -> dict[str, tuple[float, float, float]]:
    done: dict[str, tuple[float, float, float]] = {}
    if path is None or not os.path.exists(path):
        return done
    with open(path) as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) == 4:
                done[parts[0]] = (float(parts[1]), float(parts[2]), float(parts[3]))
    return done


def search(
    db: ApDatabase,
    cfg: SearchConfig = SearchConfig(),
    threads: int = 1,
    checkpoint: str | os.PathLike | None = None,
    families: Sequence[Family] | None = None,
) -> list[SearchResult]:
    """Run the filter over every enumerated family; passing results, best first.

    Completed families are appended to ``checkpoint`` (spec, fraction, run, log
    per line) and skipped on a rerun. With ``stage2_p_max`` the survivors are
    re-evaluated to that bound and ranked by the stage-2 running average.
    """
    primes = _filter_primes(db, cfg, cfg.filter_p_max)
    fams = list(enumerate_families(cfg) if families is None else families)
    done = _read_checkpoint(checkpoint)
    todo = [f.spec() for f in fams if f.spec() not in done]
    chunks = [todo[i:i + _BATCH] for i in range(0, len(todo), _BATCH)]

    ck = open(checkpoint, "a") if checkpoint is not None else None
    try:
        jobs = [(db.path, chunk, primes) for chunk in chunks]
        if threads > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                results = pool.map(_evaluate_chunk, jobs)
                _collect(results, done, ck)
        else:
            fam_by_spec = {f.spec(): f for f in fams}
            results = (
                [(s, *summary) for s, summary in zip(chunk, _summaries(primes, b2_matrix(db, [fam_by_spec[s] for s in chunk], primes)))]
                for chunk in chunks
            )
            _collect(results, done, ck)
    finally:
        if ck is not None:
            ck.close()

    passed = []
    for f in fams:
        frac, run, log_avg = done[f.spec()]
        if frac > cfg.threshold:
            passed.append(SearchResult(f, frac, run, log_avg, True))
    if cfg.stage2_p_max is not None and passed:
        primes2 = _filter_primes(db, cfg, cfg.stage2_p_max)
        rows = b2_matrix(db, [r.family for r in passed], primes2)
        for r, (_, run, log_avg) in zip(passed, _summaries(primes2, rows)):
            r.stage2_run_avg, r.stage2_log_avg = run, log_avg
    passed.sort(key=lambda r: -r.rank_key)
    return passed


def _collect(results, done, ck) -> None:
    for chunk in results:
        for spec, frac, run, log_avg in chunk:
            done[spec] = (frac, run, log_avg)
            if ck is not None:
                ck.write(f"{spec}\t{frac!r}\t{run!r}\t{log_avg!r}\n")
        if ck is not None:
            ck.flush()


def write_report(results: Sequence[SearchResult], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["A_coeffs;B_coeffs", "fraction_positive", "final_run_avg", "final_log_avg", "pass"])
    for r in results:
        w.writerow([r.family.spec(), repr(r.fraction_positive), repr(r.final_run_avg), repr(r.final_log_avg), int(r.passed)])

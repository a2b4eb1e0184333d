"""The ``.apdb`` file: an indexed, little-endian store of PrimeTable blocks.

Layout (all little-endian)::

    header  "APDB" | version u16 | flags u16 | p_max u64 | prime_count u64
    index   prime_count x (p u64, offset u64), ascending p
    block   rep_count u16 | rep_count x rep u64 | rep_count x p x i16 (-a_p by b)
            | sextic_count u16 | sextic_count x (b_rep u64, value i16)

The a = 0 class is implicit: it is either forced to zero or answered from
the sextic section.
"""

from __future__ import annotations

import logging
import os
import struct
import threading
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .apkernel import P_STORE_LIMIT, PrimeTable, build_prime_table, expected_count
from .modarith import (
    ResidueClassReps,
    is_kth_power,
    kth_root,
    mod_inv,
    mod_pow_array,
)

log = logging.getLogger(__name__)

MAGIC = b"APDB"
VERSION = 1
HEADER = struct.Struct("<4sHHQQ")
INDEX_RECORD = struct.Struct("<QQ")
SEXTIC_DTYPE = np.dtype([("b", "<u8"), ("value", "<i2")])  # packed, 10 bytes

ENV_DB = "APBIAS_DB"


class ApdbError(Exception):
    """Base class for database errors."""


class FormatError(ApdbError):
    """Bad magic, corrupt header or index."""


class UnknownVersionError(FormatError):
    pass


class TruncatedBlockError(FormatError):
    def __init__(self, prime: int, message: str):
        super().__init__(message)
        self.prime = prime


class PrimeNotInDatabase(ApdbError, KeyError):
    def __init__(self, prime: int):
        super().__init__(f"prime {prime} is not in the database")
        self.prime = prime

    def __str__(self) -> str:
        return self.args[0]


def odd_primes_upto(n: int) -> list[int]:
    """Odd primes 3 <= p <= n by a sieve of Eratosthenes."""
    if n < 3:
        return []
    sieve = np.ones(n + 1, dtype=bool)
    sieve[:2] = False
    sieve[4::2] = False
    for i in range(3, int(n ** 0.5) + 1, 2):
        if sieve[i]:
            sieve[i * i::2 * i] = False
    return [int(p) for p in np.nonzero(sieve)[0] if p != 2]


def _rep_count(p: int) -> int:
    return 4 if p % 4 == 1 else 2


def _sextic_count(p: int) -> int:
    return 6 if p % 3 == 1 else 0


def block_size(p: int) -> int:
    rc, sc = _rep_count(p), _sextic_count(p)
    return 2 + 8 * rc + 2 * rc * p + 2 + SEXTIC_DTYPE.itemsize * sc


def encode_block(table: PrimeTable) -> bytes:
    reps = table.reps.nonzero_quartic
    sextic = np.zeros(len(table.reps.sextic_reps), dtype=SEXTIC_DTYPE)
    sextic["b"] = table.reps.sextic_reps
    sextic["value"] = table.sextic_values
    parts = [
        struct.pack("<H", len(reps)),
        np.asarray(reps, dtype="<u8").tobytes(),
        np.ascontiguousarray(table.rows, dtype="<i2").tobytes(),
        struct.pack("<H", len(sextic)),
        sextic.tobytes(),
    ]
    return b"".join(parts)


def decode_block(p: int, buf) -> PrimeTable:
    buf = memoryview(buf)
    (rc,) = struct.unpack_from("<H", buf, 0)
    pos = 2
    reps = tuple(int(r) for r in np.frombuffer(buf, dtype="<u8", count=rc, offset=pos))
    pos += 8 * rc
    rows = np.frombuffer(buf, dtype="<i2", count=rc * p, offset=pos).reshape(rc, p)
    pos += 2 * rc * p
    (sc,) = struct.unpack_from("<H", buf, pos)
    pos += 2
    sextic = np.frombuffer(buf, dtype=SEXTIC_DTYPE, count=sc, offset=pos)
    class_info = ResidueClassReps(p, (0,) + reps, tuple(int(b) for b in sextic["b"]))
    return PrimeTable(p, class_info, rows.astype(np.int16), sextic["value"].astype(np.int16))


def _encoded_table(args) -> bytes:
    p, kernel = args
    return encode_block(build_prime_table(p, kernel))


def db_create(
    path,
    p_max: int,
    kernel: str = "naive",
    threads: int | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> "ApDatabase":
    """Build every odd-prime table up to p_max and write the database file.

    Blocks are produced by a process pool but written in ascending prime
    order, so the file bytes do not depend on ``threads``.
    """
    if p_max < 3:
        raise ValueError("p_max must be at least 3")
    if p_max > P_STORE_LIMIT:
        raise ValueError(f"p_max={p_max} exceeds the int16 trace bound ({P_STORE_LIMIT})")
    threads = threads or os.cpu_count() or 1
    primes = odd_primes_upto(p_max)
    offset = HEADER.size + INDEX_RECORD.size * len(primes)
    index = []
    for p in primes:
        index.append((p, offset))
        offset += block_size(p)

    tmp = f"{os.fspath(path)}.tmp"
    jobs = [(p, kernel) for p in primes]
    with open(tmp, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, 0, p_max, len(primes)))
        fh.write(b"".join(INDEX_RECORD.pack(p, off) for p, off in index))
        if threads == 1:
            blocks: Iterable[bytes] = map(_encoded_table, jobs)
            _write_blocks(fh, blocks, index, progress)
        else:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                blocks = pool.map(_encoded_table, jobs, chunksize=max(1, len(jobs) // (threads * 16)))
                _write_blocks(fh, blocks, index, progress)
    os.replace(tmp, path)
    return ApDatabase(path)


def _write_blocks(fh, blocks, index, progress) -> None:
    total = len(index)
    for i, ((p, off), block) in enumerate(zip(index, blocks)):
        if fh.tell() != off or len(block) != block_size(p):
            raise ApdbError(f"block layout mismatch at p={p}")
        fh.write(block)
        if progress is not None:
            progress(i + 1, total)


@dataclass(frozen=True)
class LookupReduction:
    """Where the value for (A, B) mod p lives in the stored table.

    kind is "quartic" (rep_a, reduced_b), "sextic" (sextic_index) or "zero".
    """

    p: int
    A: int
    B: int
    kind: str
    rep_a: int | None = None
    reduced_b: int | None = None
    sextic_index: int | None = None


class PrimeLookup:
    """Vectorised -a_p lookup for one prime.

    For every nonzero A it precomputes the class row and the factor l^-6 with
    A = rep * l^4; for every nonzero B the sextic class index. Any valid l
    gives the same value: the candidates differ by a fourth root of unity z,
    which changes b' by z^2 = +-1, and rows are symmetric in b -> -b whenever
    z^2 = -1 is possible (p = 1 mod 4).
    """

    def __init__(self, table: PrimeTable):
        p = table.p
        self.p = p
        self.table = table
        self._flat = np.ascontiguousarray(table.rows, dtype=np.int16).ravel()
        ell = np.arange(1, p, dtype=np.int64)
        ell4 = mod_pow_array(ell, 4, p)
        inv6 = mod_pow_array(ell, (-6) % (p - 1), p)
        self.row_offset = np.full(p, -1, dtype=np.int64)
        self.scale = np.zeros(p, dtype=np.int64)
        for i, a in enumerate(table.reps.nonzero_quartic):
            A = a * ell4 % p
            self.row_offset[A] = i * p
            self.scale[A] = inv6
        self.sextic_class = np.full(p, -1, dtype=np.int64)
        if table.reps.sextic_reps:
            ell6 = mod_pow_array(ell, 6, p)
            for j, b in enumerate(table.reps.sextic_reps):
                self.sextic_class[b * ell6 % p] = j
        self.nbytes = self._flat.nbytes + self.row_offset.nbytes + self.scale.nbytes + self.sextic_class.nbytes

    def neg_ap(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        p = self.p
        A = np.asarray(A, dtype=np.int64) % p
        B = np.asarray(B, dtype=np.int64) % p
        out = np.zeros(A.shape, dtype=np.int64)
        nz = A != 0
        if np.any(nz):
            An, Bn = A[nz], B[nz]
            out[nz] = self._flat[self.row_offset[An] + Bn * self.scale[An] % p]
        if self.table.reps.sextic_reps:
            z = ~nz & (B != 0)
            if np.any(z):
                out[z] = self.table.sextic_values[self.sextic_class[B[z]]]
        return out


class ApDatabase:
    """Read-only handle on an ``.apdb`` file.

    Header and index are read at open; blocks are mapped lazily. Safe to
    share between threads.
    """

    def __init__(self, path, cache_bytes: int = 64 << 20):
        self.path = os.fspath(path)
        size = os.path.getsize(self.path)
        with open(self.path, "rb") as fh:
            head = fh.read(HEADER.size)
            if len(head) < HEADER.size:
                raise FormatError(f"{self.path}: file too short for header")
            magic, version, flags, p_max, count = HEADER.unpack(head)
            if magic != MAGIC:
                raise FormatError(f"{self.path}: bad magic {magic!r}")
            if version != VERSION:
                raise UnknownVersionError(f"{self.path}: unsupported version {version}")
            if flags != 0:
                raise FormatError(f"{self.path}: unsupported flags {flags:#x}")
            raw_index = fh.read(INDEX_RECORD.size * count)
        if len(raw_index) != INDEX_RECORD.size * count:
            raise FormatError(f"{self.path}: index truncated")
        index = np.frombuffer(raw_index, dtype="<u8").reshape(count, 2)
        primes = [int(p) for p in index[:, 0]]
        offsets = [int(o) for o in index[:, 1]]
        if primes != odd_primes_upto(p_max):
            raise FormatError(f"{self.path}: index does not list the odd primes up to {p_max}")
        expected = HEADER.size + INDEX_RECORD.size * count
        for p, off in zip(primes, offsets):
            if off != expected:
                raise FormatError(f"{self.path}: bad offset for p={p}")
            expected += block_size(p)
            if expected > size:
                raise TruncatedBlockError(p, f"{self.path}: block for p={p} is truncated")

        self.p_max = int(p_max)
        self.version = version
        self._primes = tuple(primes)
        self._offsets = dict(zip(primes, offsets))
        self._map = np.memmap(self.path, dtype=np.uint8, mode="r") if size else None
        self._lock = threading.Lock()
        self._cache: OrderedDict[int, PrimeLookup] = OrderedDict()
        self._cache_bytes = cache_bytes
        self._cached = 0

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self) -> None:
        self._map = None
        self._cache.clear()

    def __repr__(self) -> str:
        return f"ApDatabase({self.path!r}, p_max={self.p_max}, primes={len(self._primes)})"

    def primes(self) -> tuple[int, ...]:
        return self._primes

    def __contains__(self, p) -> bool:
        return p in self._offsets

    def _require(self, p: int) -> int:
        if p not in self._offsets:
            raise PrimeNotInDatabase(p)
        return self._offsets[p]

    def block_bytes(self, p: int) -> bytes:
        off = self._require(p)
        return bytes(self._map[off:off + block_size(p)])

    def table(self, p: int) -> PrimeTable:
        off = self._require(p)
        return decode_block(p, self._map[off:off + block_size(p)])

    def stored_reps(self, p: int) -> tuple[int, ...]:
        off = self._require(p)
        rc = int(self._map[off]) | int(self._map[off + 1]) << 8
        return tuple(int(r) for r in np.frombuffer(self._map, dtype="<u8", count=rc, offset=off + 2))

    def _sextic_section(self, p: int) -> np.ndarray:
        off = self._require(p) + 2 + _rep_count(p) * (8 + 2 * p)
        sc = int(self._map[off]) | int(self._map[off + 1]) << 8
        return np.frombuffer(self._map, dtype=SEXTIC_DTYPE, count=sc, offset=off + 2)

    def _value(self, p: int, row: int, b: int) -> int:
        off = self._require(p) + 2 + _rep_count(p) * 8 + 2 * (row * p + b)
        return int(np.frombuffer(self._map, dtype="<i2", count=1, offset=off)[0])

    def reduce(self, p: int, A: int, B: int) -> LookupReduction:
        """Map (A, B) to its stored representative.

        A != 0: the stored rep a with A/a a fourth power l^4 and b' = B l^-6.
        A == 0: zero unless p = 1 mod 3 and B != 0, then the sextic class of B.
        """
        self._require(p)
        A %= p
        B %= p
        if A == 0:
            if B == 0 or p % 3 != 1:
                return LookupReduction(p, A, B, "zero")
            for j, rec in enumerate(self._sextic_section(p)):
                if is_kth_power(B * mod_inv(int(rec["b"]), p), 6, p):
                    return LookupReduction(p, A, B, "sextic", sextic_index=j)
            raise FormatError(f"p={p}: no stored sextic class matches b={B}")
        for a in self.stored_reps(p):
            q = A * mod_inv(a, p) % p
            if is_kth_power(q, 4, p):
                ell = kth_root(q, 4, p)
                b = B * mod_inv(pow(ell, 6, p), p) % p
                return LookupReduction(p, A, B, "quartic", rep_a=a, reduced_b=b)
        raise FormatError(f"p={p}: no stored quartic class matches a={A}")

    def lookup_neg_ap(self, p: int, A: int, B: int) -> int:
        r = self.reduce(p, A, B)
        if r.kind == "zero":
            return 0
        if r.kind == "sextic":
            return int(self._sextic_section(p)[r.sextic_index]["value"])
        row = self.stored_reps(p).index(r.rep_a)
        return self._value(p, row, r.reduced_b)

    def lookup(self, p: int) -> PrimeLookup:
        """Vectorised lookup object for p (small LRU cache by memory)."""
        with self._lock:
            hit = self._cache.get(p)
            if hit is not None:
                self._cache.move_to_end(p)
                return hit
        obj = PrimeLookup(self.table(p))
        with self._lock:
            self._cache[p] = obj
            self._cached += obj.nbytes
            while self._cached > self._cache_bytes and len(self._cache) > 1:
                _, old = self._cache.popitem(last=False)
                self._cached -= old.nbytes
        return obj

    def stored_count(self, p: int) -> int:
        t = self.table(p)
        return t.stored_count


def db_open(path) -> ApDatabase:
    return ApDatabase(path)


__all__ = [
    "ApDatabase",
    "ApdbError",
    "ENV_DB",
    "FormatError",
    "LookupReduction",
    "PrimeLookup",
    "PrimeNotInDatabase",
    "TruncatedBlockError",
    "UnknownVersionError",
    "block_size",
    "db_create",
    "db_open",
    "decode_block",
    "encode_block",
    "expected_count",
    "odd_primes_upto",
]

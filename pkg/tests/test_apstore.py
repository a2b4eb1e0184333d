import hashlib
import struct

import numpy as np
import pytest

from apbias.apkernel import build_prime_table, expected_count, trace_char_sum
from apbias.apstore import (
    HEADER,
    ApDatabase,
    FormatError,
    PrimeNotInDatabase,
    TruncatedBlockError,
    UnknownVersionError,
    block_size,
    db_create,
    decode_block,
    encode_block,
    odd_primes_upto,
)
from apbias.modarith import class_reps
from oracles import neg_ap_matrix, odd_primes


def test_odd_primes_upto():
    assert odd_primes_upto(13) == [3, 5, 7, 11, 13]
    assert odd_primes_upto(2) == []
    assert odd_primes_upto(5000) == odd_primes(5000)


def test_create_p13(db13):
    assert db13.primes() == (3, 5, 7, 11, 13)
    # 5 = 1 mod 4 stores 4 * 5 values, so the total is 6 + 20 + 20 + 22 + 58.
    assert sum(db13.table(p).stored_count for p in db13.primes()) == 126
    assert [db13.table(p).stored_count for p in db13.primes()] == [6, 20, 20, 22, 58]


def test_create_p3(tmp_path):
    db = db_create(tmp_path / "d3.apdb", 3, threads=1)
    assert db.primes() == (3,)
    assert db.table(3).stored_count == 6


def test_header_layout(db13):
    raw = open(db13.path, "rb").read()
    magic, version, flags, p_max, count = HEADER.unpack_from(raw)
    assert (magic, version, flags, p_max, count) == (b"APDB", 1, 0, 13, 5)
    p, off = struct.unpack_from("<QQ", raw, HEADER.size)
    assert (p, off) == (3, HEADER.size + 16 * 5)
    # block for p = 3: rep_count 2, reps 1, 2, then 6 values, then sextic_count 0
    assert struct.unpack_from("<HQQ", raw, off) == (2, 1, 2)
    values = np.frombuffer(raw, dtype="<i2", count=6, offset=off + 18)
    assert list(values[:3]) == [trace_char_sum(1, b, 3) for b in range(3)]
    assert struct.unpack_from("<H", raw, off + 18 + 12) == (0,)
    assert len(raw) == HEADER.size + 16 * 5 + sum(block_size(p) for p in (3, 5, 7, 11, 13))


def test_block_round_trip():
    for p in (3, 7, 13, 101):
        t = build_prime_table(p)
        blob = encode_block(t)
        assert len(blob) == block_size(p)
        assert decode_block(p, blob) == t
        assert encode_block(decode_block(p, blob)) == blob


def test_reopen_bytes_identical(db200, tmp_path):
    again = ApDatabase(db200.path)
    for p in again.primes():
        assert again.block_bytes(p) == encode_block(build_prime_table(p))
        assert again.table(p).stored_count == expected_count(p)


def test_reduce_examples(db13, tmp_path):
    r = db13.reduce(13, 3, 1)
    assert (r.kind, r.rep_a, r.reduced_b) == ("quartic", 1, 12)
    assert db13.reduce(5, 0, 2).kind == "zero"
    assert db13.reduce(13, 0, 0).kind == "zero"
    r = db13.reduce(7, 0, 1)
    assert r.kind == "sextic"


def test_lookup_examples(db13):
    assert db13.lookup_neg_ap(5, 1, 1) == 3
    assert db13.lookup_neg_ap(13, 3, 1) == db13.table(13).row(1)[12] == trace_char_sum(3, 1, 13)
    assert db13.lookup_neg_ap(7, 0, 1) == 4
    with pytest.raises(PrimeNotInDatabase):
        db13.lookup_neg_ap(17, 1, 1)
    with pytest.raises(PrimeNotInDatabase):
        db13.reduce(9, 1, 1)


def test_lookup_matches_oracle_exhaustive(db200):
    for p in db200.primes():
        m = neg_ap_matrix(p)
        reps = class_reps(p).quartic_reps
        A, B = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
        vec = db200.lookup(p).neg_ap(A, B)
        assert np.array_equal(vec, m)
        for a in range(p):
            for b in range(0, p, 7 if p > 60 else 1):
                assert db200.lookup_neg_ap(p, a, b) == m[a, b]
                r = db200.reduce(p, a, b)
                if r.kind == "quartic":
                    assert r.rep_a in reps and 0 <= r.reduced_b < p


def test_hasse_on_lookups(db200):
    for p in db200.primes():
        A, B = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
        v = db200.lookup(p).neg_ap(A, B)
        assert np.all(v * v <= 4 * p)


def test_thread_count_does_not_change_bytes(tmp_path):
    one = db_create(tmp_path / "one.apdb", 300, "naive", threads=1)
    two = db_create(tmp_path / "two.apdb", 300, "convolution", threads=3)
    digest = [hashlib.sha256(open(d.path, "rb").read()).hexdigest() for d in (one, two)]
    assert digest[0] == digest[1]


def test_create_rejects_bad_bounds(tmp_path):
    with pytest.raises(ValueError):
        db_create(tmp_path / "x.apdb", 2)
    with pytest.raises(ValueError):
        db_create(tmp_path / "x.apdb", 300_000_000)


def test_open_errors(db13, tmp_path):
    raw = open(db13.path, "rb").read()

    bad_magic = tmp_path / "magic.apdb"
    bad_magic.write_bytes(b"XPDB" + raw[4:])
    with pytest.raises(FormatError, match="magic"):
        ApDatabase(bad_magic)

    bad_version = tmp_path / "version.apdb"
    bad_version.write_bytes(raw[:4] + struct.pack("<H", 7) + raw[6:])
    with pytest.raises(UnknownVersionError):
        ApDatabase(bad_version)

    truncated = tmp_path / "trunc.apdb"
    truncated.write_bytes(raw[:-10])
    with pytest.raises(TruncatedBlockError) as info:
        ApDatabase(truncated)
    assert info.value.prime == 13 and "13" in str(info.value)

    tiny = tmp_path / "tiny.apdb"
    tiny.write_bytes(raw[:10])
    with pytest.raises(FormatError):
        ApDatabase(tiny)

    cut_index = tmp_path / "index.apdb"
    cut_index.write_bytes(raw[: HEADER.size + 20])
    with pytest.raises(FormatError, match="index"):
        ApDatabase(cut_index)


def test_concurrent_lookups(db200):
    from concurrent.futures import ThreadPoolExecutor

    def work(p):
        return [db200.lookup_neg_ap(p, a, (a * 7 + 3) % p) for a in range(p)]

    with ThreadPoolExecutor(4) as pool:
        parallel = list(pool.map(work, db200.primes()))
    assert parallel == [work(p) for p in db200.primes()]

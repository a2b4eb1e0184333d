import io
import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from apbias.apstore import PrimeNotInDatabase
from apbias.families import (
    Family,
    FamilySpecError,
    IntPolynomial,
    SingularFamilyError,
    catalan,
    eval_family_mod,
    moment_series,
    neg_traces,
    normalized_moment,
    normalized_second_moment,
    parse_family,
    raw_moment,
    raw_moments,
    surface_checks,
)
from oracles import family_traces_brute, neg_ap_matrix, odd_primes

FAMILY_SET = [
    "0,1;1",
    "1;0,0,0,1",
    "1,1;1,0,0,1",
    "0,1,0,1,0,1;1,1,1,1",
    "1,1,0,1,1,1;0,1,0,0,0,1",
    "1,1,0,0,0,1;1,1,1,1,1",
    "1,0,1,0,1;1,1,0,1",
    "1,0,1,0,1,1;0,0,1,0,1",
    "1,1,0,1;0,0,1,0,1",
    "1,0,1,0,0,1;1",
    "0,0,0,0,0,0,0,0,0,0,1;0,0,1,0,0,0,0,0,1",
    "-3,2;5,-7,1",
    "0,1;0,0,1",
    "2;0,1",
    "1,0,1;0",
    "0,0,1;1,1",
    "5,0,0,-1;2",
    "1,1,1,1,1,1;1,1,1,1,1,1",
    "-1;0,0,0,0,0,0,1",
    "123456789012,-987654321;3000000000000000000,1",
]


def test_parse_examples():
    f = parse_family("1,1;1,0,0,1")
    assert f.A.coeffs == (1, 1) and f.B.coeffs == (1, 0, 0, 1)
    g = parse_family("0,1;1")
    assert g.A.coeffs == (0, 1) and g.B.coeffs == (1,) and not g.is_singular_surface
    h = parse_family("0;1")
    assert h.A.is_zero() and h.B.coeffs == (1,) and h.has_constant_j


@pytest.mark.parametrize("bad", ["1,2", "1,x;2", ";1", "1;", "0;0", "1;2;3", "0,0;0"])
def test_parse_errors(bad):
    with pytest.raises(FamilySpecError):
        parse_family(bad)


def test_spec_round_trip():
    for spec in FAMILY_SET:
        assert parse_family(parse_family(spec).spec()) == parse_family(spec)


def test_int_polynomial():
    p = IntPolynomial((1, 2, 0, 0))
    assert p.coeffs == (1, 2) and p.degree == 1
    assert IntPolynomial(()).degree == -1 and IntPolynomial((0, 0)).is_zero()
    q = IntPolynomial((1, 1)) ** 3
    assert q.coeffs == (1, 3, 3, 1)
    assert q(2) == 27 and q.eval_mod(2, 5) == 2
    assert str(parse_family("0,1,0,1,0,1;1,1,1,1")) == "y^2 = x^3 + (T^5 + T^3 + T)x + T^3 + T^2 + T + 1"


def test_eval_family_examples():
    f = parse_family("1,1,0,1;0,0,0,1")
    assert eval_family_mod(f, 2, 5) == (1, 3)
    assert eval_family_mod(parse_family("1;0,0,0,1"), 3, 5)[1] == 2
    g = parse_family("-7,3;12,1")
    assert eval_family_mod(g, 0, 5) == (-7 % 5, 12 % 5)


@given(st.lists(st.integers(-(2**62), 2**62), min_size=1, max_size=11), st.integers(0, 10**6), st.sampled_from([3, 101, 65537, 2147483647]))
def test_eval_mod_exact(coeffs, t, p):
    poly = IntPolynomial(tuple(coeffs))
    t %= p
    expected = poly(t) % p
    assert poly.eval_mod(t, p) == expected
    assert int(poly.eval_mod_array(np.array([t]), p)[0]) == expected


def test_surface_checks_examples():
    assert surface_checks(parse_family("0,0,1;0,0,0,1")) == (False, True)
    assert surface_checks(parse_family("1;0,0,0,1")) == (False, False)
    assert surface_checks(Family(IntPolynomial(), IntPolynomial())) == (True, True)
    # A = -3T^2, B = 2T^3 gives 4A^3 + 27B^2 = 0
    assert surface_checks(parse_family("0,0,-3;0,0,0,2"))[0]
    assert surface_checks(parse_family("1,1;0"))[1]


def test_raw_moment_examples(db13):
    f = parse_family("0,1;1")
    assert [-int(v) for v in neg_traces(db13, f, 5)] == [0, -3, -1, 1, -2]
    assert raw_moment(db13, f, 2, 5) == 15
    assert raw_moment(db13, f, 1, 5) == -5
    assert raw_moment(db13, parse_family("1;0,0,0,1"), 2, 5) == 30
    assert raw_moments(db13, f, (2, 4), 5) == {2: 15, 4: 99}
    with pytest.raises(PrimeNotInDatabase):
        raw_moment(db13, f, 2, 17)


def test_normalized_examples():
    b, bp = normalized_moment(30, 2, 5)
    assert b == bp and b == pytest.approx(0.44721, abs=1e-5)
    assert normalized_moment(15, 2, 5)[0] == pytest.approx(-0.89443, abs=1e-5)
    b4, bp4 = normalized_moment(99, 4, 5)
    # (99/2 - 125) / 5^2.5
    assert b4 == pytest.approx(-75.5 / 5 ** 2.5, rel=1e-14)
    assert bp4 == 2 * b4
    with pytest.raises(ValueError):
        normalized_moment(10, 3, 5)


def test_catalan():
    assert [catalan(n) for n in range(1, 6)] == [1, 2, 5, 14, 42]


def test_second_moment_path_bit_exact():
    rng = random.Random(3)
    for _ in range(1000):
        p = rng.choice(odd_primes(5000))
        raw = rng.randrange(0, 4 * p * p)
        assert normalized_second_moment(raw, p) == normalized_moment(raw, 2, p)[0]


@pytest.mark.parametrize("spec", FAMILY_SET)
def test_moments_match_triple_sum(spec, db200):
    f = parse_family(spec)
    for p in [q for q in db200.primes() if q <= 199]:
        m = neg_ap_matrix(p)
        t = np.arange(p)
        s = m[f.A.eval_mod_array(t, p), f.B.eval_mod_array(t, p)]
        # sum_t sum_x sum_w chi(...)chi(...) = sum_t (sum_x chi(...))^2
        assert raw_moment(db200, f, 2, p) == int((s * s).sum())
        got = raw_moments(db200, f, range(1, 11), p)
        for n in range(1, 11):
            assert got[n] == sum(int(-v) ** n for v in s)
            assert abs(got[n]) <= 2 ** n * p ** ((n + 2) / 2)


def test_traces_match_point_count_small(db13):
    f = parse_family("1,1;1,0,0,1")
    for p in (5, 7, 11, 13):
        assert [-int(v) for v in neg_traces(db13, f, p)] == family_traces_brute(f.A, f.B, p)


def test_series_examples(db13):
    s = moment_series(db13, parse_family("1;0,0,0,1"), (2,))
    assert s.primes == [3, 5, 7, 11, 13]
    assert s.B[2][1] == pytest.approx(0.44721, abs=1e-5)
    assert s.B[2][3] == pytest.approx(11 ** -0.5, rel=1e-14)
    one = moment_series(db13, parse_family("0,1;1"), (2,), primes=[5])
    assert one.primes == [5]
    two = moment_series(db13, parse_family("0,1;1"), (2, 4), primes=[5])
    assert (two.raw[2], two.raw[4]) == ([15], [99])


def test_series_skip_and_errors(db13):
    f = parse_family("0,1;1")
    s = moment_series(db13, f, (2,), skip=2)
    assert s.primes == [7, 11, 13]
    with pytest.raises(ValueError):
        moment_series(db13, f, (2,), skip=5)
    with pytest.raises(SingularFamilyError):
        moment_series(db13, parse_family("0,0,-3;0,0,0,2"), (2,))
    with pytest.raises(ValueError):
        moment_series(db13, f, (11,))


def test_closed_form_p2_plus_p(db200):
    s = moment_series(db200, parse_family("1;0,0,0,1"), (2,))
    for p, raw in zip(s.primes, s.raw[2]):
        if p % 3 == 2:
            assert raw == p * p + p


def test_series_csv(db13):
    s = moment_series(db13, parse_family("1;0,0,0,1"), (1, 2), primes=[5, 11])
    out = io.StringIO()
    s.write_csv(out)
    lines = out.getvalue().splitlines()
    assert lines[0] == "p,n,raw,B,Bprime"
    assert lines[2].startswith("5,2,30,")
    assert lines[1] == "5,1,0,,"
    assert lines[4].split(",")[2] == str(11 * 11 + 11)


def test_bprime_is_catalan_multiple(db200):
    s = moment_series(db200, parse_family("1,1,0,1;0,0,1,0,1"), (2, 4, 6, 8, 10))
    for order in (2, 4, 6, 8, 10):
        c = catalan(order // 2)
        for b, bp in zip(s.B[order], s.Bprime[order]):
            assert bp == c * b
            assert math.isfinite(b)

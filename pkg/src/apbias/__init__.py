"""Frobenius trace database for y^2 = x^3 + a x + b over F_p and second-moment bias statistics."""

from .apkernel import PrimeTable, build_prime_table, expected_count, trace_char_sum, verify_table
from .apstore import ApDatabase, db_create, db_open
from .families import Family, IntPolynomial, moment_series, normalized_moment, parse_family, raw_moment

__version__ = "0.1.0"

__all__ = [
    "ApDatabase",
    "Family",
    "IntPolynomial",
    "PrimeTable",
    "build_prime_table",
    "db_create",
    "db_open",
    "expected_count",
    "moment_series",
    "normalized_moment",
    "parse_family",
    "raw_moment",
    "trace_char_sum",
    "verify_table",
]

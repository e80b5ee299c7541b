"""Generalized Walsh (Chrestenson) systems of order a >= 2.

Exact evaluation of the character system, a-adic step functions, fast and
naive Chrestenson transforms, certified constructions of high-frequency
polynomial approximants, and assembly of universal series with explicit
weights, greedy subseries selection and convergence monitoring.
"""

from .exactnum import QCyc, Fraction, frac_str, parse_frac
from .walsh import WalshIndex, walsh_exponent, walsh_value, rademacher_exponent, constancy_rank

__version__ = "0.1.0"

__all__ = [
    "QCyc",
    "Fraction",
    "frac_str",
    "parse_frac",
    "WalshIndex",
    "walsh_exponent",
    "walsh_value",
    "rademacher_exponent",
    "constancy_rank",
    "__version__",
]

"""Arithmetic backends: binary64 by default, mpmath for extended precision.

Level intervals shrink geometrically (|I^n| ~ rho^n for the golden tower),
which exhausts binary64 relative accuracy near n ~ 35-40.  All scalar paths
in the library are written against the small dispatch layer below, so the
same recursion runs unchanged on ``float`` and on ``mpmath.mpf`` values; the
vectorized grid diagnostics stay on numpy.

A backend is selected by string: ``"binary64"`` or ``"extended:<bits>"``.
The ``GIEM_PRECISION`` environment variable overrides both at CLI level.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np

BINARY64_EPS = float(np.finfo(float).eps)


def _is_mpf(x) -> bool:
    return isinstance(x, mpmath.mpf)


def exp(x):
    if isinstance(x, float):
        return math.exp(x)
    if isinstance(x, np.ndarray):
        return np.exp(x)
    return mpmath.exp(x) if _is_mpf(x) else math.exp(x)


def expm1(x):
    if isinstance(x, float):
        return math.expm1(x)
    if isinstance(x, np.ndarray):
        return np.expm1(x)
    return mpmath.expm1(x) if _is_mpf(x) else math.expm1(x)


def log(x):
    if isinstance(x, float):
        return math.log(x)
    if isinstance(x, np.ndarray):
        return np.log(x)
    return mpmath.log(x) if _is_mpf(x) else math.log(x)


def sin(x):
    if isinstance(x, float):
        return math.sin(x)
    if isinstance(x, np.ndarray):
        return np.sin(x)
    return mpmath.sin(x) if _is_mpf(x) else math.sin(x)


def cos(x):
    if isinstance(x, float):
        return math.cos(x)
    if isinstance(x, np.ndarray):
        return np.cos(x)
    return mpmath.cos(x) if _is_mpf(x) else math.cos(x)


def pi_like(x):
    """pi at the precision of ``x``."""
    return mpmath.pi + 0 * x if _is_mpf(x) else math.pi


def eps_of(x) -> float:
    """Unit roundoff of the arithmetic carrying ``x``."""
    if _is_mpf(x):
        return float(mpmath.mpf(2) ** (1 - mpmath.mp.prec))
    return BINARY64_EPS


class Backend:
    """A named arithmetic: converts inputs and exposes its unit roundoff."""

    def __init__(self, spec: str = "binary64"):
        spec = spec.strip()
        if spec == "binary64":
            self.bits = 53
            self._mp = None
        elif spec.startswith("extended:"):
            bits = int(spec.split(":", 1)[1])
            if bits < 53:
                raise ValueError("extended precision needs >= 53 bits")
            self.bits = bits
            self._mp = True
        else:
            raise ValueError(f"unknown precision spec {spec!r}")
        self.spec = spec
        self.eps = 2.0 ** (1 - self.bits)

    def activate(self) -> None:
        """Point mpmath's global precision at this backend."""
        if self._mp:
            mpmath.mp.prec = self.bits

    def real(self, x):
        """Convert a number (or decimal string) to this backend's scalar."""
        if self._mp:
            self.activate()
            return mpmath.mpf(x if isinstance(x, str) else x)
        return float(x)

    def sqrt(self, x):
        if self._mp:
            self.activate()
            return mpmath.sqrt(self.real(x))
        return math.sqrt(x)

    def golden_rho(self):
        """(sqrt(5) - 1)/2 at backend precision."""
        return (self.sqrt(5) - self.real(1)) / self.real(2)


BINARY64 = Backend("binary64")

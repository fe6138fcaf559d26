"""Closed-form algebra of orientation-preserving C^2 interval maps.

Every map node evaluates its value and first two derivatives analytically;
the chain rule handles composites.  Finite differences appear only in test
oracles: orbits of return maps are exponentially long, and differentiating
them numerically would be hopeless, so exactness of the jets is the load-
bearing design decision of the whole package.

The nonlinearity of a map is n_f = D2f/Df = D(log Df).  Its indefinite
integral is log Df, so integrals of n_f over subintervals are differences
of log-derivatives and never need quadrature.  The distinguished families::

    moebius(N)             fractional linear self-map of [0,1] fixing 0, 1
                           with nonlinearity integral N; a one-parameter
                           group under composition
    pure_nonlinearity(N)   the unique self-map of [0,1] fixing 0, 1 with
                           constant nonlinearity N
    bump(t)                x + t sin(2 pi x)/(2 pi), the perturbation family
                           used to build nonaffine test maps (|t| < 1)

Scalars may be floats or mpmath.mpf; grids are numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import precision as pr
from .errors import DomainError

_DOMAIN_SLACK = 64.0


@dataclass(frozen=True)
class Jet2:
    """Value and first two derivatives of a map at a point (or grid)."""

    value: object
    d1: object
    d2: object


class SmoothMap:
    """Base class: a C^2 orientation-preserving map on a closed interval."""

    domain: tuple  # (u, v), closed

    def eval2(self, x) -> Jet2:
        """Jets at ``x``; raises :class:`DomainError` outside the domain."""
        self._check_domain(x)
        return self._jet(x)

    def _jet(self, x) -> Jet2:
        raise NotImplementedError

    def _check_domain(self, x) -> None:
        u, v = self.domain
        slack = _DOMAIN_SLACK * pr.eps_of(v - u) * max(1.0, abs(float(u)), abs(float(v)))
        if isinstance(x, np.ndarray):
            if x.size and (x.min() < float(u) - slack or x.max() > float(v) + slack):
                raise DomainError(
                    f"points in [{x.min()}, {x.max()}] outside domain [{u}, {v}]"
                )
        elif x < u - slack or x > v + slack:
            raise DomainError(f"{x} outside domain [{u}, {v}]")

    def __call__(self, x):
        return self.eval2(x).value

    @property
    def image(self) -> tuple:
        """Closed image interval (endpoints evaluated exactly)."""
        u, v = self.domain
        return self._jet(u).value, self._jet(v).value

    @property
    def is_affine(self) -> bool:
        return False


@dataclass(frozen=True)
class Affine(SmoothMap):
    """x -> a x + b with a > 0."""

    a: object
    b: object
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("affine slope must be positive")

    def _jet(self, x) -> Jet2:
        return Jet2(self.a * x + self.b, self.a + 0 * x, 0 * x)

    @property
    def is_affine(self) -> bool:
        return True


@dataclass(frozen=True)
class MoebiusN(SmoothMap):
    """The fractional linear self-map of [0,1] fixing 0 and 1 whose
    nonlinearity integral over [0,1] equals N.

    M_N(x) = x e^{-N/2} / (1 + x (e^{-N/2} - 1)); the family is a group:
    M_a o M_b = M_{a+b}, and M_0 is the identity.
    """

    N: object
    domain: tuple = (0.0, 1.0)

    def _jet(self, x) -> Jet2:
        m = pr.expm1(-self.N / 2)  # e^{-N/2} - 1
        w = m + 1
        den = 1 + x * m
        return Jet2(x * w / den, w / den**2, -2 * w * m / den**3)


@dataclass(frozen=True)
class GeneralMoebius(SmoothMap):
    """x -> (a x + b)/(c x + d) with positive determinant."""

    a: object
    b: object
    c: object
    d: object
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        if not self.a * self.d - self.b * self.c > 0:
            raise ValueError("Moebius determinant must be positive")

    def _jet(self, x) -> Jet2:
        det = self.a * self.d - self.b * self.c
        den = self.c * x + self.d
        return Jet2(
            (self.a * x + self.b) / den,
            det / den**2,
            -2 * self.c * det / den**3,
        )


@dataclass(frozen=True)
class PureNonlinearity(SmoothMap):
    """The self-map of [0,1] fixing 0 and 1 with constant nonlinearity N:
    f(x) = (e^{N x} - 1)/(e^N - 1); the identity for N = 0."""

    N: object
    domain: tuple = (0.0, 1.0)

    def _jet(self, x) -> Jet2:
        if self.N == 0:
            return Jet2(x + 0 * x, 1 + 0 * x, 0 * x)
        z = pr.expm1(self.N)
        d1 = self.N * (pr.expm1(self.N * x) + 1) / z
        return Jet2(pr.expm1(self.N * x) / z, d1, self.N * d1)


@dataclass(frozen=True)
class Bump(SmoothMap):
    """Sine perturbation of the identity: x + t sin(2 pi x)/(2 pi).

    A diffeomorphism of [0,1] fixing the endpoints iff |t| < 1; C-infinity,
    so its nonlinearity is Lipschitz (Holder exponent 1) with computable
    constants.
    """

    t: object
    profile: str = "sine"
    domain: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.profile != "sine":
            raise ValueError(f"unknown bump profile {self.profile!r}")
        if not abs(self.t) < 1:
            raise ValueError("bump amplitude must satisfy |t| < 1")

    def _jet(self, x) -> Jet2:
        two_pi = 2 * pr.pi_like(self.t if not isinstance(x, np.ndarray) else 1.0)
        s = pr.sin(two_pi * x)
        return Jet2(
            x + self.t * s / two_pi,
            1 + self.t * pr.cos(two_pi * x),
            -self.t * two_pi * s,
        )


@dataclass(frozen=True)
class Compose(SmoothMap):
    """Composition chain; ``maps[0]`` is applied first."""

    maps: tuple

    def __post_init__(self):
        if not self.maps:
            raise ValueError("empty composition")

    @property
    def domain(self) -> tuple:
        return self.maps[0].domain

    def _jet(self, x) -> Jet2:
        if isinstance(x, np.ndarray):
            v, d1, d2 = x, np.ones_like(x), np.zeros_like(x)
        else:
            v, d1, d2 = x, 1 + 0 * x, 0 * x
        for m in self.maps:
            j = m._jet(v)
            d2 = j.d2 * d1 * d1 + j.d1 * d2
            d1 = j.d1 * d1
            v = j.value
        return Jet2(v, d1, d2)

    @property
    def is_affine(self) -> bool:
        return all(m.is_affine for m in self.maps)


@dataclass(frozen=True)
class Restrict(SmoothMap):
    """The same map on a subinterval of its domain."""

    base: SmoothMap
    domain: tuple

    def __post_init__(self):
        (u, v), (bu, bv) = self.domain, self.base.domain
        slack = _DOMAIN_SLACK * pr.eps_of(v - u) * max(1.0, abs(float(bu)), abs(float(bv)))
        if u < bu - slack or v > bv + slack or not u < v:
            raise ValueError(f"[{u}, {v}] is not a subinterval of [{bu}, {bv}]")

    def _jet(self, x) -> Jet2:
        return self.base._jet(x)

    @property
    def is_affine(self) -> bool:
        return self.base.is_affine


@dataclass(frozen=True)
class NumericInverse(SmoothMap):
    """Inverse of a monotone map, solved by bisection + Newton per call.

    Jets follow from the forward derivatives at the preimage:
    D(f^{-1}) = 1/Df and D2(f^{-1}) = -D2f/(Df)^3.  Vector calls solve one
    representative point and Newton-seed the rest (orbit transports pass
    tightly clustered grids), falling back to the bracketed solve whenever
    the residual check fails.
    """

    base: SmoothMap

    @property
    def domain(self) -> tuple:
        return self.base.image

    def _seed_table(self) -> tuple:
        """Dense forward samples (values, preimages) for interpolation
        seeding; built once per map."""
        tab = self.__dict__.get("_seed")
        if tab is None:
            u, v = (float(t) for t in self.base.domain)
            xs = np.linspace(u, v, 4097)
            ys = np.asarray(self.base._jet(xs).value, dtype=float)
            tab = (ys, xs)
            object.__setattr__(self, "_seed", tab)
        return tab

    def _jet(self, y) -> Jet2:
        if isinstance(y, (float, np.floating, np.ndarray)):
            x, j = self._invert_seeded(y)
        else:
            x = invert_monotone(self.base, y)
            j = self.base._jet(x)
        return Jet2(x, 1 / j.d1, -j.d2 / j.d1**3)

    def _invert_seeded(self, y):
        """Interpolated seed plus two Newton steps; the third forward
        evaluation doubles as residual check and returned jet.  Falls back
        to the bracketed solve if the residual check fails."""
        ys, xs = self._seed_table()
        u, v = xs[0], xs[-1]
        x = np.interp(y, ys, xs)
        for _ in range(2):
            j = self.base._jet(x)
            x = np.clip(x - (j.value - y) / j.d1, u, v)
        j = self.base._jet(x)
        r = j.value - y
        bad = np.max(np.abs(r)) if isinstance(y, np.ndarray) else abs(r)
        tol = 64.0 * pr.BINARY64_EPS * max(1.0, abs(u), abs(v))
        if float(bad) > tol:
            x = invert_monotone(self.base, y)
            return x, self.base._jet(x)
        if isinstance(y, (float, np.floating)):
            return float(x), j
        return x, j


@dataclass(frozen=True)
class SampledNonlinearity(SmoothMap):
    """Self-map of [0,1] fixing 0 and 1 reconstructed from nonlinearity
    samples: f(x) is the normalized double integral of exp(int n).

    Jets are exact relative to the spline model of n: Df = exp(S(x))/Z with
    S the spline antiderivative of n, and D2f = n(x) Df.
    """

    xs: tuple
    n_samples: tuple
    domain: tuple = (0.0, 1.0)

    @cached_property
    def _splines(self):
        xs = np.asarray(self.xs)
        n_spline = CubicSpline(xs, np.asarray(self.n_samples))
        S = n_spline.antiderivative()
        g = np.exp(S(xs))
        F = CubicSpline(xs, g).antiderivative()
        return n_spline, S, F, float(F(1.0))

    def _jet(self, x) -> Jet2:
        n_spline, S, F, Z = self._splines
        d1 = np.exp(S(x)) / Z
        out = Jet2(F(x) / Z, d1, n_spline(x) * d1)
        if not isinstance(x, np.ndarray):
            return Jet2(float(out.value), float(out.d1), float(out.d2))
        return out


def identity(domain: tuple = (0.0, 1.0)) -> SmoothMap:
    return Affine(1.0, 0.0, domain)


def moebius(N) -> SmoothMap:
    return MoebiusN(N)


def pure_nonlinearity(N) -> SmoothMap:
    return PureNonlinearity(N)


def bump(t) -> SmoothMap:
    return Bump(t)


def chain(*maps: SmoothMap) -> SmoothMap:
    """Compose maps in application order: ``chain(f, g)`` applies f first."""
    flat: list[SmoothMap] = []
    for m in maps:
        if isinstance(m, Compose):
            flat.extend(m.maps)
        else:
            flat.append(m)
    return flat[0] if len(flat) == 1 else Compose(tuple(flat))


def eval2(m: SmoothMap, x) -> Jet2:
    return m.eval2(x)


def nonlinearity(m: SmoothMap, x):
    """n_m(x) = D2m(x)/Dm(x)."""
    j = m.eval2(x)
    return j.d2 / j.d1


def nonlinearity_integral(m: SmoothMap, a, b):
    """Integral of the nonlinearity over [a, b]: log Dm(b) - log Dm(a),
    exact (no quadrature)."""
    m._check_domain(a)
    m._check_domain(b)
    return pr.log(m._jet(b).d1) - pr.log(m._jet(a).d1)


def zoom(m: SmoothMap, a, b, *, degenerate_eps: float | None = None) -> SmoothMap:
    """Affine renormalization of m over [a, b]: the self-map of [0,1]
    obtained by rescaling domain and image, fixing 0 and 1.

    Its nonlinearity is the rescaled pullback (b - a) n_m(a + x (b - a)),
    so the nonlinearity integral over [0,1] equals the integral of n_m
    over [a, b].
    """
    if degenerate_eps is None:
        degenerate_eps = 100.0 * pr.eps_of(b - a)
    if not b - a > degenerate_eps:
        raise ValueError(f"degenerate zoom interval [{a}, {b}]")
    m._check_domain(a)
    m._check_domain(b)
    ya, yb = m._jet(a).value, m._jet(b).value
    one = (b - a) / (b - a)
    inner = Affine(b - a, a, (0 * one, one))
    outer = Affine(1 / (yb - ya), -ya / (yb - ya), (ya, yb))
    return chain(inner, Restrict(m, (a, b)), outer)


def inverse(m: SmoothMap) -> SmoothMap:
    """Inverse map, closed-form where the node allows it."""
    if isinstance(m, Affine):
        u, v = m.domain
        return Affine(1 / m.a, -m.b / m.a, (m._jet(u).value, m._jet(v).value))
    if isinstance(m, MoebiusN):
        return MoebiusN(-m.N)
    if isinstance(m, GeneralMoebius):
        u, v = m.image
        return GeneralMoebius(m.d, -m.b, -m.c, m.a, (u, v))
    if isinstance(m, Restrict):
        return Restrict(inverse(m.base), m.image)
    if isinstance(m, Compose):
        return chain(*(inverse(p) for p in reversed(m.maps)))
    if isinstance(m, NumericInverse):
        return m.base
    return NumericInverse(m)


def invert_monotone(m: SmoothMap, y, bisections: int = 4, newton: int = 12):
    """Solve m(x) = y on the domain of m: a few bisection steps to
    localize, then bracketed Newton (each iterate both tightens the bracket
    and takes the Newton step, falling back to the bracket midpoint when
    the step escapes).  Quadratic near the root, safe everywhere.

    Vectorized over numpy arrays; for mpmath scalars the bisection count
    grows with the working precision.
    """
    u, v = m.domain
    eps = pr.eps_of(v - u)
    if isinstance(y, np.ndarray):
        lo = np.full_like(y, float(u))
        hi = np.full_like(y, float(v))
        for _ in range(bisections):
            mid = 0.5 * (lo + hi)
            too_low = m._jet(mid).value < y
            lo = np.where(too_low, mid, lo)
            hi = np.where(too_low, hi, mid)
        x = 0.5 * (lo + hi)
        r_tol = 8.0 * eps * max(1.0, abs(float(u)), abs(float(v)))
        for _ in range(newton):
            j = m._jet(x)
            r = j.value - y
            lo = np.where(r < 0, x, lo)
            hi = np.where(r < 0, hi, x)
            xn = np.clip(x - r / j.d1, lo, hi)
            # no progress with a nonzero residual: bisect instead
            x = np.where((xn == x) & (r != 0), 0.5 * (lo + hi), xn)
            if np.max(np.abs(r)) <= r_tol:
                break
        return x
    if not eps >= pr.BINARY64_EPS:
        bisections = max(bisections, 8)
        newton = max(newton, 20)
    lo, hi = u, v
    for _ in range(bisections):
        mid = (lo + hi) / 2
        if m._jet(mid).value < y:
            lo = mid
        else:
            hi = mid
    x = (lo + hi) / 2
    for _ in range(newton):
        j = m._jet(x)
        r = j.value - y
        if r == 0:
            break
        if r < 0:
            lo = x
        else:
            hi = x
        xn = x - r / j.d1
        xn = min(max(xn, lo), hi)
        x = xn if xn != x else (lo + hi) / 2
        if hi - lo <= 4 * eps * max(1.0, abs(float(hi))):
            break
    return x


def c2_distance(m1: SmoothMap, m2: SmoothMap, grid: int = 1025) -> float:
    """Grid approximation of the C^2 distance on [0,1]: the sum over
    i = 0, 1, 2 of the max over grid points of |D^i m1 - D^i m2|.

    A lower bound of the true sup-distance that converges as the grid is
    refined; 1025 uniform points resolve the curvature of the map families
    used here far below the test tolerances.
    """
    if grid < 2:
        raise ValueError("grid must have at least 2 points")
    xs = np.linspace(0.0, 1.0, grid)
    j1, j2 = m1.eval2(xs), m2.eval2(xs)
    return float(
        np.max(np.abs(np.asarray(j1.value - j2.value, dtype=float)))
        + np.max(np.abs(np.asarray(j1.d1 - j2.d1, dtype=float)))
        + np.max(np.abs(np.asarray(j1.d2 - j2.d2, dtype=float)))
    )


def c2_distance_jets(j1: Jet2, j2: Jet2) -> float:
    """C^2 distance between two jet grids sampled at the same points."""
    return float(
        np.max(np.abs(np.asarray(j1.value, dtype=float) - np.asarray(j2.value, dtype=float)))
        + np.max(np.abs(np.asarray(j1.d1, dtype=float) - np.asarray(j2.d1, dtype=float)))
        + np.max(np.abs(np.asarray(j1.d2, dtype=float) - np.asarray(j2.d2, dtype=float)))
    )


def from_nonlinearity(n: Callable | Sequence[float], grid: int = 1025) -> SmoothMap:
    """Reconstruct the self-map of [0,1] fixing 0 and 1 whose nonlinearity
    is ``n`` (a callable, or samples on a uniform grid including endpoints):
    f(x) = int_0^x exp(int_0^z n) dz, normalized by its value at 1."""
    if callable(n):
        xs = np.linspace(0.0, 1.0, grid)
        vals = np.asarray([float(n(x)) for x in xs])
    else:
        vals = np.asarray(n, dtype=float)
        if vals.ndim != 1 or vals.size < 4:
            raise ValueError("need at least 4 nonlinearity samples")
        xs = np.linspace(0.0, 1.0, vals.size)
    return SampledNonlinearity(tuple(xs.tolist()), tuple(vals.tolist()))


def as_moebius_matrix(m: SmoothMap) -> tuple | None:
    """Coefficients (a, b, c, d) with x -> (a x + b)/(c x + d) when the map
    is fractional linear (affine, normalized Moebius, or compositions of
    such); None otherwise.  Normalized to determinant 1."""
    if isinstance(m, Affine):
        mat = (float(m.a), float(m.b), 0.0, 1.0)
    elif isinstance(m, MoebiusN):
        w = float(pr.exp(-m.N / 2))
        mat = (w, 0.0, w - 1.0, 1.0)
    elif isinstance(m, GeneralMoebius):
        mat = (float(m.a), float(m.b), float(m.c), float(m.d))
    elif isinstance(m, Restrict):
        return as_moebius_matrix(m.base)
    elif isinstance(m, Compose):
        mat = (1.0, 0.0, 0.0, 1.0)
        for p in m.maps:
            sub = as_moebius_matrix(p)
            if sub is None:
                return None
            a, b, c, d = sub
            # p is applied after the accumulated map: left-multiply
            mat = (
                a * mat[0] + b * mat[2],
                a * mat[1] + b * mat[3],
                c * mat[0] + d * mat[2],
                c * mat[1] + d * mat[3],
            )
    else:
        return None
    det = mat[0] * mat[3] - mat[1] * mat[2]
    if det <= 0:
        return None
    s = det**0.5
    return (mat[0] / s, mat[1] / s, mat[2] / s, mat[3] / s)


def nonlinearity_holder_constants(m: SmoothMap, grid: int = 4097) -> tuple[float, float]:
    """Estimate (C0, C1) with Holder exponent 1 on the domain of m:
    C1 bounds |n_m| and C0 bounds its Lipschitz constant, both via a
    dense grid."""
    u, v = (float(q) for q in m.domain)
    xs = np.linspace(u, v, grid)
    j = m.eval2(xs)
    n = np.asarray(j.d2 / j.d1, dtype=float)
    c1 = float(np.max(np.abs(n)))
    c0 = float(np.max(np.abs(np.diff(n) / np.diff(xs))))
    return c0, c1

"""Generalized interval exchange maps: data model and constructors.

A map is a bijection of a half-open interval whose restriction to each of d
subintervals is an orientation-preserving C^2 homeomorphism; the images tile
the interval in a possibly different order.  Intervals follow the half-open
convention [a, b): branch lookup is left-closed, and the per-letter lengths
(not the cut points) are the primary stored quantities, so that cut points
are always consistent prefix sums even when levels shrink geometrically.

Three constructors cover the test families:

* :func:`standard_iem` - translation branches;
* :func:`piecewise_moebius` - each branch a fractional linear map, the
  family closed under renormalization;
* :func:`conjugated_rotation` - a rigid rotation conjugated by a smooth
  circle homeomorphism fixing 0, which inherits the rotation's
  renormalization path exactly.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from . import precision as pr
from . import smoothmap as sm
from .combinatorics import PermPair, default_letters, is_irreducible
from .errors import (
    BracketError,
    DomainError,
    GiemError,
    NonMonotoneBranchError,
    ReduciblePermError,
    TilingGapError,
)


@dataclass(frozen=True)
class Giem:
    """A generalized interval exchange map.

    ``lengths`` and ``image_lengths`` are indexed by letter index; branches
    map the closure of each domain interval onto the closure of its image
    slot.  Immutable after construction and safe to share.
    """

    perm: PermPair
    lengths: tuple
    image_lengths: tuple
    branches: tuple
    u0: object = 0.0

    @property
    def d(self) -> int:
        return self.perm.d

    @property
    def letters(self) -> tuple[str, ...]:
        return self.perm.letters

    @property
    def total(self):
        return sum(self.lengths)

    @property
    def eps(self) -> float:
        return pr.eps_of(self.lengths[0])

    def cuts(self) -> list:
        """Domain cut points u_0 < u_1 < ... < u_d as prefix sums."""
        out = [self.u0]
        for j in range(1, self.d + 1):
            li = self.perm.pi0.index(j)
            out.append(out[-1] + self.lengths[li])
        return out

    def image_cuts(self) -> list:
        """Image cut points w_0 < ... < w_d (tiles in image order)."""
        out = [self.u0]
        for j in range(1, self.d + 1):
            li = self.perm.pi1.index(j)
            out.append(out[-1] + self.image_lengths[li])
        return out

    def interval(self, letter: str) -> tuple:
        """Closure of the domain interval of ``letter``."""
        cuts = self.cuts()
        j = self.perm.pi0[self.perm.index(letter)]
        return cuts[j - 1], cuts[j]

    def image_interval(self, letter: str) -> tuple:
        cuts = self.image_cuts()
        j = self.perm.pi1[self.perm.index(letter)]
        return cuts[j - 1], cuts[j]

    def _lookup(self) -> tuple:
        """Cached (cut floats, letter index per domain position)."""
        cached = self.__dict__.get("_lookup_cache")
        if cached is None:
            cuts = self.cuts()
            letters = tuple(self.perm.pi0.index(j) for j in range(1, self.d + 1))
            cached = (cuts, [float(c) for c in cuts], letters)
            object.__setattr__(self, "_lookup_cache", cached)
        return cached

    def branch_at(self, x) -> tuple[int, sm.SmoothMap]:
        """Letter index and branch containing x (left-closed lookup)."""
        cuts, fcuts, letters = self._lookup()
        if x < cuts[0] or x >= cuts[-1]:
            raise DomainError(f"{x} outside [{cuts[0]}, {cuts[-1]})")
        if isinstance(x, (float, np.floating)):
            j = bisect_right(fcuts, float(x), 1, self.d)
        else:
            j = min(bisect_right(cuts, x), self.d)  # exotic scalars (mpmath)
        i = letters[j - 1]
        return i, self.branches[i]

    def apply(self, x):
        """f(x)."""
        _, branch = self.branch_at(x)
        return branch._jet(x).value

    def apply_jet(self, x) -> sm.Jet2:
        """Value and first two derivatives of the branch at x."""
        _, branch = self.branch_at(x)
        return branch._jet(x)

    def affine_slopes(self) -> list | None:
        """Per-letter branch slopes when every branch is affine, else None."""
        if not all(b.is_affine for b in self.branches):
            return None
        out = []
        for i, b in enumerate(self.branches):
            u, v = self.interval(self.letters[i])
            out.append(b._jet((u + v) / 2).d1)
        return out


@dataclass(frozen=True)
class SmoothnessReport:
    """Summary statistics of a validated map.

    ``V`` is the total variation of log Df (sum over branches of the
    integral of |n_f|, by quadrature); ``mean_nonlinearity`` is the exact
    telescoped integral of D2f/Df over the whole interval.  ``c0``/``c1``
    are per-letter Holder/sup bounds of the branch nonlinearities with
    exponent ``nu``.
    """

    V: float
    mean_nonlinearity: object
    c0: dict
    c1: dict
    nu: float = 1.0


class PiecewiseBranch(sm.SmoothMap):
    """Branch glued from sub-branches meeting C^2-continuously at interior
    cuts; used when regrouping a one-discontinuity map into two letters."""

    def __init__(self, pieces: Sequence[tuple[tuple, sm.SmoothMap]], tol: float = 1e-8):
        pieces = list(pieces)
        for (ia, _), (ib, _) in zip(pieces, pieces[1:]):
            if not ia[1] == ib[0]:
                raise ValueError("glued pieces must abut")
        for (ia, ma), (ib, mb) in zip(pieces, pieces[1:]):
            ja, jb = ma._jet(ia[1]), mb._jet(ib[0])
            gap = (
                abs(float(ja.value - jb.value))
                + abs(float(ja.d1 - jb.d1))
                + abs(float(ja.d2 - jb.d2))
            )
            if gap > tol:
                raise ValueError(f"pieces do not join C^2 at {ia[1]} (gap {gap:.3e})")
        self._pieces = pieces
        self.domain = (pieces[0][0][0], pieces[-1][0][1])

    def _jet(self, x) -> sm.Jet2:
        if isinstance(x, np.ndarray):
            v = np.empty_like(x)
            d1 = np.empty_like(x)
            d2 = np.empty_like(x)
            rights = [float(iv[1]) for iv, _ in self._pieces[:-1]]
            idx = np.searchsorted(rights, x, side="right")
            for k, (_, m) in enumerate(self._pieces):
                mask = idx == k
                if mask.any():
                    j = m._jet(x[mask])
                    v[mask], d1[mask], d2[mask] = j.value, j.d1, j.d2
            return sm.Jet2(v, d1, d2)
        for (ivl, m) in self._pieces[:-1]:
            if x < ivl[1]:
                return m._jet(x)
        return self._pieces[-1][1]._jet(x)

    @property
    def is_affine(self) -> bool:
        return all(m.is_affine for _, m in self._pieces)


def mean_nonlinearity(g: Giem):
    """Exact integral of D2f/Df over the whole interval: the telescoped sum
    over branches of log Df differences at the branch endpoints."""
    total = 0
    for i, letter in enumerate(g.letters):
        u, v = g.interval(letter)
        total = total + sm.nonlinearity_integral(g.branches[i], u, v)
    return total


def validate(g: Giem, tol: float = 1e-9, grid: int = 257) -> SmoothnessReport:
    """Check the interval-exchange contract and compute smoothness data.

    Verifies: irreducibility, positive lengths, branch images tiling the
    domain in image order within ``tol`` (relative to the total length),
    and positivity of the first derivative on a per-branch grid.
    """
    if not is_irreducible(g.perm):
        raise ReduciblePermError("combinatorial data is reducible")
    for length in list(g.lengths) + list(g.image_lengths):
        if not length > 0:
            raise NonMonotoneBranchError("lengths must be positive")
    total = float(g.total)
    if abs(float(sum(g.image_lengths)) - total) > tol * total:
        raise TilingGapError("domain and image lengths sum differently")

    c0: dict = {}
    c1: dict = {}
    V = 0.0
    mean = mean_nonlinearity(g)
    for i, letter in enumerate(g.letters):
        u, v = g.interval(letter)
        wl, wr = g.image_interval(letter)
        ju, jv = g.branches[i]._jet(u), g.branches[i]._jet(v)
        gap = max(abs(float(ju.value - wl)), abs(float(jv.value - wr)))
        if gap > tol * total:
            raise TilingGapError(
                f"branch {letter} maps [{u},{v}] to [{ju.value},{jv.value}], "
                f"expected [{wl},{wr}] (gap {gap:.3e})"
            )
        xs = np.linspace(float(u), float(v), grid)
        j = g.branches[i].eval2(xs)
        d1 = np.asarray(j.d1, dtype=float)
        if not np.all(d1 > 0):
            raise NonMonotoneBranchError(f"branch {letter} has non-positive derivative")
        n = np.asarray(j.d2, dtype=float) / d1
        V += float(simpson(np.abs(n), x=xs))
        c1[letter] = float(np.max(np.abs(n)))
        c0[letter] = float(np.max(np.abs(np.diff(n) / np.diff(xs)))) if grid > 1 else 0.0
    return SmoothnessReport(V=V, mean_nonlinearity=mean, c0=c0, c1=c1, nu=1.0)


def count_discontinuities(g: Giem, tol: float = 1e-9) -> int:
    """Number of interior cut points where the left limit of the map
    disagrees with its value; the map has genus one iff this is <= 2."""
    cuts = g.cuts()
    total = float(g.total)
    count = 0
    for j in range(1, g.d):
        left_letter = g.perm.pi0.index(j)
        right_letter = g.perm.pi0.index(j + 1)
        yl = g.branches[left_letter]._jet(cuts[j]).value
        yr = g.branches[right_letter]._jet(cuts[j]).value
        if abs(float(yl - yr)) > tol * total:
            count += 1
    return count


def has_genus_one(g: Giem, tol: float = 1e-9) -> bool:
    return count_discontinuities(g, tol) <= 2


def standard_iem(lengths: Sequence, pp: PermPair, u0=0.0) -> Giem:
    """Translation-branch interval exchange with the given lengths."""
    if len(lengths) != pp.d:
        raise ValueError("one length per letter")
    if not is_irreducible(pp):
        raise ReduciblePermError("combinatorial data is reducible")
    lengths = tuple(lengths)
    g0 = Giem(pp, lengths, lengths, (), u0)
    cuts, icuts = g0.cuts(), g0.image_cuts()
    branches = []
    for i in range(pp.d):
        u = cuts[pp.pi0[i] - 1]
        w = icuts[pp.pi1[i] - 1]
        branches.append(sm.Affine(1.0 * (u - u + 1), w - u, (u, cuts[pp.pi0[i]])))
    return Giem(pp, lengths, lengths, tuple(branches), u0)


def piecewise_moebius(
    lengths: Sequence,
    image_lengths: Sequence,
    pp: PermPair,
    params: Sequence,
    u0=0.0,
) -> Giem:
    """Exchange whose branch on each interval is the unique fractional
    linear map onto its image slot with zoomed normalization given by the
    per-letter parameter: zooming the branch over its full interval yields
    exactly the normalized Moebius map of that parameter."""
    d = pp.d
    if not (len(lengths) == len(image_lengths) == len(params) == d):
        raise ValueError("need one length, image length and parameter per letter")
    if abs(float(sum(lengths)) - float(sum(image_lengths))) > 1e-9 * float(sum(lengths)):
        raise ValueError("lengths and image_lengths must have equal totals")
    lengths, image_lengths = tuple(lengths), tuple(image_lengths)
    g0 = Giem(pp, lengths, image_lengths, (), u0)
    cuts, icuts = g0.cuts(), g0.image_cuts()
    branches = []
    for i in range(d):
        u, v = cuts[pp.pi0[i] - 1], cuts[pp.pi0[i]]
        w = icuts[pp.pi1[i] - 1]
        lam, mu = lengths[i], image_lengths[i]
        inner = sm.Affine(1 / lam, -u / lam, (u, v))
        outer = sm.Affine(mu, w, (0.0 * mu, 1.0 + 0.0 * mu))
        branches.append(sm.chain(inner, sm.MoebiusN(params[i]), outer))
    return Giem(pp, lengths, image_lengths, tuple(branches), u0)


def rotation_giem(rho, extra_cuts: Sequence = (), backend: pr.Backend | None = None) -> Giem:
    """Rigid rotation by rho on [0,1) as an exchange, with optional extra
    marked cut points (the map stays continuous across them)."""
    one = backend.real(1) if backend else 1.0 * (rho - rho + 1)
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    breakpt = one - rho
    pts = sorted(set([*extra_cuts, breakpt]))
    for p in pts:
        if not 0 < p < 1:
            raise ValueError("cuts must lie in (0, 1)")
    cuts = [0 * one] + pts + [one]
    d = len(cuts) - 1
    letters = default_letters(d)
    lengths_dom = [cuts[j + 1] - cuts[j] for j in range(d)]
    k = pts.index(breakpt) + 1  # intervals [0..k-1] shift right, rest wrap
    pi0 = tuple(range(1, d + 1))
    pi1 = tuple((j + (d - k)) % d + 1 for j in range(d))
    pp = PermPair(letters, pi0, pi1)
    return standard_iem(tuple(lengths_dom), pp)


def conjugate(h: sm.SmoothMap, g: Giem, tol: float = 1e-9) -> Giem:
    """The map h o g o h^{-1} on [0,1), for h an orientation-preserving
    homeomorphism of [0,1] fixing both endpoints.

    Cut points map through h, each branch becomes h o branch o h^{-1}, and
    the renormalization path of the result coincides combinatorially with
    that of g (first-return sets correspond under h)."""
    if isinstance(h, sm.Affine) and float(h.a) == 1.0 and float(h.b) == 0.0:
        return g
    hu, hv = (float(q) for q in h.domain)
    if abs(hu) > tol or abs(hv - 1) > tol:
        raise ValueError("conjugacy must be defined on [0,1]")
    if abs(float(h._jet(0.0 * g.total).value)) > tol or abs(float(h._jet(g.total).value) - float(g.total)) > tol:
        raise ValueError("conjugacy must fix 0 and 1")
    hinv = sm.inverse(h)
    cuts, icuts = g.cuts(), g.image_cuts()
    new_cuts = [h._jet(c).value for c in cuts]
    new_icuts = [h._jet(c).value for c in icuts]
    new_cuts[0], new_icuts[0] = cuts[0], icuts[0]
    new_cuts[-1], new_icuts[-1] = cuts[-1], icuts[-1]
    d = g.d
    lengths = [None] * d
    image_lengths = [None] * d
    branches: list = [None] * d
    for i in range(d):
        j0, j1 = g.perm.pi0[i], g.perm.pi1[i]
        lengths[i] = new_cuts[j0] - new_cuts[j0 - 1]
        image_lengths[i] = new_icuts[j1] - new_icuts[j1 - 1]
        piece = sm.Restrict(hinv, (new_cuts[j0 - 1], new_cuts[j0]))
        branches[i] = sm.chain(piece, g.branches[i], h)
    return Giem(g.perm, tuple(lengths), tuple(image_lengths), tuple(branches), g.u0)


def conjugated_rotation(
    h: sm.SmoothMap,
    rho,
    extra_cuts: Sequence = (),
    backend: pr.Backend | None = None,
) -> Giem:
    """Rotation by rho conjugated by the circle homeomorphism h (fixing 0),
    cut at the image of the rotation's discontinuity and at the images of
    any extra marked cuts.  One true discontinuity; the renormalization
    types follow the continued fraction of rho exactly."""
    return conjugate(h, rotation_giem(rho, extra_cuts, backend))


def calibrate_zero_mean(
    family: Callable[[float], Giem],
    bracket: tuple[float, float],
    tol: float = 1e-12,
    max_iter: int = 200,
) -> Giem:
    """Bisection on the family parameter until the mean nonlinearity of the
    member vanishes to ``tol``.  The bracket endpoints must produce means
    of opposite signs."""
    t0, t1 = bracket
    f0 = float(mean_nonlinearity(family(t0)))
    f1 = float(mean_nonlinearity(family(t1)))
    if abs(f0) < tol:
        return family(t0)
    if abs(f1) < tol:
        return family(t1)
    if f0 * f1 > 0:
        raise BracketError(f"mean nonlinearity has the same sign at both ends ({f0}, {f1})")
    for _ in range(max_iter):
        tm = 0.5 * (t0 + t1)
        g = family(tm)
        fm = float(mean_nonlinearity(g))
        if abs(fm) < tol:
            return g
        if f0 * fm < 0:
            t1 = tm
        else:
            t0, f0 = tm, fm
    raise GiemError(f"zero-mean calibration did not reach |mean| < {tol}")


def rotation_number_estimate(g: Giem, iters: int = 10000, x0: float = 0.0511) -> float:
    """Birkhoff estimate of the rotation number: the wrap frequency of an
    orbit of the induced circle map."""
    x = g.u0 + x0 * g.total
    wraps = 0
    for _ in range(iters):
        y = g.apply(x)
        if y < x:
            wraps += 1
        x = y
    return wraps / iters

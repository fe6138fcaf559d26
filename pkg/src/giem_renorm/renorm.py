"""The Rauzy-Veech engine: return-time recursion and its diagnostics.

The n-th renormalization of a map f is its first-return map to a shrinking
interval I^n sharing the left endpoint of the domain.  It is never
materialized as a composition tree: a level is a small record (per-letter
lengths, image lengths, return times, combinatorics), and whenever the
return map must actually be evaluated, the base map is iterated along the
orbit with branch lookup per step, jets accumulated by the chain rule.

One step cuts either the last image tile (type 0) or the last domain
interval (type 1); the loser letter inherits the winner's return time.  For
affine maps the image lengths follow from a per-letter slope recursion and
each step is O(d) exact arithmetic; for nonlinear maps a step costs one
orbit evaluation of the winner's return map (two endpoint transports).

All level data is backend-generic (binary64 or mpmath scalars).  The grid
diagnostics (zoomed branches, distances, partitions) run in binary64.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import precision as pr
from . import smoothmap as sm
from .combinatorics import PermPair, StepLabel, rauzy_move
from .errors import (
    BudgetExceededError,
    ConnectionError_,
    GiemError,
    MaxIterationError,
    PrecisionExhaustedError,
    TowerMismatchError,
    ValidationError,
)
from .giem import Giem, PiecewiseBranch, count_discontinuities, mean_nonlinearity, validate

TIE_FACTOR = 450.0  # 450 * eps(binary64) ~ 1e-13, scaled with the backend


@dataclass(frozen=True)
class LevelState:
    """One level of the renormalization tower.

    ``lengths``/``image_lengths`` are indexed by letter index, ``q`` holds
    the per-letter first-return times (exact integers), and ``split_seed``
    is the point whose forward orbit separates the refined partition pieces
    of this level inside those of the previous one (None at level 0).
    """

    level: int
    perm: PermPair
    lengths: tuple
    image_lengths: tuple
    q: tuple
    u0: object
    slopes: tuple | None = None
    split_seed: object | None = None

    @property
    def total(self):
        return sum(self.lengths)

    def index(self, letter: str) -> int:
        return self.perm.index(letter)

    def cuts(self) -> list:
        out = [self.u0]
        for j in range(1, self.perm.d + 1):
            out.append(out[-1] + self.lengths[self.perm.pi0.index(j)])
        return out

    def image_cuts(self) -> list:
        out = [self.u0]
        for j in range(1, self.perm.d + 1):
            out.append(out[-1] + self.image_lengths[self.perm.pi1.index(j)])
        return out

    def interval(self, letter: str) -> tuple:
        cuts = self.cuts()
        j = self.perm.pi0[self.index(letter)]
        return cuts[j - 1], cuts[j]

    def image_interval(self, letter: str) -> tuple:
        cuts = self.image_cuts()
        j = self.perm.pi1[self.index(letter)]
        return cuts[j - 1], cuts[j]


def initial_state(f: Giem) -> LevelState:
    return LevelState(
        level=0,
        perm=f.perm,
        lengths=tuple(f.lengths),
        image_lengths=tuple(f.image_lengths),
        q=tuple([1] * f.d),
        u0=f.u0,
        slopes=None if f.affine_slopes() is None else tuple(f.affine_slopes()),
    )


def detect_type(state: LevelState) -> tuple[int, str, str]:
    """Type of the next step with its winner and loser letters.

    Raises :class:`ConnectionError_` when the two competing lengths tie
    within 450 eps |I^n| (1e-13 |I^n| in binary64): the map is then not
    distinguishable from one with a connection and must not be forced on.
    """
    a0 = state.perm.letter_at(0, state.perm.d)
    a1 = state.perm.letter_at(1, state.perm.d)
    lam0 = state.lengths[state.index(a0)]
    mu1 = state.image_lengths[state.index(a1)]
    L = state.total
    tol = TIE_FACTOR * pr.eps_of(L) * L
    if abs(lam0 - mu1) <= tol:
        raise ConnectionError_(
            f"level {state.level}: |I_{a0}| and |f(I_{a1})| tie within {float(tol):.3e}"
        )
    if lam0 > mu1:
        return 0, a0, a1
    return 1, a1, a0


def _scalar_forward(f: Giem, state: LevelState, letter: str, pts: list) -> tuple[list, list]:
    """Transport scalar points lying in the closed interval of ``letter``
    through the level's return map (q iterations of the base map); returns
    the transported points and the branch itinerary.

    Float inputs ride a small numpy vector; exotic scalars (mpmath) take
    the generic per-point path.
    """
    lo, hi = state.interval(letter)
    items = [(lo + hi) / 2] + list(pts)
    q = state.q[state.index(letter)]
    itinerary = []
    if all(isinstance(p, (int, float, np.floating)) for p in items):
        cur = np.asarray([float(p) for p in items])
        for _ in range(q):
            bi, branch = f.branch_at(cur[0])
            itinerary.append(bi)
            cur = np.asarray(branch._jet(cur).value, dtype=float)
        return list(cur[1:]), itinerary
    cur = items
    for _ in range(q):
        bi, branch = f.branch_at(cur[0])
        itinerary.append(bi)
        cur = [branch._jet(p).value for p in cur]
    return cur[1:], itinerary


def _scalar_backward(f: Giem, state: LevelState, letter: str, y):
    """Preimage of y under the level's return map on ``letter``."""
    _, itinerary = _scalar_forward(f, state, letter, [])
    inverses: dict = {}
    x = y
    for bi in reversed(itinerary):
        if bi not in inverses:
            inverses[bi] = sm.inverse(f.branches[bi])
        x = inverses[bi]._jet(x).value
    return x


def step(state: LevelState, f: Giem) -> tuple[LevelState, StepLabel]:
    """One induction step.

    Cuts the level interval, updates lengths, image lengths and return
    times (loser gains the winner's time), and applies the combinatorial
    move.  Nonlinear maps pay one winner-orbit evaluation to place the new
    image cut (type 0, forward) or the new domain cut (type 1, backward).
    """
    eps, winner, loser = detect_type(state)
    d = state.perm.d
    w, l = state.index(winner), state.index(loser)
    lengths = list(state.lengths)
    mus = list(state.image_lengths)
    q = list(state.q)
    slopes = list(state.slopes) if state.slopes is not None else None
    L = state.total
    total0 = f.total
    scale_eps = pr.eps_of(L)

    if eps == 0:
        # remove the last image tile f_n(I_loser); the winner (domain-last)
        # shrinks from the right, the loser's new tile is f_n of its old one
        mu_l = mus[l]
        seed = state.u0 + L - mu_l  # left endpoint of the removed tile
        lengths[w] = lengths[w] - mu_l
        if slopes is not None:
            slopes[l] = slopes[l] * slopes[w]
            new_mu_l = slopes[l] * lengths[l]
        else:
            lo_w, hi_w = state.interval(winner)
            (y_seed, y_lo, y_hi), _ = _scalar_forward(f, state, winner, [seed, lo_w, hi_w])
            new_mu_l = y_hi - y_seed
            tile_w = y_hi - y_lo
            if abs(float(tile_w - mus[w])) > 1e-8 * float(total0):
                raise TowerMismatchError(
                    f"level {state.level}: transported winner tile length "
                    f"{float(tile_w)} vs stored {float(mus[w])}"
                )
        mus[w] = mus[w] - new_mu_l
        mus[l] = new_mu_l
    else:
        # remove the last domain interval I_loser; the winner's interval
        # splits, its right part becomes the loser's new home
        lam_l = lengths[l]
        target = state.u0 + L - lam_l  # left endpoint of the removed interval
        mus[w] = mus[w] - lam_l
        if slopes is not None:
            new_lam_w = lengths[w] - lam_l / slopes[w]
            slopes[l] = slopes[l] * slopes[w]
        else:
            P = _scalar_backward(f, state, winner, target)
            new_lam_w = P - state.interval(winner)[0]
        seed = state.interval(winner)[0] + new_lam_w
        lengths[l] = lengths[w] - new_lam_w
        lengths[w] = new_lam_w

    q[l] = q[l] + q[w]
    new_perm = rauzy_move(state.perm, eps)
    label = StepLabel(level=state.level, type=eps, winner=winner, loser=loser)

    Lnew = sum(lengths)
    if min(float(x) for x in lengths) <= 0 or min(float(x) for x in mus) <= 0:
        raise PrecisionExhaustedError(f"level {state.level + 1}: length underflow")
    if float(Lnew) < 100.0 * scale_eps * float(total0):
        raise PrecisionExhaustedError(
            f"level {state.level + 1}: |I| = {float(Lnew):.3e} below resolution"
        )
    new_state = LevelState(
        level=state.level + 1,
        perm=new_perm,
        lengths=tuple(lengths),
        image_lengths=tuple(mus),
        q=tuple(q),
        u0=state.u0,
        slopes=None if slopes is None else tuple(slopes),
        split_seed=seed,
    )
    return new_state, label


@dataclass
class RenormTrace:
    """A renormalization run: level states, step labels, and lazy caches
    for the refined-partition levels used by partitions and cylinders."""

    giem: Giem
    states: list
    steps: list
    stop_reason: str
    _tilde: dict = field(default_factory=dict, repr=False)

    @property
    def achieved(self) -> int:
        """Deepest level reached (states run 0..achieved)."""
        return len(self.steps)

    def types(self) -> list[int]:
        return [s.type for s in self.steps]

    def state(self, n: int) -> LevelState:
        return self.states[n]


def renormalize(f: Giem, n_max: int, check: bool = True) -> RenormTrace:
    """Run up to ``n_max`` induction steps, stopping cleanly on a tie
    (connection suspected) or on precision exhaustion."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if check:
        validate(f)
    states = [initial_state(f)]
    steps: list[StepLabel] = []
    stop = "n_max"
    for _ in range(n_max):
        try:
            new_state, label = step(states[-1], f)
        except ConnectionError_:
            stop = "connection-tie"
            break
        except PrecisionExhaustedError:
            stop = "precision-exhausted"
            break
        states.append(new_state)
        steps.append(label)
    return RenormTrace(f, states, steps, stop)


# ---------------------------------------------------------------------------
# orbit transport (vectorized, binary64)
# ---------------------------------------------------------------------------


def _transport(f: Giem, state: LevelState, letter: str, xs: np.ndarray):
    """Iterate the base map q times over ``xs`` (points of the closed
    interval of ``letter``), accumulating jets by the chain rule.

    Returns (jets of xs, pieces, orbit_sum): ``pieces`` lists the interval
    endpoints (a_i, b_i) of f^i(I_letter) for i = 0..q (the last entry is
    the image tile), and ``orbit_sum`` is the accumulated per-branch
    nonlinearity integral over the orbit pieces i = 0..q-1.
    """
    lo, hi = (float(t) for t in state.interval(letter))
    pts = np.concatenate(([lo, 0.5 * (lo + hi), hi], np.asarray(xs, dtype=float)))
    v = pts
    d1 = np.ones_like(pts)
    d2 = np.zeros_like(pts)
    pieces = []
    orbit_sum = 0.0
    dom_lo = float(f.u0) - 1e-9
    dom_hi = float(f.u0 + f.total) + 1e-9
    for _ in range(state.q[state.index(letter)]):
        pieces.append((v[0], v[2]))
        _, branch = f.branch_at(v[1])
        j = branch._jet(v)
        jd1, jd2 = j.d1, j.d2
        if not isinstance(jd1, np.ndarray):
            jd1 = np.full_like(v, float(jd1))
        if not isinstance(jd2, np.ndarray):
            jd2 = np.full_like(v, float(jd2))
        orbit_sum += math.log(jd1[2]) - math.log(jd1[0])
        d2 = jd2 * d1 * d1 + jd1 * d2
        d1 = jd1 * d1
        v = np.asarray(j.value, dtype=float)
        if not (v[0] >= dom_lo and v[2] <= dom_hi):
            raise TowerMismatchError(f"orbit left the domain at level {state.level}")
    pieces.append((v[0], v[2]))
    return sm.Jet2(v, d1, d2), pieces, orbit_sum


def zoomed_branch(trace: RenormTrace, n: int, alpha: str, grid: int = 257) -> sm.Jet2:
    """Jets on a uniform grid of [0,1] of the zoom of the level-n return
    map over I_alpha^n: the orbit-evaluated f^q, affinely rescaled so the
    result fixes 0 and 1."""
    state = trace.state(n)
    lo, hi = (float(t) for t in state.interval(alpha))
    xs = lo + np.linspace(0.0, 1.0, grid) * (hi - lo)
    jets, _, _ = _transport(trace.giem, state, alpha, xs)
    y0, y1 = jets.value[0], jets.value[2]
    span = y1 - y0
    lam = hi - lo
    return sm.Jet2(
        (jets.value[3:] - y0) / span,
        jets.d1[3:] * (lam / span),
        jets.d2[3:] * (lam * lam / span),
    )


def mean_nonlinearity_level(trace: RenormTrace, n: int, alpha: str, method: str = "chain"):
    """Integral of the nonlinearity of the level-n return map over
    I_alpha^n.

    ``chain``: log D(f^q) difference at the interval endpoints, with the
    derivative accumulated along the orbit.  ``orbit``: the telescoped sum
    of per-branch integrals over the orbit pieces.  The two are
    algebraically identical and must agree to rounding.
    """
    state = trace.state(n)
    jets, _, orbit_sum = _transport(trace.giem, state, alpha, np.empty(0))
    if method == "chain":
        return math.log(jets.d1[2]) - math.log(jets.d1[0])
    if method == "orbit":
        return orbit_sum
    raise ValueError("method must be 'chain' or 'orbit'")


def first_return_bruteforce(
    f: Giem,
    J: tuple,
    max_iter: int = 10**7,
    points: Sequence | None = None,
    n_points: int = 100,
):
    """Independent oracle: iterate the raw map until each point returns to
    J, reporting entry times and values.  Used to cross-check the
    return-time recursion; never used to build it."""
    a, b = J
    if points is None:
        pad = (b - a) / (4 * n_points)
        points = np.linspace(float(a) + float(pad), float(b) - float(pad), n_points)
    times = []
    values = []
    for x in points:
        y = f.apply(x)
        t = 1
        while not (a <= y < b):
            y = f.apply(y)
            t += 1
            if t > max_iter:
                raise MaxIterationError(f"no return to [{a},{b}) from {x} in {max_iter} steps")
        times.append(t)
        values.append(y)
    return np.asarray(points, dtype=float), np.asarray(times), np.asarray(values, dtype=float)


# ---------------------------------------------------------------------------
# refined partitions (the orbit intervals of each level)
# ---------------------------------------------------------------------------


@dataclass
class TildeLevel:
    """Level-n refined partition {f^i(I_alpha^n), 1 <= i <= q_alpha^n} in
    position order, with parent links into the previous level and the
    branching label chi of each piece."""

    level: int
    lefts: np.ndarray
    rights: np.ndarray
    letter: np.ndarray  # letter index
    idx: np.ndarray  # orbit index i, 1..q
    parent: np.ndarray  # position of the containing piece one level up
    chi: np.ndarray  # 0/1 label of the piece's own letter

    @property
    def size(self) -> int:
        return len(self.lefts)

    def lengths(self) -> np.ndarray:
        return self.rights - self.lefts


def _tilde_zero(trace: RenormTrace) -> TildeLevel:
    state = trace.state(0)
    icuts = [float(c) for c in state.image_cuts()]
    d = state.perm.d
    letters = np.array([state.perm.pi1.index(j) for j in range(1, d + 1)], dtype=np.int64)
    return TildeLevel(
        0,
        np.asarray(icuts[:-1]),
        np.asarray(icuts[1:]),
        letters,
        np.ones(d, dtype=np.int64),
        np.full(d, -1, dtype=np.int64),
        np.zeros(d, dtype=np.int8),
    )


_TILDE_KEEP_SMALL = 250_000  # cache levels with at most this many pieces


def tilde_level(trace: RenormTrace, n: int, budget: int = 20_000_000) -> TildeLevel:
    """Refined partition at level n, built incrementally by splitting the
    winner pieces of each step at the forward orbit of its seed point.
    Linear work in the partition size; levels are cached while small."""
    if n > trace.achieved:
        raise ValueError(f"level {n} beyond achieved depth {trace.achieved}")
    if n in trace._tilde:
        return trace._tilde[n]
    start = max((m for m in trace._tilde if m < n), default=-1)
    cur = trace._tilde[start] if start >= 0 else _tilde_zero(trace)
    if start < 0:
        trace._tilde[0] = cur
        start = 0
    f = trace.giem
    for m in range(start + 1, n + 1):
        label = trace.steps[m - 1]
        st_prev = trace.state(m - 1)
        if (sum(st_prev.q) + st_prev.q[st_prev.index(label.winner)]) * st_prev.perm.d > budget:
            raise BudgetExceededError(f"partition at level {m} exceeds budget {budget}")
        cur = _tilde_step(f, cur, st_prev, label, float(trace.state(m).split_seed))
        if cur.size <= _TILDE_KEEP_SMALL or m == n:
            trace._tilde[m] = cur
        trace._tilde = {
            k: v
            for k, v in trace._tilde.items()
            if v.size <= _TILDE_KEEP_SMALL or k == max(trace._tilde)
        }
    return cur


def _tilde_step(
    f: Giem, prev: TildeLevel, st: LevelState, label: StepLabel, seed: float
) -> TildeLevel:
    w = st.index(label.winner)
    l = st.index(label.loser)
    eps = label.type
    q_w = st.q[w]
    q_l = st.q[l]

    # forward orbit of the seed: split point of the winner piece with idx i
    C = np.empty(q_w + 1)
    C[0] = seed
    cur = seed
    for i in range(1, q_w + 1):
        cur = float(f.apply(cur))
        C[i] = cur

    is_w = prev.letter == w
    is_l = prev.letter == l
    N = prev.size
    slots = np.arange(N, dtype=np.int64) + np.concatenate(([0], np.cumsum(is_w)[:-1]))
    M = N + q_w
    lefts = np.empty(M)
    rights = np.empty(M)
    letter = np.empty(M, dtype=np.int64)
    idx = np.empty(M, dtype=np.int64)
    parent = np.empty(M, dtype=np.int64)
    chi = np.empty(M, dtype=np.int8)

    # carried pieces (and the left halves of the split winner pieces)
    lefts[slots] = prev.lefts
    rights[slots] = np.where(is_w, C[np.minimum(prev.idx, q_w)], prev.rights)
    letter[slots] = prev.letter
    idx[slots] = np.where(is_l, prev.idx + (0 if eps == 0 else q_w), prev.idx)
    parent[slots] = np.arange(N)
    chi[slots] = np.where(is_l, 1 - eps, 0).astype(np.int8)

    # right halves of the winner pieces become the loser's new orbit pieces
    wslots = slots[is_w] + 1
    cw = C[prev.idx[is_w]]
    lefts[wslots] = cw
    rights[wslots] = prev.rights[is_w]
    letter[wslots] = l
    idx[wslots] = prev.idx[is_w] + (q_l if eps == 0 else 0)
    parent[wslots] = np.arange(N)[is_w]
    chi[wslots] = eps

    bad = np.where((cw <= prev.lefts[is_w]) | (cw >= prev.rights[is_w]))[0]
    if bad.size:
        raise TowerMismatchError(
            f"level {st.level}: split point escaped its piece (first at {bad[0]})"
        )
    return TildeLevel(st.level + 1, lefts, rights, letter, idx, parent, chi)


@dataclass
class PartitionSnapshot:
    """The dynamical partition {f^i(I_alpha^n): 0 <= i < q_alpha^n} with
    (letter, i) tags, in position order."""

    level: int
    lefts: np.ndarray
    rights: np.ndarray
    letter: np.ndarray
    idx: np.ndarray
    norm: float

    @property
    def size(self) -> int:
        return len(self.lefts)

    def lengths(self) -> np.ndarray:
        return self.rights - self.lefts


def partition(trace: RenormTrace, n: int, budget: int = 20_000_000) -> PartitionSnapshot:
    """Level-n dynamical partition, derived from the refined level by
    replacing each letter's final tile with its level interval (i = 0)."""
    tl = tilde_level(trace, n, budget)
    state = trace.state(n)
    qs = np.array([state.q[i] for i in range(state.perm.d)], dtype=np.int64)
    keep = tl.idx < qs[tl.letter]
    cuts = [float(c) for c in state.cuts()]
    base_lefts = np.asarray(cuts[:-1])
    base_rights = np.asarray(cuts[1:])
    base_letter = np.array(
        [state.perm.pi0.index(j) for j in range(1, state.perm.d + 1)], dtype=np.int64
    )
    lefts = np.concatenate((tl.lefts[keep], base_lefts))
    rights = np.concatenate((tl.rights[keep], base_rights))
    letter = np.concatenate((tl.letter[keep], base_letter))
    idx = np.concatenate((tl.idx[keep], np.zeros(state.perm.d, dtype=np.int64)))
    order = np.argsort(lefts)
    lefts, rights, letter, idx = lefts[order], rights[order], letter[order], idx[order]
    return PartitionSnapshot(n, lefts, rights, letter, idx, float(np.max(rights - lefts)))


def partition_norms(trace: RenormTrace, n_hi: int, budget: int = 20_000_000) -> list[float]:
    """|P^n| for n = 0..n_hi, built with rolling memory."""
    out = []
    for n in range(n_hi + 1):
        out.append(partition(trace, n, budget).norm)
    return out


# ---------------------------------------------------------------------------
# level diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    """Per-(level, letter) convergence diagnostics.

    ``d_moebius`` and ``d_identity`` are grid C^2 distances of the zoomed
    return-map branch from the normalized Moebius map with the same mean
    nonlinearity and from the identity; ``thm2_residual`` is
    |N - ell_star * meanN(f)|, the residual of the weighting law tying the
    level mean nonlinearity to the orbit occupation measure.
    """

    n: int
    alpha: str
    N_alpha_n: float
    d_moebius: float
    d_identity: float
    thm2_residual: float
    len_I_n: float
    P_norm: float
    ell_star: float
    N_orbit: float


def convergence_table(
    trace: RenormTrace, n_max: int | None = None, grid: int = 257
) -> list[ConvergenceRow]:
    """One row per (level, letter) up to ``n_max`` (default: the full
    trace), computed from a single orbit transport per pair."""
    f = trace.giem
    mean_base = float(mean_nonlinearity(f))
    total = float(f.total)
    n_hi = trace.achieved if n_max is None else min(n_max, trace.achieved)
    rows = []
    id_jet = None
    for n in range(n_hi + 1):
        state = trace.state(n)
        len_I = float(state.total)
        per_alpha = []
        p_norm = 0.0
        for alpha in state.perm.letters:
            lo, hi = (float(t) for t in state.interval(alpha))
            xs = lo + np.linspace(0.0, 1.0, grid) * (hi - lo)
            jets, pieces, orbit_sum = _transport(f, state, alpha, xs)
            y0, y1 = jets.value[0], jets.value[2]
            span = y1 - y0
            lam = hi - lo
            zj = sm.Jet2(
                (jets.value[3:] - y0) / span,
                jets.d1[3:] * (lam / span),
                jets.d2[3:] * (lam * lam / span),
            )
            N = math.log(jets.d1[2]) - math.log(jets.d1[0])
            ell = sum(b - a for a, b in pieces[1:]) / total
            p_norm = max(p_norm, max(b - a for a, b in pieces[:-1]))
            per_alpha.append((alpha, N, orbit_sum, ell, zj, xs, lo, lam))
        if id_jet is None or len(id_jet.value) != grid:
            t = np.linspace(0.0, 1.0, grid)
            id_jet = sm.Jet2(t, np.ones_like(t), np.zeros_like(t))
        for alpha, N, orbit_sum, ell, zj, xs, lo, lam in per_alpha:
            t = np.linspace(0.0, 1.0, grid)
            mj = sm.MoebiusN(N).eval2(t)
            rows.append(
                ConvergenceRow(
                    n=n,
                    alpha=alpha,
                    N_alpha_n=N,
                    d_moebius=sm.c2_distance_jets(zj, mj),
                    d_identity=sm.c2_distance_jets(zj, id_jet),
                    thm2_residual=abs(N - ell * mean_base),
                    len_I_n=len_I,
                    P_norm=p_norm,
                    ell_star=ell,
                    N_orbit=orbit_sum,
                )
            )
    return rows


@dataclass(frozen=True)
class GeometryReport:
    """Length-ratio and derivative bounds at one level: domain and image
    max/min interval ratios, the loser/winner size ratio of the step taken
    at this level, and grid bounds of the return-map derivative."""

    n: int
    domain_ratio: float
    image_ratio: float
    winner_loser_ratio: float | None
    d1_inf: float
    d1_sup: float


def geometry_report(trace: RenormTrace, n: int, grid: int = 65) -> GeometryReport:
    state = trace.state(n)
    lams = [float(x) for x in state.lengths]
    mus = [float(x) for x in state.image_lengths]
    ratio = None
    if n < len(trace.steps):
        label = trace.steps[n]
        w, l = state.index(label.winner), state.index(label.loser)
        if label.type == 0:
            ratio = mus[l] / lams[w]
        else:
            ratio = lams[l] / mus[w]
    d1_inf, d1_sup = np.inf, 0.0
    for alpha in state.perm.letters:
        lo, hi = (float(t) for t in state.interval(alpha))
        xs = lo + np.linspace(0.0, 1.0, grid) * (hi - lo)
        jets, _, _ = _transport(trace.giem, state, alpha, xs)
        d1_inf = min(d1_inf, float(np.min(jets.d1[3:])))
        d1_sup = max(d1_sup, float(np.max(jets.d1[3:])))
    return GeometryReport(
        n=n,
        domain_ratio=max(lams) / min(lams),
        image_ratio=max(mus) / min(mus),
        winner_loser_ratio=ratio,
        d1_inf=d1_inf,
        d1_sup=d1_sup,
    )


# ---------------------------------------------------------------------------
# two-letter regrouping and the accelerated towers
# ---------------------------------------------------------------------------


def group_two(f: Giem, tol: float = 1e-9) -> Giem:
    """Regroup a one-discontinuity map into a two-letter exchange by
    merging the intervals on each side of the discontinuity; branches are
    the original ones glued across the continuous cuts."""
    if f.d == 2:
        return f
    nd = count_discontinuities(f, tol)
    if nd != 1:
        raise ValidationError(f"regrouping needs exactly one discontinuity, found {nd}")
    cuts = f.cuts()
    total = float(f.total)
    jump = None
    for j in range(1, f.d):
        il = f.perm.pi0.index(j)
        ir = f.perm.pi0.index(j + 1)
        yl = f.branches[il]._jet(cuts[j]).value
        yr = f.branches[ir]._jet(cuts[j]).value
        if abs(float(yl - yr)) > tol * total:
            jump = j
            break
    pieces_a = []
    pieces_b = []
    for j in range(1, f.d + 1):
        i = f.perm.pi0.index(j)
        piece = ((cuts[j - 1], cuts[j]), f.branches[i])
        (pieces_a if j <= jump else pieces_b).append(piece)
    branch_a = PiecewiseBranch(pieces_a) if len(pieces_a) > 1 else pieces_a[0][1]
    branch_b = PiecewiseBranch(pieces_b) if len(pieces_b) > 1 else pieces_b[0][1]
    lam_a = cuts[jump] - cuts[0]
    lam_b = cuts[-1] - cuts[jump]
    ya0 = branch_a._jet(cuts[0]).value
    ya1 = branch_a._jet(cuts[jump]).value
    yb0 = branch_b._jet(cuts[jump]).value
    yb1 = branch_b._jet(cuts[-1]).value
    if abs(float(yb0 - cuts[0])) > tol * total or abs(float(ya1 - cuts[-1])) > tol * total:
        raise ValidationError("regrouped map does not exchange two intervals")
    pp = PermPair(("A", "B"), (1, 2), (2, 1))
    return Giem(pp, (lam_a, lam_b), (ya1 - ya0, yb1 - yb0), (branch_a, branch_b), f.u0)


@dataclass(frozen=True)
class TowerCorrespondence:
    """Alignment of the two-letter tower with the d-letter tower: the
    d-level index m_i matching each 2-level i, the gaps between them, the
    accelerated (type-change) subsequence, and the worst observed
    disagreements."""

    m: list
    gaps: list
    rot_indices: list
    max_cut_diff: float
    max_value_diff: float


def compare_towers(
    f: Giem, i_max: int, tol: float = 1e-9, samples: int = 12
) -> TowerCorrespondence:
    """Run the two-letter and d-letter renormalizations independently and
    align them level by level.

    For each 2-level i the matching d-level m_i must reproduce the same
    interval, contain the 2-level cut among its cuts, and assign every
    sample point the same return time and return value (checked against
    the raw map).  A failed alignment raises :class:`TowerMismatchError`
    with the offending state.
    """
    f2 = group_two(f, tol)
    trace2 = renormalize(f2, i_max)
    if trace2.achieved < i_max:
        raise GiemError(f"two-letter tower stopped at {trace2.achieved} ({trace2.stop_reason})")
    traced = renormalize(f, i_max * max(2, f.d) + 4)
    total = float(f.total)
    m_list: list[int] = []
    max_cut = 0.0
    max_val = 0.0
    m_prev = 0
    for i in range(1, i_max + 1):
        st2 = trace2.state(i)
        L2 = float(st2.total)
        m_found = None
        for m in range(m_prev + 1, traced.achieved + 1):
            Ld = float(traced.state(m).total)
            if abs(Ld - L2) <= tol * total:
                m_found = m
                break
            if Ld < L2 - tol * total:
                break
        if m_found is None:
            raise TowerMismatchError(
                f"no d-level matches 2-level {i} (|I|={L2}); "
                f"d-levels near: {[float(traced.state(m).total) for m in range(m_prev, min(m_prev + 4, traced.achieved + 1))]}"
            )
        std = traced.state(m_found)
        cut2 = float(st2.cuts()[1])
        dcuts = [float(c) for c in std.cuts()]
        cdiff = min(abs(c - cut2) for c in dcuts)
        if cdiff > tol * total:
            raise TowerMismatchError(f"2-level {i} cut {cut2} missing from d-level {m_found} cuts")
        max_cut = max(max_cut, cdiff)

        lo = float(std.u0)
        hi = lo + float(std.total)
        pts = np.linspace(lo, hi, samples + 2)[1:-1]
        pts = [p for p in pts if min(abs(p - c) for c in dcuts + [float(c) for c in st2.cuts()]) > 1e-4 * (hi - lo)]
        _, times, values = first_return_bruteforce(f, (lo, hi), points=pts)
        cuts2 = [float(c) for c in st2.cuts()]
        for p, t, y in zip(pts, times, values):
            letter_d = std.perm.letter_at(0, min(bisect_right(dcuts, p), f.d))
            letter_2 = st2.perm.letter_at(0, min(bisect_right(cuts2, p), 2))
            qd = std.q[std.index(letter_d)]
            q2 = st2.q[st2.index(letter_2)]
            if not (qd == q2 == t):
                raise TowerMismatchError(
                    f"return times disagree at 2-level {i}, d-level {m_found}, x={p}: "
                    f"d-tower {qd}, 2-tower {q2}, brute force {t}"
                )
            yd = float(_scalar_forward(f, std, letter_d, [p])[0][0])
            y2 = float(_scalar_forward(f2, st2, letter_2, [p])[0][0])
            vdiff = max(abs(yd - y), abs(y2 - y))
            if vdiff > tol * total:
                raise TowerMismatchError(
                    f"return values disagree at 2-level {i}, d-level {m_found}, x={p}: "
                    f"d-tower {yd}, 2-tower {y2}, brute force {y}"
                )
            max_val = max(max_val, vdiff)
        m_list.append(m_found)
        m_prev = m_found
    gaps = [m_list[0]] + [b - a for a, b in zip(m_list, m_list[1:])]
    types2 = trace2.types()
    rot = [0]
    for n in range(1, len(types2)):
        if types2[n] != types2[rot[-1]]:
            rot.append(n)
    return TowerCorrespondence(m_list, gaps, rot, max_cut, max_val)


# ---------------------------------------------------------------------------
# closed-form tower for fractional linear maps, and rotation-class calibration
# ---------------------------------------------------------------------------


def _moebius_apply(mat, x):
    a, b, c, d = mat
    return (a * x + b) / (c * x + d)


def _moebius_inv(mat, y):
    a, b, c, d = mat
    return (d * y - b) / (-c * y + a)


def _moebius_mul(m2, m1):
    """Matrix of x -> m2(m1(x)), scaled to unit max entry (the map is
    projective, and determinant-based normalization cancels
    catastrophically once the entries grow like 1/|I^n|)."""
    a2, b2, c2, d2 = m2
    a1, b1, c1, d1 = m1
    out = (a2 * a1 + b2 * c1, a2 * b1 + b2 * d1, c2 * a1 + d2 * c1, c2 * b1 + d2 * d1)
    s = max(abs(v) for v in out)
    return tuple(v / s for v in out)


def moebius_tower(g: Giem, depth: int):
    """Exact renormalization of a fractional linear exchange, stepping the
    branch matrices in closed form (O(1) per level).

    Serves as an independent oracle for the orbit-based engine on Moebius
    families and powers the rotation-class calibration.  Returns (types,
    states) where states are (lengths, image_lengths, q, perm, mats).
    """
    mats = []
    for br in g.branches:
        mat = sm.as_moebius_matrix(br)
        if mat is None:
            raise ValueError("map is not piecewise fractional linear")
        mats.append(mat)
    perm = g.perm
    lengths = [float(x) for x in g.lengths]
    mus = [float(x) for x in g.image_lengths]
    q = [1] * g.d
    u0 = float(g.u0)
    types = []
    states = [(tuple(lengths), tuple(mus), tuple(q), perm, tuple(mats))]
    for _ in range(depth):
        L = sum(lengths)
        a0 = perm.letter_at(0, perm.d)
        a1 = perm.letter_at(1, perm.d)
        i0, i1 = perm.index(a0), perm.index(a1)
        tol = TIE_FACTOR * pr.BINARY64_EPS * L
        if abs(lengths[i0] - mus[i1]) <= tol or L < 100 * pr.BINARY64_EPS:
            break
        if lengths[i0] > mus[i1]:
            # type 0: the loser's new branch applies its old branch first,
            # then the winner's (the loser interval is unchanged)
            eps, w, l = 0, i0, i1
            seed = u0 + L - mus[l]
            y = _moebius_apply(mats[w], seed)
            tile_w_right = _moebius_apply(mats[w], u0 + L)
            lengths[w] -= mus[l]
            new_mu_l = tile_w_right - y
            mats[l] = _moebius_mul(mats[w], mats[l])
            mus[w] -= new_mu_l
            mus[l] = new_mu_l
        else:
            # type 1: the loser moves into the winner's right part and
            # applies the winner's branch first, then its old one
            eps, w, l = 1, i1, i0
            target = u0 + L - lengths[l]
            P = _moebius_inv(mats[w], target)
            cuts = [u0]
            for j in range(1, perm.d + 1):
                cuts.append(cuts[-1] + lengths[perm.pi0.index(j)])
            lo_w = cuts[perm.pi0[w] - 1]
            mus[w] -= lengths[l]
            new_lam_w = P - lo_w
            new_lam_l = lengths[w] - new_lam_w
            mats[l] = _moebius_mul(mats[l], mats[w])
            lengths[w] = new_lam_w
            lengths[l] = new_lam_l
        q[l] += q[w]
        perm = rauzy_move(perm, eps)
        types.append(eps)
        states.append((tuple(lengths), tuple(mus), tuple(q), perm, tuple(mats)))
    return types, states


def rotation_interval_of_types(types: Sequence[int]) -> tuple[float, float]:
    """The interval of rotation numbers whose two-letter induction starts
    with the given type sequence.

    Works on the length ratio r = rho/(1-rho): a type-0 step maps
    r -> r - 1 (needs r > 1) and a type-1 step maps r -> r/(1-r) (needs
    r < 1).  Pulling (0, inf) back through the inverses of the observed
    steps gives the consistency interval, converted back to rho.
    """
    lo, hi = 0.0, math.inf
    for eps in reversed(list(types)):
        if eps == 0:
            lo, hi = lo + 1.0, hi + 1.0
        else:
            lo = lo / (1.0 + lo)
            hi = 1.0 if math.isinf(hi) else hi / (1.0 + hi)
    to_rho = lambda r: 1.0 if math.isinf(r) else r / (1.0 + r)
    return to_rho(lo), to_rho(hi)


def calibrate_rotation_class(
    family: Callable[[float], Giem],
    bracket: tuple[float, float],
    target_rho: float,
    depth: int,
    max_iter: int = 220,
) -> tuple[float, Giem]:
    """Bisection on a monotone one-parameter family of two-letter
    fractional linear exchanges until the induction type sequence matches
    that of the rotation by ``target_rho`` for ``depth`` levels.

    The comparator reconstructs, from the observed type prefix, the
    interval of rotation numbers consistent with it; the family parameter
    moves toward the side containing the target.  Requires the family's
    rotation number to be nondecreasing in t.
    """
    t_lo, t_hi = bracket
    target_types = None  # lazily compared through the rotation-number interval
    best: tuple[int, float] = (-1, t_lo)

    def match_depth(types) -> int:
        """Levels for which the prefix stays consistent with the target."""
        for m in range(len(types), 0, -1):
            lo, hi = rotation_interval_of_types(types[:m])
            if lo < target_rho < hi:
                return m
        return 0

    def direction(t: float) -> int:
        nonlocal best
        types, _ = moebius_tower(family(t), depth)
        lo, hi = rotation_interval_of_types(types)
        md = match_depth(types)
        if md > best[0]:
            best = (md, t)
        if len(types) >= depth and lo < target_rho < hi:
            return 0
        if hi <= target_rho:
            return 1  # rho(t) too small: raise t
        if lo >= target_rho:
            return -1
        # prefix consistent but the tower stopped early (tie): compare the
        # Farey point of the collapsed prefix against the target
        r = 1.0
        for e in reversed(types):
            r = r + 1.0 if e == 0 else r / (1.0 + r)
        return 1 if target_rho > r / (1.0 + r) else -1

    d_lo, d_hi = direction(t_lo), direction(t_hi)
    if d_lo == 0:
        return t_lo, family(t_lo)
    if d_hi == 0:
        return t_hi, family(t_hi)
    if not (d_lo > 0 > d_hi):
        raise GiemError(f"bracket does not straddle the target ({d_lo}, {d_hi})")
    for _ in range(max_iter):
        tm = 0.5 * (t_lo + t_hi)
        if not t_lo < tm < t_hi:
            break  # bracket collapsed to adjacent floats
        dm = direction(tm)
        if dm == 0:
            return tm, family(tm)
        if dm > 0:
            t_lo = tm
        else:
            t_hi = tm
    if best[0] >= depth:
        return best[1], family(best[1])
    raise GiemError(
        f"rotation-class calibration reached depth {best[0]} < {depth}; "
        "the parameter window is below float resolution"
    )

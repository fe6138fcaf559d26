"""Combinatorics of permutation pairs for interval exchange maps.

A d-letter exchange carries a pair of bijections ``pi0, pi1`` from the
alphabet onto ``{1..d}``: ``pi0`` orders the subintervals in the domain,
``pi1`` orders their images.  The pair is stored as two position tuples
indexed by letter index, so the induction update is pure array shuffling.

The monodromy ``p = pi1 o pi0^{-1}`` is the classical one-line invariant.
Both induction moves are implemented on the pair itself (the primitive,
defined for every irreducible pair); the induced one-line transforms of the
monodromy are provided separately as cross-checks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ReduciblePermError, WindowTooShortError


def default_letters(d: int) -> tuple[str, ...]:
    """Letters A, B, C, ... for a d-interval exchange."""
    if d < 2:
        raise ValueError("need at least two letters")
    if d > 26:
        return tuple(f"L{i}" for i in range(d))
    return tuple(chr(ord("A") + i) for i in range(d))


@dataclass(frozen=True)
class PermPair:
    """Combinatorial data (pi0, pi1) of an interval exchange.

    ``pi0[i]`` / ``pi1[i]`` is the 1-based domain / image position of letter
    ``letters[i]``.  Values are immutable; induction moves return new pairs.
    """

    letters: tuple[str, ...]
    pi0: tuple[int, ...]
    pi1: tuple[int, ...]

    def __post_init__(self):
        d = len(self.letters)
        if d < 2:
            raise ValueError("need at least two letters")
        if len(set(self.letters)) != d:
            raise ValueError("letters must be distinct")
        for pi in (self.pi0, self.pi1):
            if sorted(pi) != list(range(1, d + 1)):
                raise ValueError(f"{pi} is not a bijection onto 1..{d}")

    @property
    def d(self) -> int:
        return len(self.letters)

    def index(self, letter: str) -> int:
        return self.letters.index(letter)

    def letter_at(self, eps: int, position: int) -> str:
        """Letter sitting at 1-based ``position`` in the eps-ordering."""
        pi = self.pi1 if eps else self.pi0
        return self.letters[pi.index(position)]

    def domain_order(self) -> tuple[str, ...]:
        """Letters listed left to right in the domain."""
        return tuple(self.letter_at(0, j) for j in range(1, self.d + 1))

    def image_order(self) -> tuple[str, ...]:
        """Letters listed left to right in the image."""
        return tuple(self.letter_at(1, j) for j in range(1, self.d + 1))

    @classmethod
    def from_monodromy(cls, p: Sequence[int], letters: Sequence[str] | None = None) -> "PermPair":
        """Pair with pi0 = identity (in letter order) and pi1 given by ``p``.

        ``p`` is one-line notation: the letter at domain position j lands at
        image position p[j-1].
        """
        d = len(p)
        letters = tuple(letters) if letters is not None else default_letters(d)
        return cls(letters, tuple(range(1, d + 1)), tuple(p))


@dataclass(frozen=True)
class StepLabel:
    """Record of one induction step: its level, type and winner/loser."""

    level: int
    type: int
    winner: str
    loser: str

    def __post_init__(self):
        if self.type not in (0, 1):
            raise ValueError("type must be 0 or 1")
        if self.winner == self.loser:
            raise ValueError("winner and loser must differ")


def monodromy(pp: PermPair) -> tuple[int, ...]:
    """One-line invariant p = pi1 o pi0^{-1}: p[j-1] is the image position
    of the letter at domain position j."""
    d = pp.d
    p = [0] * d
    for i in range(d):
        p[pp.pi0[i] - 1] = pp.pi1[i]
    return tuple(p)


def is_irreducible(pp: PermPair) -> bool:
    """True iff no proper prefix {1..j}, j < d, is invariant under the
    monodromy."""
    p = monodromy(pp)
    top = 0
    for j in range(1, pp.d):
        top = max(top, p[j - 1])
        if top == j:
            return False
    return True


def winner_loser(pp: PermPair, eps: int) -> tuple[str, str]:
    """Letters (alpha(eps), alpha(1-eps)): last in the eps- and the opposite
    ordering.  When the step has type eps these are the winner and loser."""
    a_eps = pp.letter_at(eps, pp.d)
    a_other = pp.letter_at(1 - eps, pp.d)
    return a_eps, a_other


def rauzy_move(pp: PermPair, eps: int) -> PermPair:
    """Induction move of type ``eps`` on the pair.

    The winner side keeps its ordering; on the other side the last letter is
    reinserted immediately after the winner, shifting the letters in between
    up by one.
    """
    if not is_irreducible(pp):
        raise ReduciblePermError(f"{pp} is reducible")
    winner, _ = winner_loser(pp, eps)
    pi_keep = pp.pi1 if eps else pp.pi0
    pi_old = pp.pi0 if eps else pp.pi1
    d = pp.d
    wpos = pi_old[pp.index(winner)]
    pi_new = []
    for pos in pi_old:
        if pos <= wpos:
            pi_new.append(pos)
        elif pos < d:
            pi_new.append(pos + 1)
        else:
            pi_new.append(wpos + 1)
    if eps:
        return PermPair(pp.letters, tuple(pi_new), pi_keep)
    return PermPair(pp.letters, pi_keep, tuple(pi_new))


def monodromy_transform(p: Sequence[int], eps: int) -> tuple[int, ...]:
    """One-line transform of the monodromy under a type-``eps`` move.

    Type 1 reinserts the last entry p(d) immediately after the position r
    with p(r) = d.  Type 0 is the dual move acting on values: entries
    strictly between p(d) and d are bumped up by one and the entry d becomes
    p(d) + 1.  (On one-discontinuity monodromies ``(k .. d 1 .. k-1)`` the
    type-0 transform coincides with reinserting the first entry just before
    the position carrying 1; that shuffle form is *not* correct for general
    pairs, see :func:`monodromy_shuffle_form_type0`.)
    """
    p = tuple(p)
    d = len(p)
    if eps == 1:
        r = p.index(d)
        return p[: r + 1] + (p[-1],) + p[r + 1 : d - 1]
    pd = p[-1]
    return tuple(pd + 1 if v == d else (v + 1 if pd < v < d else v) for v in p)


def monodromy_shuffle_form_type0(p: Sequence[int]) -> tuple[int, ...]:
    """Position-shuffle form of the type-0 monodromy transform: remove p(1)
    and reinsert it just before the position s with p(s) = 1.

    Valid on the one-discontinuity (rotation class) monodromies where it is
    used; differs from :func:`monodromy_transform` on general pairs.
    """
    p = tuple(p)
    s = p.index(1)
    return p[1:s] + (p[0],) + p[s:]


def all_irreducible_pairs(d: int) -> Iterable[PermPair]:
    """All irreducible pairs with pi0 = identity, enumerated by monodromy.

    Every pair is a letter relabeling of one of these, and induction moves
    commute with relabeling, so property tests over this family cover all
    combinatorics of size d.
    """
    for perm in itertools.permutations(range(1, d + 1)):
        pp = PermPair.from_monodromy(perm)
        if is_irreducible(pp):
            yield pp


def is_k_bounded(steps: Sequence[StepLabel], k: int, *, require_full_window: bool = True) -> bool:
    """Winner-chain boundedness of a step sequence.

    For each level n (with a full window inside the sequence) and each
    ordered letter pair (beta, gamma) there must be a level n1 with
    |n - n1| < k at which beta wins, and a chain of steps starting there in
    which each step's loser is the next step's winner, reaching gamma as
    loser at a level n1 + p with |n - n1 - p| < k.

    Raises :class:`WindowTooShortError` when no level has its full window
    ``(n - k, n + k)`` inside the given sequence.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not steps:
        raise WindowTooShortError("empty step sequence")
    letters = sorted({s.winner for s in steps} | {s.loser for s in steps})
    by_level = {s.level: s for s in steps}
    lo = min(by_level)
    hi = max(by_level)
    if set(range(lo, hi + 1)) != set(by_level):
        raise ValueError("step sequence has level gaps")

    certifiable = [n for n in range(lo, hi + 1) if n - k + 1 >= lo and n + k - 1 <= hi]
    if not certifiable:
        raise WindowTooShortError(
            f"window [{lo},{hi}] cannot certify k={k}: need 2k-1 consecutive levels"
        )

    def pair_ok(n: int, beta: str, gamma: str) -> bool:
        for n1 in range(max(lo, n - k + 1), min(hi, n + k - 1) + 1):
            if by_level[n1].winner != beta:
                continue
            # follow the loser->winner chain from n1 while the window allows
            p = 0
            while n1 + p <= hi and abs(n - n1 - p) < k:
                step = by_level[n1 + p]
                if step.loser == gamma:
                    return True
                nxt = n1 + p + 1
                if nxt > hi or by_level[nxt].winner != step.loser:
                    break
                p += 1
        return False

    for n in certifiable:
        for beta in letters:
            for gamma in letters:
                if not pair_ok(n, beta, gamma):
                    return False
    return True


def measured_k_bound(steps: Sequence[StepLabel], k_max: int = 16) -> int:
    """Smallest k for which the observed window is k-bounded."""
    last_err: Exception | None = None
    for k in range(1, k_max + 1):
        try:
            if is_k_bounded(steps, k):
                return k
        except WindowTooShortError as err:
            last_err = err
            break
    if last_err is not None:
        raise last_err
    raise WindowTooShortError(f"not k-bounded for any k <= {k_max}")

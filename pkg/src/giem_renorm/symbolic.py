"""Symbolic representation of the renormalization dynamics.

Points are coded by letters (alpha, chi, n): alpha is the alphabet letter
of the level-n orbit piece containing the point, chi records whether the
point entered the level-n interval without waiting (chi = 0) or after one
extra excursion (chi = 1).  The cylinders of the coding are exactly the
refined-partition intervals f^i(I_alpha^n), 1 <= i <= q_alpha^n, and the
level-(n+1) cylinders refine the level-n ones through a three-case
recursion driven by the step's winner and loser.

Admissibility is constructive: a word is admissible iff the recursion
produces it, equivalently iff every letter names its required parent
letter one level down.  This makes admissibility a pure function of the
step sequence, checked here both combinatorially and against the actual
cylinder intervals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    BoundaryPointError,
    InadmissibleWordError,
    NoValidPairsError,
)
from .renorm import RenormTrace, TildeLevel, tilde_level


class Letter(NamedTuple):
    """One symbol of the coding."""

    alpha: str
    chi: int
    level: int


@dataclass(frozen=True)
class Cylinder:
    """An admissible word with its interval, orbit tag and measure.

    ``word[m]`` is the letter at level m; ``tag`` is (alpha, i) naming the
    orbit piece f^i(I_alpha^n); ``measure`` is the interval length divided
    by the full domain length.
    """

    word: tuple
    interval: tuple
    tag: tuple
    measure: float


@dataclass(frozen=True)
class CodingResult:
    """Coding of a point to level n: its word and entry times k_0..k_n
    (k_m is the first time the forward orbit enters the level-m
    interval)."""

    word: tuple
    entry_times: tuple


def _letter_name(trace: RenormTrace, i: int) -> str:
    return trace.giem.letters[i]


def _loser_winner(trace: RenormTrace, m: int) -> tuple[str, str, int]:
    """(loser, winner, type) of the step creating level m (m >= 1)."""
    label = trace.steps[m - 1]
    return label.loser, label.winner, label.type


def required_parent_alpha(trace: RenormTrace, letter: Letter) -> str:
    """The unique letter value any admissible word must carry one level
    below ``letter``."""
    m = letter.level
    if m < 1:
        raise ValueError("level-0 letters have no parent")
    loser, winner, eps = _loser_winner(trace, m)
    if letter.alpha != loser:
        if letter.chi != 0:
            raise InadmissibleWordError(f"{letter} is not realizable (chi must be 0)")
        return letter.alpha
    return winner if letter.chi == eps else loser


def is_letter_realizable(trace: RenormTrace, letter: Letter) -> bool:
    if letter.level == 0:
        return letter.chi == 0
    loser, _, _ = _loser_winner(trace, letter.level)
    return letter.chi == 0 or letter.alpha == loser


def is_admissible(trace: RenormTrace, word: Sequence[Letter]) -> bool:
    """Constructive admissibility of a word on consecutive levels: every
    letter realizable and naming its required parent letter."""
    word = sorted(word, key=lambda a: a.level)
    if not word:
        return False
    for a, b in zip(word, word[1:]):
        if b.level != a.level + 1:
            raise ValueError("word must cover consecutive levels")
    for a in word:
        if not is_letter_realizable(trace, a):
            return False
    for a, b in zip(word, word[1:]):
        if required_parent_alpha(trace, b) != a.alpha:
            return False
    return True


def _word_of_piece(trace: RenormTrace, n: int, pos: int) -> tuple:
    """Word a_0..a_n of the level-n piece at array position ``pos``."""
    levels = [tilde_level(trace, m) for m in range(n + 1)]
    out = []
    k = pos
    for m in range(n, -1, -1):
        tl = levels[m]
        out.append(Letter(_letter_name(trace, int(tl.letter[k])), int(tl.chi[k]), m))
        k = int(tl.parent[k])
    return tuple(reversed(out))


def cylinders(trace: RenormTrace, n: int, budget: int = 20_000_000) -> list[Cylinder]:
    """All level-n cylinders with words, intervals, tags and measures, in
    position order."""
    tl = tilde_level(trace, n, budget)
    total = float(trace.giem.total)
    out = []
    for k in range(tl.size):
        word = _word_of_piece(trace, n, k)
        out.append(
            Cylinder(
                word=word,
                interval=(float(tl.lefts[k]), float(tl.rights[k])),
                tag=(_letter_name(trace, int(tl.letter[k])), int(tl.idx[k])),
                measure=float(tl.rights[k] - tl.lefts[k]) / total,
            )
        )
    return out


def _locate(tl: TildeLevel, x: float, slack: float) -> int:
    pos = int(np.searchsorted(tl.lefts, x, side="right")) - 1
    if pos < 0 or x >= tl.rights[pos]:
        raise BoundaryPointError(f"{x} outside the coded region")
    if x - tl.lefts[pos] < slack or tl.rights[pos] - x < slack:
        raise BoundaryPointError(f"{x} is within {slack} of a cylinder boundary")
    return pos


def code_point(trace: RenormTrace, x: float, n: int, slack: float = 1e-12) -> CodingResult:
    """Word and entry times of ``x`` through level n.

    The letter at level m is read off the refined partition; the entry
    time into the level-m interval is q_alpha^m - i for the piece
    f^i(I_alpha^m) containing the point.  Points within ``slack`` of any
    cylinder boundary are rejected.
    """
    word = []
    times = []
    for m in range(n + 1):
        tl = tilde_level(trace, m)
        pos = _locate(tl, float(x), slack)
        alpha_i = int(tl.letter[pos])
        state = trace.state(m)
        word.append(Letter(_letter_name(trace, alpha_i), int(tl.chi[pos]), m))
        times.append(int(state.q[alpha_i]) - int(tl.idx[pos]))
    return CodingResult(tuple(word), tuple(times))


def _children_by_letter(trace: RenormTrace, m: int) -> dict:
    """Map (parent position at level m-1) -> {(alpha, chi): child position}."""
    tl = tilde_level(trace, m)
    out: dict = {}
    for k in range(tl.size):
        out.setdefault(int(tl.parent[k]), {})[
            (_letter_name(trace, int(tl.letter[k])), int(tl.chi[k]))
        ] = k
    return out


def find_cylinder(trace: RenormTrace, word: Sequence[Letter]) -> int:
    """Array position (at the word's top level) of the cylinder of a full
    word a_0..a_n; raises :class:`InadmissibleWordError` if absent."""
    word = sorted(word, key=lambda a: a.level)
    if word[0].level != 0:
        raise ValueError("a full word must start at level 0")
    tl0 = tilde_level(trace, 0)
    pos = None
    for k in range(tl0.size):
        if _letter_name(trace, int(tl0.letter[k])) == word[0].alpha and word[0].chi == 0:
            pos = k
            break
    if pos is None:
        raise InadmissibleWordError(f"no level-0 cylinder for {word[0]}")
    for a in word[1:]:
        kids = _children_by_letter(trace, a.level).get(pos, {})
        pos = kids.get((a.alpha, a.chi))
        if pos is None:
            raise InadmissibleWordError(f"word is inadmissible at {a}")
    return pos


def conditional(trace: RenormTrace, word_suffix: Sequence[Letter], a_n: Letter) -> float:
    """Conditional measure of extending the full word ``word_suffix``
    (levels 0..n-1) by the letter ``a_n``: cylinder measure ratio."""
    word_suffix = sorted(word_suffix, key=lambda a: a.level)
    n = word_suffix[-1].level + 1
    if a_n.level != n:
        raise ValueError("extension letter must sit one level above the suffix")
    pos = find_cylinder(trace, word_suffix)
    tl_par = tilde_level(trace, n - 1)
    kids = _children_by_letter(trace, n).get(pos, {})
    child = kids.get((a_n.alpha, a_n.chi))
    if child is None:
        raise InadmissibleWordError(f"extension {a_n} is inadmissible")
    tl = tilde_level(trace, n)
    return float(tl.rights[child] - tl.lefts[child]) / float(
        tl_par.rights[pos] - tl_par.lefts[pos]
    )


def _top_block_keys(trace: RenormTrace, n: int, s: int) -> list:
    """Per level-n piece, the tuple of (letter, chi) over levels n-s+1..n,
    read through the parent links."""
    levels = [tilde_level(trace, m) for m in range(n + 1)]
    tl = levels[n]
    keys = [[] for _ in range(tl.size)]
    cur = np.arange(tl.size)
    for back in range(s):
        lvl = levels[n - back]
        for k in range(tl.size):
            keys[k].append((int(lvl.letter[cur[k]]), int(lvl.chi[cur[k]])))
        cur = lvl.parent[cur]
    return [tuple(k) for k in keys]


def memory_decay(
    trace: RenormTrace,
    n: int,
    s: int,
    pair_cap: int = 10**6,
) -> float:
    """Worst log-ratio of conditionals across divergent pasts.

    Over pairs of level-(n-1) cylinders sharing their letters on levels
    n-s..n-1 but *disagreeing at level n-s-1* (same middle block,
    different deep past), and over common admissible extensions a_n,
    returns the max of |log| of the ratio of the two conditional
    measures.  Identically zero for translation maps; zero by convention
    when s = n (no deep past left to disagree on).  Pairs are capped with
    deterministic striding.
    """
    if not 0 <= s <= n:
        raise ValueError("need 0 <= s <= n")
    if n < 1:
        raise NoValidPairsError("need at least one level of conditioning")
    if s == n:
        return 0.0
    tl_par = tilde_level(trace, n - 1)
    tl = tilde_level(trace, n)
    conds: list[dict] = [{} for _ in range(tl_par.size)]
    par_len = tl_par.lengths()
    for k in range(tl.size):
        p = int(tl.parent[k])
        conds[p][(int(tl.letter[k]), int(tl.chi[k]))] = float(
            (tl.rights[k] - tl.lefts[k]) / par_len[p]
        )
    keys = _top_block_keys(trace, n - 1, s + 1)
    groups: dict = {}
    for pos, key in enumerate(keys):
        groups.setdefault(key[:s], []).append((key[s], pos))
    worst = 0.0
    for members in groups.values():
        if len(members) < 2:
            continue
        npairs = len(members) * (len(members) - 1) // 2
        stride = max(1, int(np.ceil(npairs / pair_cap)))
        count = 0
        for ii in range(len(members)):
            for jj in range(ii + 1, len(members)):
                if members[ii][0] == members[jj][0]:
                    continue  # same letter just below the block: not a divergent past
                count += 1
                if count % stride:
                    continue
                c1, c2 = conds[members[ii][1]], conds[members[jj][1]]
                for ext, v1 in c1.items():
                    v2 = c2.get(ext)
                    if v2 is not None:
                        worst = max(worst, abs(float(np.log(v1 / v2))))
    return worst


@dataclass(frozen=True)
class MixingReport:
    """Level-n mixing diagnostics.

    ``gap`` is the worst |conditional - unconditional| letter probability
    over half-depth pasts; it decays but is nonzero even for translation
    maps (a finite-step Markov-mixture effect of the combinatorics).
    ``past_gap`` compares conditionals across pairs of pasts carrying the
    same letter at the conditioning level: it isolates the smooth
    distortion and vanishes identically for affine maps.  ``ell_star``
    holds the per-alphabet-letter occupation measures ell(alpha, *, n).
    """

    n: int
    r: int
    gap: float
    past_gap: float
    letter_measure: dict
    ell_star: dict


def mixing_gap(trace: RenormTrace, n: int) -> MixingReport:
    """Compare level-n letter distributions conditioned on the level-
    (n - floor(n/2)) past against the unconditional ones."""
    r = n // 2
    m_anc = n - r
    levels = [tilde_level(trace, m) for m in range(n + 1)]
    tl = levels[n]
    anc = np.arange(tl.size)
    for m in range(n, m_anc, -1):
        anc = levels[m].parent[anc]
    tl_anc = levels[m_anc]
    total = float(trace.giem.total)
    lens = tl.lengths()
    letter_keys = [(int(a), int(c)) for a, c in zip(tl.letter, tl.chi)]
    uncond: dict = {}
    for key, ln in zip(letter_keys, lens):
        uncond[key] = uncond.get(key, 0.0) + float(ln)
    uncond = {k: v / total for k, v in uncond.items()}
    anc_len = tl_anc.lengths()
    cond_mass: dict = {}
    for k in range(tl.size):
        cond_mass.setdefault(int(anc[k]), {})
        key = letter_keys[k]
        cond_mass[int(anc[k])][key] = cond_mass[int(anc[k])].get(key, 0.0) + float(lens[k])
    gap = 0.0
    conds_by_anc_letter: dict = {}
    for A, masses in cond_mass.items():
        la = float(anc_len[A])
        for key, u in uncond.items():
            gap = max(gap, abs(masses.get(key, 0.0) / la - u))
        conds_by_anc_letter.setdefault(int(tl_anc.letter[A]), []).append(
            {key: m / la for key, m in masses.items()}
        )
    past_gap = 0.0
    for conds in conds_by_anc_letter.values():
        for ii in range(len(conds)):
            for jj in range(ii + 1, len(conds)):
                for key in set(conds[ii]) | set(conds[jj]):
                    past_gap = max(
                        past_gap,
                        abs(conds[ii].get(key, 0.0) - conds[jj].get(key, 0.0)),
                    )
    ell_star: dict = {}
    for a, ln in zip(tl.letter, lens):
        name = _letter_name(trace, int(a))
        ell_star[name] = ell_star.get(name, 0.0) + float(ln) / total
    named_uncond = {
        (_letter_name(trace, a), c): v for (a, c), v in sorted(uncond.items())
    }
    return MixingReport(
        n=n, r=r, gap=gap, past_gap=past_gap, letter_measure=named_uncond, ell_star=ell_star
    )


@dataclass(frozen=True)
class WordLemmaReport:
    """Desk-scale verification of the structural word properties: orbit
    translations between cylinders sharing a recent block, junction
    concatenability, and k-step letter reachability."""

    translation_pairs: int
    translation_max_gap: float
    concat_positive: int
    concat_negative: int
    reachability_ok: bool


def _edges(trace: RenormTrace, m: int) -> set:
    """Letter transitions (beta -> alpha) admissible from level m to m+1."""
    loser, winner, eps = _loser_winner(trace, m + 1)
    letters = trace.giem.letters
    out = {(a, a) for a in letters if a != loser}  # chi = 0, alpha unchanged
    out.add((winner, loser))  # chi = eps
    out.add((loser, loser))  # chi = 1 - eps
    return out


def letter_reachable(trace: RenormTrace, n: int, k: int, beta: str, alpha: str) -> bool:
    """True iff an admissible word spans levels n..n+k starting at letter
    ``beta`` and ending at ``alpha``."""
    frontier = {beta}
    for m in range(n, n + k):
        edges = _edges(trace, m)
        frontier = {b for (a, b) in edges if a in frontier}
        if not frontier:
            return False
    return alpha in frontier


def check_word_lemmas(
    trace: RenormTrace,
    n_max: int,
    k: int,
    block: int = 2,
    translation_tol: float = 1e-9,
) -> WordLemmaReport:
    """Exhaustive desk-scale checks of the word structure.

    * translation: two cylinders sharing their top ``block`` letters are
      carried onto each other by f^r with r the difference of their orbit
      indices, at every shared level (intervals compared to tolerance);
    * concatenation: words meeting at a junction letter with equal alpha
      concatenate admissibly; mismatched alphas are rejected;
    * reachability: every letter pair is joined by an admissible word
      spanning k levels, for every start level n <= n_max - k.

    Any counterexample raises (translation) or is counted as a failure.
    """
    f = trace.giem
    total = float(f.total)
    pairs = 0
    max_gap = 0.0
    for n in range(block, min(n_max, trace.achieved) + 1):
        keys = _top_block_keys(trace, n, block)
        tl = tilde_level(trace, n)
        groups: dict = {}
        for pos, key in enumerate(keys):
            groups.setdefault(key, []).append(pos)
        for members in groups.values():
            for ii in range(len(members)):
                for jj in range(ii + 1, len(members)):
                    p1, p2 = members[ii], members[jj]
                    r = int(tl.idx[p2]) - int(tl.idx[p1])
                    src = (float(tl.lefts[p1]), float(tl.rights[p1]))
                    dst = (float(tl.lefts[p2]), float(tl.rights[p2]))
                    if r < 0:
                        src, dst = dst, src
                    a, b = src
                    mid = 0.5 * (a + b)
                    for _ in range(abs(r)):
                        _, branch = f.branch_at(mid)
                        a, mid, b = (
                            float(branch._jet(a).value),
                            float(branch._jet(mid).value),
                            float(branch._jet(b).value),
                        )
                    gap = max(abs(a - dst[0]), abs(b - dst[1])) / total
                    if gap > translation_tol:
                        raise InadmissibleWordError(
                            f"translation failed at level {n}: pieces {p1},{p2}, "
                            f"r={r}, gap={gap:.3e}"
                        )
                    pairs += 1
                    max_gap = max(max_gap, gap)

    # concatenation at junctions
    concat_pos = 0
    concat_neg = 0
    n_hi = min(n_max, trace.achieved)
    for n in range(1, n_hi):
        cyls_low = cylinders(trace, n)
        for cl in cyls_low[: min(len(cyls_low), 40)]:
            junction = cl.word[-1]
            for chi2 in (0, 1):
                probe = Letter(junction.alpha, chi2, n)
                if not is_letter_realizable(trace, probe):
                    continue
                for alpha_up in f.letters:
                    for chi_up in (0, 1):
                        up = Letter(alpha_up, chi_up, n + 1)
                        if not is_letter_realizable(trace, up):
                            continue
                        if required_parent_alpha(trace, up) != junction.alpha:
                            # mismatched junction: must be inadmissible
                            if is_admissible(trace, list(cl.word) + [up]):
                                raise InadmissibleWordError(
                                    f"mismatched junction accepted: {cl.word} + {up}"
                                )
                            concat_neg += 1
                            continue
                        glued = list(cl.word) + [up]
                        if not is_admissible(trace, glued):
                            raise InadmissibleWordError(f"junction rejected: {glued}")
                        find_cylinder(trace, glued)  # nonempty cylinder exists
                        concat_pos += 1

    reach_ok = all(
        letter_reachable(trace, n, k, beta, alpha)
        for n in range(0, max(1, min(n_max, trace.achieved) - k))
        for beta in f.letters
        for alpha in f.letters
    )
    return WordLemmaReport(
        translation_pairs=pairs,
        translation_max_gap=max_gap,
        concat_positive=concat_pos,
        concat_negative=concat_neg,
        reachability_ok=reach_ok,
    )

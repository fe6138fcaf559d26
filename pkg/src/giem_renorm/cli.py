"""Experiment runner: JSON config in, deterministic CSV/JSON reports out.

Command shape::

    giem-renorm run --config cfg.json [--out DIR]
    giem-renorm verify --config cfg.json

``run`` executes the configured renormalization and the requested
experiment pipelines, writing plot-ready long-format CSVs plus a JSON run
report with fitted decay rates.  ``verify`` runs only the built-in
consistency checks (oracle equivalence, bookkeeping, measure sums) for the
configured map.  Exit codes: 0 pass, 1 soft failure (partial outputs),
2 hard failure.  The ``GIEM_PRECISION`` environment variable overrides the
config precision.  All numeric output uses 17 significant digits; a fixed
seed yields byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import precision as pr
from . import smoothmap as sm
from .combinatorics import PermPair, measured_k_bound
from .errors import ConfigError, GiemError, WindowTooShortError
from .giem import (
    Giem,
    conjugated_rotation,
    piecewise_moebius,
    standard_iem,
    validate,
)
from .renorm import (
    RenormTrace,
    compare_towers,
    convergence_table,
    first_return_bruteforce,
    geometry_report,
    partition,
    renormalize,
)
from .symbolic import memory_decay, mixing_gap, tilde_level

EXPERIMENTS = ("renorm", "convergence", "partition", "symbolic", "prop31", "geometry")


def fmt(x) -> str:
    """17-significant-digit decimal: round-trips binary64 exactly."""
    return f"{float(x):.17g}"


@dataclass
class ExperimentConfig:
    """Parsed and validated experiment description."""

    map_descriptor: dict
    n_max: int
    grid: int
    precision: str
    experiments: tuple
    out_dir: str
    seed: int

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            desc = raw["map"]
            n_max = int(raw.get("n_max", 20))
            grid = int(raw.get("grid", 257))
            precision = str(raw.get("precision", "binary64"))
            experiments = tuple(raw.get("experiments", ["renorm"]))
            out_dir = str(raw.get("out_dir", "out"))
            seed = int(raw.get("seed", 0))
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"bad config: {err}") from err
        if n_max < 1:
            raise ConfigError("n_max must be >= 1")
        if grid < 3:
            raise ConfigError("grid must be >= 3")
        for e in experiments:
            if e not in EXPERIMENTS:
                raise ConfigError(f"unknown experiment {e!r}; choose from {EXPERIMENTS}")
        env = os.environ.get("GIEM_PRECISION")
        if env:
            precision = env
        pr.Backend(precision)  # validates the spec string
        return cls(desc, n_max, grid, precision, experiments, out_dir, seed)


def _build_conjugacy(desc: dict) -> sm.SmoothMap:
    kind = desc.get("kind", "identity")
    if kind == "identity":
        return sm.identity()
    if kind == "bump":
        return sm.bump(float(desc["t"]))
    if kind == "moebius":
        return sm.moebius(float(desc["N"]))
    if kind == "compose":
        return sm.chain(*(_build_conjugacy(d) for d in desc["maps"]))
    raise ConfigError(f"unknown conjugacy kind {kind!r}")


def build_map(desc: dict, backend: pr.Backend) -> Giem:
    """Construct the configured map.  Permutation pairs serialize as two
    integer position arrays ``pi0``/``pi1``; ``rho`` accepts a number or
    the token "golden"."""
    try:
        kind = desc["kind"]
        if kind == "standard":
            lengths = tuple(backend.real(str(x)) for x in desc["lengths"])
            pp = PermPair.from_monodromy(desc["monodromy"]) if "monodromy" in desc else PermPair(
                tuple(desc.get("letters") or [chr(ord("A") + i) for i in range(len(lengths))]),
                tuple(desc["pi0"]),
                tuple(desc["pi1"]),
            )
            return standard_iem(lengths, pp)
        if kind == "piecewise_moebius":
            lengths = tuple(backend.real(str(x)) for x in desc["lengths"])
            image_lengths = tuple(backend.real(str(x)) for x in desc["image_lengths"])
            pp = PermPair(
                tuple(desc.get("letters") or [chr(ord("A") + i) for i in range(len(lengths))]),
                tuple(desc["pi0"]),
                tuple(desc["pi1"]),
            )
            return piecewise_moebius(lengths, image_lengths, pp, tuple(desc["moebius_params"]))
        if kind == "conjugated_rotation":
            rho = backend.golden_rho() if desc["rho"] == "golden" else backend.real(str(desc["rho"]))
            h = _build_conjugacy(desc.get("conjugacy", {"kind": "identity"}))
            extra = tuple(backend.real(str(c)) for c in desc.get("extra_cuts", ()))
            return conjugated_rotation(h, rho, extra, backend)
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad map descriptor: {err}") from err
    raise ConfigError(f"unknown map kind {desc.get('kind')!r}")


def fit_decay(series, abscissa: str = "n") -> tuple[float, float, float, int]:
    """Least-squares fit of log(value) against n or sqrt(n).

    Returns (slope, intercept, rms_residual, skipped) where ``skipped``
    counts nonpositive values excluded from the fit.  Needs >= 4 usable
    points.
    """
    pts = [(n, v) for n, v in series if v > 0]
    skipped = len(list(series)) - len(pts)
    if len(pts) < 4:
        raise ValueError("need at least 4 positive points to fit")
    ns = np.asarray([p[0] for p in pts], dtype=float)
    if abscissa == "sqrt_n":
        ns = np.sqrt(ns)
    elif abscissa != "n":
        raise ValueError("abscissa must be 'n' or 'sqrt_n'")
    ys = np.log([p[1] for p in pts])
    A = np.vstack([ns, np.ones_like(ns)]).T
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - ys) ** 2)))
    return float(coef[0]), float(coef[1]), resid, skipped


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(path) or "."
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else fmt(c) for c in row))
    _atomic_write(path, "\n".join(lines) + "\n")


@dataclass
class RunReport:
    """Outcome of one run: stop reason, depth, decay fits and check flags."""

    stop_reason: str = ""
    levels: int = 0
    fits: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def soft_failures(self) -> list[str]:
        return [k for k, ok in self.checks.items() if not ok]


def run(config: ExperimentConfig) -> RunReport:
    """Execute the configured experiments and write their outputs."""
    t0 = time.perf_counter()
    backend = pr.Backend(config.precision)
    backend.activate()
    g = build_map(config.map_descriptor, backend)
    validate(g)
    report = RunReport()
    trace = renormalize(g, config.n_max, check=False)
    report.stop_reason = trace.stop_reason
    report.levels = trace.achieved
    out = config.out_dir

    if "renorm" in config.experiments:
        rows = []
        for lab, st in zip(trace.steps, trace.states[1:]):
            row = [lab.level, lab.type, lab.winner, lab.loser]
            row += [str(st.q[i]) for i in range(g.d)]
            row += [fmt(st.total)]
            rows.append([str(c) if isinstance(c, int) else c for c in row])
        path = os.path.join(out, "steps.csv")
        _write_csv(path, ["n", "type", "winner", "loser"] + [f"q_{a}" for a in g.letters] + ["len_I_n"], rows)
        report.outputs.append(path)

    table = None
    if "convergence" in config.experiments:
        table = convergence_table(trace, grid=config.grid)
        rows = [
            [str(r.n), r.alpha, fmt(r.N_alpha_n), fmt(r.d_moebius), fmt(r.d_identity),
             fmt(r.thm2_residual), fmt(r.len_I_n), fmt(r.P_norm)]
            for r in table
        ]
        path = os.path.join(out, "convergence.csv")
        _write_csv(
            path,
            ["n", "alpha", "N_alpha_n", "d_moebius", "d_identity", "thm2_residual", "len_I_n", "P_norm"],
            rows,
        )
        report.outputs.append(path)
        for key, absc in (("d_moebius", "n"), ("d_identity", "sqrt_n"), ("thm2_residual", "sqrt_n")):
            per_level: dict = {}
            for r in table:
                per_level[r.n] = max(per_level.get(r.n, 0.0), getattr(r, key))
            series = sorted(per_level.items())
            if max(v for _, v in series) < 1e-9:
                # already at the arithmetic floor (affine families): nothing to fit
                report.fits[f"{key}_vs_{absc}"] = {"floor": True}
                continue
            try:
                slope, intercept, resid, skipped = fit_decay(series, absc)
                report.fits[f"{key}_vs_{absc}"] = {
                    "slope": slope, "intercept": intercept, "residual": resid, "skipped": skipped,
                }
            except ValueError:
                report.fits[f"{key}_vs_{absc}"] = None
        report.checks["convergence_decay"] = all(
            f is None or f.get("floor") or f["slope"] < 0 for f in report.fits.values()
        )

    if "partition" in config.experiments:
        rows = []
        for n in range(trace.achieved + 1):
            snap = partition(trace, n)
            rows.append([str(n), str(snap.size), fmt(snap.norm)])
        path = os.path.join(out, "partition.csv")
        _write_csv(path, ["n", "size", "P_norm"], rows)
        report.outputs.append(path)

    if "symbolic" in config.experiments:
        n_sym = min(trace.achieved, config.n_max)
        rows = []
        for n in range(2, n_sym + 1, 2):
            rep = mixing_gap(trace, n)
            for s in range(2, min(n, 8) + 1, 2):
                md = memory_decay(trace, n, s)
                row = [str(n), str(s), fmt(md), fmt(rep.gap)]
                row += [fmt(rep.ell_star.get(a, 0.0)) for a in g.letters]
                rows.append(row)
        path = os.path.join(out, "symbolic.csv")
        _write_csv(
            path,
            ["n", "s", "memory_decay_max_log_ratio", "mixing_gap"]
            + [f"ell_star_{a}" for a in g.letters],
            rows,
        )
        report.outputs.append(path)

    if "geometry" in config.experiments:
        rows = []
        for n in range(trace.achieved + 1):
            rep = geometry_report(trace, n, grid=min(config.grid, 65))
            rows.append([
                str(n), fmt(rep.domain_ratio), fmt(rep.image_ratio),
                "" if rep.winner_loser_ratio is None else fmt(rep.winner_loser_ratio),
                fmt(rep.d1_inf), fmt(rep.d1_sup),
            ])
        path = os.path.join(out, "geometry.csv")
        _write_csv(
            path,
            ["n", "domain_ratio", "image_ratio", "winner_loser_ratio", "d1_inf", "d1_sup"],
            rows,
        )
        report.outputs.append(path)

    if "prop31" in config.experiments:
        corr = compare_towers(g, i_max=min(10, max(2, config.n_max // 2)))
        rows = [
            [str(i + 1), str(m), str(gap), fmt(corr.max_cut_diff), fmt(corr.max_value_diff)]
            for i, (m, gap) in enumerate(zip(corr.m, corr.gaps))
        ]
        path = os.path.join(out, "prop31.csv")
        _write_csv(path, ["i", "m_i", "gap", "max_cut_diff", "max_value_diff"], rows)
        report.outputs.append(path)
        report.checks["tower_gaps_below_d"] = all(gp < g.d for gp in corr.gaps)

    try:
        report.checks["k_bounded"] = measured_k_bound(trace.steps) <= 8
    except WindowTooShortError:
        pass
    report.elapsed_s = time.perf_counter() - t0
    payload = {
        "stop_reason": report.stop_reason,
        "levels": report.levels,
        "fits": report.fits,
        "checks": report.checks,
        "outputs": report.outputs,
        "elapsed_s": round(report.elapsed_s, 3),
        "precision": config.precision,
        "seed": config.seed,
    }
    path = os.path.join(out, "report.json")
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    report.outputs.append(path)
    return report


def verify(config: ExperimentConfig) -> RunReport:
    """Built-in consistency battery for the configured map: validation,
    brute-force oracle agreement at shallow levels, length bookkeeping and
    cylinder measure sums."""
    backend = pr.Backend(config.precision)
    backend.activate()
    g = build_map(config.map_descriptor, backend)
    report = RunReport()
    rep = validate(g)
    report.checks["validates"] = True
    trace = renormalize(g, min(config.n_max, 12), check=False)
    report.stop_reason = trace.stop_reason
    report.levels = trace.achieved
    total = float(g.total)

    ok = True
    for n, (lab, st_prev, st) in enumerate(zip(trace.steps, trace.states, trace.states[1:])):
        removed = (
            float(st_prev.image_lengths[st_prev.index(lab.loser)])
            if lab.type == 0
            else float(st_prev.lengths[st_prev.index(lab.loser)])
        )
        ok &= abs(float(st_prev.total) - float(st.total) - removed) < 1e-12 * total
    report.checks["length_bookkeeping"] = ok

    n_oracle = min(6, trace.achieved)
    rng = np.random.default_rng(config.seed)
    st = trace.state(n_oracle)
    lo = float(st.u0)
    hi = lo + float(st.total)
    pts = lo + (hi - lo) * rng.uniform(0.02, 0.98, size=24)
    _, times, _ = first_return_bruteforce(g, (lo, hi), points=pts)
    cuts = [float(c) for c in st.cuts()]
    ok = True
    for p, t in zip(pts, times):
        j = int(np.searchsorted(cuts, p, side="right"))
        letter = st.perm.letter_at(0, min(j, g.d))
        ok &= int(st.q[st.index(letter)]) == int(t)
    report.checks["oracle_return_times"] = ok

    n_cyl = min(10, trace.achieved)
    tl = tilde_level(trace, n_cyl)
    report.checks["cylinder_measures_sum"] = (
        abs(float(np.sum(tl.lengths())) - total) < 1e-9 * total
    )
    report.checks["smoothness_V_finite"] = np.isfinite(rep.V)
    return report


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="giem-renorm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        if name == "run":
            p.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        print(f"config-parse error: {err}", file=sys.stderr)
        return 2
    try:
        config = ExperimentConfig.from_dict(raw)
        if getattr(args, "out", None):
            config.out_dir = args.out
        if args.command == "run":
            report = run(config)
        else:
            report = verify(config)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except GiemError as err:
        print(f"hard failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 2

    for k, v in sorted(report.checks.items()):
        print(f"{k}: {'pass' if v else 'FAIL'}")
    print(f"levels={report.levels} stop={report.stop_reason}")
    if report.soft_failures:
        print(f"soft failures: {report.soft_failures}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

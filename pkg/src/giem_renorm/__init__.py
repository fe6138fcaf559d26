"""Numerical laboratory for Rauzy-Veech renormalization of genus-one
generalized interval exchange maps.

The package builds exchanges with smooth branches, runs the induction via
an exact return-time recursion, and measures how the rescaled return maps
approach the fractional linear family (and the identity, for maps with
zero mean nonlinearity)."""

from .combinatorics import (
    PermPair,
    StepLabel,
    is_irreducible,
    is_k_bounded,
    measured_k_bound,
    monodromy,
    monodromy_transform,
    rauzy_move,
    winner_loser,
)
from .giem import (
    Giem,
    SmoothnessReport,
    calibrate_zero_mean,
    conjugate,
    conjugated_rotation,
    count_discontinuities,
    has_genus_one,
    mean_nonlinearity,
    piecewise_moebius,
    rotation_giem,
    rotation_number_estimate,
    standard_iem,
    validate,
)
from .precision import Backend
from .renorm import (
    ConvergenceRow,
    LevelState,
    PartitionSnapshot,
    RenormTrace,
    calibrate_rotation_class,
    compare_towers,
    convergence_table,
    detect_type,
    first_return_bruteforce,
    geometry_report,
    group_two,
    mean_nonlinearity_level,
    moebius_tower,
    partition,
    partition_norms,
    renormalize,
    rotation_interval_of_types,
    step,
    zoomed_branch,
)
from .smoothmap import (
    Jet2,
    SmoothMap,
    bump,
    c2_distance,
    chain,
    eval2,
    from_nonlinearity,
    identity,
    inverse,
    moebius,
    nonlinearity,
    nonlinearity_integral,
    pure_nonlinearity,
    zoom,
)
from .symbolic import (
    CodingResult,
    Cylinder,
    Letter,
    check_word_lemmas,
    code_point,
    conditional,
    cylinders,
    is_admissible,
    memory_decay,
    mixing_gap,
)

__version__ = "0.1.0"

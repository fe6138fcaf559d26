"""Exception hierarchy for the renormalization laboratory.

Soft conditions (a map that simply stops being renormalizable, a window too
short to certify a combinatorial property) get their own classes so callers
can catch them and keep partial results.  Hard failures (an orbit escaping
the domain, a cross-check mismatch) indicate a bug and are never caught
internally.
"""


class GiemError(Exception):
    """Base class for all library errors."""


class DomainError(GiemError):
    """A point lies outside the domain of a map or branch."""


class ValidationError(GiemError):
    """A constructed map violates the interval-exchange contract."""


class TilingGapError(ValidationError):
    """Branch images fail to tile the domain within tolerance."""


class NonMonotoneBranchError(ValidationError):
    """A branch has non-positive derivative somewhere on its interval."""


class ReduciblePermError(ValidationError):
    """The combinatorial data is reducible."""


class ConnectionError_(GiemError):
    """Winner/loser lengths tie within tolerance: a connection is suspected
    and the map is not renormalizable at this level."""


class PrecisionExhaustedError(GiemError):
    """The level interval shrank below the resolution of the arithmetic."""


class BudgetExceededError(GiemError):
    """A partition or cylinder enumeration would exceed the memory budget."""


class WindowTooShortError(GiemError):
    """A step window is too short to certify a combinatorial predicate."""


class BoundaryPointError(GiemError):
    """The point sits on a cylinder boundary and has no unique coding."""


class InadmissibleWordError(GiemError):
    """A symbolic word does not correspond to a nonempty cylinder."""


class NoValidPairsError(GiemError):
    """No admissible word pairs exist for the requested comparison."""


class MaxIterationError(GiemError):
    """An orbit iteration hit its cap before returning."""


class BracketError(GiemError):
    """A root bracket does not straddle a sign change."""


class TowerMismatchError(GiemError):
    """Two independently computed renormalization towers disagree."""


class ConfigError(GiemError):
    """An experiment configuration failed to parse or validate."""

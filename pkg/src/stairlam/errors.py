"""Exception types shared across the package."""


class StairlamError(Exception):
    """Base class for all package errors."""


class NotRankOne(StairlamError):
    """A matrix expected to be rank one is not."""


class AtomMismatch(StairlamError):
    """A split step's parent does not match the addressed atom."""


class LambdaOutOfRange(StairlamError):
    """A convex weight left the open interval (0, 1)."""


class InvalidTree(StairlamError):
    """Replaying a split tree does not reproduce its recorded leaves."""


class BarycenterMismatch(StairlamError):
    """A stage measure does not average back to its parent matrix."""


class GammaOutOfRange(StairlamError):
    """A staircase gamma left the open interval (0, 1)."""


class NonIncreasingSoar(StairlamError):
    """The soaring sequence is not strictly increasing in norm."""


class DegenerateRange(StairlamError):
    """A tail fit grid hits zero mass."""


class Infeasible(StairlamError):
    """No parameter block satisfies the feasibility conditions."""


class NotInU(StairlamError):
    """A matrix expected inside the open set U is outside it."""


class ParamViolation(StairlamError):
    """Stage inputs violate the construction preconditions."""


class EpsilonTooLargeForU(StairlamError):
    """The dust radius cannot fit inside U's margin at the base matrix."""


class DegenerateSplit(StairlamError):
    """A wiggle specification is degenerate (zero direction or weight)."""


class BudgetExceeded(StairlamError):
    """A realization cannot meet its budgets within the cell cap.

    Carries the stage index and the cell estimate so callers can report
    exactly where the schedule became unaffordable.
    """

    def __init__(self, message: str, stage: int | None = None,
                 estimated_cells: float | None = None):
        super().__init__(message)
        self.stage = stage
        self.estimated_cells = estimated_cells


class RestartOutsideU(StairlamError):
    """An error cell's gradient is outside U, so the scheme cannot restart."""


class ExtractionFailed(StairlamError):
    """A K-tagged cell fails elliptic-coefficient extraction."""


class UnmatchedAtom(StairlamError):
    """An empirical atom has no counterpart in the reference measure."""


class FillUnreachable(StairlamError):
    """The covering scheme stalled below the requested fill fraction."""

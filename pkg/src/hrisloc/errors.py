"""Exception types raised across the package."""


class HrislocError(Exception):
    """Base class for all package-specific errors."""


class CoincidentPoints(HrislocError):
    """Two points expected to be distinct are (numerically) identical."""


class NotUnit(HrislocError):
    """A vector expected to have unit norm does not."""


class DegenerateGeometry(HrislocError):
    """Node placement makes the requested geometric quantity undefined."""


class OddT(HrislocError):
    """The transmission count must be even for the pairing scheme."""


class SingularFIM(HrislocError):
    """Fisher information matrix is singular or numerically rank-deficient."""

    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class SingularReducedFIM(SingularFIM):
    """The constraint-reduced Fisher information matrix is singular."""


class DegenerateTriangle(HrislocError):
    """BS, RIS, and UE are (numerically) collinear; the triangle solve fails."""


class DegenerateDirections(HrislocError):
    """The two direction vectors are parallel; rotation is not identifiable."""


class WeakSignal(HrislocError):
    """Dictionary correlation peak is indistinguishable from the noise floor."""

    def __init__(self, message, peak=None, floor=None):
        super().__init__(message)
        self.peak = peak
        self.floor = floor


class StageFailure(HrislocError):
    """A pipeline stage failed; carries the stage name and partial results."""

    def __init__(self, stage, cause, partial=None):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial = partial if partial is not None else {}


class MissingColumn(HrislocError):
    """A CSV consumed by the plotting layer lacks a required column."""

    def __init__(self, column, path=None):
        where = f" in {path}" if path else ""
        super().__init__(f"missing required column '{column}'{where}")
        self.column = column

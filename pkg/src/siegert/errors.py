"""Exception hierarchy.

Every error raised by the library derives from :class:`SiegertError`; the CLI
maps :class:`SchemaError` to exit code 2 and every other subclass to exit
code 3.
"""


class SiegertError(Exception):
    """Base class for all library errors."""

    code = "error"

    def to_dict(self):
        return {"error": self.code, "type": type(self).__name__, "message": str(self)}


class SchemaError(SiegertError):
    """Invalid run configuration; ``path`` names the offending key."""

    code = "schema"

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")

    def to_dict(self):
        d = super().to_dict()
        d["path"] = self.path
        return d


class NumericalError(SiegertError):
    code = "numerical"


class CutPoint(NumericalError):
    """Argument lies on a branch cut."""


class BranchPoint(NumericalError):
    """Spectral parameter coincides with a diffraction threshold."""


class DomainError(NumericalError):
    pass


class SlowConvergence(NumericalError):
    pass


class TailDivergence(NumericalError):
    pass


class OutOfRange(NumericalError):
    pass


class DimensionMismatch(NumericalError):
    pass


class NearSingular(NumericalError):
    def __init__(self, message, smallest_singular_value=None):
        self.smallest_singular_value = smallest_singular_value
        super().__init__(message)


class NoneInDisk(NumericalError):
    pass


class MultipleInDisk(NumericalError):
    def __init__(self, message, eigenvalues=()):
        self.eigenvalues = tuple(eigenvalues)
        super().__init__(message)


class ContourHitsEigenvalue(NumericalError):
    pass


class DegenerateProjection(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class CutCollision(NumericalError):
    pass


class NotNearBic(NumericalError):
    pass


class PoorFit(NumericalError):
    pass


class BranchLost(NumericalError):
    pass


class LeftCutPlane(NumericalError):
    pass


class NoMinimum(NumericalError):
    pass


class InsufficientSamples(NumericalError):
    pass


class NegativeRealPart(NumericalError):
    pass


class PoleNotEnclosed(NumericalError):
    pass


class QuadratureBudget(NumericalError):
    pass

"""Exception hierarchy.

``ValidationError`` subclasses signal malformed input (CLI exit code 2);
``NumericalError`` subclasses signal a well-formed input that cannot be
computed on (CLI exit code 3).
"""


class NearQuiverError(Exception):
    """Base class for all package errors."""


class ValidationError(NearQuiverError):
    pass


class NumericalError(NearQuiverError):
    pass


class DanglingArrow(ValidationError):
    pass


class OrientedCycle(ValidationError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("oriented cycle through vertices " + " -> ".join(map(str, self.cycle)))


class ShapeMismatch(ValidationError):
    pass


class MixedField(ValidationError):
    pass


class TypeCheckFailure(ValidationError):
    pass


class MeasurementInDeterministicContext(ValidationError):
    pass


class NonMeasurementActivation(ValidationError):
    pass


class UnknownSymbol(ValidationError):
    pass


class BadHeader(ValidationError):
    pass


class NonNumericCell(ValidationError):
    def __init__(self, row, col, value):
        self.row, self.col, self.value = row, col, value
        super().__init__(f"non-numeric cell at row {row}, column {col!r}: {value!r}")


class ConfigError(ValidationError):
    pass


class SingularGauge(NumericalError):
    pass


class MetricUnavailable(NumericalError):
    pass


class NotSpaceLike(NumericalError):
    def __init__(self, vertex, min_eigenvalue):
        self.vertex = vertex
        self.min_eigenvalue = float(min_eigenvalue)
        super().__init__(
            f"Gram matrix at vertex {vertex!r} is not positive definite "
            f"(smallest eigenvalue {self.min_eigenvalue:.3e})"
        )


class RankDeficientFraming(NumericalError):
    pass


class ZeroVector(NumericalError):
    pass


class StepRejected(NumericalError):
    pass


class TooManyMeasurements(NumericalError):
    pass

"""Exception hierarchy.

``InputError`` subclasses signal bad files or arguments (CLI exit code 2);
``NumericalError`` subclasses signal a failed computation (exit code 3).
"""


class ForceRegError(Exception):
    pass


class InputError(ForceRegError):
    pass


class NumericalError(ForceRegError):
    pass


class ParseError(InputError):
    pass


class TopologyError(InputError):
    pass


class UnsupportedCellType(InputError):
    pass


class EmptyCloud(InputError):
    pass


class EmptySelection(InputError):
    pass


class EmptySurface(InputError):
    pass


class EmptyTargets(InputError):
    pass


class ConfigError(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class DegenerateElement(NumericalError):
    def __init__(self, message, tet_index=None):
        super().__init__(message)
        self.tet_index = tet_index


class DegenerateTriangle(NumericalError):
    pass


class DegenerateConfiguration(NumericalError):
    pass


class FactorizationError(NumericalError):
    pass


class ZeroCurvature(NumericalError):
    pass


class NonFiniteState(NumericalError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []

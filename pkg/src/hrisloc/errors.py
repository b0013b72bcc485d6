"""Exception hierarchy shared by the simulator, estimators and bounds."""


class HrisLocError(Exception):
    """Base class for all package errors."""


class ConfigError(HrisLocError, ValueError):
    """Invalid or out-of-range configuration value."""


class DegenerateGeometryError(HrisLocError, ValueError):
    """Coincident nodes, collinear triangle or zero excess path length."""


class InconsistentAnglesError(HrisLocError, ValueError):
    """Angle estimates that cannot close a triangle."""


class DimensionError(HrisLocError, ValueError):
    pass


class EstimationError(HrisLocError, RuntimeError):
    """A pipeline stage could not produce an estimate."""


class NoPeakError(EstimationError):
    pass


class NoSignalError(EstimationError):
    pass


class SensingDisabledError(EstimationError):
    pass


class RankError(EstimationError):
    pass


class IllPosedError(HrisLocError, ArithmeticError):
    """Fisher information is singular for the requested parameters."""

    def __init__(self, message: str = "", parameters=()):
        super().__init__(message)
        self.parameters = tuple(parameters)


class UnidentifiableError(IllPosedError):
    pass


class NumericError(HrisLocError, ArithmeticError):
    pass

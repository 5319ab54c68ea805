"""Exception hierarchy shared by all ivgaze modules."""


class IVGazeError(Exception):
    """Base class for every error raised by this package."""

    #: process exit code used by the command line driver
    exit_code = 3


class ConfigError(IVGazeError):
    exit_code = 2


class DataError(IVGazeError):
    exit_code = 3


class NumericalError(IVGazeError):
    exit_code = 4


# geometry
class BehindCamera(DataError):
    pass


class NotUnit(DataError):
    pass


class CoincidentPoints(DataError):
    pass


# calibration
class DegenerateConfiguration(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class BoardNotVisible(DataError):
    pass


# annotation / metrics
class UnknownZone(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptySet(DataError):
    pass


# normalization
class DegenerateDirection(NumericalError):
    pass


class FaceAtOrigin(DataError):
    pass


class SingularHomography(NumericalError):
    pass


# model
class ShapeMismatch(DataError):
    pass


class LabelMissing(DataError):
    pass


class DivergenceDetected(NumericalError):
    pass


# synthetic cabin / reporting
class BadLayout(ConfigError):
    pass


class MalformedReport(DataError):
    pass

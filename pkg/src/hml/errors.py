"""Named failures raised across the package.

Each class carries the exit code the ``hml`` command line maps it to.
"""


class HmlError(Exception):
    exit_code = 1


class ConfigError(HmlError):
    exit_code = 2


class BadRatio(ConfigError):
    pass


class SeparationViolation(ConfigError):
    pass


class CapExceeded(ConfigError):
    pass


class DepthExceeded(HmlError):
    exit_code = 2


class InsufficientDepth(DepthExceeded):
    pass


class EmptyBall(HmlError):
    pass


class MissingInput(HmlError):
    exit_code = 3


class DigestMismatch(MissingInput):
    pass


class StatisticalPreconditionFailed(HmlError):
    exit_code = 4


class NoAbsorption(StatisticalPreconditionFailed):
    pass


class ConditionFailed(StatisticalPreconditionFailed):
    def __init__(self, message, admissible=None):
        super().__init__(message)
        self.admissible = admissible


class ZeroMass(StatisticalPreconditionFailed):
    pass


class InsufficientData(StatisticalPreconditionFailed):
    pass

"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3 and failed audits with 4.
"""


class GLMSError(Exception):
    exit_code = 3


class ConfigError(GLMSError, ValueError):
    exit_code = 2


class DomainError(GLMSError, ValueError):
    exit_code = 2


class UnsupportedError(ConfigError):
    pass


class NonDifferentiableError(GLMSError, ValueError):
    pass


class DegenerateLossError(GLMSError):
    pass


class ThresholdNotAttainedError(GLMSError):
    pass


class NoContractionError(ConfigError):
    pass


class InconsistencyError(GLMSError):
    pass


class UnboundedError(GLMSError):
    pass


class InfeasibleError(GLMSError):
    pass


class AuditFailure(GLMSError):
    exit_code = 4

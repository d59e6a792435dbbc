from enum import IntEnum


class ExitCode(IntEnum):
    SUCCESS = 0
    CONFIGURATION_ERROR = 2
    RUNTIME_ERROR = 3
    ACCEPTANCE_FAILURE = 4


class MirageLabError(Exception):
    exit_code = ExitCode.RUNTIME_ERROR


class ConfigurationError(MirageLabError, ValueError):
    """Malformed key material, invalid cache geometry or an unparseable config file."""

    exit_code = ExitCode.CONFIGURATION_ERROR


class ArgumentError(MirageLabError, ValueError):
    """An operation was called outside its precondition."""


class TemplateStoreError(MirageLabError):
    pass


class PlotSchemaError(MirageLabError, ValueError):
    pass


class AcceptanceFailure(MirageLabError):
    exit_code = ExitCode.ACCEPTANCE_FAILURE

"""Exception hierarchy.

``InputError`` subclasses map to CLI exit code 1, ``SimulationError`` to 2.
"""


class McsimError(Exception):
    pass


class InputError(McsimError, ValueError):
    pass


class ConfigError(InputError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class NonPowerOfTwo(ConfigError):
    pass


class InconsistentBlockSize(ConfigError):
    pass


class EmptyAffinity(ConfigError):
    pass


class TraceSyntaxError(InputError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CrossesBlockBoundary(InputError):
    pass


class FrequencyOutOfRange(InputError):
    pass


class AddressOutOfRange(InputError):
    pass


class ProgramTooLarge(InputError):
    pass


class LitmusSyntaxError(InputError):
    def __init__(self, line_no, message):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class MissingBaseline(InputError):
    pass


class InvalidDuration(InputError):
    pass


class NoAccesses(InputError):
    pass


class SimulationError(McsimError, RuntimeError):
    pass


class UnknownThread(SimulationError):
    pass


class UnschedulableThread(SimulationError):
    pass


class DeadlockDetected(SimulationError):
    pass

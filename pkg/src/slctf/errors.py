"""Exception hierarchy. Each class maps to one CLI exit code."""


class SlctfError(Exception):
    exit_code = 1


class ContractError(SlctfError, ValueError):
    """Precondition of an operation was violated by the caller."""


class CapacityError(SlctfError, MemoryError):
    """A table would exceed the configured state-space limit."""

    exit_code = 3


class NumericalError(SlctfError, ArithmeticError):
    """x/0 with x > 0 during division, or a similar arithmetic fault."""


class ParseError(SlctfError):
    exit_code = 2

    def __init__(self, msg, line=None):
        self.line = line
        if line is not None:
            msg = f"line {line}: {msg}"
        super().__init__(msg)


class UnsupportedFormatError(ParseError):
    pass


class ModelError(SlctfError):
    """Structural problem in a network (cycle, bad CPD)."""

    exit_code = 2


class ConfigError(SlctfError):
    exit_code = 3


class InconsistentEvidenceError(SlctfError):
    """Evidence has probability zero."""


class UnsatisfiableApproximationError(SlctfError):
    exit_code = 4

    def __init__(self, msg, clique=None):
        self.clique = clique
        super().__init__(msg)


class BuildError(SlctfError):
    """Internal invariant violation or a non-progressing build loop."""


class OracleCapacityError(CapacityError):
    pass


class InstanceTimeout(SlctfError):
    exit_code = 5

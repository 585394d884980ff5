"""Exception hierarchy shared by all vmfkit modules."""


class VmfkitError(Exception):
    """Base class for every error raised by vmfkit."""


class DomainError(VmfkitError, ValueError):
    """Argument outside the mathematical domain of a function."""


class DimensionMismatchError(VmfkitError, ValueError):
    pass


class DegenerateInputError(VmfkitError, ArithmeticError):
    """A direction is requested from a (near) zero-norm vector."""


class DivergenceError(VmfkitError, ArithmeticError):
    """Training produced a non-finite loss."""


class CheckpointError(VmfkitError):
    pass


class CorruptPayloadError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ConfigError(VmfkitError, ValueError):
    pass

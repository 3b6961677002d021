"""Exception hierarchy shared across the package."""


class MapexError(Exception):
    """Base class for all package errors."""


class DimensionError(MapexError, ValueError):
    """Array shapes or vector lengths do not match the expected contract."""


class DivergenceError(MapexError, FloatingPointError):
    """A loss, target or gradient became non-finite during training."""


class FormatError(MapexError, ValueError):
    """A serialized file is truncated, corrupt or not of the expected kind."""


class UnsupportedVersionError(FormatError):
    pass


class PreconditionError(MapexError, ValueError):
    pass


class EmptyBufferError(PreconditionError):
    pass


class UnsupportedDimensionError(MapexError, ValueError):
    """The operation is only defined for a specific number of objectives."""


class CannotExtractError(MapexError):
    """The front is too small (or degenerate) to define a gap."""


class DegenerateWeightsError(MapexError):
    """Target weights collapse to the zero vector after clamping."""


class MissingCriticError(MapexError, KeyError):
    def __init__(self, k: int, m: int):
        super().__init__(f"critic (k={k}, m={m}) is missing from the critic family")
        self.k = k
        self.m = m

    def __str__(self) -> str:
        return self.args[0]


class MissingArtifactError(MapexError, FileNotFoundError):
    pass


class ChecksumError(MapexError):
    """A manifest's recorded checksum does not match its contents."""

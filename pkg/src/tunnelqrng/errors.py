"""Exception hierarchy shared by every stage of the toolchain."""


class TunnelQRNGError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class DomainError(TunnelQRNGError, ValueError):
    pass


class InvalidModel(TunnelQRNGError, ValueError):
    pass


class BreakdownRegime(TunnelQRNGError):
    """Multiplication denominator vanished: the diode is past avalanche breakdown."""


class NoConvergence(TunnelQRNGError):
    pass


class UnknownLayer(TunnelQRNGError, KeyError):
    pass


class NonFinite(TunnelQRNGError, OverflowError):
    pass


class FormatError(TunnelQRNGError, ValueError):
    pass


class MetadataMissing(TunnelQRNGError):
    pass


class ResolutionError(TunnelQRNGError, ValueError):
    """Too few distinct interval thresholds for the requested symbol width."""


class InsufficientData(TunnelQRNGError, ValueError):
    pass


class FitDiverged(TunnelQRNGError):
    def __init__(self, message, residual=float("nan"), state=None):
        super().__init__(message)
        self.residual = residual
        self.state = state or {}


class EmptyHistogram(TunnelQRNGError, ValueError):
    pass


class BlockTooSmall(TunnelQRNGError, ValueError):
    pass


class LengthMismatch(TunnelQRNGError, ValueError):
    pass


class InsufficientSeed(TunnelQRNGError, ValueError):
    pass


class TooShort(TunnelQRNGError, ValueError):
    pass


class ShapeMismatch(TunnelQRNGError, ValueError):
    pass


class ConfigError(TunnelQRNGError, ValueError):
    """Bad or inconsistent configuration; the CLI maps this to exit code 2."""

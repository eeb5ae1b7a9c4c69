"""Exception types shared across the package."""


class HnoError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(HnoError, ValueError):
    pass


class InvalidPermutation(HnoError, ValueError):
    pass


class ElementCountMismatch(HnoError, ValueError):
    pass


class AxisOutOfRange(HnoError, IndexError):
    pass


class UnknownActivation(HnoError, KeyError):
    pass


class NotScalar(HnoError, ValueError):
    pass


class TapeConsumed(HnoError, RuntimeError):
    pass


class DegenerateKnots(HnoError, ValueError):
    pass


class ModesExceedResolution(HnoError, ValueError):
    pass


class InvalidConfig(HnoError, ValueError):
    pass


class CellOutOfGrid(HnoError, IndexError):
    pass


class EmptyData(HnoError, ValueError):
    pass


class InvalidCounts(HnoError, ValueError):
    pass


class NonPositivePermeability(HnoError, ValueError):
    pass


class CgNoConvergence(HnoError, RuntimeError):
    pass


class BadMagic(HnoError, ValueError):
    pass


class UnsupportedVersion(HnoError, ValueError):
    pass


class CorruptRecord(HnoError, ValueError):
    pass


class ZeroReference(HnoError, ValueError):
    pass


class NonFiniteGradient(HnoError, FloatingPointError):
    pass


class NonFiniteLoss(HnoError, FloatingPointError):
    pass


class MissingChannel(HnoError, KeyError):
    pass


class DomainNotCovered(HnoError, ValueError):
    pass


class ParseError(HnoError, ValueError):
    pass


class DivByZeroWarning(RuntimeWarning):
    """Raised as a warning when an elementwise division hits a zero divisor."""


class IllConditionedFitWarning(RuntimeWarning):
    """Raised when a least-squares fit falls back to a regularized solve."""

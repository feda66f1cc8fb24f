"""Exception types raised across the package."""


class TikudaError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(TikudaError, ValueError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class NotScalar(TikudaError, ValueError):
    pass


class NotPositiveDefinite(TikudaError, ArithmeticError):
    pass


class NoConvergence(TikudaError, RuntimeError):
    pass


class IsolatedNode(TikudaError, ValueError):
    pass


class OutOfRange(TikudaError, ValueError):
    pass


class DataError(TikudaError):
    """Problems with input data (missing files, bad columns, empty sets)."""


class MissingColumn(DataError, KeyError):
    pass


class EmptyAfterCleaning(DataError, ValueError):
    pass


class ConstantColumn(DataError, ValueError):
    pass


class AsymmetricAdjacency(DataError, ValueError):
    pass


class BadDimension(DataError, ValueError):
    pass


class EmptyDataset(DataError, ValueError):
    pass


class SingularMixing(TikudaError, ValueError):
    pass


class ConfigError(TikudaError, ValueError):
    pass


class NonFiniteLoss(TikudaError, ArithmeticError):
    pass

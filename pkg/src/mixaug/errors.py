"""Exception types shared across the package."""


class MixaugError(Exception):
    pass


class DimensionError(MixaugError, ValueError):
    """Tensor shapes do not agree."""


class DomainError(MixaugError, ValueError):
    """A scalar parameter lies outside its mathematical domain."""


class ArgumentError(MixaugError, ValueError):
    pass


class NumericError(MixaugError, ArithmeticError):
    """A NaN or Inf showed up where only finite values are allowed."""


class DegenerateGeometryError(MixaugError, ValueError):
    pass


class LoadError(MixaugError, IOError):
    pass

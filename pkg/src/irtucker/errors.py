"""Exception hierarchy shared by the library and the CLI."""


class TensorShapeError(ValueError):
    """Operands do not conform (mode out of range, dimension mismatch)."""


class NumericalFailure(ArithmeticError):
    """A solver produced non-finite values or hit a singular system."""


class FormatError(ValueError):
    """A tensor, mask or image file could not be parsed."""


class MagicMismatch(FormatError):
    pass


class Truncated(FormatError):
    pass


class DimOverflow(FormatError):
    pass

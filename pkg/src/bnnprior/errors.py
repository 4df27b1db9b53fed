"""Exception types shared across the package."""


class BnnPriorError(Exception):
    """Base class for all package errors."""


class InvalidShape(BnnPriorError, ValueError):
    pass


class InvalidMask(BnnPriorError, ValueError):
    pass


class InvalidConfig(BnnPriorError, ValueError):
    pass


class NumericalFailure(BnnPriorError, ArithmeticError):
    pass


class DegenerateBatch(BnnPriorError, ValueError):
    """A batch lacks one of the groups a batch-level loss needs."""


class DegenerateLabels(BnnPriorError, ValueError):
    """A metric needs both classes but only one is present."""


class FormatError(BnnPriorError, ValueError):
    """A binary file (IDX, BNNDATA, BNNPRIOR) failed to parse."""

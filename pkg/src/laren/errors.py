"""Exception types shared across the package."""


class LarenError(Exception):
    """Base class for all errors raised by this package."""


class DimMismatch(LarenError, ValueError):
    pass


class ShapeMismatch(DimMismatch):
    pass


class WrongLayerShape(DimMismatch):
    pass


class NonScalarLoss(LarenError, ValueError):
    pass


class NonFiniteError(LarenError, ArithmeticError):
    pass


class NonFiniteLoss(NonFiniteError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


class TooFewSamples(LarenError, ValueError):
    pass


class DegenerateAttributes(LarenError, ValueError):
    pass


class IndexOutOfRange(LarenError, IndexError):
    pass


class BadConfig(LarenError, ValueError):
    pass


class MissingFile(LarenError, FileNotFoundError):
    pass

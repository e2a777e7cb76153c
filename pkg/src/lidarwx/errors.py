"""Exception hierarchy. The CLI maps these onto exit codes."""


class LidarWxError(Exception):
    """Base class for all package errors."""


class DataError(LidarWxError):
    """Input data is malformed or inconsistent."""


class MalformedScanError(DataError):
    pass


class MalformedLabelError(DataError):
    pass


class CorruptValueError(DataError):
    def __init__(self, message: str, index: int):
        super().__init__(message)
        self.index = index


class InvalidSpecError(LidarWxError, ValueError):
    """A corruption/augmentation/config spec violates its invariants."""


class ShapeError(LidarWxError, ValueError):
    pass


class EmptyInputError(LidarWxError, ValueError):
    pass


class NumericError(LidarWxError, ArithmeticError):
    """Non-finite values reached an update."""

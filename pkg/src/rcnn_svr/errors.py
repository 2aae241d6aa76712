"""Exception types raised across the package."""


class RcnnSvrError(Exception):
    """Base class for every error raised by this package."""


# tensor_core
class ShapeError(RcnnSvrError, ValueError):
    pass


class NonDivisibleStrideError(ShapeError):
    pass


class NegativeExtentError(ShapeError):
    pass


class PoolTooLargeError(ShapeError):
    pass


# neural_net
class InvalidSpecError(RcnnSvrError, ValueError):
    pass


class ShapeMismatchError(ShapeError):
    pass


class StaleCacheError(RcnnSvrError, ValueError):
    pass


class EmptyDatasetError(RcnnSvrError, ValueError):
    pass


class LayerOutOfRangeError(RcnnSvrError, IndexError):
    pass


# svr
class DegenerateInputError(RcnnSvrError, ValueError):
    pass


class NonFiniteError(RcnnSvrError, ValueError):
    pass


class DimensionMismatchError(RcnnSvrError, ValueError):
    pass


# pipeline
class InputTooShortError(RcnnSvrError, ValueError):
    pass


class InvalidExtractionLayerError(RcnnSvrError, ValueError):
    pass


# metrics
class LengthMismatchError(RcnnSvrError, ValueError):
    pass


class EmptyInputError(RcnnSvrError, ValueError):
    pass


class ZeroTargetError(RcnnSvrError, ValueError):
    pass


class ZeroMeanError(RcnnSvrError, ValueError):
    pass


# dataio
class ParseError(RcnnSvrError, ValueError):
    pass


class MissingColumnError(ParseError):
    pass


class NonNumericError(ParseError):
    pass


class SplitTooLargeError(RcnnSvrError, ValueError):
    pass


class ConstantColumnError(RcnnSvrError, ValueError):
    pass


class ModelFileError(RcnnSvrError):
    pass


class VersionMismatchError(ModelFileError):
    def __init__(self, found, expected, path=None):
        self.found = found
        self.expected = expected
        where = f" in {path}" if path else ""
        super().__init__(
            f"model file format version {found}{where} is not supported "
            f"(this build reads version {expected})"
        )


class CorruptFileError(ModelFileError):
    pass

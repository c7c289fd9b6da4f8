"""Exception hierarchy shared by every stage of the engine."""


class FlowForgeError(Exception):
    """Base class for all engine errors."""


class InvalidArgument(FlowForgeError, ValueError):
    pass


class InvalidConfiguration(FlowForgeError, ValueError):
    pass


class SingularJacobianError(FlowForgeError, ArithmeticError):
    def __init__(self, k, det):
        self.k = k
        self.det = det
        super().__init__(f"driving jacobian {k} is near-singular (det={det:.3e})")


class ProviderError(FlowForgeError, RuntimeError):
    pass


class FormatError(FlowForgeError, ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)

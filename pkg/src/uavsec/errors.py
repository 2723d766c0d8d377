"""Exception hierarchy shared by all subsystems."""


class UavSimError(Exception):
    """Base class for every error raised by the framework."""


class ValidationError(UavSimError):
    """Invalid configuration or argument.

    ``path`` is a JSON pointer (``/vehicles/1/id``) when the error comes from
    a scenario document, otherwise an empty string.
    """

    def __init__(self, message: str, path: str = ""):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


class StorageError(UavSimError):
    """A file could not be read or written."""


class BusError(UavSimError):
    """Misuse of the message bus (unknown topic, duplicate name, ...)."""


class KindMismatchError(BusError):
    pass


class ServiceError(BusError):
    pass


class ActionError(BusError):
    pass


class InvalidRequest(UavSimError):
    """Domain error raised by a service handler and propagated to the caller."""


class BagFormatError(UavSimError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class NumericalDivergence(UavSimError):
    """State became non-finite; the scenario is numerically exploding."""


class RiccatiError(UavSimError):
    pass


class FilterDivergence(UavSimError):
    """Estimator covariance lost positive definiteness."""


class HashMismatch(UavSimError):
    def __init__(self, expected: str, actual: str):
        self.expected = expected
        self.actual = actual
        super().__init__(f"scenario hash mismatch: bag={expected} config={actual}")


class NodeAbort(UavSimError):
    """A node failed during a run; carries the node name and tick."""

    def __init__(self, node: str, tick: int, cause: Exception):
        self.node = node
        self.tick = tick
        self.cause = cause
        super().__init__(f"node {node!r} aborted at tick {tick}: {cause}")

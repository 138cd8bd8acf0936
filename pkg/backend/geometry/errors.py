class GeometryError(ValueError):
    """Base class for every failure raised by the geometry package."""


class MetricError(GeometryError):
    pass


class TreeError(GeometryError):
    pass


class CycleError(TreeError):
    def __init__(self, message: str, witness: list[tuple[str, str]]):
        super().__init__(message)
        self.witness = witness


class DisconnectedError(TreeError):
    pass


class PlanError(TreeError):
    """A replacement plan violates its preconditions."""


class CapExceededError(GeometryError):
    pass


class FingerprintError(GeometryError):
    pass


class ScanError(GeometryError):
    def __init__(self, message: str, failures: list[tuple[object, Exception]] | None = None):
        super().__init__(message)
        self.failures = failures or []


class ConfigError(GeometryError):
    pass

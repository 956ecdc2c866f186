"""Exception types shared across the package."""


class KvmasError(Exception):
    """Base class for package errors."""


class ConfigError(KvmasError):
    """Invalid configuration (model dims, endpoint setup, missing env vars)."""


class CapacityError(KvmasError):
    """An operation would exceed the model's maximum sequence length."""


class IncompatibleCacheError(KvmasError):
    """Caches from differently configured models cannot be combined."""


class TrainingDivergedError(KvmasError):
    """Loss became non-finite during training."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class WeightsFormatError(KvmasError):
    """A weights or cache file failed format validation."""


class PoolError(KvmasError):
    """Knowledge pool is empty or its file failed validation."""


class PlanningError(KvmasError):
    """The organizer could not produce a valid composition plan."""


class PlanExecutionError(KvmasError):
    """A plan node failed during execution; carries the partial trace."""

    def __init__(self, node_id: str, message: str, partial_trace=None):
        self.node_id = node_id
        self.partial_trace = partial_trace
        super().__init__(f"plan node '{node_id}' failed: {message}")


class TransportError(KvmasError):
    """All transport attempts to an external endpoint failed."""

    def __init__(self, message: str, attempts=None):
        self.attempts = list(attempts or [])
        super().__init__(message)


class ProtocolError(KvmasError):
    """The external endpoint returned an unusable response."""

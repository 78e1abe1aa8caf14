"""Exception hierarchy shared across the package."""


class BridgeError(Exception):
    """Base class for all errors raised by mmbridge."""


class DimensionError(BridgeError, ValueError):
    """Operand shapes do not agree."""


class AlignmentError(DimensionError):
    """Two sequences that must share a temporal length do not."""


class DomainError(BridgeError, ValueError):
    """An input lies outside the domain of an operation (zero norm, NaN, bad label)."""


class GradCheckError(BridgeError):
    """Analytic and numeric gradients could not be compared."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class SpecError(BridgeError, ValueError):
    """A dataset specification violates its invariants."""


class ConfigError(BridgeError, ValueError):
    """A run configuration is malformed or inconsistent."""


class IncompatibleError(ConfigError):
    """A checkpoint and a dataset disagree on dimensions."""


class CheckpointError(BridgeError, IOError):
    """A checkpoint or dataset file could not be parsed."""


class ContractError(BridgeError, RuntimeError):
    """A caller violated a precondition, e.g. stepping without gradients."""


class NonFiniteLossError(BridgeError, FloatingPointError):
    """A loss term became NaN or infinite during training."""

    def __init__(self, term, iteration, value):
        super().__init__(
            f"non-finite {term} ({value!r}) at iteration {iteration}")
        self.term = term
        self.iteration = iteration
        self.value = value

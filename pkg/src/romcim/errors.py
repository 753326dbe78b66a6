"""Exception types shared across the simulator.

ValidationError covers everything a malformed input can trigger (schemas,
shapes, bit ranges, geometry); the CLI maps it to exit code 1. Runtime
failures such as training divergence map to exit code 2.
"""


class ValidationError(ValueError):
    """Bad input: schema violation, shape mismatch, bit-range breach."""


class GeometryError(ValidationError):
    """A tensor or tile does not fit the array geometry it was given."""


class CapacityError(ValidationError):
    """Workload exceeds the available macro inventory."""

    def __init__(self, message, deficit_bits=0):
        super().__init__(message)
        self.deficit_bits = deficit_bits


class DivergenceError(RuntimeError):
    """Training loss blew up past the configured abort threshold."""


class WorkloadMismatchError(ValidationError):
    """Two reports being compared were produced from different workloads."""

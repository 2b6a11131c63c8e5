"""Structured errors shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class SingularGeometryError(ValueError):
    """Target coincides with a node/BS or sits on a degenerate axis."""


class NotSPDError(ValueError):
    """A matrix required to be symmetric positive-definite is not."""


class EnumerationCapError(RuntimeError):
    """Subset enumeration would exceed the configured cap."""


class SchemaError(ValueError):
    """A config or data file does not match the expected schema."""

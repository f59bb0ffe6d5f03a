"""Exception types shared across the package."""


class ModelError(ValueError):
    """Invalid model parameters or configuration."""


class NumericalError(RuntimeError):
    """A numerical routine failed to reach its requested accuracy."""

"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor or layer dimensions do not compose."""


class ModelFormatError(ValueError):
    """A model file is malformed or violates a network invariant."""


class InvariantError(RuntimeError):
    """An internal invariant was breached (indicates a bug upstream)."""

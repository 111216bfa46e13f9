"""Exception types shared across the package."""


class PomdpDesignError(Exception):
    """Base class for all library errors."""


class ImpossibleObservationError(PomdpDesignError):
    """A filter update met an observation with predictive probability at the floor."""

    def __init__(self, y_next, u, y_prev=None):
        self.y_next = y_next
        self.u = u
        self.y_prev = y_prev
        msg = f"impossible observation y={y_next} after control u={u}"
        if y_prev is not None:
            msg += f" (previous observation {y_prev})"
        super().__init__(msg)


class ImpossibleWindowError(PomdpDesignError):
    """A history window has zero probability under the given parameter."""

    def __init__(self, window, detail=""):
        self.window = window
        super().__init__(f"impossible window {window}" + (f": {detail}" if detail else ""))


class PosteriorAnnihilatedError(PomdpDesignError):
    """Every grid point assigned ~zero predictive probability to the new data."""


class BudgetExceededError(PomdpDesignError):
    """A solver or oracle refused a problem larger than its configured budget."""


class SchemaError(PomdpDesignError):
    """A run configuration failed schema validation."""


class ModelFileError(PomdpDesignError):
    """A model tensor file could not be parsed or failed validation on load."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at offset {offset})"
        super().__init__(message)


class EstimationError(PomdpDesignError):
    """Parameter estimation failed (impossible data, non-finite objective, ...)."""

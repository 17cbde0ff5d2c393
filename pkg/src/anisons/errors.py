class GridMismatchError(ValueError):
    """Operands live on different grids."""


class UnsupportedNormError(ValueError):
    pass


class ConfigError(ValueError):
    """Invalid run configuration.  ``key`` names the offending field."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class BlowUpError(RuntimeError):
    """Non-finite or runaway state during time stepping."""

    def __init__(self, step, replica=None, norm=float("nan"), context=""):
        where = f"step {step}" if replica is None else f"step {step}, replica {replica}"
        msg = f"blow-up at {where} (|u|_L2 = {norm:.3e})"
        if context:
            msg += f": {context}"
        super().__init__(msg)
        self.step = step
        self.replica = replica
        self.norm = norm


class ImpossibleBoundError(ArithmeticError):
    """A bound evaluated to zero while the bounded quantity did not."""


class CalibrationError(ValueError):
    pass


class PreconditionError(ValueError):
    """Inputs fall outside the regime where a claim is made."""

class SfpeError(Exception):
    """Base class for errors raised by the package."""


class ConfigurationError(SfpeError, ValueError):
    """A problem or run configuration is incomplete or inconsistent."""


class SimulationBlowup(SfpeError, FloatingPointError):
    """A simulated state became non-finite."""

    def __init__(self, step, path_index=None, what="state"):
        self.step = int(step)
        self.path_index = None if path_index is None else int(path_index)
        where = f"step {self.step}"
        if self.path_index is not None:
            where += f", path {self.path_index}"
        super().__init__(f"non-finite {what} at {where}")


class EllipticityViolation(SfpeError, ArithmeticError):
    """The diffusion matrix is numerically singular."""


class HorizonError(SfpeError, ValueError):
    """A weight or estimate was requested on a degenerate time interval."""


class BudgetExceeded(SfpeError):
    """The predicted cost of a nested evaluation exceeds the allowed budget."""

    def __init__(self, predicted, budget):
        self.predicted = int(predicted)
        self.budget = int(budget)
        super().__init__(
            f"predicted cost {self.predicted} path-steps exceeds budget {self.budget}")

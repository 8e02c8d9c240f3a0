"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates an operation's preconditions."""


class ConvergenceError(RuntimeError):
    """The SVM solver hit its iteration cap before meeting the KKT tolerance."""

    def __init__(self, message, violation=None, iterations=None):
        super().__init__(message)
        self.violation = violation
        self.iterations = iterations

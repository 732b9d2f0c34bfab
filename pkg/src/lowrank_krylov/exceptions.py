class ConfigError(ValueError):
    """Invalid solver, problem or command-line configuration."""


class FactorizationError(RuntimeError):
    """A preconditioner or block matrix could not be factorized."""


class SolverFailure(RuntimeError):
    """A solver broke down or failed to reach the requested accuracy."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index

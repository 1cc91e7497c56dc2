"""Exception types that map onto distinct CLI exit codes."""


class ConfigError(ValueError):
    """Invalid or unreadable run configuration (exit code 1)."""


class LivelockError(RuntimeError):
    """Generation failed to finish within the cycle cap (exit code 2).

    Carries the stats accumulated up to the abort so harnesses can report
    the cost of the failed run.
    """

    def __init__(self, message: str, stats=None):
        super().__init__(message)
        self.stats = stats


class ProtocolError(RuntimeError):
    """External model sent a malformed or invalid message."""


class ModelUnavailableError(RuntimeError):
    """External model process timed out or went away."""

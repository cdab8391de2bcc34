"""Exception types shared across the package."""


class InputError(ValueError):
    """Malformed input: dimension mismatch, non-finite coordinates, bad config."""


class IllConditionedDataError(RuntimeError):
    """A Gram matrix could not be factorized even after jitter escalation.

    Usually caused by duplicate or near-duplicate training locations; the
    message names the offending pair.
    """


class DivergenceError(RuntimeError):
    """A dynamics integration blew up (non-finite state or runaway norm)."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory if trajectory is not None else []


class SurrogateUnusableError(RuntimeError):
    """Every sampled surrogate path diverged immediately; the model is unusable."""

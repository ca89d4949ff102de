"""Exception types shared across the package.

Invalid arguments raise plain ValueError everywhere; the classes here
cover runtime failures of the iterative machinery, where callers need
to distinguish "did not converge" from "produced garbage".
"""


class GVError(Exception):
    """Base class for solver failures."""


class ConvergenceError(GVError):
    """An iteration hit its cap before reaching its tolerance."""

    def __init__(self, message, last_delta=None, iterations=None):
        super().__init__(message)
        self.last_delta = last_delta
        self.iterations = iterations


class NumericalError(GVError):
    """A NaN or infinity appeared during evaluation.

    ``node`` identifies the first offending grid index, as a tuple.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class LineSearchStallError(GVError):
    """Backtracking line search exhausted its halvings."""


class TruncationError(GVError):
    """A series was evaluated with too few terms for the requested
    tolerance; the certified tail bound is attached."""

    def __init__(self, message, tail_bound=None):
        super().__init__(message)
        self.tail_bound = tail_bound


class OptimizeError(GVError):
    """A solver failed inside an optimizer iteration.

    Carries the iterate snapshot so the caller can inspect or restart.
    """

    def __init__(self, message, iterate=None, iteration=None):
        super().__init__(message)
        self.iterate = iterate
        self.iteration = iteration

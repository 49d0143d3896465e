"""Exception hierarchy shared by every solver module."""


class DistLQError(Exception):
    """Base class for all package errors."""


class StructuralError(DistLQError, ValueError):
    """Inconsistent dimensions or malformed problem data."""


class ScenarioError(StructuralError):
    """A scenario document violates the expected schema."""


class TopologyError(DistLQError):
    """Disconnected graph or coupling gain that breaks the consensus bound."""


class IntegrationDivergenceError(DistLQError, FloatingPointError):
    """An ODE integration produced non-finite values.

    ``node`` is the first grid index holding a non-finite sample.
    """

    def __init__(self, node, message=None):
        self.node = int(node)
        super().__init__(message or f"integration diverged: first non-finite sample at node {self.node}")


class LyapunovSolveError(DistLQError, ArithmeticError):
    """The Lyapunov operator is (numerically) singular."""


class NumericalDegeneracyError(DistLQError, ArithmeticError):
    """A matrix that must be inverted is singular to working precision."""


class ReachabilityError(DistLQError):
    """The terminal state is not reachable from the initial state."""


class StabilizabilityError(DistLQError):
    """No stabilizing feedback could be produced."""


class ConvergenceError(DistLQError):
    """An iteration exhausted its budget before meeting its tolerance.

    The last step delta and whatever partial result was produced are kept
    on the exception so callers can still inspect them.
    """

    def __init__(self, message, last_delta=float("nan"), result=None):
        super().__init__(message)
        self.last_delta = last_delta
        self.result = result

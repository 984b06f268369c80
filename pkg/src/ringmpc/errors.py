"""Exception hierarchy shared by all modules."""


class RingMpcError(Exception):
    """Base class for library errors."""


class ConfigurationError(RingMpcError):
    """Malformed problem data: dimension mismatch, indefinite Hessian, bad box."""


class SingularMatrixError(RingMpcError):
    """Linear system is singular or too ill-conditioned to trust."""


class NoEquilibriumError(RingMpcError):
    """No consistent equilibrium pair exists for the requested output map."""


class LocalInfeasibleError(RingMpcError):
    """A per-agent horizon problem is infeasible at the given consensus point."""

    def __init__(self, agent_name, theta, detail=""):
        self.agent_name = agent_name
        self.theta = theta
        msg = f"local problem infeasible for agent {agent_name!r} at theta={theta}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class InvariantBreachError(RingMpcError):
    """A runtime invariant was violated (state left its constraint set, etc.)."""


class NegotiationDeadlineError(RingMpcError):
    """Cycle budget exhausted before both implementation flags turned true."""

"""Projected incremental subgradient negotiation and its convergence bound.

One negotiation cycle makes a full pass around the agent ring: agent i
takes the incoming estimate, solves its horizon problem there, and steps

    subiterate <- P_Theta[subiterate - alpha(k) g_i],

with the diminishing stepsize alpha(k) = 1/(2 mu (k+1)).  Under the
strong-convexity-type constant mu and subgradient bound beta the squared
distance to the optimal consensus set after k+1 cycles is bounded by

    (1 + ln(k+1)) / (k+1) * N^2 beta^2 / (4 mu^2),

which is what the ring protocol's accuracy flag evaluates.

mu and beta have to be known for the schedule; they are user-configurable,
and :func:`estimate_parameters` provides sampling-based estimates erring on
the safe side (beta over-, mu under-estimated), flagged as heuristics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .agents import BoxSet, LinearAgent
from .errors import ConfigurationError
from .local_mpc import solve_local


@dataclass
class NegotiationParams:
    mu: float
    beta: float
    eps: float
    max_cycles: int
    theta0: np.ndarray

    def __post_init__(self):
        self.theta0 = np.asarray(self.theta0, dtype=float)
        if min(self.mu, self.beta, self.eps) <= 0 or self.max_cycles <= 0:
            raise ConfigurationError("negotiation parameters must all be positive")


@dataclass
class Subiterate:
    agent_name: str
    theta_after: np.ndarray
    g: np.ndarray
    qvalue: float


@dataclass
class CycleTrace:
    k: int
    theta_after: np.ndarray
    subiterates: list[Subiterate] = field(default_factory=list)


def project_theta(box: BoxSet, theta):
    """Euclidean projection onto the box: a componentwise clamp."""
    return np.clip(np.asarray(theta, dtype=float), box.lo, box.hi)


def stepsize(k: int, mu: float) -> float:
    """Diminishing schedule 1/(2 mu (k+1))."""
    return 1.0 / (2.0 * mu * (k + 1))


def convergence_bound(k: int, N: int, beta: float, mu: float) -> float:
    """Certified squared distance to the optimal set after k+1 cycles."""
    return (1.0 + np.log(k + 1.0)) / (k + 1.0) * (N * N * beta * beta) / (4.0 * mu * mu)


def subgradient_cycle(agents, states, theta_k, k, params: NegotiationParams, box: BoxSet,
                      horizon: int) -> CycleTrace:
    """One full ring pass (N subiterations) starting from theta_k."""
    alpha = stepsize(k, params.mu)
    theta = project_theta(box, theta_k)
    trace = CycleTrace(k=k, theta_after=theta)
    for agent, x in zip(agents, states):
        sol = solve_local(agent, x, theta, horizon)
        theta = project_theta(box, theta - alpha * sol.g)
        trace.subiterates.append(
            Subiterate(agent_name=agent.name, theta_after=theta, g=sol.g, qvalue=sol.qvalue)
        )
    trace.theta_after = theta
    return trace


def negotiate(agents, states, box: BoxSet, params: NegotiationParams, horizon: int,
              n_cycles: int | None = None, stop_tol: float | None = None):
    """Run cycles until the count or a theta-stabilization tolerance; returns traces."""
    theta = project_theta(box, params.theta0)
    traces = []
    limit = n_cycles if n_cycles is not None else params.max_cycles
    for k in range(limit):
        trace = subgradient_cycle(agents, states, theta, k, params, box, horizon)
        traces.append(trace)
        step = float(np.linalg.norm(trace.theta_after - theta))
        theta = trace.theta_after
        if stop_tol is not None and step <= stop_tol:
            break
    return theta, traces


def estimate_parameters(agents: list[LinearAgent], states, box: BoxSet, horizon: int,
                        samples: int = 10, theta_star=None, q_star: float | None = None):
    """Sampling-based (beta_hat, mu_hat); heuristics, not guarantees.

    beta_hat inflates the largest sampled subgradient norm by 1.5x so it
    errs toward validity of the boundedness assumption; mu_hat is the
    smallest sampled ratio (sum q - q*) / dist^2, floored at 1e-6, which
    errs toward a smaller (still admissible) strong-convexity constant.
    When the optimum is not supplied it is taken from the sample grid.
    """
    if samples < 10:
        raise ConfigurationError("need at least 10 samples")
    p = box.dim
    grids = [np.linspace(box.lo[j], box.hi[j], max(2, int(round(samples ** (1.0 / p)))))
             for j in range(p)]
    mesh = np.meshgrid(*grids, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    # include the box corners explicitly: extreme subgradients live there
    points = np.vstack([points, box.vertices()])

    beta_hat = 0.0
    totals = np.empty(points.shape[0])
    for idx, th in enumerate(points):
        total = 0.0
        for agent, x in zip(agents, states):
            sol = solve_local(agent, x, th, horizon)
            total += sol.qvalue
            beta_hat = max(beta_hat, float(np.linalg.norm(sol.g)))
        totals[idx] = total
    beta_hat = max(1.5 * beta_hat, 1e-9)

    if theta_star is None or q_star is None:
        best = int(np.argmin(totals))
        theta_star = points[best]
        q_star = float(totals[best])
    theta_star = np.asarray(theta_star, dtype=float)

    mu_hat = np.inf
    for th, total in zip(points, totals):
        d2 = float(np.sum((th - theta_star) ** 2))
        if d2 > 1e-12:
            mu_hat = min(mu_hat, (total - q_star) / d2)
    if not np.isfinite(mu_hat):
        mu_hat = 1e-6
    return beta_hat, max(mu_hat, 1e-6)

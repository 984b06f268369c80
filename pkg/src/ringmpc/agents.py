"""Agent dynamics, constraint sets, stage cost, and equilibrium manifolds.

Each agent is a discrete-time linear system x+ = Ax + Bu, y = Cx with
polyhedral state/input sets and positive definite weights Q, R.  The
consensus variable theta lives in an axis-aligned box: the theory only
needs a compact convex set, and a box gives a closed-form projection for
the negotiation and keeps the centralized oracle a plain QP.

For every theta the equilibrium pair (x_e, u_e) solves

    [A - I  B] [x_e]   [0]
    [  C    0] [u_e] = [theta],

which is linear in theta, so the map is stored as a pair of matrices
(Ex, Eu) with x_e(theta) = Ex theta, u_e(theta) = Eu theta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import ConfigurationError, NoEquilibriumError, SingularMatrixError
from .numerics import solve_linear


@dataclass(frozen=True)
class Polyhedron:
    """The set {z : Hmat z <= hvec}."""

    Hmat: np.ndarray
    hvec: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Hmat", np.asarray(self.Hmat, dtype=float))
        object.__setattr__(self, "hvec", np.asarray(self.hvec, dtype=float))
        if self.Hmat.ndim != 2 or self.hvec.ndim != 1:
            raise ConfigurationError("polyhedron needs a matrix Hmat and vector hvec")
        if self.Hmat.shape[0] != self.hvec.shape[0] or self.Hmat.shape[0] < 1:
            raise ConfigurationError("polyhedron row counts inconsistent")
        zero_rows = ~np.any(self.Hmat, axis=1)
        if np.any(self.hvec[zero_rows] < 0):
            raise ConfigurationError("polyhedron contains a trivially empty row")

    @property
    def dim(self):
        return self.Hmat.shape[1]

    def contains(self, z, tol=1e-9):
        return bool(np.all(self.Hmat @ np.asarray(z, dtype=float) - self.hvec <= tol))

    def margin(self, z):
        """Smallest slack h - Hz (negative means violated)."""
        return float(np.min(self.hvec - self.Hmat @ np.asarray(z, dtype=float)))

    @staticmethod
    def box(lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = lo.shape[0]
        return Polyhedron(np.vstack([np.eye(n), -np.eye(n)]), np.concatenate([hi, -lo]))


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box for the consensus set Theta."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ConfigurationError("box bounds must be vectors of equal length")
        if np.any(self.lo > self.hi):
            raise ConfigurationError("box requires lo <= hi componentwise")

    @property
    def dim(self):
        return self.lo.shape[0]

    def contains(self, theta, tol=1e-9):
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lo - tol) and np.all(theta <= self.hi + tol))

    def vertices(self):
        return [np.array(v) for v in product(*zip(self.lo, self.hi))]


@dataclass(eq=False)
class LinearAgent:
    """One agent's dynamics, weights, and constraint sets."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Xset: Polyhedron
    Uset: Polyhedron
    name: str = "agent"

    def __post_init__(self):
        for attr in ("A", "B", "C", "Q", "R"):
            setattr(self, attr, np.asarray(getattr(self, attr), dtype=float))
        n, m = self.B.shape
        if self.A.shape != (n, n):
            raise ConfigurationError(f"{self.name}: A shape {self.A.shape} != ({n},{n})")
        if self.C.ndim != 2 or self.C.shape[1] != n:
            raise ConfigurationError(f"{self.name}: C must have {n} columns")
        if self.Q.shape != (n, n) or self.R.shape != (m, m):
            raise ConfigurationError(f"{self.name}: weight dimensions inconsistent")
        for W, lbl in ((self.Q, "Q"), (self.R, "R")):
            if np.abs(W - W.T).max() > 1e-10 * max(1.0, np.abs(W).max()):
                raise ConfigurationError(f"{self.name}: {lbl} not symmetric")
        if self.Xset.dim != n or self.Uset.dim != m:
            raise ConfigurationError(f"{self.name}: constraint set dimensions inconsistent")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]


@dataclass(frozen=True)
class EquilibriumMap:
    """x_e(theta) = Ex theta, u_e(theta) = Eu theta."""

    Ex: np.ndarray
    Eu: np.ndarray
    unique: bool = True

    def x_e(self, theta):
        return self.Ex @ np.asarray(theta, dtype=float)

    def u_e(self, theta):
        return self.Eu @ np.asarray(theta, dtype=float)

    def residuals(self, agent: LinearAgent):
        r1 = (agent.A - np.eye(agent.n)) @ self.Ex + agent.B @ self.Eu
        r2 = agent.C @ self.Ex - np.eye(agent.p)
        return float(np.abs(r1).max()), float(np.abs(r2).max())


def equilibrium_map(agent: LinearAgent) -> EquilibriumMap:
    """Solve the stacked equilibrium system for the agent.

    Square nonsingular systems give the unique map; wide systems give the
    minimum-norm solution flagged as non-unique.  Inconsistent or singular
    systems raise :class:`NoEquilibriumError`.
    """
    n, m, p = agent.n, agent.m, agent.p
    if n + m < p:
        raise NoEquilibriumError(
            f"{agent.name}: n+m={n+m} < p={p}, no equilibrium for generic theta"
        )
    K = np.block([
        [agent.A - np.eye(n), agent.B],
        [agent.C, np.zeros((p, m))],
    ])
    rhs = np.vstack([np.zeros((n, p)), np.eye(p)])
    if K.shape[0] == K.shape[1]:
        try:
            sol = solve_linear(K, rhs)
        except SingularMatrixError as exc:
            raise NoEquilibriumError(f"{agent.name}: equilibrium system singular") from exc
        unique = True
    else:
        sol, _, rank, _ = np.linalg.lstsq(K, rhs, rcond=None)
        if np.abs(K @ sol - rhs).max() > 1e-8:
            raise NoEquilibriumError(f"{agent.name}: equilibrium system inconsistent")
        unique = rank >= K.shape[1]
    emap = EquilibriumMap(Ex=sol[:n], Eu=sol[n:], unique=bool(unique))
    r1, r2 = emap.residuals(agent)
    if max(r1, r2) > 1e-8:
        raise NoEquilibriumError(
            f"{agent.name}: equilibrium residuals {r1:.2e}, {r2:.2e} exceed 1e-8"
        )
    return emap


def stage_cost(agent: LinearAgent, x, u, theta, emap: EquilibriumMap) -> float:
    """(x - x_e)'Q(x - x_e) + (u - u_e)'R(u - u_e); nonnegative, zero at equilibrium."""
    dx = np.asarray(x, dtype=float) - emap.x_e(theta)
    du = np.asarray(u, dtype=float) - emap.u_e(theta)
    return float(dx @ agent.Q @ dx + du @ agent.R @ du)


@dataclass
class ValidationReport:
    agent_name: str
    ctrb_rank: int
    obs_rank: int
    n: int
    min_eig_Q: float
    min_eig_R: float
    controllable: bool = field(init=False)
    observable: bool = field(init=False)
    weights_pd: bool = field(init=False)

    def __post_init__(self):
        self.controllable = self.ctrb_rank == self.n
        self.observable = self.obs_rank == self.n
        self.weights_pd = self.min_eig_Q > 0 and self.min_eig_R > 0

    @property
    def passed(self):
        return self.controllable and self.observable and self.weights_pd

    def failures(self):
        out = []
        if not self.controllable:
            out.append(f"controllability rank {self.ctrb_rank} < {self.n}")
        if not self.observable:
            out.append(f"observability rank of (A, Q^1/2) {self.obs_rank} < {self.n}")
        if not self.weights_pd:
            out.append(
                f"weights not PD (min eig Q {self.min_eig_Q:.3e}, R {self.min_eig_R:.3e})"
            )
        return out


def validate_agent(agent: LinearAgent) -> ValidationReport:
    """Controllability, observability of (A, Q^1/2), and weight definiteness."""
    n = agent.n
    blocks = []
    Ak = np.eye(n)
    for _ in range(n):
        blocks.append(Ak @ agent.B)
        Ak = agent.A @ Ak
    ctrb_rank = int(np.linalg.matrix_rank(np.hstack(blocks)))

    w, V = np.linalg.eigh(agent.Q)
    Qroot = V @ np.diag(np.sqrt(np.clip(w, 0.0, None))) @ V.T
    obs_blocks = []
    Ak = np.eye(n)
    for _ in range(n):
        obs_blocks.append(Qroot @ Ak)
        Ak = agent.A @ Ak
    obs_rank = int(np.linalg.matrix_rank(np.vstack(obs_blocks)))

    return ValidationReport(
        agent_name=agent.name,
        ctrb_rank=ctrb_rank,
        obs_rank=obs_rank,
        n=n,
        min_eig_Q=float(w[0]),
        min_eig_R=float(np.linalg.eigvalsh(agent.R)[0]),
    )


def interior_margins(agent: LinearAgent, emap: EquilibriumMap, box: BoxSet):
    """Worst constraint slack of (x_e, u_e) over the vertices of Theta.

    x_e is linear in theta and the sets are convex, so positive margins at
    every vertex certify that all equilibrium pairs are interior.
    """
    mx = mu = np.inf
    for v in box.vertices():
        mx = min(mx, agent.Xset.margin(emap.x_e(v)))
        mu = min(mu, agent.Uset.margin(emap.u_e(v)))
    return mx, mu

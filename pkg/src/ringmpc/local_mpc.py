"""Per-agent finite-horizon problem and its subgradient in the consensus point.

The horizon problem

    q(x0, theta) = min_U  sum_{k=0}^{T-1} (x_k - x_e)'Q(x_k - x_e) + (u_k - u_e)'R(u_k - u_e)
    subject to    x_{k+1} = A x_k + B u_k,   x_T = x_e(theta),
                  x_k in X (k=1..T),  u_k in U (k=0..T-1)

is condensed onto the stacked input sequence: states are eliminated by
forward substitution, leaving a dense strictly convex QP whose Hessian and
constraint matrices depend only on (agent, T).  Everything that depends on
(x0, theta) is affine and assembled per solve, so repeated solves (grid
oracles, negotiation cycles) are cheap.

The output y_T = theta constraint is not added as a separate row: it is
implied by x_T = x_e(theta) since C x_e(theta) = theta, and the redundant
rows would destroy dual uniqueness.

q is convex in theta.  A subgradient is the total derivative of the
parametric Lagrangian: theta enters the stage cost through the equilibrium
map and the terminal right-hand side through b_eq = Ex theta - A^T x0, so

    g = sum_k [-2 Ex'Q(x_k - Ex theta) - 2 Eu'R(u_k - Eu theta)] - Ex' lam_terminal

with lam_terminal the terminal-block equality multipliers under the sign
convention of :mod:`ringmpc.numerics`.  (The bare multiplier alone is the
subgradient only when theta appears nowhere but the terminal constraint;
here it also shifts the cost reference.)  The finite-difference oracle
below arbitrates correctness.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .agents import LinearAgent, equilibrium_map
from .errors import LocalInfeasibleError
from .numerics import DEFAULT_MAX_ITER, DEFAULT_TOL, QpProblem, QpStatus, solve_qp

_builders: "weakref.WeakKeyDictionary[LinearAgent, dict]" = weakref.WeakKeyDictionary()


@dataclass
class LocalMpcSolution:
    Useq: np.ndarray            # m x T, columns u_0..u_{T-1}
    Xtraj: np.ndarray           # n x (T+1), columns x_0..x_T
    qvalue: float
    g: np.ndarray               # subgradient of q w.r.t. theta, length p
    status: QpStatus
    active_inequalities: tuple
    lam_terminal: np.ndarray


class CondensedMpc:
    """Condensed horizon problem for one agent; reusable across (x0, theta)."""

    def __init__(self, agent: LinearAgent, T: int):
        if T < 1:
            raise ValueError("horizon T must be >= 1")
        self.agent = agent
        self.T = T
        self.emap = equilibrium_map(agent)
        n, m, p = agent.n, agent.m, agent.p
        A, B = agent.A, agent.B

        # powers of A and the input-to-state map
        Phi = [np.eye(n)]
        for _ in range(T):
            Phi.append(A @ Phi[-1])
        self.PhiT = Phi[T]
        Gfull = np.zeros((T * n, T * m))
        for k in range(1, T + 1):
            for j in range(k):
                Gfull[(k - 1) * n:k * n, j * m:(j + 1) * m] = Phi[k - 1 - j] @ B
        self.Gfull = Gfull
        self.PhiStack = np.vstack(Phi[1:])            # x_1..x_T vs x0
        self.GT = Gfull[(T - 1) * n:]                 # terminal block row

        Gs = Gfull[: (T - 1) * n]                     # x_1..x_{T-1}
        Phis = self.PhiStack[: (T - 1) * n]
        Qbar = np.kron(np.eye(T - 1), agent.Q) if T > 1 else np.zeros((0, 0))
        Rbar = np.kron(np.eye(T), agent.R)
        XE = np.vstack([self.emap.Ex] * (T - 1)) if T > 1 else np.zeros((0, p))
        UE = np.vstack([self.emap.Eu] * T)

        self.H = 2.0 * (Gs.T @ Qbar @ Gs + Rbar)
        self.Fx = 2.0 * Gs.T @ Qbar @ Phis
        self.Fth = -2.0 * Gs.T @ Qbar @ XE - 2.0 * Rbar @ UE

        Ex, Q = self.emap.Ex, agent.Q
        self.Cxx = Phis.T @ Qbar @ Phis + Q
        self.Cxt = -Phis.T @ Qbar @ XE - Q @ Ex
        self.Ctt = XE.T @ Qbar @ XE + Ex.T @ Q @ Ex + UE.T @ Rbar @ UE

        Hx, hx = agent.Xset.Hmat, agent.Xset.hvec
        Hu, hu = agent.Uset.Hmat, agent.Uset.hvec
        HxBlk = np.kron(np.eye(T), Hx)
        self.Ain = np.vstack([HxBlk @ Gfull, np.kron(np.eye(T), Hu)])
        self._bin_const = np.concatenate([np.tile(hx, T), np.tile(hu, T)])
        self._bin_x = np.vstack([HxBlk @ self.PhiStack, np.zeros((T * Hu.shape[0], n))])
        self.n_terminal_rows = n

    # ---- assembly -------------------------------------------------------

    def linear_term(self, x0, theta):
        return self.Fx @ x0 + self.Fth @ theta

    def constant_term(self, x0, theta):
        return float(x0 @ self.Cxx @ x0 + 2.0 * x0 @ self.Cxt @ theta + theta @ self.Ctt @ theta)

    def qp(self, x0, theta) -> QpProblem:
        x0 = np.asarray(x0, dtype=float)
        theta = np.asarray(theta, dtype=float)
        return QpProblem(
            H=self.H,
            f=self.linear_term(x0, theta),
            Aeq=self.GT,
            beq=self.emap.Ex @ theta - self.PhiT @ x0,
            Ain=self.Ain,
            bin=self._bin_const - self._bin_x @ x0,
        )

    # ---- solving --------------------------------------------------------

    def solve(self, x0, theta, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> LocalMpcSolution:
        x0 = np.asarray(x0, dtype=float)
        theta = np.asarray(theta, dtype=float)
        prob = self.qp(x0, theta)
        sol = solve_qp(prob, tol=tol, max_iter=max_iter)
        if sol.status is not QpStatus.OPTIMAL:
            raise LocalInfeasibleError(self.agent.name, theta, f"QP status {sol.status.value}")

        n, m, T = self.agent.n, self.agent.m, self.T
        U = sol.z.reshape(T, m).T
        xs = (self.Gfull @ sol.z + self.PhiStack @ x0).reshape(T, n).T
        Xtraj = np.hstack([x0.reshape(n, 1), xs])
        qvalue = sol.value + self.constant_term(x0, theta)
        if -1e-9 < qvalue < 0.0:
            qvalue = 0.0

        Ex, Eu = self.emap.Ex, self.emap.Eu
        xe = Ex @ theta
        ue = Eu @ theta
        dX = Xtraj[:, :T] - xe[:, None]           # states k=0..T-1 enter the cost
        dU = U - ue[:, None]
        g = (
            -2.0 * Ex.T @ self.agent.Q @ dX.sum(axis=1)
            - 2.0 * Eu.T @ self.agent.R @ dU.sum(axis=1)
            - Ex.T @ sol.lam_eq
        )
        return LocalMpcSolution(
            Useq=U,
            Xtraj=Xtraj,
            qvalue=qvalue,
            g=g,
            status=sol.status,
            active_inequalities=sol.active_inequalities,
            lam_terminal=sol.lam_eq,
        )


def _builder(agent: LinearAgent, T: int) -> CondensedMpc:
    per_agent = _builders.setdefault(agent, {})
    if T not in per_agent:
        per_agent[T] = CondensedMpc(agent, T)
    return per_agent[T]


def build_local_qp(agent: LinearAgent, x0, theta, T: int):
    """Condensed QP plus the indices of the terminal equality rows."""
    b = _builder(agent, T)
    return b.qp(x0, theta), range(b.n_terminal_rows)


def solve_local(agent: LinearAgent, x0, theta, T: int) -> LocalMpcSolution:
    """Solve the horizon problem; raises LocalInfeasibleError when theta is unreachable."""
    return _builder(agent, T).solve(x0, theta)


def subgradient_fd_oracle(agent: LinearAgent, x0, theta, T: int, h: float | None = None):
    """Central finite-difference estimate of dq/dtheta, one coordinate at a time.

    Falls back to a one-sided difference (and flags the coordinate) when a
    perturbed problem is infeasible.  Returns (estimate, one_sided_flags).
    """
    theta = np.asarray(theta, dtype=float)
    b = _builder(agent, T)
    p = theta.shape[0]
    g = np.zeros(p)
    one_sided = np.zeros(p, dtype=bool)

    def q_at(th):
        return b.solve(np.asarray(x0, dtype=float), th).qvalue

    q0 = None
    for j in range(p):
        hj = h if h is not None else 1e-5 * (1.0 + abs(theta[j]))
        ej = np.zeros(p)
        ej[j] = hj
        try:
            qp_ = q_at(theta + ej)
            qm = q_at(theta - ej)
            g[j] = (qp_ - qm) / (2.0 * hj)
        except LocalInfeasibleError:
            if q0 is None:
                q0 = q_at(theta)
            one_sided[j] = True
            try:
                g[j] = (q_at(theta + ej) - q0) / hj
            except LocalInfeasibleError:
                g[j] = (q0 - q_at(theta - ej)) / hj
    return g, one_sided

"""Oracles, diagnostics, and reference scenarios.

Two independent routes to the optimal consensus point:

* :func:`solve_centralized` stacks every agent's condensed horizon problem
  into one joint QP over (all input sequences, theta) -- the cost separates
  per agent and couples only through theta, so the joint Hessian is block
  diagonal with a theta border.
* :func:`grid_search_theta` brute-forces theta on a grid, evaluating the
  sum of per-agent optimal costs by local solves at each point.  It shares
  no formulation with the joint QP and is the independent cross-check.

The refueling scenario reproduces the published three-aircraft example
with its exact weights and input bounds.  The aircraft state-space models
themselves are not published, so documented two-state stand-ins (altitude
and airspeed deviation from trim) are used; the scenario is qualitative,
not bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .agents import BoxSet, LinearAgent, Polyhedron, equilibrium_map, stage_cost
from .consensus import NegotiationParams
from .errors import ConfigurationError, LocalInfeasibleError
from .local_mpc import _builder, solve_local
from .numerics import QpProblem, QpStatus, solve_qp


# --------------------------------------------------------------------------
# scenario description
# --------------------------------------------------------------------------

@dataclass
class ScenarioConfig:
    name: str
    agents: list[LinearAgent]
    theta_box: BoxSet
    horizon: int
    theta0: np.ndarray
    mu: float
    beta: float
    eps: float | None            # None -> calibrated from the cycle budget
    max_cycles: int
    initial_states: list[np.ndarray]
    n_steps: int = 100
    cycles_per_t: int = 15
    converge_tol: float = 1e-3
    freeze_theta_below: float | None = None

    def __post_init__(self):
        self.theta0 = np.asarray(self.theta0, dtype=float)
        self.initial_states = [np.asarray(x, dtype=float) for x in self.initial_states]
        p = self.theta_box.dim
        if self.theta0.shape != (p,):
            raise ConfigurationError("theta0 dimension does not match Theta")
        if not self.theta_box.contains(self.theta0):
            raise ConfigurationError("theta0 must lie in Theta")
        if len(self.initial_states) != len(self.agents):
            raise ConfigurationError("one initial state per agent required")
        for agent, x in zip(self.agents, self.initial_states):
            if agent.p != p:
                raise ConfigurationError(f"{agent.name}: output dimension != dim Theta")
            if x.shape != (agent.n,):
                raise ConfigurationError(f"{agent.name}: initial state dimension mismatch")

    @property
    def N(self):
        return len(self.agents)

    def params(self, eps: float) -> NegotiationParams:
        return NegotiationParams(
            mu=self.mu, beta=self.beta, eps=eps, max_cycles=self.max_cycles,
            theta0=self.theta0,
        )

    # ---- JSON round trip --------------------------------------------------

    def to_dict(self):
        def poly(P):
            return {"H": P.Hmat.tolist(), "h": P.hvec.tolist()}

        return {
            "name": self.name,
            "agents": [
                {
                    "name": a.name,
                    "A": a.A.tolist(), "B": a.B.tolist(), "C": a.C.tolist(),
                    "Q": a.Q.tolist(), "R": a.R.tolist(),
                    "Xset": poly(a.Xset), "Uset": poly(a.Uset),
                }
                for a in self.agents
            ],
            "theta_box": {"lo": self.theta_box.lo.tolist(), "hi": self.theta_box.hi.tolist()},
            "horizon": self.horizon,
            "theta0": self.theta0.tolist(),
            "mu": self.mu,
            "beta": self.beta,
            "eps": self.eps,
            "max_cycles": self.max_cycles,
            "initial_states": [x.tolist() for x in self.initial_states],
            "n_steps": self.n_steps,
            "cycles_per_t": self.cycles_per_t,
            "converge_tol": self.converge_tol,
            "freeze_theta_below": self.freeze_theta_below,
        }

    @staticmethod
    def from_dict(d) -> "ScenarioConfig":
        agents = [
            LinearAgent(
                A=a["A"], B=a["B"], C=a["C"], Q=a["Q"], R=a["R"],
                Xset=Polyhedron(a["Xset"]["H"], a["Xset"]["h"]),
                Uset=Polyhedron(a["Uset"]["H"], a["Uset"]["h"]),
                name=a["name"],
            )
            for a in d["agents"]
        ]
        return ScenarioConfig(
            name=d["name"],
            agents=agents,
            theta_box=BoxSet(d["theta_box"]["lo"], d["theta_box"]["hi"]),
            horizon=int(d["horizon"]),
            theta0=d["theta0"],
            mu=float(d["mu"]),
            beta=float(d["beta"]),
            eps=None if d.get("eps") is None else float(d["eps"]),
            max_cycles=int(d["max_cycles"]),
            initial_states=d["initial_states"],
            n_steps=int(d.get("n_steps", 100)),
            cycles_per_t=int(d.get("cycles_per_t", 15)),
            converge_tol=float(d.get("converge_tol", 1e-3)),
            freeze_theta_below=d.get("freeze_theta_below"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "ScenarioConfig":
        with open(path) as fh:
            return ScenarioConfig.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# oracles
# --------------------------------------------------------------------------

@dataclass
class CentralizedSolution:
    theta_star: np.ndarray
    Ustar: list[np.ndarray]      # per agent, m x T
    Jstar: float
    duals: np.ndarray            # stacked terminal equality multipliers


def solve_centralized(agents, states, T, box: BoxSet) -> CentralizedSolution:
    """Joint QP over (all input sequences, theta); the global optimum."""
    builders = [_builder(a, T) for a in agents]
    states = [np.asarray(x, dtype=float) for x in states]
    p = box.dim
    dims = [b.H.shape[0] for b in builders]
    off = np.concatenate([[0], np.cumsum(dims)])
    d = int(off[-1]) + p

    H = np.zeros((d, d))
    f = np.zeros(d)
    const = 0.0
    for b, x, o, du in zip(builders, states, off, dims):
        H[o:o + du, o:o + du] = b.H
        H[o:o + du, -p:] = b.Fth
        H[-p:, o:o + du] = b.Fth.T
        H[-p:, -p:] += 2.0 * b.Ctt
        f[o:o + du] = b.Fx @ x
        f[-p:] += 2.0 * b.Cxt.T @ x
        const += float(x @ b.Cxx @ x)

    eq_rows = sum(b.GT.shape[0] for b in builders)
    Aeq = np.zeros((eq_rows, d))
    beq = np.zeros(eq_rows)
    r = 0
    for b, x, o, du in zip(builders, states, off, dims):
        n = b.GT.shape[0]
        Aeq[r:r + n, o:o + du] = b.GT
        Aeq[r:r + n, -p:] = -b.emap.Ex
        beq[r:r + n] = -b.PhiT @ x
        r += n

    in_rows = sum(b.Ain.shape[0] for b in builders) + 2 * p
    Ain = np.zeros((in_rows, d))
    bin_ = np.zeros(in_rows)
    r = 0
    for b, x, o, du in zip(builders, states, off, dims):
        nq = b.Ain.shape[0]
        Ain[r:r + nq, o:o + du] = b.Ain
        bin_[r:r + nq] = b._bin_const - b._bin_x @ x
        r += nq
    Ain[r:r + p, -p:] = np.eye(p)
    bin_[r:r + p] = box.hi
    Ain[r + p:, -p:] = -np.eye(p)
    bin_[r + p:] = -box.lo

    sol = solve_qp(QpProblem(H=H, f=f, Aeq=Aeq, beq=beq, Ain=Ain, bin=bin_))
    if sol.status is not QpStatus.OPTIMAL:
        raise LocalInfeasibleError("centralized", None, f"joint QP status {sol.status.value}")
    theta = np.clip(sol.z[-p:], box.lo, box.hi)
    Ustar = [
        sol.z[o:o + du].reshape(T, a.m).T
        for a, o, du in zip(agents, off, dims)
    ]
    J = sol.value + const
    return CentralizedSolution(theta_star=theta, Ustar=Ustar, Jstar=max(J, 0.0),
                               duals=sol.lam_eq)


@dataclass
class GridSearchResult:
    theta: np.ndarray
    value: float
    skipped: int
    ties: list = field(default_factory=list)


def grid_search_theta(agents, states, T, box: BoxSet, resolution: float) -> GridSearchResult:
    """Brute-force theta scan; independent of the joint formulation."""
    p = box.dim
    if p > 2:
        raise ConfigurationError("grid search only supported for dim(Theta) <= 2")
    axes = []
    for j in range(p):
        count = int(round((box.hi[j] - box.lo[j]) / resolution)) + 1
        axes.append(np.linspace(box.lo[j], box.hi[j], max(count, 2)))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)

    best_val = np.inf
    best_theta = None
    skipped = 0
    values = np.full(points.shape[0], np.nan)
    for idx, th in enumerate(points):
        total = 0.0
        try:
            for agent, x in zip(agents, states):
                total += solve_local(agent, x, th, T).qvalue
        except LocalInfeasibleError:
            skipped += 1
            continue
        values[idx] = total
        if total < best_val:
            best_val = total
            best_theta = th
    if best_theta is None:
        raise LocalInfeasibleError("grid", None, "every grid point infeasible")
    ties = [
        points[i]
        for i in np.nonzero(np.abs(values - best_val) <= 1e-9 * (1.0 + best_val))[0]
        if np.linalg.norm(points[i] - best_theta) > resolution * (1.5 * np.sqrt(p))
    ]
    return GridSearchResult(theta=best_theta, value=best_val, skipped=skipped, ties=ties)


# --------------------------------------------------------------------------
# closed-loop diagnostics
# --------------------------------------------------------------------------

@dataclass
class LyapunovReport:
    jstar: np.ndarray            # J*(x_t) per step
    max_increase: float
    decreases: np.ndarray        # J*(x_t) - J*(x_{t+1})
    stage_costs: np.ndarray      # implemented stage cost w.r.t. theta_t*
    min_margin: float            # min(decrease - stage cost)


def lyapunov_report(log, agents, T, box: BoxSet) -> LyapunovReport:
    """Recompute the optimal joint cost along a closed-loop log.

    ``log`` only needs ``records`` with per-step ``states`` (list of state
    vectors, ring order) and ``inputs``.
    """
    emaps = [equilibrium_map(a) for a in agents]
    jstar = []
    stages = []
    for rec in log.records:
        cs = solve_centralized(agents, rec.states, T, box)
        jstar.append(cs.Jstar)
        stages.append(sum(
            stage_cost(a, x, u, cs.theta_star, em)
            for a, x, u, em in zip(agents, rec.states, rec.inputs, emaps)
        ))
    final_states = getattr(log, "final_states", None)
    if final_states:
        jstar.append(solve_centralized(agents, final_states, T, box).Jstar)
    else:
        stages = stages[:-1]
    jstar = np.asarray(jstar)
    diffs = np.diff(jstar)
    decreases = -diffs
    stage_arr = np.asarray(stages)
    margin = float(np.min(decreases - stage_arr)) if decreases.size else 0.0
    return LyapunovReport(
        jstar=jstar,
        max_increase=float(diffs.max()) if diffs.size else 0.0,
        decreases=decreases,
        stage_costs=stage_arr,
        min_margin=margin,
    )


# --------------------------------------------------------------------------
# reference scenarios
# --------------------------------------------------------------------------

def build_three_integrator_scenario() -> ScenarioConfig:
    """Three double integrators negotiating a rendezvous position on a line."""
    agents = []
    for i in range(3):
        agents.append(LinearAgent(
            A=[[1.0, 1.0], [0.0, 1.0]],
            B=[[0.0], [1.0]],
            C=[[1.0, 0.0]],
            Q=np.eye(2),
            R=[[1.0]],
            Xset=Polyhedron.box([-50.0, -10.0], [50.0, 10.0]),
            Uset=Polyhedron.box([-5.0], [5.0]),
            name=f"integrator{i + 1}",
        ))
    # mu/beta frozen from a sampling run of consensus.estimate_parameters on
    # this exact configuration; tests re-verify them
    return ScenarioConfig(
        name="three-integrators",
        agents=agents,
        theta_box=BoxSet([-10.0], [10.0]),
        horizon=10,
        theta0=[0.0],
        mu=8.8,
        beta=110.0,
        eps=None,
        max_cycles=2000,
        initial_states=[[-1.0, 0.0], [0.0, 0.0], [2.0, 0.0]],
        n_steps=100,
        cycles_per_t=15,
        converge_tol=1e-3,
        # By mid-run the implemented costs underflow to machine zero and the
        # improvement test starts comparing rounding noise; fix the consensus
        # point once the per-step accuracy target drops below this level and
        # fall back to plain decentralized MPC.
        freeze_theta_below=250.0,
    )


def _discretize(Ac, Bc, dt):
    n, m = np.asarray(Bc, dtype=float).shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = expm(M * dt)
    return E[:n, :n], E[:n, n:]


def build_refueling_scenario(equalized: bool = False) -> ScenarioConfig:
    """Three-aircraft rendezvous on (altitude, airspeed) deviations from trim.

    Weights and input bounds are the published ones; the state-space models
    are stand-ins: two states [dh (m), dV (m/s)], two inputs per aircraft
    (thrust perturbation in lb and a pitch-channel command), with climb and
    drag gains chosen per vehicle class.  With ``equalized=True`` all three
    aircraft share the fighter dynamics and one weight pair, which makes the
    optimal rendezvous the arithmetic mean of the initial offsets.
    """
    dt = 0.05

    # Stand-in kinematics: dh' = climb gain * pitch command, and
    # dV' = -drag*dV + thrust/mass, with inputs (thrust perturbation, a
    # radian-scale pitch command).  The climb gains are calibrated so the
    # published input weights reproduce the vehicles' relative altitude
    # mobility (the heavy aircraft's rendezvous share matches the reported
    # behavior); they are tuning constants, not identified aircraft data.
    A_tk, B_tk = _discretize(
        [[0.0, 0.0], [0.0, -0.02]],
        [[0.0, 2500.0], [1.5e-5, -1e-3]],
        dt,
    )
    A_f16, B_f16 = _discretize(
        [[0.0, 0.0], [0.0, -0.05]],
        [[0.0, 150.0], [4.9e-4, -1e-3]],
        dt,
    )

    Xbox = Polyhedron.box([-300.0, -50.0], [300.0, 50.0])
    U_tk = Polyhedron.box([-50000.0, -10.0], [150000.0, 10.0])
    U_f16 = Polyhedron.box([-1000.0, -100.0], [5000.0, 100.0])

    if equalized:
        specs = [
            ("tanker", A_f16, B_f16, U_f16, np.eye(2), np.diag([1e-5, 0.1])),
            ("f16_1", A_f16, B_f16, U_f16, np.eye(2), np.diag([1e-5, 0.1])),
            ("f16_2", A_f16, B_f16, U_f16, np.eye(2), np.diag([1e-5, 0.1])),
        ]
    else:
        specs = [
            ("tanker", A_tk, B_tk, U_tk, np.diag([1.0, 1.0]), np.diag([1e-7, 1e4])),
            ("f16_1", A_f16, B_f16, U_f16, np.diag([10.0, 10.0]), np.diag([1e-5, 0.5])),
            ("f16_2", A_f16, B_f16, U_f16, np.diag([0.4, 10.0]), np.diag([1e-5, 0.1])),
        ]
    agents = [
        LinearAgent(A=A, B=B, C=np.eye(2), Q=Q, R=R, Xset=Xbox, Uset=U, name=nm)
        for nm, A, B, U, Q, R in specs
    ]
    # initial altitude offsets: fighters at +/-30.48 m, tanker at -10 m,
    # all at trim airspeed
    states = [[-10.0, 0.0], [30.48, 0.0], [-30.48, 0.0]]
    return ScenarioConfig(
        name="aerial-refueling" + ("-equalized" if equalized else ""),
        agents=agents,
        # wide enough to contain the rendezvous optimum, narrow enough in
        # airspeed that every vertex is reachable over the horizon under the
        # tanker's thrust bounds
        theta_box=BoxSet([-35.0, -2.0], [35.0, 2.0]),
        horizon=100,
        theta0=[-10.0 / 3.0, 0.0],
        mu=1.0,
        beta=5000.0,
        eps=None,
        max_cycles=2000,
        initial_states=states,
        n_steps=100,
        cycles_per_t=15,
        converge_tol=1e-2,
    )

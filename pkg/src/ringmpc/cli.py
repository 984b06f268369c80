"""Command-line front end.

Subcommands::

    ringmpc validate SCENARIO                 check a scenario's assumptions
    ringmpc run      SCENARIO [flags] --out D run the closed loop, emit traces
    ringmpc oracle   SCENARIO --out D         centralized optimum (+ grid check)
    ringmpc plotdata TRACEDIR --out D         long-format CSVs for plotting

SCENARIO is either a JSON file or one of the built-in names
``three-integrators``, ``refueling``, ``refueling-equalized``.

Exit codes: 0 success, 1 domain failure (validation or run error), 2 usage
or parse error.  Set ``DMPC_LOG=debug|info|warning`` for verbosity.  All
numeric output is formatted at 17 significant digits and every command is
deterministic: re-running with the same manifest reproduces the output
files byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .agents import equilibrium_map, interior_margins, validate_agent
from .consensus import convergence_bound, stepsize
from .dmpc_ring import FullyConverged, Interrupted, algorithm1_run, auto_eps
from .errors import LocalInfeasibleError, NoEquilibriumError, RingMpcError
from .harness import (
    ScenarioConfig,
    build_refueling_scenario,
    build_three_integrator_scenario,
    grid_search_theta,
    lyapunov_report,
    solve_centralized,
)
from .local_mpc import solve_local

log = logging.getLogger("ringmpc")

_BUILTINS = {
    "three-integrators": build_three_integrator_scenario,
    "refueling": build_refueling_scenario,
    "refueling-equalized": lambda: build_refueling_scenario(equalized=True),
}


# --------------------------------------------------------------------------
# formatting and file helpers
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    """Fixed 17-significant-digit rendering; round-trips every float."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return format(float(x), ".17g")


def _write_atomic(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_csv(path: str, header: list[str], rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    _write_atomic(path, "\n".join(lines) + "\n")


def _write_json(path: str, obj):
    _write_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_scenario(arg: str) -> ScenarioConfig:
    if arg in _BUILTINS:
        return _BUILTINS[arg]()
    return ScenarioConfig.load(arg)


class _UsageError(Exception):
    pass


def _scenario_or_usage(arg: str) -> ScenarioConfig:
    try:
        return _load_scenario(arg)
    except FileNotFoundError as exc:
        raise _UsageError(f"scenario file not found: {arg}") from exc
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise _UsageError(f"cannot parse scenario {arg}: {exc}") from exc


# --------------------------------------------------------------------------
# validate
# --------------------------------------------------------------------------

def _validation_checks(sc: ScenarioConfig):
    """Yield (check name, passed, detail) for every scenario assumption."""
    for agent in sc.agents:
        rep = validate_agent(agent)
        yield (f"{agent.name}: controllable", rep.controllable,
               f"ctrb rank {rep.ctrb_rank}/{rep.n}")
        yield (f"{agent.name}: (A, Q^1/2) observable", rep.observable,
               f"obs rank {rep.obs_rank}/{rep.n}")
        yield (f"{agent.name}: weights positive definite", rep.weights_pd,
               f"min eig Q {rep.min_eig_Q:.3g}, min eig R {rep.min_eig_R:.3g}")
        try:
            emap = equilibrium_map(agent)
        except NoEquilibriumError as exc:
            yield (f"{agent.name}: equilibrium map exists", False, str(exc))
            continue
        yield (f"{agent.name}: equilibrium map exists", True,
               "unique" if emap.unique else "non-unique, min-norm selected")
        mx, mu = interior_margins(agent, emap, sc.theta_box)
        ok = mx > 1e-6 and mu > 1e-6
        yield (f"{agent.name}: equilibria interior to constraint sets", ok,
               f"state margin {mx:.6g}, input margin {mu:.6g}")
    # horizon reachability: every consensus vertex from every initial state
    for agent, x0 in zip(sc.agents, sc.initial_states):
        worst = None
        for v in sc.theta_box.vertices():
            try:
                solve_local(agent, x0, v, sc.horizon)
            except LocalInfeasibleError:
                worst = v
                break
        yield (f"{agent.name}: horizon reaches every consensus vertex",
               worst is None,
               "feasible at all vertices" if worst is None
               else f"infeasible at vertex {worst.tolist()}")


def cmd_validate(args) -> int:
    sc = _scenario_or_usage(args.scenario)
    failed = None
    for name, ok, detail in _validation_checks(sc):
        marker = "ok  " if ok else "FAIL"
        print(f"[{marker}] {name} ({detail})")
        if not ok and failed is None:
            failed = name
    if failed:
        print(f"validation failed: {failed}", file=sys.stderr)
        return 1
    print(f"scenario {sc.name!r}: all checks passed")
    return 0


# --------------------------------------------------------------------------
# run
# --------------------------------------------------------------------------

def _closedloop_rows(sc: ScenarioConfig, run):
    header = ["t", "cycles", "frozen"]
    for i, a in enumerate(sc.agents):
        header += [f"x{i}_{j}" for j in range(a.n)]
        header += [f"u{i}_{j}" for j in range(a.m)]
        header += [f"th{i}_{j}" for j in range(a.p)]
        header += [f"J{i}"]
    header += ["f_dmpc", "f_sg"]
    p = sc.theta_box.dim
    with_oracle = run.records and run.records[0].theta_star is not None
    if with_oracle:
        header += [f"theta_star_{j}" for j in range(p)]
        header += ["jstar"] + [f"mismatch{i}" for i in range(sc.N)]

    flags_at = {}
    for n in run.negotiation:
        flags_at[n.t] = (n.f_dmpc, n.f_sg)

    rows = []
    for rec in run.records:
        row = [rec.t, rec.cycles, rec.frozen]
        for i in range(sc.N):
            row += list(rec.states[i]) + list(rec.inputs[i])
            row += list(rec.theta_impl[i]) + [rec.j_impl[i]]
        row += list(flags_at.get(rec.t, (False, False)))
        if with_oracle:
            row += list(rec.theta_star) + [rec.jstar] + list(rec.mismatch)
        rows.append(row)
    return header, rows


def _negotiation_rows(sc: ScenarioConfig, run):
    p = sc.theta_box.dim
    header = (["t", "k", "i", "agent", "action"]
              + [f"theta_{j}" for j in range(p)]
              + ["g_norm", "alpha", "bound", "f_dmpc", "f_sg"])
    rows = []
    for n in run.negotiation:
        rows.append([n.t, n.k, n.agent_index, n.agent_name, n.action]
                    + list(n.theta_sub)
                    + [n.g_norm, n.alpha, n.bound, n.f_dmpc, n.f_sg])
    return header, rows


def cmd_run(args) -> int:
    sc = _scenario_or_usage(args.scenario)
    if args.cycles is not None:
        sc.cycles_per_t = args.cycles
    if args.tol is not None:
        sc.converge_tol = args.tol
    if args.freeze_theta_below is not None:
        sc.freeze_theta_below = args.freeze_theta_below

    if not args.force:
        bad = [name for name, ok, _ in _validation_checks(sc) if not ok]
        if bad:
            print(f"validation failed ({bad[0]}); use --force to run anyway",
                  file=sys.stderr)
            return 1

    mode = (FullyConverged(tol=sc.converge_tol) if args.mode == "converged"
            else Interrupted(max_cycles=sc.cycles_per_t))
    out = args.out
    os.makedirs(out, exist_ok=True)

    manifest = {
        "tool": "ringmpc",
        "version": __version__,
        "scenario": sc.to_dict(),
        "scenario_arg": args.scenario,
        "mode": args.mode,
        "cycles": sc.cycles_per_t,
        "tol": sc.converge_tol,
        "freeze_theta_below": sc.freeze_theta_below,
        "compare_oracle": bool(args.compare_oracle),
        "outputs": ["closedloop.csv", "negotiation.csv", "summary.json"],
        "deterministic": True,   # no RNG, no wall clock, fixed formatting
    }
    _write_json(os.path.join(out, "manifest.json"), manifest)
    log.info("manifest written; running %s in %s mode", sc.name, args.mode)

    try:
        run = algorithm1_run(sc, mode, compare_oracle=args.compare_oracle)
    except RingMpcError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1

    header, rows = _closedloop_rows(sc, run)
    _write_csv(os.path.join(out, "closedloop.csv"), header, rows)
    header, rows = _negotiation_rows(sc, run)
    _write_csv(os.path.join(out, "negotiation.csv"), header, rows)

    rep = lyapunov_report(run, sc.agents, sc.horizon, sc.theta_box)
    outputs = [np.ravel(a.C @ x).tolist()
               for a, x in zip(sc.agents, run.final_states)]
    summary = {
        "scenario": sc.name,
        "mode": run.mode,
        "eps": run.eps,
        "mu": run.mu,
        "beta": run.beta,
        "beta_violations": run.beta_violations,
        "n_steps": len(run.records),
        "final_theta": run.final_theta.tolist(),
        "final_outputs": outputs,
        "mismatch_curve": [
            max(r.mismatch) if r.mismatch else None for r in run.records
        ],
        "lyapunov": {
            "jstar": rep.jstar.tolist(),
            "max_increase": rep.max_increase,
            "min_margin": rep.min_margin,
        },
    }
    _write_json(os.path.join(out, "summary.json"), summary)
    log.info("traces written to %s", out)
    print(f"run complete: {len(run.records)} steps, "
          f"final consensus {run.final_theta.tolist()}")
    return 0


# --------------------------------------------------------------------------
# oracle
# --------------------------------------------------------------------------

def cmd_oracle(args) -> int:
    sc = _scenario_or_usage(args.scenario)
    try:
        cs = solve_centralized(sc.agents, sc.initial_states, sc.horizon, sc.theta_box)
    except RingMpcError as exc:
        print(f"oracle failed: {exc}", file=sys.stderr)
        return 1
    q_each = [
        solve_local(a, x, cs.theta_star, sc.horizon).qvalue
        for a, x in zip(sc.agents, sc.initial_states)
    ]
    result = {
        "scenario": sc.name,
        "theta_star": cs.theta_star.tolist(),
        "Jstar": cs.Jstar,
        "q_at_theta_star": q_each,
    }
    if args.grid is not None:
        if sc.theta_box.dim > 2:
            print("grid cross-check needs dim(Theta) <= 2", file=sys.stderr)
            return 1
        gr = grid_search_theta(sc.agents, sc.initial_states, sc.horizon,
                               sc.theta_box, args.grid)
        result["grid"] = {
            "theta": gr.theta.tolist(),
            "value": gr.value,
            "resolution": args.grid,
            "skipped": gr.skipped,
            "ties": [t.tolist() for t in gr.ties],
        }
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_json(os.path.join(args.out, "oracle.json"), result)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# plotdata
# --------------------------------------------------------------------------

def _read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def cmd_plotdata(args) -> int:
    trace = args.tracedir
    manifest_path = os.path.join(trace, "manifest.json")
    if not os.path.exists(manifest_path):
        print(f"no manifest.json in {trace}", file=sys.stderr)
        return 1
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    sc = ScenarioConfig.from_dict(manifest["scenario"])
    out = args.out or trace
    os.makedirs(out, exist_ok=True)

    # fig1: closed loop under fully converged negotiations -- every agent
    # tracks the per-step joint optimum exactly
    ref = algorithm1_run(sc, FullyConverged(tol=sc.converge_tol))
    rows = []
    for rec in ref.records:
        for i, a in enumerate(sc.agents):
            y = np.ravel(a.C @ rec.states[i])
            for j in range(a.p):
                rows.append([rec.t, i, j, y[j], rec.theta_star[j]])
    for i, a in enumerate(sc.agents):
        y = np.ravel(a.C @ ref.final_states[i])
        for j in range(a.p):
            rows.append([len(ref.records), i, j, y[j], ref.final_theta[j]])
    _write_csv(os.path.join(out, "fig1_centralized.csv"),
               ["t", "i", "component", "output", "theta_star"], rows)

    # fig2: the traced closed loop's outputs
    header, data = _read_csv(os.path.join(trace, "closedloop.csv"))
    col = {name: idx for idx, name in enumerate(header)}
    rows = []
    for line in data:
        t = int(line[col["t"]])
        for i, a in enumerate(sc.agents):
            x = np.array([float(line[col[f"x{i}_{j}"]]) for j in range(a.n)])
            y = np.ravel(a.C @ x)
            for j in range(a.p):
                rows.append([t, i, j, y[j]])
    _write_csv(os.path.join(out, "fig2_closedloop.csv"),
               ["t", "i", "component", "output"], rows)

    # fig3: every negotiation subiterate against the per-step oracle optimum
    p = sc.theta_box.dim
    theta_star = {}
    for line in data:
        t = int(line[col["t"]])
        if "theta_star_0" in col:
            theta_star[t] = [float(line[col[f"theta_star_{j}"]]) for j in range(p)]
        else:
            states = [
                np.array([float(line[col[f"x{i}_{j}"]]) for j in range(a.n)])
                for i, a in enumerate(sc.agents)
            ]
            cs = solve_centralized(sc.agents, states, sc.horizon, sc.theta_box)
            theta_star[t] = cs.theta_star.tolist()
    nheader, ndata = _read_csv(os.path.join(trace, "negotiation.csv"))
    ncol = {name: idx for idx, name in enumerate(nheader)}
    rows3, rows4 = [], []
    for line in ndata:
        t = int(line[ncol["t"]])
        k = int(line[ncol["k"]])
        i = int(line[ncol["i"]])
        for j in range(p):
            v = float(line[ncol[f"theta_{j}"]])
            rows3.append([t, k, i, j, v, theta_star[t][j]])
            rows4.append([t, k, i, j, v])
    _write_csv(os.path.join(out, "fig3_negotiation_vs_oracle.csv"),
               ["t", "k", "i", "component", "theta", "theta_star"], rows3)
    _write_csv(os.path.join(out, "fig4_theta_surfaces.csv"),
               ["t", "k", "i", "component", "theta"], rows4)
    print(f"plot data written to {out}")
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringmpc",
        description="Distributed model-predictive consensus simulator",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("validate", help="check scenario assumptions")
    pv.add_argument("scenario")
    pv.set_defaults(func=cmd_validate)

    pr = sub.add_parser("run", help="run the closed loop and write traces")
    pr.add_argument("scenario")
    pr.add_argument("--mode", choices=["converged", "interrupted"],
                    default="interrupted")
    pr.add_argument("--cycles", type=int, default=None,
                    help="negotiation cycle budget per step (interrupted mode)")
    pr.add_argument("--tol", type=float, default=None,
                    help="consensus stabilization tolerance (converged mode)")
    pr.add_argument("--compare-oracle", action="store_true",
                    help="solve the centralized problem every step and log mismatch")
    pr.add_argument("--freeze-theta-below", type=float, default=None,
                    help="fix the consensus point once eps/(t+1) drops below this")
    pr.add_argument("--force", action="store_true",
                    help="run even if validation fails")
    pr.add_argument("--out", required=True, help="output directory")
    pr.set_defaults(func=cmd_run)

    po = sub.add_parser("oracle", help="centralized optimum at the initial states")
    po.add_argument("scenario")
    po.add_argument("--grid", type=float, default=None,
                    help="also brute-force theta at this grid resolution")
    po.add_argument("--out", default=None, help="directory for oracle.json")
    po.set_defaults(func=cmd_oracle)

    pp = sub.add_parser("plotdata", help="emit long-format CSVs from a trace")
    pp.add_argument("tracedir")
    pp.add_argument("--out", default=None,
                    help="output directory (defaults to the trace dir)")
    pp.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("DMPC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except RingMpcError as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

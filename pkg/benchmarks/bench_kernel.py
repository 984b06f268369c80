"""Benchmark the compiled QP kernel against the pure-Python reference.

Times both backends on the kind of problem the library actually solves:
condensed horizon-T MPC programs for a double integrator, plus a batch of
random dense QPs.  Run with ``python benchmarks/bench_kernel.py``.
"""

import time

import numpy as np

from ringmpc._core import active_set_cy as cy  # noqa: F401  (fails fast if missing)
from ringmpc._core import active_set_py as py
from ringmpc.agents import LinearAgent, Polyhedron
from ringmpc.local_mpc import CondensedMpc


def _mpc_problems(n_instances=50, T=10, seed=0):
    rng = np.random.default_rng(seed)
    agent = LinearAgent(
        A=[[1.0, 1.0], [0.0, 1.0]], B=[[0.0], [1.0]], C=[[1.0, 0.0]],
        Q=np.eye(2), R=[[1.0]],
        Xset=Polyhedron.box([-50.0, -10.0], [50.0, 10.0]),
        Uset=Polyhedron.box([-5.0], [5.0]),
        name="bench",
    )
    mpc = CondensedMpc(agent, T)
    probs = []
    for _ in range(n_instances):
        x0 = rng.uniform([-5.0, -2.0], [5.0, 2.0])
        theta = rng.uniform(-8.0, 8.0, size=1)
        probs.append(mpc.qp(x0, theta))
    return probs


def _random_problems(n_instances=200, d=30, q=40, seed=1):
    rng = np.random.default_rng(seed)
    probs = []
    for _ in range(n_instances):
        M = rng.standard_normal((d, d))
        H = M @ M.T + 0.1 * np.eye(d)
        f = rng.standard_normal(d)
        Ain = rng.standard_normal((q, d))
        bin_ = rng.standard_normal(q) + 0.5
        probs.append((H, f, np.zeros((0, d)), np.zeros(0), Ain, bin_))
    return probs


def _run(backend, probs, repeats=3):
    def solve_all():
        for prob in probs:
            if hasattr(prob, "H"):
                backend.solve_qp_core(
                    prob.H, prob.f, prob.Aeq, prob.beq, prob.Ain, prob.bin,
                    1e-8, 10_000,
                )
            else:
                backend.solve_qp_core(*prob, 1e-8, 10_000)

    solve_all()  # warm-up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        solve_all()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    for label, probs in [
        ("condensed MPC (T=10, 50 instances)", _mpc_problems()),
        ("random dense (d=30, q=40, 200 instances)", _random_problems()),
    ]:
        t_py = _run(py, probs)
        t_cy = _run(cy, probs)
        print(f"{label:45s}  python {t_py * 1e3:8.1f} ms   "
              f"cython {t_cy * 1e3:8.1f} ms   speedup {t_py / t_cy:5.2f}x")


if __name__ == "__main__":
    main()

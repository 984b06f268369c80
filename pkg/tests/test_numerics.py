"""QP solver tests against analytic cases and an enumeration oracle."""

import numpy as np
import pytest

from ringmpc.errors import ConfigurationError, SingularMatrixError
from ringmpc.numerics import QpProblem, QpStatus, solve_linear, solve_qp


def _problem(H, f, Aeq=None, beq=None, Ain=None, bin_=None):
    d = len(f)
    return QpProblem(
        H=np.asarray(H, dtype=float),
        f=np.asarray(f, dtype=float),
        Aeq=np.zeros((0, d)) if Aeq is None else np.asarray(Aeq, dtype=float),
        beq=np.zeros(0) if beq is None else np.asarray(beq, dtype=float),
        Ain=np.zeros((0, d)) if Ain is None else np.asarray(Ain, dtype=float),
        bin=np.zeros(0) if bin_ is None else np.asarray(bin_, dtype=float),
    )


def enumeration_oracle(prob, tol=1e-9):
    """Brute-force KKT: try every subset of inequalities as the active set.

    Independent of the dual active-set iteration; only valid for small q.
    """
    from itertools import combinations

    d = prob.f.shape[0]
    e = prob.beq.shape[0]
    q = prob.bin.shape[0]
    best = None
    for r in range(q + 1):
        for subset in combinations(range(q), r):
            A = np.vstack([prob.Aeq, prob.Ain[list(subset)]])
            b = np.concatenate([prob.beq, prob.bin[list(subset)]])
            na = A.shape[0]
            kkt = np.zeros((d + na, d + na))
            kkt[:d, :d] = prob.H
            kkt[:d, d:] = A.T
            kkt[d:, :d] = A
            rhs = np.concatenate([-prob.f, b])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z, mults = sol[:d], sol[d:]
            mu = mults[e:]
            if mu.size and mu.min() < -tol:
                continue
            slack = prob.bin - prob.Ain @ z
            if slack.size and slack.min() < -tol * (1.0 + np.abs(prob.bin).max()):
                continue
            val = 0.5 * z @ prob.H @ z + prob.f @ z
            if best is None or val < best[0] - tol:
                best = (val, z)
    return best


def test_unconstrained_identity():
    sol = solve_qp(_problem(np.eye(2), [0.0, 0.0]))
    assert sol.status is QpStatus.OPTIMAL
    assert np.allclose(sol.z, 0.0)
    assert sol.value == pytest.approx(0.0, abs=1e-12)


def test_single_equality():
    # min z^2 s.t. z = 1 -> z = 1, value 1, lam = -2 (stationarity 2z + lam = 0)
    sol = solve_qp(_problem([[2.0]], [0.0], Aeq=[[1.0]], beq=[1.0]))
    assert sol.status is QpStatus.OPTIMAL
    assert sol.z[0] == pytest.approx(1.0)
    assert sol.value == pytest.approx(1.0)
    assert sol.lam_eq[0] == pytest.approx(-2.0)


def test_active_inequality_multiplier():
    # min z^2 - 4z s.t. z <= 1 -> z = 1, mu = 2
    sol = solve_qp(_problem([[2.0]], [-4.0], Ain=[[1.0]], bin_=[1.0]))
    assert sol.status is QpStatus.OPTIMAL
    assert sol.z[0] == pytest.approx(1.0)
    assert sol.mu_in[0] == pytest.approx(2.0)


def test_inactive_inequality():
    sol = solve_qp(_problem([[2.0]], [-4.0], Ain=[[1.0]], bin_=[10.0]))
    assert sol.z[0] == pytest.approx(2.0)
    assert sol.mu_in[0] == pytest.approx(0.0)


def test_infeasible_equalities():
    prob = _problem(np.eye(1), [0.0], Aeq=[[1.0], [1.0]], beq=[0.0, 1.0])
    assert solve_qp(prob).status is QpStatus.INFEASIBLE


def test_infeasible_inequalities():
    prob = _problem(np.eye(1), [0.0], Ain=[[1.0], [-1.0]], bin_=[-1.0, -1.0])
    assert solve_qp(prob).status is QpStatus.INFEASIBLE


def test_dimension_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        _problem(np.eye(2), [0.0])


def test_asymmetric_hessian_rejected():
    with pytest.raises(ConfigurationError):
        _problem([[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])


def test_kkt_residuals_random():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d = int(rng.integers(2, 6))
        M = rng.standard_normal((d, d))
        Ain = rng.standard_normal((2 * d, d))
        z0 = rng.standard_normal(d)      # kept feasible by construction
        prob = _problem(
            M @ M.T + 0.2 * np.eye(d), rng.standard_normal(d),
            Ain=Ain, bin_=Ain @ z0 + rng.uniform(0.1, 2.0, size=2 * d),
        )
        sol = solve_qp(prob)
        assert sol.status is QpStatus.OPTIMAL
        stat, r_eq, r_in, comp = sol.kkt_residuals(prob)
        assert stat < 1e-7
        assert r_eq < 1e-7
        assert r_in < 1e-7
        assert comp < 1e-6


def test_matches_enumeration_oracle():
    rng = np.random.default_rng(11)
    for _ in range(60):
        d = int(rng.integers(1, 5))
        q = int(rng.integers(0, 6))
        M = rng.standard_normal((d, d))
        prob = _problem(
            M @ M.T + 0.3 * np.eye(d), rng.standard_normal(d),
            Ain=rng.standard_normal((q, d)), bin_=rng.standard_normal(q) + 1.0,
        )
        sol = solve_qp(prob)
        ref = enumeration_oracle(prob)
        if ref is None:
            assert sol.status is QpStatus.INFEASIBLE
        else:
            assert sol.status is QpStatus.OPTIMAL
            assert abs(sol.value - ref[0]) <= 1e-6


def test_solve_linear_refined():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((6, 6)) + 6 * np.eye(6)
    b = rng.standard_normal(6)
    x = solve_linear(A, b)
    assert np.linalg.norm(A @ x - b) < 1e-10


def test_solve_linear_singular():
    with pytest.raises(SingularMatrixError):
        solve_linear(np.zeros((2, 2)), np.ones(2))


def test_backend_parity():
    cy = pytest.importorskip("ringmpc._core.active_set_cy")
    from ringmpc._core import active_set_py as py

    rng = np.random.default_rng(7)
    for _ in range(40):
        d = int(rng.integers(2, 7))
        q = int(rng.integers(0, 8))
        M = rng.standard_normal((d, d))
        H = M @ M.T + 0.1 * np.eye(d)
        f = rng.standard_normal(d)
        Ain = rng.standard_normal((q, d))
        bin_ = rng.standard_normal(q) + 1.0
        e0 = np.zeros((0, d))
        r_py = py.solve_qp_core(H, f, e0, np.zeros(0), Ain, bin_, 1e-8, 10_000)
        r_cy = cy.solve_qp_core(H, f, e0, np.zeros(0), Ain, bin_, 1e-8, 10_000)
        assert r_py[3] == r_cy[3]
        if r_py[3] == py.OPTIMAL:
            assert np.allclose(r_py[0], r_cy[0], atol=1e-12)
            assert np.allclose(r_py[2], r_cy[2], atol=1e-12)

"""Pure-numpy active-set kernel.

Reference implementation of the dual active-set method for strictly convex
QPs (Goldfarb-Idnani scheme, linear solves done from scratch each step):

    minimize    1/2 z'Hz + f'z
    subject to  Aeq z  = beq        (multipliers lam, free sign)
                Ain z <= bin        (multipliers mu >= 0)

Starting from the unconstrained minimizer, equality rows are enforced one
by one, then violated inequalities are added with dual blocking (a blocking
active constraint whose multiplier would turn negative is dropped before
the new one is added).  Every intermediate point satisfies stationarity and
the active constraints exactly, so the final multipliers are the exact KKT
duals -- no polishing pass is required.

The compiled twin in ``active_set_cy.pyx`` implements the same algorithm
step for step; keep the two in sync.
"""

from __future__ import annotations

import numpy as np

OPTIMAL = 0
INFEASIBLE = 1
MAX_ITER = 2

_TINY = 1e-11


def _chol_regularize(H):
    """Return an H made safely positive definite (identical rule in both backends)."""
    scale = max(1.0, float(np.abs(H).max())) if H.size else 1.0
    reg = 0.0
    Hw = H
    for _ in range(4):
        try:
            np.linalg.cholesky(Hw)
            return Hw
        except np.linalg.LinAlgError:
            reg = 1e-10 * scale if reg == 0.0 else reg * 100.0
            Hw = H + reg * np.eye(H.shape[0])
    np.linalg.cholesky(Hw)  # raises if still indefinite
    return Hw


def _directions(Hw, A_act, n):
    """Solve [[H, N'],[N, 0]] [dz; du] = [-n; 0] for the current working set."""
    d = Hw.shape[0]
    na = A_act.shape[0]
    if na == 0:
        return np.linalg.solve(Hw, -n), np.empty(0)
    kkt = np.zeros((d + na, d + na))
    kkt[:d, :d] = Hw
    kkt[:d, d:] = A_act.T
    kkt[d:, :d] = A_act
    rhs = np.zeros(d + na)
    rhs[:d] = -n
    sol = np.linalg.solve(kkt, rhs)
    return sol[:d], sol[d:]


def solve_qp_core(H, f, Aeq, beq, Ain, bin_, tol, max_iter):
    """Core solve.  Returns (z, lam_eq, mu_in, status, n_iter)."""
    d = f.shape[0]
    e = beq.shape[0]
    q = bin_.shape[0]

    Hw = _chol_regularize(H)
    z = np.linalg.solve(Hw, -f)

    act: list[int] = []   # row indices into stacked [Aeq; Ain]
    mult: list[float] = []
    A_all = np.vstack([Aeq, Ain]) if e + q else np.zeros((0, d))
    b_all = np.concatenate([beq, bin_])
    in_tol = tol * (1.0 + np.abs(bin_))
    active_in = np.zeros(q, dtype=bool)

    niter = 0

    # equality phase: enforce each row, free-signed multipliers, no blocking
    for j in range(e):
        n = A_all[j]
        s = float(n @ z - b_all[j])
        dz, du = _directions(Hw, A_all[act], n)
        denom = float(n @ dz)
        if abs(denom) <= _TINY:
            if abs(s) <= tol * (1.0 + abs(b_all[j])):
                continue  # redundant row; multiplier stays 0
            return z, np.zeros(e), np.zeros(q), INFEASIBLE, niter
        t = -s / denom
        z = z + t * dz
        for i in range(len(mult)):
            mult[i] += t * du[i]
        act.append(j)
        mult.append(t)
        niter += 1

    # inequality phase
    while niter < max_iter:
        if q:
            viol = Ain @ z - bin_ - in_tol
            viol[active_in] = -np.inf
            p = int(np.argmax(viol))
            best = viol[p]
        else:
            p, best = -1, -np.inf
        if p < 0 or best <= 0.0:
            # primal feasible: optimal
            lam_eq = np.zeros(e)
            mu_in = np.zeros(q)
            for i, row in enumerate(act):
                if row < e:
                    lam_eq[row] = mult[i]
                else:
                    mu_in[row - e] = max(mult[i], 0.0)
            return z, lam_eq, mu_in, OPTIMAL, niter

        cp = e + p
        n = A_all[cp]
        u_plus = 0.0
        added = False
        while niter < max_iter:
            niter += 1
            dz, du = _directions(Hw, A_all[act], n)
            denom = float(n @ dz)
            s = float(n @ z - b_all[cp])
            t2 = -s / denom if denom < -_TINY else np.inf
            t1 = np.inf
            blk = -1
            for i in range(len(act)):
                if act[i] >= e and du[i] < -_TINY:
                    cand = -mult[i] / du[i]
                    if cand < t1:
                        t1 = cand
                        blk = i
            t = min(t1, t2)
            if not np.isfinite(t):
                return z, np.zeros(e), np.zeros(q), INFEASIBLE, niter
            z = z + t * dz
            for i in range(len(mult)):
                mult[i] += t * du[i]
            u_plus += t
            if t2 <= t1:
                act.append(cp)
                mult.append(u_plus)
                active_in[p] = True
                added = True
                break
            active_in[act[blk] - e] = False
            del act[blk]
            del mult[blk]
        if not added:
            break

    return z, np.zeros(e), np.zeros(q), MAX_ITER, niter

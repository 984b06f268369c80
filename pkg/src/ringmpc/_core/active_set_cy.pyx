# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled active-set kernel.

Cython twin of ``active_set_py.solve_qp_core``: the same dual active-set
method (Goldfarb-Idnani scheme), step for step, with the inner loops --
violation scan, dot products, multiplier updates -- compiled.  Factorizations
still go through LAPACK via numpy.  Keep this file and the pure-Python
reference in sync.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

OPTIMAL = 0
INFEASIBLE = 1
MAX_ITER = 2

cdef double _TINY = 1e-11
cdef double _INF = float("inf")


cdef object _chol_regularize(object H):
    cdef double scale = max(1.0, float(np.abs(H).max())) if H.size else 1.0
    cdef double reg = 0.0
    Hw = H
    for _ in range(4):
        try:
            np.linalg.cholesky(Hw)
            return Hw
        except np.linalg.LinAlgError:
            reg = 1e-10 * scale if reg == 0.0 else reg * 100.0
            Hw = H + reg * np.eye(H.shape[0])
    np.linalg.cholesky(Hw)
    return Hw


cdef tuple _directions(object Hw, object A_act, object n):
    cdef Py_ssize_t d = Hw.shape[0]
    cdef Py_ssize_t na = A_act.shape[0]
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


cdef inline double _dot(double[::1] a, double[::1] b) nogil:
    cdef Py_ssize_t i
    cdef double s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


def solve_qp_core(H, f, Aeq, beq, Ain, bin_, double tol, long max_iter):
    """Core solve.  Returns (z, lam_eq, mu_in, status, n_iter)."""
    cdef Py_ssize_t d = f.shape[0]
    cdef Py_ssize_t e = beq.shape[0]
    cdef Py_ssize_t q = bin_.shape[0]

    Hw = _chol_regularize(np.ascontiguousarray(H, dtype=np.float64))
    f = np.ascontiguousarray(f, dtype=np.float64)
    z = np.linalg.solve(Hw, -f)

    act = []   # row indices into stacked [Aeq; Ain]
    mult = []
    if e + q:
        A_all = np.ascontiguousarray(np.vstack([Aeq, Ain]), dtype=np.float64)
    else:
        A_all = np.zeros((0, d))
    b_all = np.ascontiguousarray(np.concatenate([beq, bin_]), dtype=np.float64)
    in_tol = tol * (1.0 + np.abs(np.asarray(bin_, dtype=np.float64)))
    cdef double[::1] in_tol_v = np.ascontiguousarray(in_tol)
    cdef cnp.uint8_t[::1] active_in = np.zeros(q, dtype=np.uint8)

    cdef long niter = 0
    cdef Py_ssize_t j, i, p, blk
    cdef double s, denom, t, t1, t2, cand, best, u_plus
    cdef double[::1] zv, nv, dzv, duv, rv
    cdef double[:, ::1] Ain_v
    cdef double[::1] bin_v
    if q:
        Ain_v = np.ascontiguousarray(Ain, dtype=np.float64)
        bin_v = np.ascontiguousarray(bin_, dtype=np.float64)

    # equality phase: enforce each row, free-signed multipliers, no blocking
    for j in range(e):
        n = A_all[j]
        s = float(n @ z - b_all[j])
        dz, du = _directions(Hw, A_all[act] if act else A_all[:0], n)
        denom = float(n @ dz)
        if denom <= _TINY and denom >= -_TINY:
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
        p = -1
        best = -_INF
        if q:
            zv = np.ascontiguousarray(z)
            for j in range(q):
                if active_in[j]:
                    continue
                s = _dot(Ain_v[j], zv) - bin_v[j] - in_tol_v[j]
                if s > best:
                    best = s
                    p = j
        if p < 0 or best <= 0.0:
            # primal feasible: optimal
            lam_eq = np.zeros(e)
            mu_in = np.zeros(q)
            for i in range(len(act)):
                if act[i] < e:
                    lam_eq[act[i]] = mult[i]
                else:
                    mu_in[act[i] - e] = max(mult[i], 0.0)
            return z, lam_eq, mu_in, OPTIMAL, niter

        cp = e + p
        n = A_all[cp]
        u_plus = 0.0
        added = False
        while niter < max_iter:
            niter += 1
            dz, du = _directions(Hw, A_all[act] if act else A_all[:0], n)
            denom = float(n @ dz)
            s = float(n @ z - b_all[cp])
            t2 = -s / denom if denom < -_TINY else _INF
            t1 = _INF
            blk = -1
            for i in range(len(act)):
                if act[i] >= e and du[i] < -_TINY:
                    cand = -mult[i] / du[i]
                    if cand < t1:
                        t1 = cand
                        blk = i
            t = t1 if t1 < t2 else t2
            if t == _INF:
                return z, np.zeros(e), np.zeros(q), INFEASIBLE, niter
            z = z + t * dz
            for i in range(len(mult)):
                mult[i] += t * du[i]
            u_plus += t
            if t2 <= t1:
                act.append(cp)
                mult.append(u_plus)
                active_in[p] = 1
                added = True
                break
            active_in[act[blk] - e] = 0
            del act[blk]
            del mult[blk]
        if not added:
            break

    return z, np.zeros(e), np.zeros(q), MAX_ITER, niter

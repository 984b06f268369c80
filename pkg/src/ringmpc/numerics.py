"""Dense convex QP solving with exact Lagrange multipliers.

Problems are posed in standard form

    minimize    1/2 z'Hz + f'z
    subject to  Aeq z  = beq
                Ain z <= bin

with the Lagrangian convention

    L(z, lam, mu) = 1/2 z'Hz + f'z + lam'(Aeq z - beq) + mu'(Ain z - bin),
    mu >= 0,

so stationarity reads  Hz + f + Aeq'lam + Ain'mu = 0.  The multipliers
returned by :func:`solve_qp` follow this convention exactly; downstream
code differentiates Lagrangians against them, so the convention is fixed
here once and documented rather than left to the backend.

The actual iteration lives in :mod:`ringmpc._core` (compiled kernel with a
pure-numpy fallback); this module owns validation, status mapping, and the
KKT quality checks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .errors import ConfigurationError, SingularMatrixError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000


class QpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"


def _as_matrix(M, name):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-d matrix, got shape {M.shape}")
    return M


def _as_vector(v, name):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ConfigurationError(f"{name} must be a 1-d vector, got shape {v.shape}")
    return v


@dataclass
class QpProblem:
    """Convex QP in standard form; validated on construction."""

    H: np.ndarray
    f: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    Ain: np.ndarray | None = None
    bin: np.ndarray | None = None

    def __post_init__(self):
        self.H = _as_matrix(self.H, "H")
        self.f = _as_vector(self.f, "f")
        d = self.f.shape[0]
        if self.H.shape != (d, d):
            raise ConfigurationError(f"H shape {self.H.shape} inconsistent with f ({d})")
        if self.Aeq is None:
            self.Aeq = np.zeros((0, d))
            self.beq = np.zeros(0)
        else:
            self.Aeq = _as_matrix(self.Aeq, "Aeq")
            self.beq = _as_vector(self.beq, "beq")
        if self.Ain is None:
            self.Ain = np.zeros((0, d))
            self.bin = np.zeros(0)
        else:
            self.Ain = _as_matrix(self.Ain, "Ain")
            self.bin = _as_vector(self.bin, "bin")
        if self.Aeq.shape[1] != d or self.Aeq.shape[0] != self.beq.shape[0]:
            raise ConfigurationError("equality block dimensions inconsistent")
        if self.Ain.shape[1] != d or self.Ain.shape[0] != self.bin.shape[0]:
            raise ConfigurationError("inequality block dimensions inconsistent")

        hnorm = float(np.abs(self.H).max()) if self.H.size else 0.0
        if hnorm and float(np.abs(self.H - self.H.T).max()) > 1e-10 * max(1.0, hnorm):
            raise ConfigurationError("H is not symmetric within tolerance")
        # cheap PSD check: Cholesky of the shifted matrix succeeds iff
        # all eigenvalues exceed -1e-9*|H|; fall back to eigvalsh for the message
        if d:
            try:
                np.linalg.cholesky(self.H + (1e-9 * max(hnorm, 1e-300) + 1e-300) * np.eye(d))
            except np.linalg.LinAlgError:
                lo = float(np.linalg.eigvalsh(self.H)[0])
                if lo < -1e-9 * hnorm:
                    raise ConfigurationError(
                        f"H is not PSD within tolerance (min eigenvalue {lo:.3e})"
                    ) from None

    @property
    def dim(self):
        return self.f.shape[0]

    def objective(self, z):
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H @ z + self.f @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    value: float
    lam_eq: np.ndarray
    mu_in: np.ndarray
    status: QpStatus
    n_iter: int = 0
    active_inequalities: tuple = field(default_factory=tuple)

    def kkt_residuals(self, p: QpProblem):
        """(stationarity, eq residual, worst ineq violation, complementarity)."""
        grad = p.H @ self.z + p.f + p.Aeq.T @ self.lam_eq + p.Ain.T @ self.mu_in
        r_stat = float(np.abs(grad).max()) if grad.size else 0.0
        r_eq = float(np.abs(p.Aeq @ self.z - p.beq).max()) if p.beq.size else 0.0
        slack = p.Ain @ self.z - p.bin
        r_in = float(slack.max()) if slack.size else 0.0
        r_comp = float(abs(self.mu_in @ slack)) if slack.size else 0.0
        return r_stat, r_eq, r_in, r_comp


def solve_qp(p: QpProblem, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> QpSolution:
    """Solve a validated QP; multipliers follow the module's sign convention."""
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    z, lam_eq, mu_in, code, niter = _core.solve_qp_core(
        np.ascontiguousarray(p.H),
        np.ascontiguousarray(p.f),
        np.ascontiguousarray(p.Aeq),
        np.ascontiguousarray(p.beq),
        np.ascontiguousarray(p.Ain),
        np.ascontiguousarray(p.bin),
        float(tol),
        int(max_iter),
    )
    z = np.asarray(z)
    if code == _core.OPTIMAL:
        status = QpStatus.OPTIMAL
        # a PSD-singular H with an unbounded descent direction shows up as an
        # astronomically large regularized minimizer
        if z.size and float(np.abs(z).max()) > 1e12:
            status = QpStatus.UNBOUNDED
    elif code == _core.INFEASIBLE:
        status = QpStatus.INFEASIBLE
    else:
        status = QpStatus.MAX_ITER
    active = tuple(int(i) for i in np.nonzero(np.asarray(mu_in) > 0.0)[0])
    return QpSolution(
        z=z,
        value=p.objective(z),
        lam_eq=np.asarray(lam_eq),
        mu_in=np.asarray(mu_in),
        status=status,
        n_iter=niter,
        active_inequalities=active,
    )


def solve_linear(M, rhs):
    """Solve M X = rhs with a conditioning guard and one refinement step.

    Raises :class:`SingularMatrixError` when the estimated condition number
    exceeds 1e12 (callers map this to their own domain errors).
    """
    M = np.asarray(M, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConfigurationError(f"M must be square, got shape {M.shape}")
    if M.size == 0:
        return np.zeros_like(rhs)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularMatrixError(f"matrix condition {cond:.3e} exceeds 1e12")
    X = np.linalg.solve(M, rhs)
    X = X + np.linalg.solve(M, rhs - M @ X)  # one iterative refinement step
    return X

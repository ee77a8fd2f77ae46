"""Right-preconditioned restarted GMRES."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import SolverError

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-300


@dataclass
class SolverReport:
    iterations: int = 0
    residual: float = 0.0
    history: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    restarts: int = 0
    converged: bool = False

    def as_dict(self, with_history: bool = False) -> dict:
        out = {
            "gmres_iterations": self.iterations,
            "residual": self.residual,
            "restarts": self.restarts,
            "converged": self.converged,
            "solve_time": self.wall_time,
        }
        if with_history:
            out["residual_history"] = list(self.history)
        return out


def _givens(a: float, b: float) -> tuple[float, float]:
    if b == 0.0:
        return 1.0, 0.0
    r = np.hypot(a, b)
    return a / r, b / r


def gmres(apply_A, y, apply_M=None, x0=None, tol: float = 1e-6, restart: int = 100,
          maxiter: int = 1000, level=None):
    """Solve A x = y with right preconditioning, x = M z.

    The stopping test is on the true relative residual ||y - A x|| / ||y||.  Arnoldi
    uses modified Gram-Schmidt with one re-orthogonalization pass.
    Returns ``(x, SolverReport)``.
    """
    start = time.perf_counter()
    y = np.asarray(y, dtype=float)
    n = len(y)
    precondition = apply_M if apply_M is not None else (lambda v: v)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    y_norm = max(float(np.linalg.norm(y)), NORM_FLOOR)
    report = SolverReport()

    r = y - apply_A(x) if x0 is not None else y.copy()
    beta = float(np.linalg.norm(r))
    report.history.append(beta / y_norm)
    restart = max(1, min(restart, n))
    breakdown = False

    while beta / y_norm > tol and report.iterations < maxiter:
        V = np.zeros((restart + 1, n))
        H = np.zeros((restart + 1, restart))
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        g = np.zeros(restart + 1)
        g[0] = beta
        V[0] = r / beta
        breakdown = False
        k = 0
        while k < restart:
            w = apply_A(precondition(V[k]))
            for _ in range(2):
                for j in range(k + 1):
                    h = V[j] @ w
                    H[j, k] += h
                    w -= h * V[j]
            h_next = float(np.linalg.norm(w))
            if not np.all(np.isfinite(H[: k + 1, k])) or not np.isfinite(h_next):
                raise SolverError("GMRES produced a non-finite Arnoldi vector", level=level)
            H[k + 1, k] = h_next

            for j in range(k):
                H[j, k], H[j + 1, k] = cs[j] * H[j, k] + sn[j] * H[j + 1, k], -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
            cs[k], sn[k] = _givens(H[k, k], H[k + 1, k])
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]

            k += 1
            report.iterations += 1
            estimate = abs(g[k]) / y_norm
            if not np.isfinite(estimate):
                raise SolverError("GMRES residual became NaN", level=level)
            report.history.append(estimate)
            breakdown = h_next <= 1e-14 * max(beta, NORM_FLOOR)
            if estimate <= tol or breakdown or report.iterations >= maxiter:
                break
            V[k] = w / h_next

        coeffs = sla.solve_triangular(H[:k, :k], g[:k])
        x = x + precondition(V[:k].T @ coeffs)
        r = y - apply_A(x)
        beta = float(np.linalg.norm(r))
        if not np.isfinite(beta):
            raise SolverError("GMRES residual became NaN", level=level)
        if breakdown:
            break
        if beta / y_norm > tol and report.iterations < maxiter:
            report.restarts += 1

    report.residual = beta / y_norm
    report.converged = report.residual <= tol or (breakdown and report.residual <= max(tol, 1e-8))
    report.wall_time = time.perf_counter() - start
    if not report.converged:
        logger.warning("GMRES stopped after %d iterations at relative residual %.3e (tol %.1e)",
                       report.iterations, report.residual, tol)
    return x, report

"""Small Levenberg-Marquardt solver shared by the curve fits.

Marquardt scaling (damping proportional to ``diag(J^T J)``) keeps parameters
of very different magnitude, such as ``chi_inf ~ 1`` next to
``gamma ~ 1e4``, well conditioned.
"""

from dataclasses import dataclass, field

import numpy as np


class ConvergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class LMResult:
    params: np.ndarray
    cost: float
    iterations: int
    converged: bool
    trace: list[float] = field(default_factory=list)


def levenberg_marquardt(
    residual,
    jacobian,
    p0,
    max_iter: int = 500,
    ftol: float = 1e-12,
    xtol: float = 1e-12,
    gtol: float = 1e-14,
    lam0: float = 1e-3,
) -> LMResult:
    """Minimize ``0.5 * ||residual(p)||^2``.

    ``trace`` holds the cost after every accepted step and is strictly
    decreasing by construction. ``converged`` is False when ``max_iter`` ran
    out or the residual became non-finite at the start point.
    """
    p = np.asarray(p0, dtype=np.float64).copy()
    r = residual(p)
    if not np.all(np.isfinite(r)):
        return LMResult(p, np.inf, 0, False, [])
    cost = 0.5 * float(r @ r)
    trace = [cost]
    lam = lam0
    for it in range(1, max_iter + 1):
        J = jacobian(p)
        if not np.all(np.isfinite(J)):
            return LMResult(p, cost, it, False, trace)
        g = J.T @ r
        if np.max(np.abs(g)) <= gtol * max(1.0, cost):
            return LMResult(p, cost, it, True, trace)
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-300)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            p_new = p + step
            r_new = residual(p_new)
            if np.all(np.isfinite(r_new)):
                cost_new = 0.5 * float(r_new @ r_new)
                if cost_new < cost:
                    accepted = True
                    break
            lam *= 10.0
        if not accepted:
            # no descent direction left at machine precision
            return LMResult(p, cost, it, True, trace)
        small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol)
        small_gain = (cost - cost_new) <= ftol * cost
        p, r, cost = p_new, r_new, cost_new
        trace.append(cost)
        lam = max(lam / 10.0, 1e-15)
        if small_step or small_gain or cost == 0.0:
            return LMResult(p, cost, it, True, trace)
    return LMResult(p, cost, max_iter, False, trace)

"""Damped least squares with a Levenberg-Marquardt style trust factor.

Deliberately small and explicit, so fit behavior is reproducible from the
source alone: multiplicative damping on the diagonally scaled normal
equations (Fletcher scaling, which keeps steps sane when parameters span
many decades), optional box bounds enforced by projecting trial points, and
monotone acceptance -- the cost of accepted iterates never increases.

Convergence is declared when the relative drop in the residual sum of
squares over one accepted step falls below `cost_rtol`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

_LAMBDA_MIN = 1e-14
_LAMBDA_MAX = 1e15
_LAMBDA_GROW = 10.0
_LAMBDA_SHRINK = 5.0


@dataclass
class LeastSquaresResult:
    x: np.ndarray
    cost: float  # sum of squared residuals at x
    residuals: np.ndarray
    jac: np.ndarray  # Jacobian at x
    iterations: int
    converged: bool
    message: str
    cost_history: list[float] = field(default_factory=list)  # accepted costs

    def covariance(self, scale: float | None = None) -> np.ndarray | None:
        """(J^T J)^-1, optionally scaled; None if J^T J is singular.

        Pass scale = RSS / (N - p) when the residuals are unweighted; leave
        None (scale 1) when they already carry 1/sigma weights.
        """
        jtj = self.jac.T @ self.jac
        try:
            cov = np.linalg.inv(jtj)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(cov)):
            return None
        return cov if scale is None else cov * scale


def finite_difference_jacobian(fun, x, r0=None, rel_step=1e-7):
    """Forward-difference Jacobian; r0 may pass a precomputed fun(x).

    The step is floored at rel_step in absolute terms so parameters sitting
    exactly at zero still get a usable column.
    """
    x = np.asarray(x, dtype=float)
    if r0 is None:
        r0 = np.asarray(fun(x), dtype=float)
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        step = rel_step * max(abs(x[j]), 1.0)
        xs = x.copy()
        xs[j] += step
        jac[:, j] = (np.asarray(fun(xs), dtype=float) - r0) / step
    return jac


def damped_least_squares(
    fun,
    x0,
    jac=None,
    bounds=None,
    max_iter: int = 200,
    cost_rtol: float = 1e-10,
    lambda0: float = 1e-3,
) -> LeastSquaresResult:
    """Minimize sum(fun(x)**2) from x0.

    Parameters
    ----------
    fun : callable
        Residual vector r(x); weighting (1/sigma) is the caller's business.
    jac : callable, optional
        Jacobian dr/dx; forward differences when omitted.
    bounds : (lo, hi) arrays, optional
        Box constraints; trial points are clipped onto the box.
    """
    x = np.asarray(x0, dtype=float).copy()
    if bounds is not None:
        lo, hi = (np.asarray(b, dtype=float) for b in bounds)
        if np.any(lo > hi):
            raise ValidationError("bounds must satisfy lo <= hi")
        x = np.clip(x, lo, hi)
    else:
        lo = hi = None

    def jac_at(xv, rv):
        if jac is not None:
            return np.asarray(jac(xv), dtype=float)
        return finite_difference_jacobian(fun, xv, rv)

    r = np.asarray(fun(x), dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValidationError("residuals are non-finite at the starting point")
    cost = float(r @ r)
    history = [cost]
    lam = lambda0
    converged = False
    message = "iteration cap reached"
    it = 0

    for it in range(1, max_iter + 1):
        if cost == 0.0:
            converged, message = True, "zero residual"
            break
        J = jac_at(x, r)
        g = J.T @ r
        A = J.T @ J
        d = np.diag(A).copy()
        dmax = d.max() if d.size else 0.0
        d[d <= 0] = dmax if dmax > 0 else 1.0

        accepted = False
        while lam <= _LAMBDA_MAX:
            try:
                step = np.linalg.solve(A + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(A + lam * np.diag(d), -g, rcond=None)[0]
            x_try = x + step
            if lo is not None:
                x_try = np.clip(x_try, lo, hi)
            r_try = np.asarray(fun(x_try), dtype=float)
            cost_try = float(r_try @ r_try) if np.all(np.isfinite(r_try)) else math.inf
            if cost_try < cost:
                drop = cost - cost_try
                x, r, cost = x_try, r_try, cost_try
                history.append(cost)
                lam = max(lam / _LAMBDA_SHRINK, _LAMBDA_MIN)
                accepted = True
                if drop <= cost_rtol * max(cost, 1e-300):
                    converged, message = True, "relative cost change below tolerance"
                break
            lam *= _LAMBDA_GROW
        if not accepted:
            converged, message = True, "no lower point found (stationary)"
            break
        if converged:
            break

    J = jac_at(x, r)
    return LeastSquaresResult(
        x=x,
        cost=cost,
        residuals=r,
        jac=J,
        iterations=it,
        converged=converged,
        message=message,
        cost_history=history,
    )


def aicc_from_rss(rss: float, n_obs: int, n_fit_params: int) -> float:
    """Small-sample corrected Akaike criterion for Gaussian least squares.

    The noise variance counts as one estimated parameter on top of the fit
    parameters.  The RSS is floored at 1e-300 so exact fits stay comparable.
    """
    k = n_fit_params + 1
    if n_obs <= k + 1:
        raise ValidationError(f"AICc needs more than {k + 1} observations, got {n_obs}")
    rss = max(float(rss), 1e-300)
    return n_obs * math.log(rss / n_obs) + 2.0 * k + 2.0 * k * (k + 1) / (n_obs - k - 1)

"""Two-parameter Mittag-Leffler-type matrix kernel over a delay lattice.

For t >= 0, s >= 0 the kernel is the double series

    K(t, s) = sum_{k >= 0} sum_i C_{k+1}(i)
              [mu(t) - mu(s + lag(i))]_+^(k*alpha + beta - 1) / Gamma(k*alpha + beta)

with the truncated-power convention: a term vanishes whenever its clock
argument is <= 0 (so the lattice sum is finite), except that for beta = 1
the k = 0 layer treats [0]_+^0 as 1 at the base point, which makes
K(t, t) the identity for beta = 1.  For t < 0 the kernel is zero.

The k-sum is truncated once three consecutive layers fall below a
relative tolerance; the Gamma growth of the denominators guarantees the
layers eventually decay super-geometrically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .lattice import CoefficientTable
from .mu_calculus import MuMap

__all__ = ["KernelValue", "kernel", "kernel_many", "majorant_bound",
           "zero_lag_series", "lag_group_series", "NonConvergedError",
           "DEFAULT_TOL"]

DEFAULT_TOL = 1e-10
_CONSECUTIVE = 3


class NonConvergedError(RuntimeError):
    pass


@dataclass
class KernelValue:
    value: np.ndarray
    k_used: int
    tail_estimate: float
    terms_summed: int
    converged: bool


def _layer_coeffs(xv: np.ndarray, p: float, lg: float) -> np.ndarray:
    """[x]_+^p / Gamma(q) elementwise, with lg = lgamma(q)."""
    out = np.zeros_like(xv)
    mask = xv > 0
    if np.any(mask):
        out[mask] = np.exp(p * np.log(xv[mask]) - lg)
    return out


def kernel_many(alpha: float, beta: float, t: float, s, table: CoefficientTable,
                mu: MuMap, tol: float = DEFAULT_TOL, exclude_lag=None):
    """Evaluate the kernel at one t and many s values.

    Returns (values, info) where values has shape (len(s), n, n).  With
    `exclude_lag` set, every lattice index whose total lag equals that
    value is skipped; quadrature uses this to add those terms back
    analytically when their clock argument vanishes inside a panel.
    """
    if not (0.0 < alpha < 1.0 or (alpha == 1.0)):
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr < 0):
        raise ValueError("second kernel argument must be >= 0")
    n = table.n
    m = s_arr.shape[0]
    vals = np.zeros((m, n, n))
    if t < 0:
        return vals, KernelValue(vals, 0, 0.0, 0, True)
    if t - np.min(s_arr) > table.lag_budget + 1e-12:
        raise ValueError("table lag budget too small for this evaluation")

    # clock arguments for every (node, lattice index) pair; arguments within
    # float noise of zero are snapped to exactly zero so that the base-point
    # convention treats both sides of a lattice coincidence identically
    # (lag sums and shifted-time sums round differently at exact hits)
    args = np.asarray(mu(t), dtype=float) - np.asarray(
        mu(s_arr[:, None] + table.lags[None, :]), dtype=float)
    snap = 1e-12 * max(1.0, abs(float(np.asarray(mu(t)))))
    args[np.abs(args) <= snap] = 0.0
    if exclude_lag is not None:
        skip = np.isclose(table.lags, exclude_lag, rtol=0.0,
                          atol=1e-12 * max(1.0, exclude_lag))
        args[:, skip] = -1.0  # masked out by the truncated power

    k_max = table.level_max - 1
    partial_norm = 0.0
    small_streak = 0
    last_norms = []
    terms = 0
    k_used = 0
    converged = False
    for k in range(k_max + 1):
        p = k * alpha + beta - 1.0
        lg = gammaln(k * alpha + beta)
        coeff = _layer_coeffs(args, p, lg)
        if k == 0 and beta == 1.0:
            coeff[args == 0.0] = 1.0
        active = np.nonzero(np.any(coeff != 0.0, axis=0))[0]
        k_used = k
        if active.size:
            layer = np.tensordot(coeff[:, active], table.stacked(k + 1)[active],
                                 axes=([1], [0]))
            vals += layer
            terms += int(np.count_nonzero(coeff[:, active]))
            layer_norm = float(np.max(np.sum(np.abs(layer), axis=2))) if n > 0 else 0.0
        else:
            layer_norm = 0.0
        partial_norm = max(partial_norm, float(np.max(np.sum(np.abs(vals), axis=2))))
        last_norms.append(layer_norm)
        if layer_norm <= tol * max(partial_norm, 1e-300):
            small_streak += 1
            if small_streak >= _CONSECUTIVE:
                converged = True
                break
        else:
            small_streak = 0
    tail = float(sum(last_norms[-_CONSECUTIVE:]))
    info = KernelValue(vals, k_used, tail, terms, converged)
    return vals, info


def kernel(alpha: float, beta: float, t: float, s: float, table: CoefficientTable,
           mu: MuMap, tol: float = DEFAULT_TOL) -> KernelValue:
    """Kernel at a single (t, s); see kernel_many."""
    vals, info = kernel_many(alpha, beta, t, [s], table, mu, tol)
    return KernelValue(vals[0], info.k_used, info.tail_estimate,
                       info.terms_summed, info.converged)


def majorant_bound(alpha: float, beta: float, t: float, majorant: CoefficientTable,
                   mu: MuMap, tol: float = DEFAULT_TOL) -> float:
    """Scalar series bound: the kernel built from coefficient norms.

    Dominates the matrix norm of the kernel at matched arguments.  Raises
    NonConvergedError if the level cap is reached before truncation.
    """
    if majorant.n != 1:
        raise ValueError("majorant table must be scalar (1x1 entries)")
    out = kernel(alpha, beta, t, 0.0, majorant, mu, tol)
    if not out.converged:
        raise NonConvergedError(
            f"majorant series did not converge within {majorant.level_max} levels")
    return float(out.value[0, 0])


def zero_lag_series(alpha: float, u, table: CoefficientTable,
                    tol: float = DEFAULT_TOL):
    """sum_k C_{k+1}(0) u^k / Gamma(k*alpha + alpha) for u >= 0 (array ok).

    This is the zero-lag part of the beta = alpha kernel after the
    substitution u = (mu(t) - mu(s))**alpha; the kernel singularity
    cancels exactly, leaving a power series in u.
    """
    return lag_group_series(alpha, u, table, 0.0, tol)


def lag_group_series(alpha: float, u, table: CoefficientTable, lag_value: float,
                     tol: float = DEFAULT_TOL):
    """sum_k [sum_{i: lag(i) = lag_value} C_{k+1}(i)] u^k / Gamma(k a + a).

    The beta = alpha kernel terms sharing one total lag, written in the
    substituted variable u = (mu(t) - mu(s + lag))**alpha with the
    singular prefactor u^((alpha-1)/alpha) stripped; evaluating them this
    way avoids the catastrophic cancellation of recomputing a vanishing
    clock argument near the lag's switch-on point.
    """
    key = ("lag_group", alpha, round(float(lag_value), 15))
    coeffs = table._cache.get(key)
    if coeffs is None:
        members = np.isclose(table.lags, lag_value, rtol=0.0,
                             atol=1e-12 * max(1.0, lag_value))
        if not np.any(members):
            raise ValueError(f"no lattice index has total lag {lag_value}")
        ks = np.arange(table.level_max)
        scale = np.exp(-gammaln(ks * alpha + alpha))
        mats = np.stack([table.stacked(k + 1)[members].sum(axis=0) for k in ks])
        coeffs = mats * scale[:, None, None]
        table._cache[key] = coeffs
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.zeros((u_arr.shape[0], table.n, table.n))
    c_norms = np.max(np.sum(np.abs(coeffs), axis=2), axis=1)
    nonzero = np.nonzero(c_norms > 0.0)[0]
    if nonzero.size == 0:
        return out
    # leading zero coefficients are structural (the group only enters the
    # series at some minimum level); truncation must not count them
    k_start = int(nonzero[0])
    upow = np.ones_like(u_arr)
    u_max = float(np.max(u_arr)) if u_arr.size else 0.0
    partial = 0.0
    streak = 0
    for k in range(coeffs.shape[0]):
        term_bound = c_norms[k] * (u_max ** k if u_max > 0 else (1.0 if k == 0 else 0.0))
        out += upow[:, None, None] * coeffs[k]
        upow = upow * u_arr
        partial = max(partial, float(np.max(np.sum(np.abs(out), axis=2))))
        if k >= k_start and term_bound <= tol * max(partial, 1e-300):
            streak += 1
            if streak >= _CONSECUTIVE:
                break
        else:
            streak = 0
    return out

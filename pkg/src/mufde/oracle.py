"""Independent reference solver by product integration.

Never touches the coefficient lattice or the kernel series.  It marches
the equivalent Volterra fixed-point form

    w(t) = phi(0) + sum_i A_i [w(t - r_i) - phi(-r_i)]
         + (1/Gamma(alpha)) int_0^t (mu(t)-mu(s))^(alpha-1)
           [B w(s) + sum_i F_i w(s - r_i) + g(s, w(s))] dmu(s)

on a clock-uniform grid with all delay-lattice points inserted.  The
singular kernel is integrated exactly against a piecewise-constant
(left-point) interpolant of the bracket; corrector sweeps re-evaluate
the final panel with a product-trapezoid rule so the current point is
handled implicitly.  Delayed values come from the history below zero and
from linear interpolation of already-computed points above it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .solver import DelaySystem, Trajectory

__all__ = ["OracleConfig", "oracle_grid", "solve_reference", "residual",
           "GridMismatchError", "OracleError"]


class OracleError(ValueError):
    pass


class GridMismatchError(ValueError):
    pass


@dataclass
class OracleConfig:
    steps_per_mu: int = 1024
    corrector_sweeps: int = 2
    interp_order: int = 1

    def __post_init__(self):
        if self.steps_per_mu < 8:
            raise OracleError("steps_per_mu must be >= 8")
        if self.corrector_sweeps < 1:
            raise OracleError("corrector sweeps must be >= 1")
        if self.interp_order != 1:
            raise OracleError("only linear delayed-value interpolation is supported")


def oracle_grid(sys: DelaySystem, cfg: OracleConfig) -> np.ndarray:
    """Clock-uniform marching grid on [-r, T] with lattice points inserted."""
    mu = sys.mu
    tau0, tauT = float(mu(0.0)), float(mu(sys.T))
    m = max(8, int(math.ceil(cfg.steps_per_mu * (tauT - tau0))))
    pos = np.asarray(mu.inv(np.linspace(tau0, tauT, m + 1)), dtype=float)
    pos = np.union1d(pos, [lag for lag in sys.positive_lags() if lag <= sys.T])
    pos = np.union1d(pos, [0.0, sys.T])

    tau_lo = float(mu(-sys.r))
    mneg = max(4, int(math.ceil(0.25 * cfg.steps_per_mu * (tau0 - tau_lo))))
    neg = np.asarray(mu.inv(np.linspace(tau_lo, tau0, mneg + 1)), dtype=float)
    neg = np.union1d(neg, [-r for r in sys.delays] + [-sys.r])

    grid = np.union1d(neg, pos)
    keep = [0]
    for i in range(1, len(grid)):
        if grid[i] - grid[keep[-1]] > 1e-13 * max(1.0, sys.T):
            keep.append(i)
    grid = grid[keep]
    grid[0], grid[-1] = -sys.r, sys.T
    return grid


def _delayed_lookup(sys, grid, values, m, t_arg):
    """Value of the trajectory at t_arg < grid[m], from history or interpolation."""
    if t_arg <= 0.0:
        return sys.phi(t_arg)
    j = int(np.searchsorted(grid, t_arg))
    if j >= m:
        raise OracleError("delay shorter than a marching step; raise steps_per_mu")
    t0, t1 = grid[j - 1], grid[j]
    lam = 0.0 if t1 == t0 else (t_arg - t0) / (t1 - t0)
    return (1.0 - lam) * values[j - 1] + lam * values[j]


def _bracket(sys, grid, values, m, delayed):
    """B w + sum F_i w(. - r_i) + forcing, at grid index m."""
    t = grid[m]
    out = sys.B @ values[m]
    for F_i, wd in zip(sys.F, delayed):
        out = out + F_i @ wd
    if sys.forcing.mode == "linear":
        out = out + sys.forcing.many(np.array([t]))[0]
    elif sys.forcing.mode == "semilinear":
        out = out + sys.forcing.many(np.array([t]), values[m][None, :])[0]
    return out


def solve_reference(sys: DelaySystem, cfg: OracleConfig) -> Trajectory:
    grid = oracle_grid(sys, cfg)
    n = sys.n
    i0 = int(np.searchsorted(grid, 0.0))
    if not np.isclose(grid[i0], 0.0):
        raise OracleError("marching grid must contain t = 0")
    taus = np.asarray(sys.mu(grid), dtype=float)
    values = np.zeros((len(grid), n))
    values[: i0 + 1] = sys.phi.many(grid[: i0 + 1])

    phi0 = values[i0]
    phi_at = {r: sys.phi(-r) for r in sys.delays}
    ga1 = math.gamma(sys.alpha + 1.0)
    G = np.zeros((len(grid), n))
    delayed0 = [sys.phi(0.0 - r) for r in sys.delays]
    G[i0] = _bracket(sys, grid, values, i0, delayed0)

    for m in range(i0 + 1, len(grid)):
        t_m = grid[m]
        tau_m = taus[m]
        kern = (tau_m - taus[i0:m]) ** sys.alpha
        weights = (kern - np.append(kern[1:], 0.0)) / ga1
        integral_hist = weights[:-1] @ G[i0 : m - 1] if m - i0 > 1 else np.zeros(n)
        w_last = weights[-1]

        delayed_m = [_delayed_lookup(sys, grid, values, m, t_m - r) for r in sys.delays]
        neutral = np.zeros(n)
        for A_i, wd, r in zip(sys.A, delayed_m, sys.delays):
            neutral = neutral + A_i @ (wd - phi_at[r])

        # predictor: left-point value on the final panel
        values[m] = phi0 + neutral + integral_hist + w_last * G[m - 1]
        # corrector sweeps: product trapezoid on the final panel
        for _ in range(cfg.corrector_sweeps):
            G[m] = _bracket(sys, grid, values, m, delayed_m)
            values[m] = (phi0 + neutral + integral_hist
                         + 0.5 * w_last * (G[m - 1] + G[m]))
        G[m] = _bracket(sys, grid, values, m, delayed_m)

    meta = {"steps_per_mu": cfg.steps_per_mu, "corrector_sweeps": cfg.corrector_sweeps,
            "grid_points": len(grid)}
    return Trajectory(grid, values, "oracle", meta, np.ones(len(grid), dtype=bool))


def residual(sys: DelaySystem, traj: Trajectory, cfg: OracleConfig) -> float:
    """Sup-norm defect of a trajectory in the discretised integral equation.

    The trajectory must live on the oracle grid for this configuration
    (same points to within 1e-10); delayed lookups interpolate linearly.
    """
    grid = oracle_grid(sys, cfg)
    if len(grid) != len(traj.grid) or np.max(np.abs(grid - traj.grid)) > 1e-10:
        raise GridMismatchError("trajectory grid does not match the oracle grid")
    values = traj.values
    n = sys.n
    i0 = int(np.searchsorted(grid, 0.0))
    taus = np.asarray(sys.mu(grid), dtype=float)
    ga1 = math.gamma(sys.alpha + 1.0)
    phi0 = sys.phi(0.0)
    phi_at = {r: sys.phi(-r) for r in sys.delays}

    G = np.zeros((len(grid), n))
    for m in range(i0, len(grid)):
        delayed = [_delayed_lookup(sys, grid, values, len(grid), grid[m] - r)
                   for r in sys.delays]
        G[m] = _bracket(sys, grid, values, m, delayed)

    worst = 0.0
    for m in range(i0 + 1, len(grid)):
        tau_m = taus[m]
        kern = (tau_m - taus[i0:m]) ** sys.alpha
        weights = (kern - np.append(kern[1:], 0.0)) / ga1
        integral = weights[:-1] @ G[i0 : m - 1] if m - i0 > 1 else np.zeros(n)
        integral = integral + 0.5 * weights[-1] * (G[m - 1] + G[m])
        neutral = np.zeros(n)
        for A_i, r in zip(sys.A, sys.delays):
            wd = _delayed_lookup(sys, grid, values, len(grid), grid[m] - r)
            neutral = neutral + A_i @ (wd - phi_at[r])
        defect = values[m] - (phi0 + neutral + integral)
        worst = max(worst, float(np.max(np.abs(defect))))
    return worst

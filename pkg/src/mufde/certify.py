"""Existence/uniqueness contraction bounds and empirical stability checks.

The headline bound is rho = L * (mu(T) - mu(0)) * xnorm, where xnorm is
the scalar majorant series for the beta = alpha kernel at (T, 0) built
from coefficient norms; rho < 1 certifies a unique solution of the
integral form and eta = (mu(T)-mu(0)) * xnorm / (1 - rho) bounds the
distance of eps-approximate solutions by eta * eps.

Two norm conventions are computed: "lumped" folds all neutral matrices
into a single scalar ||sum A_i|| on a one-delay lattice, "per-delay"
keeps one scalar per delay.  Because the product bound is often very
pessimistic (the majorant multiplies the full clock span by the kernel
value at the far end), a sharper sampled bound based on the integral
int_0^t ||K(t,s)|| dmu(s) is computed alongside and used as a fallback
for the stability experiment when the headline bound fails.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lattice, mlf
from .mu_calculus import gauss_legendre
from .solver import (DelaySystem, VectorFn, DEFAULT_LEVEL_CAP, SolverError,
                     build_table, solve_semilinear, estimate_lipschitz)

__all__ = ["Certificate", "CertificateError", "contraction_certificate",
           "kernel_integral_bound", "uh_experiment", "UHReport"]


class CertificateError(ValueError):
    pass


@dataclass
class Certificate:
    L: float
    mu_span: float
    xnorm: float
    rho: float
    unique: bool
    eta: Optional[float]
    convention: str
    extras: dict = field(default_factory=dict)

    def report(self) -> str:
        lines = [
            f"lipschitz: {self.L:.12g}",
            f"mu_span: {self.mu_span:.12g}",
            f"xnorm ({self.convention}): {self.xnorm:.12g}",
            f"rho: {self.rho:.12g}",
            f"unique: {str(self.unique).lower()}",
        ]
        if self.eta is not None:
            lines.append(f"eta: {self.eta:.12g}")
        for key in sorted(self.extras):
            lines.append(f"{key}: {self.extras[key]:.12g}" if isinstance(
                self.extras[key], float) else f"{key}: {self.extras[key]}")
        return "\n".join(lines)


def _norms(sys: DelaySystem):
    inf = lambda M: float(np.max(np.sum(np.abs(M), axis=1)))
    return [inf(M) for M in sys.A], inf(sys.B), [inf(M) for M in sys.F]


def _majorant_xnorm(sys: DelaySystem, convention: str, level_cap: int,
                    tol: float, norm_overrides: Optional[dict] = None) -> float:
    a_norms, b_norm, f_norms = _norms(sys)
    if norm_overrides:
        a_norms = norm_overrides.get("a", a_norms)
        b_norm = norm_overrides.get("b", b_norm)
        f_norms = norm_overrides.get("f", f_norms)
    if convention == "lumped":
        a_sum = norm_overrides.get("a_sum") if norm_overrides else None
        if a_sum is None:
            a_sum = float(np.max(np.sum(np.abs(sum(sys.A)), axis=1)))
        r = min(sys.delays)
        f_sum = sum(f_norms)
        table = lattice.majorant_table([a_sum], b_norm, [f_sum], [r],
                                       level_cap, sys.T)
    elif convention == "per-delay":
        table = lattice.majorant_table(a_norms, b_norm, f_norms, sys.delays,
                                       level_cap, sys.T)
    else:
        raise CertificateError(f"unknown norm convention {convention!r}")
    return mlf.majorant_bound(sys.alpha, sys.alpha, sys.T, table, sys.mu, tol)


def kernel_integral_bound(sys: DelaySystem, table=None, t_samples: int = 24,
                          nodes: int = 96, tol: float = mlf.DEFAULT_TOL) -> float:
    """Sampled sup over t of int_0^t ||K(t,s)|| dmu(s) (matrix norms).

    This is the constant that actually controls the Picard operator on
    C[0, T]; it is usually far smaller than mu_span * xnorm.  Panels are
    geometrically refined toward their right ends, where lattice terms
    switch on with integrable power spikes in the norm.
    """
    if table is None:
        table = build_table(sys, DEFAULT_LEVEL_CAP)
    mu, alpha = sys.mu, sys.alpha
    ts = np.linspace(sys.T / t_samples, sys.T, t_samples)
    worst = 0.0
    for t in ts:
        t = float(t)
        breaks = sorted({t - lag for lag in table.lags if 0.0 < t - lag < t})
        pts = [0.0] + breaks + [t]
        total = 0.0
        mu_t = float(mu(t))
        for lo, hi in zip(pts[:-1], pts[1:]):
            final = abs(hi - t) <= 1e-13 * max(1.0, sys.T)
            if final:
                # integrate the norm with the kernel singularity removed
                U = (mu_t - float(mu(lo))) ** alpha
                us, ws = gauss_legendre(nodes, 0.0, U)
                zv = mlf.zero_lag_series(alpha, us, table, tol)
                norms = np.max(np.sum(np.abs(zv), axis=2), axis=1)
                total += float(np.sum(ws * norms)) / alpha
            else:
                tau_lo, tau_hi = float(mu(lo)), float(mu(hi))
                edges = [tau_lo]
                w = tau_hi - tau_lo
                for _ in range(18):
                    w *= 0.3
                    if w <= 1e-13 * max(1.0, abs(tau_hi)):
                        break
                    edges.append(tau_hi - w)
                edges.append(tau_hi)
                for e0, e1 in zip(edges[:-1], edges[1:]):
                    taus, ws = gauss_legendre(max(16, nodes // 3), e0, e1)
                    ss = np.asarray(mu.inv(taus), dtype=float)
                    kv, _ = mlf.kernel_many(alpha, alpha, t, ss, table, mu, tol)
                    norms = np.max(np.sum(np.abs(kv), axis=2), axis=1)
                    total += float(np.sum(ws * norms))
        worst = max(worst, total)
    return worst


def contraction_certificate(sys: DelaySystem, L: Optional[float] = None,
                            convention: str = "lumped",
                            level_cap: int = DEFAULT_LEVEL_CAP,
                            tol: float = mlf.DEFAULT_TOL,
                            norm_overrides: Optional[dict] = None,
                            with_integral: bool = True) -> Certificate:
    """Contraction bound rho = L * mu_span * xnorm and its consequences.

    `norm_overrides` may pin the scalar norms used by the majorant (keys
    "a", "b", "f", "a_sum").  All conventions are reported in `extras`;
    the certificate fields use `convention`.
    """
    if L is None:
        if sys.lipschitz is not None:
            L = sys.lipschitz
        elif sys.forcing.mode != "semilinear":
            L = 0.0
        else:
            L = estimate_lipschitz(sys, sys.phi0())
    if L < 0:
        raise CertificateError("Lipschitz constant must be nonnegative")

    mu_span = float(sys.mu(sys.T)) - float(sys.mu(0.0))
    xnorm = _majorant_xnorm(sys, convention, level_cap, tol, norm_overrides)
    rho = L * mu_span * xnorm
    unique = rho < 1.0
    eta = (mu_span * xnorm) / (1.0 - rho) if unique else None

    extras = {}
    other = "per-delay" if convention == "lumped" else "lumped"
    xnorm_other = _majorant_xnorm(sys, other, level_cap, tol, norm_overrides)
    extras[f"xnorm_{other.replace('-', '_')}"] = xnorm_other
    extras[f"rho_{other.replace('-', '_')}"] = L * mu_span * xnorm_other

    table = build_table(sys, level_cap)
    kv = mlf.kernel(sys.alpha, sys.alpha, sys.T, 0.0, table, sys.mu, tol)
    xnorm_matrix = float(np.max(np.sum(np.abs(kv.value), axis=1)))
    extras["xnorm_matrix"] = xnorm_matrix
    extras["rho_matrix"] = L * mu_span * xnorm_matrix

    if with_integral:
        integral = kernel_integral_bound(sys, table)
        extras["kernel_integral"] = integral
        rho_int = L * integral
        extras["rho_integral"] = rho_int
        if rho_int < 1.0:
            extras["eta_integral"] = integral / (1.0 - rho_int)

    return Certificate(L=L, mu_span=mu_span, xnorm=xnorm, rho=rho,
                       unique=unique, eta=eta, convention=convention,
                       extras=extras)


def _sup_norm_sampled(fn: VectorFn, T: float, coarse: int = 1000,
                      refine: int = 3) -> float:
    ts = np.linspace(0.0, T, coarse)
    vals = np.max(np.abs(fn.many(ts)), axis=1)
    k = int(np.argmax(vals))
    best = float(vals[k])
    lo = ts[max(0, k - 1)]
    hi = ts[min(coarse - 1, k + 1)]
    for _ in range(refine):
        ts = np.linspace(lo, hi, 64)
        vals = np.max(np.abs(fn.many(ts)), axis=1)
        k = int(np.argmax(vals))
        best = max(best, float(vals[k]))
        lo = ts[max(0, k - 1)]
        hi = ts[min(63, k + 1)]
    return best


@dataclass
class UHReport:
    epsilon: float
    z_sup: float
    D: float
    eta_used: float
    bound: float
    ok: bool
    eta_source: str
    iterations: tuple

    def report(self) -> str:
        return "\n".join([
            f"epsilon: {self.epsilon:.12g}",
            f"z_sup: {self.z_sup:.12g}",
            f"sup_distance: {self.D:.12g}",
            f"eta ({self.eta_source}): {self.eta_used:.12g}",
            f"bound eta*eps: {self.bound:.12g}",
            f"within_bound: {str(self.ok).lower()}",
        ])


def uh_experiment(sys: DelaySystem, cert: Certificate, epsilon: float,
                  z, grid=None, per_mu: float = 120.0,
                  picard_tol: float = 1e-10, max_iter: int = 60,
                  require_unique: bool = False) -> UHReport:
    """Solve the system and its z-perturbed variant; compare sup distance
    with eta * epsilon.

    `z` is a vector function of t with sup norm verified < epsilon by
    dense sampling.  When the headline certificate fails (rho >= 1) the
    sharper integral-based eta is used unless require_unique is set, in
    which case a CertificateError is raised.
    """
    if sys.forcing.mode != "semilinear":
        raise SolverError("the stability experiment needs a semilinear system")
    z_fn = z if isinstance(z, VectorFn) else VectorFn(z, sys.n)
    z_sup = _sup_norm_sampled(z_fn, sys.T)
    if z_sup >= epsilon:
        raise CertificateError(
            f"perturbation sup norm {z_sup:.6g} is not below epsilon {epsilon:.6g}")

    if cert.unique:
        eta_used, eta_source = cert.eta, "headline"
    elif not require_unique and "eta_integral" in cert.extras:
        eta_used, eta_source = cert.extras["eta_integral"], "integral"
    else:
        raise CertificateError(
            "certificate does not establish uniqueness (rho >= 1); no eta available")

    base_forcing = sys.forcing

    def perturbed(ts, w=None):
        return base_forcing.many(ts, w) + z_fn.many(ts)

    from dataclasses import replace
    sys_pert = replace(sys, forcing=ForcingLike(perturbed, sys.n))

    w_base = solve_semilinear(sys, grid=grid, per_mu=per_mu, tol=picard_tol,
                              max_iter=max_iter)
    w_pert = solve_semilinear(sys_pert, grid=w_base.grid, tol=picard_tol,
                              max_iter=max_iter)
    mask = w_base.grid >= 0.0
    D = float(np.max(np.abs(w_base.values[mask] - w_pert.values[mask])))
    bound = eta_used * epsilon
    return UHReport(epsilon=epsilon, z_sup=z_sup, D=D, eta_used=eta_used,
                    bound=bound, ok=D <= bound, eta_source=eta_source,
                    iterations=(w_base.metadata["iterations"],
                                w_pert.metadata["iterations"]))


class ForcingLike:
    """Semilinear forcing wrapper around a vectorised callable."""

    mode = "semilinear"

    def __init__(self, many_fn, n):
        self._many = many_fn
        self.n = n

    def many(self, ts, w=None):
        return self._many(np.asarray(ts, dtype=float),
                          None if w is None else np.asarray(w, dtype=float))

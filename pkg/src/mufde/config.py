"""Problem configuration files (TOML) and their validation.

Schema (all matrices are flat row-major arrays of n*n numbers):

    [system]
    n = 2
    alpha = 0.8
    delays = [0.3, 0.2]
    T = 0.6

    [matrices]
    A = [[...], [...]]          # one flat matrix per delay
    B = [...]
    F = [[...], [...]]
    # optional alternate delay matrices, chosen by `f_variant`
    F_literal = [[...], [...]]
    f_variant = "norm"          # "norm" (default) or "literal"

    [mu]
    preset = "sqrt_odd_extended"   # or expr = "...", deriv = "..." (optional)
    # power preset takes `p`

    [history]
    phi = ["t^3", "2*t+1"]
    phi_deriv = ["3*t^2", "2"]  # optional

    [forcing]
    mode = "semilinear"         # "none" | "linear" | "semilinear"
    expr = ["...", "..."]       # may use w1..wn only in semilinear mode
    lipschitz = 0.25            # optional

    [certificate]               # optional scalar-norm overrides
    a = [1.0, 1.0]
    a_sum = 2.0
    b = 0.33
    f = [1.0, 0.0]

    [tolerances]                # optional, all have defaults
    solver_grid_per_mu = 160
    quad_nodes = 64
    picard_tol = 1e-10
    picard_max_iter = 40
    series_tol = 1e-10
    level_cap = 200
    oracle_steps_per_mu = 1024
    oracle_corrector_sweeps = 2
"""

from __future__ import annotations

import sys as _sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

if _sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from . import expr as _expr
from .mu_calculus import MuMap, mu_preset, MuCalculusError
from .oracle import OracleConfig
from .solver import DelaySystem, ForcingFn, VectorFn, SolverError

__all__ = ["ConfigError", "SolveOptions", "ProblemConfig", "load_config"]


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.field_path = path


@dataclass
class SolveOptions:
    solver_grid_per_mu: float = 160.0
    quad_nodes: int = 64
    picard_tol: float = 1e-10
    picard_max_iter: int = 40
    series_tol: float = 1e-10
    level_cap: int = 200
    oracle_steps_per_mu: int = 1024
    oracle_corrector_sweeps: int = 2

    def oracle_config(self, steps: Optional[int] = None) -> OracleConfig:
        return OracleConfig(steps_per_mu=steps or self.oracle_steps_per_mu,
                            corrector_sweeps=self.oracle_corrector_sweeps)


@dataclass
class ProblemConfig:
    system: DelaySystem
    options: SolveOptions
    norm_overrides: dict = field(default_factory=dict)
    f_variant: str = "norm"
    raw: dict = field(default_factory=dict)


def _need(table: dict, key: str, path: str):
    if key not in table:
        raise ConfigError(f"{path}.{key}", "missing required field")
    return table[key]


def _number(x, path: str) -> float:
    if not isinstance(x, (int, float)) or isinstance(x, bool):
        raise ConfigError(path, f"expected a number, got {type(x).__name__}")
    return float(x)


def _matrix(x, n: int, path: str) -> np.ndarray:
    if not isinstance(x, list) or len(x) != n * n:
        got = len(x) if isinstance(x, list) else type(x).__name__
        raise ConfigError(path, f"expected a flat row-major array of {n*n} numbers, got {got}")
    return np.array([_number(v, f"{path}[{i}]") for i, v in enumerate(x)],
                    dtype=float).reshape(n, n)


def _expr_list(x, n: int, path: str, allowed) -> list:
    if not isinstance(x, list) or len(x) != n:
        raise ConfigError(path, f"expected {n} expression strings")
    out = []
    for i, src in enumerate(x):
        if not isinstance(src, str):
            raise ConfigError(f"{path}[{i}]", "expected an expression string")
        try:
            e = _expr.parse(src)
            _expr.validate_vars(e, allowed)
        except _expr.ExprError as exc:
            raise ConfigError(f"{path}[{i}]", str(exc)) from None
        out.append(e)
    return out


def _build_mu(tbl: dict, t_lo: float, t_hi: float) -> MuMap:
    if "preset" in tbl:
        name = tbl["preset"]
        try:
            return mu_preset(name, t_lo, t_hi, p=float(tbl.get("p", 2.0)))
        except MuCalculusError as exc:
            raise ConfigError("mu.preset", str(exc)) from None
    if "expr" not in tbl:
        raise ConfigError("mu", "need either `preset` or `expr`")
    e = _expr_list([tbl["expr"]], 1, "mu.expr", {"t"})[0]

    def fn(t):
        return _expr.evaluate(e, {"t": np.asarray(t, dtype=float)})

    if "deriv" in tbl:
        de = _expr_list([tbl["deriv"]], 1, "mu.deriv", {"t"})[0]

        def deriv(t):
            return _expr.evaluate(de, {"t": np.asarray(t, dtype=float)})
    else:
        h = 1e-7 * max(1.0, t_hi - t_lo)

        def deriv(t):
            return (fn(np.asarray(t) + 0.5 * h) - fn(np.asarray(t) - 0.5 * h)) / h

    return MuMap(fn, deriv, t_lo, t_hi, name="expr")


def load_config(path: str, f_variant: Optional[str] = None) -> ProblemConfig:
    """Parse and validate a problem file; returns the system and options."""
    with open(path, "rb") as fh:
        try:
            raw = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError("<file>", f"not valid TOML: {exc}") from None

    sys_tbl = _need(raw, "system", "")
    n = _need(sys_tbl, "n", "system")
    if not isinstance(n, int) or n < 1:
        raise ConfigError("system.n", "dimension must be a positive integer")
    alpha = _number(_need(sys_tbl, "alpha", "system"), "system.alpha")
    if not (0.0 < alpha < 1.0):
        raise ConfigError("system.alpha", f"order must lie in (0, 1), got {alpha}")
    delays_raw = _need(sys_tbl, "delays", "system")
    if not isinstance(delays_raw, list) or not delays_raw:
        raise ConfigError("system.delays", "expected a nonempty array of positive delays")
    delays = [_number(v, f"system.delays[{i}]") for i, v in enumerate(delays_raw)]
    if any(r <= 0 for r in delays):
        raise ConfigError("system.delays", "delays must be positive")
    T = _number(_need(sys_tbl, "T", "system"), "system.T")
    if T <= 0:
        raise ConfigError("system.T", "horizon must be positive")

    mat_tbl = _need(raw, "matrices", "")
    d = len(delays)
    A_raw = _need(mat_tbl, "A", "matrices")
    F_key = "F"
    variant = f_variant or mat_tbl.get("f_variant", "norm")
    if variant not in ("norm", "literal"):
        raise ConfigError("matrices.f_variant", f"expected 'norm' or 'literal', got {variant!r}")
    if variant == "literal" and "F_literal" in mat_tbl:
        F_key = "F_literal"
    F_raw = _need(mat_tbl, F_key, "matrices")
    if not isinstance(A_raw, list) or len(A_raw) != d:
        raise ConfigError("matrices.A", f"expected {d} matrices (one per delay)")
    if not isinstance(F_raw, list) or len(F_raw) != d:
        raise ConfigError(f"matrices.{F_key}", f"expected {d} matrices (one per delay)")
    A = [_matrix(m, n, f"matrices.A[{j}]") for j, m in enumerate(A_raw)]
    F = [_matrix(m, n, f"matrices.{F_key}[{j}]") for j, m in enumerate(F_raw)]
    B = _matrix(_need(mat_tbl, "B", "matrices"), n, "matrices.B")

    r = max(delays)
    mu = _build_mu(_need(raw, "mu", ""), -r - 1e-9, T + 1e-9)
    try:
        mu.check()
    except MuCalculusError as exc:
        raise ConfigError("mu", str(exc)) from None

    hist_tbl = _need(raw, "history", "")
    phi = VectorFn(_expr_list(_need(hist_tbl, "phi", "history"), n, "history.phi",
                              {"t"}), n)
    phi_deriv = None
    if "phi_deriv" in hist_tbl:
        phi_deriv = VectorFn(_expr_list(hist_tbl["phi_deriv"], n,
                                        "history.phi_deriv", {"t"}), n)

    forc_tbl = raw.get("forcing", {"mode": "none"})
    mode = forc_tbl.get("mode", "none")
    if mode not in ("none", "linear", "semilinear"):
        raise ConfigError("forcing.mode", f"expected none|linear|semilinear, got {mode!r}")
    lipschitz = None
    if "lipschitz" in forc_tbl:
        lipschitz = _number(forc_tbl["lipschitz"], "forcing.lipschitz")
        if lipschitz < 0:
            raise ConfigError("forcing.lipschitz", "must be nonnegative")
    if mode == "none":
        forcing = ForcingFn("none", None, n)
    else:
        allowed = {"t"} | ({f"w{i+1}" for i in range(n)} if mode == "semilinear" else set())
        exprs = _expr_list(_need(forc_tbl, "expr", "forcing"), n, "forcing.expr", allowed)
        forcing = ForcingFn(mode, exprs, n)

    try:
        system = DelaySystem(n=n, alpha=alpha, delays=tuple(delays), A=A, B=B,
                             F=F, mu=mu, phi=phi, forcing=forcing, T=T,
                             phi_deriv=phi_deriv, lipschitz=lipschitz)
    except SolverError as exc:
        raise ConfigError("system", str(exc)) from None

    opts = SolveOptions()
    tol_tbl = raw.get("tolerances", {})
    for key in vars(opts):
        if key in tol_tbl:
            val = tol_tbl[key]
            cur = getattr(opts, key)
            setattr(opts, key, type(cur)(val))

    overrides = {}
    cert_tbl = raw.get("certificate", {})
    if "a" in cert_tbl:
        overrides["a"] = [_number(v, f"certificate.a[{i}]")
                          for i, v in enumerate(cert_tbl["a"])]
    if "f" in cert_tbl:
        overrides["f"] = [_number(v, f"certificate.f[{i}]")
                          for i, v in enumerate(cert_tbl["f"])]
    if "b" in cert_tbl:
        overrides["b"] = _number(cert_tbl["b"], "certificate.b")
    if "a_sum" in cert_tbl:
        overrides["a_sum"] = _number(cert_tbl["a_sum"], "certificate.a_sum")

    return ProblemConfig(system=system, options=opts, norm_overrides=overrides,
                         f_variant=variant, raw=raw)

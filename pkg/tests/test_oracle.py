import math

import numpy as np
import pytest
from scipy.special import gammaln

from conftest import rel_sup
from mufde import oracle as orc
from mufde.mu_calculus import mu_preset
from mufde.oracle import (GridMismatchError, OracleConfig, OracleError,
                          oracle_grid, residual, solve_reference)
from mufde.solver import (DelaySystem, ForcingFn, Trajectory, VectorFn,
                          solve_linear)

IDENTITY = mu_preset("identity", -2, 3)


def plain_scalar(**kw):
    base = dict(n=1, alpha=0.8, delays=(0.3,), A=[np.zeros((1, 1))],
                B=np.array([[0.5]]), F=[np.zeros((1, 1))], mu=IDENTITY,
                phi=VectorFn(["1"], 1), forcing=ForcingFn("none", None, 1),
                T=1.0, phi_deriv=VectorFn(["0"], 1))
    base.update(kw)
    return DelaySystem(**base)


def test_config_validation():
    with pytest.raises(OracleError):
        OracleConfig(steps_per_mu=4)
    with pytest.raises(OracleError):
        OracleConfig(corrector_sweeps=0)
    with pytest.raises(OracleError):
        OracleConfig(interp_order=2)


def test_grid_contains_lattice_points(ex3_cfg):
    grid = oracle_grid(ex3_cfg.system, OracleConfig(steps_per_mu=64))
    for point in (0.0, 0.2, 0.3, 0.4, 0.5, 0.6, -0.3, -0.2):
        assert np.min(np.abs(grid - point)) < 1e-12


def test_zero_data_marches_to_zero():
    sys_ = plain_scalar(phi=VectorFn(["0"], 1))
    ref = solve_reference(sys_, OracleConfig(steps_per_mu=128))
    assert np.max(np.abs(ref.values)) == 0.0


def test_non_delayed_scalar_matches_ml_series():
    sys_ = plain_scalar()
    ref = solve_reference(sys_, OracleConfig(steps_per_mu=2048))

    def ml1(alpha, z, terms=300):
        ks = np.arange(terms)
        return float(np.sum(np.exp(ks * np.log(z) - gammaln(alpha * ks + 1.0))))

    assert ref.values[-1, 0] == pytest.approx(ml1(0.8, 0.5), abs=1e-3)


def test_self_convergence_is_first_order():
    sys_ = plain_scalar()
    end = {}
    for N in (256, 512, 1024, 2048):
        end[N] = solve_reference(sys_, OracleConfig(steps_per_mu=N)).values[-1, 0]
    extrap = 2 * end[2048] - end[1024]
    errs = {N: abs(end[N] - extrap) for N in (256, 512, 1024)}
    assert errs[256] / errs[512] >= 1.7
    assert errs[512] / errs[1024] >= 1.7


def test_own_residual_is_tiny(scalar_cfg):
    cfg = OracleConfig(steps_per_mu=256)
    own = solve_reference(scalar_cfg.system, cfg)
    assert residual(scalar_cfg.system, own, cfg) <= 1e-8


def test_residual_of_closed_form_is_small(scalar_cfg):
    cfg = OracleConfig(steps_per_mu=256)
    grid = oracle_grid(scalar_cfg.system, cfg)
    traj = solve_linear(scalar_cfg.system, grid=grid, nodes=48)
    res = residual(scalar_cfg.system, traj, cfg)
    assert res <= 5e-3 * (1.0 + traj.sup_norm())


def test_residual_detects_a_perturbation(scalar_cfg):
    cfg = OracleConfig(steps_per_mu=256)
    own = solve_reference(scalar_cfg.system, cfg)
    bumped = own.values + np.where(own.grid[:, None] > 0, 0.1, 0.0)
    pert = Trajectory(own.grid, bumped, "perturbed", {})
    assert residual(scalar_cfg.system, pert, cfg) >= 0.05


def test_residual_requires_matching_grid(scalar_cfg):
    cfg = OracleConfig(steps_per_mu=256)
    own = solve_reference(scalar_cfg.system, cfg)
    with pytest.raises(GridMismatchError):
        residual(scalar_cfg.system, own, OracleConfig(steps_per_mu=128))


def test_delay_shorter_than_step_is_rejected():
    sys_ = plain_scalar(delays=(1e-4,), F=[np.array([[0.4]])])
    with pytest.raises(OracleError):
        solve_reference(sys_, OracleConfig(steps_per_mu=8))


def test_neutral_delay_system_agrees_with_closed_form(scalar_cfg):
    # cross-validation at a second, coarser resolution
    ref = solve_reference(scalar_cfg.system, OracleConfig(steps_per_mu=1024))
    traj = solve_linear(scalar_cfg.system, per_mu=100, nodes=48)
    mask = traj.grid >= 0
    assert rel_sup(traj.values[mask], ref.at(traj.grid[mask])) <= 2e-3


def test_semilinear_march(ex3_cfg):
    ref = solve_reference(ex3_cfg.system, OracleConfig(steps_per_mu=256))
    assert ref.values.shape[1] == 2
    assert np.isfinite(ref.values).all()
    # history reproduced exactly
    mask = ref.grid <= 0
    assert np.array_equal(ref.values[mask], ex3_cfg.system.phi.many(ref.grid[mask]))

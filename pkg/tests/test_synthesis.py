import logging

import numpy as np
import pytest
from pytest import approx, raises
from scipy.linalg import solve_continuous_are

from stealthlqg.coeffs import Constant, TimeGrid
from stealthlqg.model import preset
from stealthlqg.synthesis import (
    SolverDivergence,
    adaptive_value,
    existence_bound,
    model_coefficients,
    solve_adaptive_rho,
    solve_agent,
    solve_all,
    solve_det_attack,
    solve_filter,
)


@pytest.fixture(scope="module")
def stationary2d():
    """Constant-coefficient 2D model on a long horizon, so the Riccati flows settle."""
    m = preset("2d-tracking").model
    return m.replace(Q=Constant(5 * np.eye(2)), r=Constant(np.zeros((2, 1))),
                     A=Constant([[0.0, 1.0], [-1.0, -0.5]]), horizon=TimeGrid(8.0, 800))


def test_filter_reaches_algebraic_riccati(stationary2d):
    m = stationary2d
    mc = model_coefficients(m)
    c = mc(0.0)
    R_inf = solve_continuous_are(c.A.T, c.H.T, mc.VV, mc.Sw)
    np.testing.assert_allclose(solve_filter(m).R[-1], R_inf, rtol=1e-8, atol=1e-10)


def test_agent_reaches_algebraic_riccati(stationary2d):
    m = stationary2d
    c = model_coefficients(m)(0.0)
    F_inf = solve_continuous_are(c.A, c.B, c.Q, c.S)
    ag = solve_agent(m)
    np.testing.assert_allclose(ag.F[0], F_inf, rtol=1e-8)
    np.testing.assert_allclose(ag.f_vec[0], 0.0, atol=1e-12)  # no drift, no reference


def test_shared_coefficient_cache():
    m = preset("1d-mean-revert", n_steps=10).model
    mc = model_coefficients(m)
    assert model_coefficients(m) is mc
    assert mc(0.1) is mc(0.1)
    assert mc(0.1).K == approx(1.0)


@pytest.mark.parametrize("fixture", ["small1d", "solved2d"])
def test_symmetry_and_boundaries(fixture, request):
    s = request.getfixturevalue(fixture)
    R, F, M = s.filt.R.values, s.agent.F.values, s.det.M.values
    Fp = s.adaptive.rho_gains.F_phi.values
    Ft = s.tau_gains.F_tau.values
    for X in (R, F, M, Fp, Ft):
        np.testing.assert_array_equal(X, X.swapaxes(1, 2))
    np.testing.assert_array_equal(R[0], s.model.R0)
    for X in (F[-1], s.agent.f_vec[-1], M[-1], s.det.g[-1], Fp[-1],
              s.adaptive.rho_gains.f_phi[-1], s.adaptive.rho_gains.c_phi[-1]):
        assert np.all(X == 0.0)
    assert np.all(Ft[0] == 0.0) and np.all(s.tau_gains.f_tau[0] == 0.0)


def test_filter_covariance_is_psd(solved2d):
    assert min(np.linalg.eigvalsh(R).min() for R in solved2d.filt.R.values) >= -1e-12
    Lam = solved2d.filt.Lambda.values
    assert min(np.linalg.eigvalsh(L).min() for L in Lam) >= -1e-12


def test_det_blocks_are_views(small1d):
    det = small1d.det
    np.testing.assert_array_equal(det.Fa.values, det.M.values[:, :1, 1:])
    np.testing.assert_array_equal(det.Gc.values, det.Fa.values.swapaxes(1, 2))
    np.testing.assert_array_equal(det.g_tau.values, det.g.values[:, 1:])


def test_zero_lambda_gains_vanish(solved1d_zero_lam):
    s = solved1d_zero_lam
    assert np.all(s.det.M.values == 0) and np.all(s.det.g.values == 0)
    assert s.det.warnings == ()


def test_bound_decreases_with_lambda():
    bounds = []
    for lam in (0.0, 0.1, 0.5, 2.0):
        m = preset("1d-mean-revert", lam=lam, n_steps=100).model
        bounds.append(existence_bound(m, solve_filter(m), solve_agent(m)))
    assert np.all(np.diff(bounds) < 0)


def test_lambda_ladder_escape_times():
    # larger lambda: the backward attack system escapes sooner, i.e. at a later t
    logging.disable(logging.WARNING)
    try:
        hits = []
        for lam in (1.0, 2.0, 4.0, 8.0):
            m = preset("1d-mean-revert", lam=lam, n_steps=400).model
            with raises(SolverDivergence) as info:
                solve_det_attack(m, solve_filter(m), solve_agent(m))
            assert info.value.system == "det"
            assert info.value.bound < m.T
            hits.append(info.value.t)
    finally:
        logging.disable(logging.NOTSET)
    assert np.all(np.diff(hits) > 0)
    assert 0 < hits[0] < hits[-1] < 0.5


def test_escape_time_is_grid_independent():
    logging.disable(logging.WARNING)
    try:
        ts = []
        for n in (250, 1000):
            m = preset("1d-mean-revert", lam=2.0, n_steps=n).model
            with raises(SolverDivergence) as info:
                solve_det_attack(m, solve_filter(m), solve_agent(m))
            ts.append(info.value.t)
    finally:
        logging.disable(logging.NOTSET)
    assert ts[0] == approx(ts[1], abs=2 * 0.5 / 250)


def test_warning_when_horizon_exceeds_bound(small1d):
    assert small1d.det.bound < small1d.model.T
    assert "existence bound" in small1d.det.warnings[0]


def test_value_needs_completed_gains(small1d):
    s = small1d
    bare = solve_adaptive_rho(s.model, s.filt, s.agent)
    assert not bare.completed
    with raises(ValueError):
        adaptive_value(bare, s.tau_gains.Phi0)


def test_reflected_loop_consistent_1d():
    gs = solve_all(preset("1d-mean-revert", lam=0.3, n_steps=200).model, adaptive=True)
    assert gs.tau.loop_gap <= 1e-8
    np.testing.assert_allclose(gs.tau.f_phi.values, gs.rho.f_phi.values, atol=1e-8)


def test_reflected_loop_converges_2d():
    # the 2D loop has fast modes near the reflected boundary; the gap shrinks with the step
    gaps = [solve_all(preset("2d-tracking", lam=0.3, n_steps=n).model, adaptive=True).tau.loop_gap
            for n in (200, 400)]
    assert gaps[1] < gaps[0] / 3

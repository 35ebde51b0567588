import numpy as np
import pytest
from pytest import approx, raises

from stealthlqg.attacks import AdaptiveFeedback, GaussianWhite, SinusoidAttack, ZeroAttack, pinv_path
from stealthlqg.coeffs import GridFunction
from stealthlqg.detect import DetectionReport
from stealthlqg.evaluate import (
    SWEEP_HEADER,
    D_terms,
    exact_D,
    exact_objective,
    exact_report,
    mc_objective,
    solve_moments,
    solve_sigma,
    write_sweep_csv,
)
from stealthlqg.io import read_csv
from stealthlqg.synthesis import AdaptiveRhoGains, adaptive_objective, model_coefficients


def test_zero_attack_is_pure_degradation(small1d):
    s = small1d
    r = exact_objective(s.model, s.filt, s.agent, ZeroAttack())
    assert r.S == 0.0 and r.rho_energy == 0.0
    assert r.objective == approx(-s.model.lam * r.D)
    assert r.D > 0


def test_D_is_sum_of_terms(small1d):
    s = small1d
    terms = D_terms(s.model, s.agent, solve_moments(s.model, s.filt, s.agent, s.path))
    assert set(terms) == {"trace_Q", "mean_Q", "trace_K", "mean_K"}
    assert exact_D(s.model, s.filt, s.agent, s.path) == approx(sum(terms.values()), rel=1e-14)


@pytest.mark.parametrize("fixture", ["small1d", "solved2d"])
def test_sigma_is_psd(fixture, request):
    s = request.getfixturevalue(fixture)
    Sig = solve_sigma(s.model, s.filt, s.agent).values
    np.testing.assert_array_equal(Sig, Sig.swapaxes(1, 2))
    assert min(np.linalg.eigvalsh(S).min() for S in Sig) >= -1e-12


def test_exact_report_dispatch(small1d):
    s = small1d
    assert exact_report(s.model, s.filt, s.agent, s.path).method == "exact-quadrature"
    assert exact_report(s.model, s.filt, s.agent, s.adaptive).method == "exact-moments"
    sin = exact_report(s.model, s.filt, s.agent, SinusoidAttack())
    assert sin.rho_energy > 0
    with raises(TypeError):
        exact_report(s.model, s.filt, s.agent, GaussianWhite())


def test_lambda_override(small1d):
    s = small1d
    a = exact_objective(s.model, s.filt, s.agent, s.path)
    b = exact_objective(s.model, s.filt, s.agent, s.path, lam=2.0)
    assert b.lam == 2.0 and b.D == a.D
    assert b.objective == approx(b.S - 2.0 * b.D + b.rho_energy)


@pytest.mark.parametrize("fixture,tol", [("solved1d", 1e-6), ("solved2d", 1e-5)])
def test_adaptive_moments_match_value_function(fixture, tol, request):
    s = request.getfixturevalue(fixture)
    rep = exact_report(s.model, s.filt, s.agent, s.adaptive)
    val = adaptive_objective(s.adaptive.rho_gains, s.tau_gains.Phi0)
    assert rep.objective == approx(val, abs=tol)


def test_adaptive_evaluator_reproduces_deterministic_path(solved1d):
    # F^phi = 0 and f^phi = (-P rho, 0, 0) make the feedback law open-loop with rho = path rho
    s = solved1d
    g, d = s.model.grid, s.model.d
    mc = model_coefficients(s.model)
    f_phi = np.zeros((g.n_nodes, 3 * d))
    for k, t in enumerate(g.times):
        f_phi[k, :d] = -mc(t).P @ s.path.rho[k]
    gains = AdaptiveRhoGains(
        F_phi=GridFunction(g, np.zeros((g.n_nodes, 3 * d, 3 * d))), trace_constant=0.0,
        f_phi=GridFunction(g, f_phi), c_phi=GridFunction(g, np.zeros(g.n_nodes)))
    strat = AdaptiveFeedback(gains, s.path.tau, pinv_path(s.model))
    np.testing.assert_allclose(strat.feedback(7, np.ones(d), np.ones(d), np.ones(d)), s.path.rho[7],
                               rtol=1e-14)
    a = exact_report(s.model, s.filt, s.agent, strat)
    b = exact_objective(s.model, s.filt, s.agent, s.path)
    for name in ("D", "S", "rho_energy", "objective"):
        assert getattr(a, name) == approx(getattr(b, name), rel=1e-6, abs=1e-9), name


def test_mc_objective_fields(small1d):
    s = small1d
    rep = mc_objective(s.model, s.filt, s.agent, s.path, 200, 3)
    assert rep.method == "monte-carlo" and rep.n_paths == 200 and rep.base_seed == 3
    assert rep.D_se > 0 and rep.S_se > 0
    assert rep.objective == approx(rep.S - rep.lam * rep.D + rep.rho_energy, abs=1e-12)
    assert "S_quadratic" in rep.extra
    exact = exact_objective(s.model, s.filt, s.agent, s.path)
    assert abs(rep.D - exact.D) < 4 * rep.D_se
    # rho is deterministic, so the MC energy is the left-point rule of the same integrand
    assert rep.rho_energy == approx(exact.rho_energy, rel=0.05)


def test_mc_with_detection(small1d):
    s = small1d
    rep, det = mc_objective(s.model, s.filt, s.agent, ZeroAttack(), 100, 1, with_detection=True)
    assert isinstance(det, DetectionReport)
    assert det.log_likelihood == approx(0.0, abs=1e-12)
    assert len(det.chi2_windows) == s.model.grid.n_steps // 50


def test_mc_is_reproducible(small1d):
    s = small1d
    a = mc_objective(s.model, s.filt, s.agent, GaussianWhite(), 60, 9)
    b = mc_objective(s.model, s.filt, s.agent, GaussianWhite(), 60, 9)
    assert a.to_dict() == b.to_dict()


def test_sweep_csv(small1d, tmp_path):
    s = small1d
    reps = [exact_objective(s.model, s.filt, s.agent, s.path, lam=l) for l in (0.1, 0.2)]
    f = write_sweep_csv(tmp_path / "sweep.csv", reps, "cafe")
    header, data = read_csv(f)
    assert header == SWEEP_HEADER
    assert data.shape == (2, len(SWEEP_HEADER))
    np.testing.assert_array_equal(data[:, 0], [0.1, 0.2])
    assert np.isnan(data[:, 5]).all()  # exact reports carry no standard error

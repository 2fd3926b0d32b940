"""
Tests for the consistent misclassification-rate estimator
"""

import numpy as np
import pandas as pd
import pytest
from scipy.stats import norm

from conftest import random_spd
from core_stats import pooled_covariance, sym_eig
from errors import ConfigError, DegenerateD, DegeneratePrime, DegenerateTrace
from precision import nl_precision
from risk import (
    RiskSettings,
    consistent_risk,
    d_consistent,
    e_hat,
    e_hat_prime,
    e_quantities,
    epsilon_hat,
    normal_cdf,
    resolvent_stats,
    risk_point,
    sweep_risk,
    theta_G_hat,
    write_risk_curve,
)
from synth import CovModel, make_population, sample_gaussian, trial_rng

DERIVED = RiskSettings(formulas='derived')


def test_normal_cdf_reference_values():
    assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)
    assert normal_cdf(0.0) == 0.5
    assert normal_cdf(-40.0) > 0.0
    np.testing.assert_allclose(normal_cdf(np.array([-1.0, 1.0])), norm.cdf([-1.0, 1.0]), rtol=1e-14)


def test_identity_fixture_statistics(identity_case):
    stats = resolvent_stats(identity_case['eig'], identity_case['m'], 1.0, 4)
    assert stats.t1 == pytest.approx(0.25)
    assert stats.t2 == pytest.approx(0.125)
    assert stats.q1 == pytest.approx(0.5)
    assert stats.q2 == pytest.approx(0.25)
    assert stats.q3 == pytest.approx(0.125)


def test_identity_fixture_estimates(identity_case):
    stats = resolvent_stats(identity_case['eig'], identity_case['m'], 1.0, 4)
    eq = e_quantities(stats)
    assert eq.e_hat == pytest.approx(1 / 3)
    assert eq.e_hat_prime == pytest.approx(2 / 9)
    assert eq.x_hat == pytest.approx(0.75)
    assert eq.x_hat_prime == pytest.approx(-1 / 8)
    assert theta_G_hat(stats, eq) == pytest.approx(1 / 9)
    assert d_consistent(stats, eq, 'derived') == pytest.approx(8 / 81)
    assert d_consistent(stats, eq, 'standard') == pytest.approx(8 / 81)


def test_identity_fixture_error(identity_case):
    c = identity_case
    r = consistent_risk(c['eig'], c['m'], c['gamma'], c['n0'], c['n1'])
    # G(m0) = q1 / 2, bias theta / n0 = (1/9) / 3
    expected = norm.cdf((-0.25 + 1.0 / 27.0) / np.sqrt(8.0 / 81.0))
    assert r.eps0_hat == pytest.approx(expected, rel=1e-10)
    assert r.eps0_hat == pytest.approx(0.249, abs=1e-3)
    assert r.eps1_hat == pytest.approx(r.eps0_hat, rel=1e-12)
    assert r.eps_hat == pytest.approx(r.eps0_hat, rel=1e-12)


def test_identity_fixture_derived_error(identity_case):
    c = identity_case
    r = consistent_risk(c['eig'], c['m'], c['gamma'], c['n0'], c['n1'], DERIVED)
    # G(m0) = q1 / 2, bias n_tilde * theta / n0 = 4 * (1/9) / 3
    expected = norm.cdf((-0.25 + 4.0 / 27.0) / np.sqrt(8.0 / 81.0))
    assert r.eps0_hat == pytest.approx(expected, rel=1e-10)
    assert r.theta_G_hat == pytest.approx(1 / 9)
    assert r.D_c == pytest.approx(8 / 81)


def test_sq2_numerator_variant_on_identity(identity_case):
    stats = resolvent_stats(identity_case['eig'], identity_case['m'], 1.0, 4)
    eq = e_quantities(stats, RiskSettings(e_numerator='theorem'))
    assert eq.e_hat == pytest.approx((1 / 8) / (3 / 4))
    # t3 = 1/16: (2 t3 (1 - t1) + t2^2) / (1 - t1)^2
    assert eq.e_hat_prime == pytest.approx((2 * (1 / 16) * 0.75 + (1 / 8) ** 2) / 0.75 ** 2)


@pytest.mark.parametrize('variant', ['appendix', 'theorem'])
def test_e_hat_prime_matches_finite_difference(rng, variant):
    settings = RiskSettings(e_numerator=variant)
    for _ in range(5):
        p = int(rng.integers(3, 12))
        eig = sym_eig(random_spd(rng, p, scale=rng.uniform(0.5, 3.0)))
        m = rng.standard_normal(p)
        n_tilde = 3 * p
        gamma = float(10 ** rng.uniform(-1, 1))
        # z = -gamma, so d/dz = -d/dgamma
        h = 1e-5 * max(1.0, gamma)
        up = e_hat(resolvent_stats(eig, m, gamma - h, n_tilde), settings)
        down = e_hat(resolvent_stats(eig, m, gamma + h, n_tilde), settings)
        fd = (up - down) / (2 * h)
        analytic = e_hat_prime(resolvent_stats(eig, m, gamma, n_tilde), settings)
        assert analytic == pytest.approx(fd, rel=1e-6)


def test_theta_equals_e_plus_z_e_prime(rng):
    eig = sym_eig(random_spd(rng, 9))
    stats = resolvent_stats(eig, rng.standard_normal(9), 0.6, 30)
    eq = e_quantities(stats)
    assert theta_G_hat(stats, eq) == pytest.approx(eq.e_hat + stats.z * eq.e_hat_prime, rel=1e-10)


@pytest.mark.parametrize('formulas', ['derived', 'standard'])
def test_d_consistent_eigen_route_matches_matrix_route(rng, formulas):
    p, gamma, n_tilde = 6, 1.3, 20
    S = random_spd(rng, p)
    m = rng.standard_normal(p)
    stats = resolvent_stats(sym_eig(S), m, gamma, n_tilde)
    eq = e_quantities(stats)

    Q = np.linalg.inv(S + gamma * np.eye(p))
    z = -gamma
    a = 1.0 + eq.e_hat
    q1 = m @ S @ Q @ Q @ m
    q2 = m @ S @ Q @ Q @ Q @ m
    q3 = m @ S @ Q @ Q @ Q @ Q @ m
    if formulas == 'standard':
        expected = z * z * a ** 4 * q3 + 2 * z * a * a * q2 + (a * a + 2 * z * eq.e_hat_prime * a) * q1
    else:
        M = a * S @ Q + z * eq.e_hat_prime * np.eye(p)
        expected = m @ S @ Q @ Q @ M @ M @ m
    assert d_consistent(stats, eq, formulas) == pytest.approx(expected, rel=1e-10)


def test_d_consistent_defaults_to_closed_form():
    eig = sym_eig(np.diag([3.0, 1.0, 0.5]))
    m = np.array([1.0, 2.0, -1.0])
    stats = resolvent_stats(eig, m, 0.7, 10)
    eq = e_quantities(stats)
    z, a = stats.z, 1.0 + eq.e_hat
    expected = (z * z * a ** 4 * stats.q3 + 2 * z * a * a * stats.q2
                + (a * a + 2 * z * eq.e_hat_prime * a) * stats.q1)
    assert d_consistent(stats, eq) == pytest.approx(expected, rel=1e-12)
    assert consistent_risk(eig, m, 0.7, 6, 6).D_c == pytest.approx(expected, rel=1e-12)


def test_derived_d_vanishes_on_isotropic_boundary():
    # S = I with p = n_tilde: (1+e) lambda/(lambda+gamma) + z e' = 0
    p = 4
    stats = resolvent_stats(sym_eig(np.eye(p)), np.ones(p), 0.5, p)
    eq = e_quantities(stats)
    assert abs(d_consistent(stats, eq, 'derived')) < 1e-12


def test_degenerate_trace():
    stats = resolvent_stats(sym_eig(np.eye(5)), np.ones(5), 1e-6, 2)
    with pytest.raises(DegenerateTrace):
        e_quantities(stats)


def test_degenerate_prime_on_zero_covariance():
    stats = resolvent_stats(sym_eig(np.zeros((3, 3))), np.ones(3), 1.0, 5)
    with pytest.raises(DegeneratePrime):
        theta_G_hat(stats, e_quantities(stats))


def test_degenerate_d_on_equal_means(rng):
    eig = sym_eig(random_spd(rng, 4))
    with pytest.raises(DegenerateD) as info:
        consistent_risk(eig, np.zeros(4), 1.0, 5, 5)
    assert info.value.value == 0.0


def test_risk_point_records_degenerate_instead_of_raising(rng):
    eig = sym_eig(random_spd(rng, 4))
    pt = risk_point(eig, np.zeros(4), 1.0, 5, 5, RiskSettings())
    assert pt.degenerate
    assert np.isnan(pt.eps_hat)
    assert 'D_c' in pt.reason


def test_imbalanced_classes_use_prior_threshold(rng):
    eig = sym_eig(random_spd(rng, 5))
    m = rng.standard_normal(5)
    stats = resolvent_stats(eig, m, 1.0, 18)
    eq = e_quantities(stats)
    r = epsilon_hat(stats, eq, (5, 15), (0.5 * stats.q1, -0.5 * stats.q1))
    assert r.eps_hat == pytest.approx(0.25 * r.eps0_hat + 0.75 * r.eps1_hat)


def test_sweep_threaded_matches_serial(rng):
    eig = sym_eig(random_spd(rng, 6))
    m = rng.standard_normal(6)
    gammas = [0.1, 1.0, 10.0, 100.0]
    serial = sweep_risk(eig, m, gammas, 8, 9)
    threaded = sweep_risk(eig, m, gammas, 8, 9, workers=3)
    assert serial == threaded


def test_write_risk_curve(tmp_path, rng):
    eig = sym_eig(random_spd(rng, 3))
    points = sweep_risk(eig, np.array([1.0, 0.0, -1.0]), [0.5, 5.0], 4, 4)
    points.append(risk_point(eig, np.zeros(3), 1.0, 4, 4, RiskSettings()))
    path = tmp_path / 'curve.csv'
    write_risk_curve(points, str(path), 'seed=1')
    assert path.read_text().startswith('# seed=1\n')
    frame = pd.read_csv(path, comment='#')
    assert list(frame.columns) == ['gamma', 'eps_hat', 'eps0_hat', 'eps1_hat', 'degenerate_flag']
    assert frame['degenerate_flag'].tolist() == [0, 0, 1]
    assert np.isnan(frame['eps_hat'].iloc[2])


def test_settings_validation():
    with pytest.raises(ConfigError):
        RiskSettings(e_numerator='display')
    with pytest.raises(ConfigError):
        RiskSettings(formulas='exact')


@pytest.mark.slow
def test_theta_tracks_population_trace():
    pop = make_population(CovModel('model1', 200), 5.0)
    gamma = 1.0
    estimates, truths = [], []
    for t in range(50):
        data = sample_gaussian(pop, 200, 200, trial_rng(11, t))
        stats = pooled_covariance(data)
        eig = sym_eig(stats.S)
        r = consistent_risk(eig, stats.m, gamma, stats.n0, stats.n1)
        estimates.append(r.theta_G_hat)
        truths.append(np.trace(pop.Sigma @ nl_precision(eig, gamma).matrix) / stats.n_tilde)
    assert np.mean(estimates) == pytest.approx(np.mean(truths), rel=0.05)


@pytest.mark.slow
def test_estimate_tracks_holdout_error_at_fixed_gamma():
    pop = make_population(CovModel('model1', 100), 5.0)
    gamma = 10.0
    estimates, errors = [], []
    for t in range(100):
        rng = trial_rng(5, t)
        data = sample_gaussian(pop, 100, 100, rng)
        test = sample_gaussian(pop, 1000, 1000, rng)
        stats = pooled_covariance(data)
        eig = sym_eig(stats.S)
        H = nl_precision(eig, gamma)
        w = H.apply(stats.m)
        scores = (test.features - ((stats.m0 + stats.m1) / 2)[:, None]).T @ w
        labels = np.where(scores > stats.tau_hat, 0, 1)
        errors.append(np.mean(labels != test.labels))
        estimates.append(consistent_risk(eig, stats.m, gamma, stats.n0, stats.n1, DERIVED).eps_hat)
    assert abs(np.mean(estimates) - np.mean(errors)) <= 0.02

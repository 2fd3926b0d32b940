"""
Tests for covariance models, mean calibration and the seeded samplers
"""

import numpy as np
import pytest

from core_stats import PopulationModel, mahalanobis
from errors import DomainError, EmptyClass, InsufficientSamples, NotPositiveDefinite
from synth import (
    CovModel,
    ScenarioConfig,
    build_cov,
    class_counts,
    make_population,
    sample_gaussian,
    splitmix64,
    trial_rng,
    trial_seed,
)


def test_model1_structure():
    Sigma = build_cov(CovModel('model1', 4))
    assert np.all(np.diag(Sigma) == 1.0)
    assert Sigma[0, 3] == 0.1 and Sigma[2, 1] == 0.1


def test_model2_structure():
    Sigma = build_cov(CovModel('2', 5))
    assert Sigma[0, 4] == pytest.approx(0.9 ** 4)
    assert Sigma[3, 1] == pytest.approx(0.81)


def test_model3_first_row_at_p12():
    Sigma = build_cov(CovModel('model3', 12), check_pd=False)
    expected = [1.0] + [0.9] * 4 + [0.3] * 5 + [0.0] * 2
    np.testing.assert_allclose(Sigma[0], expected)
    assert np.array_equal(Sigma, Sigma.T)


@pytest.mark.parametrize('p', [12, 50])
def test_model3_positive_definiteness_is_reported(p):
    model = CovModel('model3', p)
    smallest = np.linalg.eigvalsh(build_cov(model, check_pd=False)).min()
    if smallest <= 0:
        with pytest.raises(NotPositiveDefinite):
            build_cov(model)
    else:
        np.linalg.cholesky(build_cov(model))


def test_cov_model_validation():
    with pytest.raises(DomainError):
        CovModel('model4', 10)
    with pytest.raises(DomainError):
        CovModel('model1', 1)
    assert CovModel('Model_2', 3).kind == 'model2'


@pytest.mark.parametrize('kind', ['model1', 'model2'])
def test_population_calibration(kind):
    pop = make_population(CovModel(kind, 30), 0.5)
    assert mahalanobis(pop) == pytest.approx(0.5, rel=1e-10)
    np.testing.assert_allclose(pop.mu1, -pop.mu0)
    assert np.all(pop.mu0 > 0)


def test_splitmix64_reference_value():
    # first output of the reference generator seeded with 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_trial_streams_are_reproducible_and_distinct():
    a = trial_rng(42, 3).standard_normal(5)
    b = trial_rng(42, 3).standard_normal(5)
    c = trial_rng(42, 4).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert trial_seed(42, 3) != trial_seed(43, 3)
    assert 0 <= trial_seed(2 ** 70, 1) < 2 ** 64


def test_class_counts():
    assert class_counts(50, 0.5) == (25, 25)
    assert class_counts(51, 0.5) == (26, 25)
    assert class_counts(10, 0.3) == (3, 7)
    with pytest.raises(InsufficientSamples):
        class_counts(4, 0.2)
    with pytest.raises(DomainError):
        class_counts(10, 1.0)


def test_sample_gaussian_layout():
    pop = make_population(CovModel('model1', 6), 1.0)
    data = sample_gaussian(pop, 3, 5, trial_rng(0, 0))
    assert data.features.shape == (6, 8)
    assert data.labels.tolist() == [0, 0, 0, 1, 1, 1, 1, 1]
    with pytest.raises(EmptyClass):
        sample_gaussian(pop, 0, 5, trial_rng(0, 0))
    with pytest.raises(DomainError):
        sample_gaussian(pop, 2, 2, trial_rng(0, 0), route='svd')


def test_identity_sample_covariance():
    pop = PopulationModel(np.zeros(4), np.zeros(4), np.eye(4))
    data = sample_gaussian(pop, 50000, 50000, trial_rng(1, 0))
    cov = np.cov(data.features)
    assert np.max(np.abs(cov - np.eye(4))) <= 0.02


@pytest.mark.parametrize('route', ['cholesky', 'sqrt'])
def test_routes_match_population_moments(route):
    pop = make_population(CovModel('model2', 5), 2.0)
    n = 100000
    data = sample_gaussian(pop, n, 1, trial_rng(8, 0), route=route)
    X = data.class_block(0)
    np.testing.assert_allclose(X.mean(axis=1), pop.mu0, atol=0.02)
    np.testing.assert_allclose(np.cov(X), pop.Sigma, atol=0.02)


def test_scenario_config():
    scenario = ScenarioConfig(CovModel('model1', 20), n=50, nu_sq=0.5, trials=3, test_size=100)
    assert scenario.p == 20
    assert scenario.train_counts() == (25, 25)
    assert scenario.test_counts() == (50, 50)
    bigger = scenario.with_size(40, 80)
    assert (bigger.p, bigger.n, bigger.trials) == (40, 80, 3)
    with pytest.raises(InsufficientSamples):
        ScenarioConfig(CovModel('model1', 20), n=3, nu_sq=0.5)
    with pytest.raises(DomainError):
        ScenarioConfig(CovModel('model1', 20), n=50, nu_sq=0.0)

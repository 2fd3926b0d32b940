"""
Tests for the experiment harness: profiles, Monte Carlo sweeps, consistency
checks, the asymptotic curve and report determinism
"""

import numpy as np
import pandas as pd
import pytest

from classifier import GammaGrid
from core_stats import dataset_from_blocks
from errors import DomainError
from harness import (
    ExperimentSpec,
    _stratified_split,
    run_asymptotic,
    run_consistency_check,
    run_gamma_profile,
    run_montecarlo,
    spec_hash,
)
from risk import RiskSettings
from synth import CovModel, ScenarioConfig, make_population, sample_gaussian, trial_rng

SMALL_GRID = GammaGrid.parse('-1:1:3')
DERIVED = RiskSettings(formulas='derived')


def _scenario(**overrides):
    params = dict(model=CovModel('model1', 10), n=20, nu_sq=2.0, trials=3, seed=5, test_size=200)
    params.update(overrides)
    return ScenarioConfig(**params)


def _read_report(path):
    return pd.read_csv(path, comment='#')


def test_spec_needs_exactly_one_source(tmp_path):
    with pytest.raises(DomainError):
        ExperimentSpec()
    with pytest.raises(DomainError):
        ExperimentSpec(scenario=_scenario(), data_path=str(tmp_path / 'x.csv'))
    with pytest.raises(DomainError):
        ExperimentSpec(scenario=_scenario(), methods=('svm',))
    with pytest.raises(DomainError):
        ExperimentSpec(scenario=_scenario(), methods=())


def test_spec_hash_ignores_workers():
    a = ExperimentSpec(scenario=_scenario(), grid=SMALL_GRID)
    b = ExperimentSpec(scenario=_scenario(), grid=SMALL_GRID, workers=4)
    c = ExperimentSpec(scenario=_scenario(seed=6), grid=SMALL_GRID)
    assert spec_hash(a) == spec_hash(b)
    assert spec_hash(a) != spec_hash(c)
    assert len(spec_hash(a)) == 16


def test_gamma_profile_layout():
    spec = ExperimentSpec(scenario=_scenario(), grid=SMALL_GRID,
                          methods=('nl', 'linear_a', 'linear_target', 'bayes'))
    frame = run_gamma_profile(spec).frame
    assert list(frame.columns) == ['method', 'gamma', 'mean_error', 'std_error', 'trials',
                                   'degenerate_trials', 'total_trials']
    counts = frame['method'].value_counts().to_dict()
    assert counts == {'nl': 3, 'linear_a': 3, 'linear_target': 1, 'bayes': 3}
    assert (frame['total_trials'] == 3).all()
    assert frame['mean_error'].between(0, 1).all()
    bayes = frame[frame['method'] == 'bayes']['mean_error']
    assert bayes.nunique() == 1


def test_linear_forms_mirror_around_one():
    spec = ExperimentSpec(scenario=_scenario(trials=4), grid=GammaGrid.parse('-2:2:5'),
                          methods=('linear_a', 'linear_b'))
    frame = run_gamma_profile(spec).frame
    a = frame[frame['method'] == 'linear_a'].set_index('gamma')['mean_error']
    b = frame[frame['method'] == 'linear_b'].set_index('gamma')['mean_error']
    for gamma, err in a.items():
        mirrored = b.iloc[int(np.argmin(np.abs(np.log(b.index.to_numpy()) + np.log(gamma))))]
        assert err == pytest.approx(mirrored, abs=1e-3)


def test_reports_are_byte_identical_on_rerun(tmp_path):
    spec = ExperimentSpec(scenario=_scenario(), grid=SMALL_GRID, methods=('nl', 'linear_b'))
    threaded = ExperimentSpec(scenario=_scenario(), grid=SMALL_GRID, methods=('nl', 'linear_b'), workers=3)
    paths = []
    for i, s in enumerate((spec, spec, threaded)):
        path = tmp_path / f'profile_{i}.csv'
        run_gamma_profile(s).write_csv(str(path))
        paths.append(path)
    texts = [p.read_text().splitlines() for p in paths]
    assert texts[0][0].startswith(f'# spec_hash={spec_hash(spec)} seed=5 wall_clock_s=')
    assert texts[0][1:] == texts[1][1:] == texts[2][1:]


def test_montecarlo_synthetic():
    spec = ExperimentSpec(scenario=_scenario(), grid=SMALL_GRID, methods=('nl', 'linear_b', 'bayes'),
                          sizes=((10, 20), (10, 40)))
    frame = run_montecarlo(spec).frame
    assert list(frame.columns) == ['method', 'p', 'n', 'mean_error', 'std_error', 'trials',
                                   'degenerate_trials', 'total_trials']
    assert frame['method'].tolist() == ['nl', 'linear_b_oracle', 'bayes'] * 2
    assert frame['n'].tolist() == [20] * 3 + [40] * 3


@pytest.fixture
def dataset_csv(tmp_path):
    pop = make_population(CovModel('model2', 6), 3.0)
    data = sample_gaussian(pop, 30, 30, trial_rng(4, 0))
    path = tmp_path / 'data.csv'
    data.to_csv(str(path))
    return str(path)


def test_montecarlo_dataset_mode(dataset_csv):
    spec = ExperimentSpec(data_path=dataset_csv, grid=SMALL_GRID, sizes=((0, 20), (0, 30)),
                          dataset_trials=3, dataset_seed=2)
    frame = run_montecarlo(spec).frame
    assert frame['p'].tolist() == [6, 6]
    assert frame['n'].tolist() == [20, 30]
    assert frame['method'].tolist() == ['nl', 'nl']
    assert (frame['total_trials'] == 3).all()


def test_dataset_mode_rejects_population_methods(dataset_csv):
    spec = ExperimentSpec(data_path=dataset_csv, methods=('nl', 'bayes'), sizes=((0, 20),))
    with pytest.raises(DomainError):
        run_montecarlo(spec)
    with pytest.raises(DomainError):
        run_gamma_profile(ExperimentSpec(data_path=dataset_csv, sizes=((0, 20),)))


def test_stratified_split(rng):
    data = dataset_from_blocks(rng.standard_normal((2, 20)), rng.standard_normal((2, 30)))
    train_set, test_set = _stratified_split(data, 10, trial_rng(0, 0))
    assert (train_set.n0, train_set.n1) == (4, 6)
    assert test_set.n == 40
    train_cols = {tuple(c) for c in train_set.features.T}
    test_cols = {tuple(c) for c in test_set.features.T}
    assert not train_cols & test_cols


def test_consistency_check_layout():
    spec = ExperimentSpec(scenario=_scenario(), grid=SMALL_GRID, sizes=((10, 20), (20, 40)))
    report = run_consistency_check(spec)
    frame = report.frame
    assert frame[['p', 'n']].values.tolist() == [[10, 20], [20, 40]]
    for column in ('mean_abs_dev_oracle', 'mean_abs_dev_holdout', 'frac_gamma_in_band'):
        assert column in frame.columns
    hist = report.extras['gamma_hist']
    assert len(hist) == 2 * len(SMALL_GRID)
    sums = hist.groupby(['p', 'n'])['fraction'].sum()
    np.testing.assert_allclose(sums.to_numpy(), 1.0)


def test_asymptotic_report_with_montecarlo(tmp_path):
    spec = ExperimentSpec(scenario=_scenario(), grid=SMALL_GRID)
    report = run_asymptotic(spec, montecarlo=True)
    assert report.frame['gamma'].tolist() == list(SMALL_GRID.values)
    mc = report.extras['montecarlo']
    assert list(mc.columns) == ['gamma', 'mean_G0', 'mean_G1', 'mean_D', 'mean_error', 'trials']
    paths = report.write_csv(str(tmp_path / 'asym.csv'))
    assert paths == [str(tmp_path / 'asym.csv'), str(tmp_path / 'asym_montecarlo.csv')]
    assert len(_read_report(paths[1])) == len(SMALL_GRID)


@pytest.mark.slow
def test_profile_minima_small_sample_regime():
    scenario = ScenarioConfig(CovModel('model1', 100), n=50, nu_sq=0.5, trials=1000, seed=1)
    spec = ExperimentSpec(scenario=scenario, methods=('nl', 'linear_a', 'linear_b'), workers=4)
    frame = run_gamma_profile(spec).frame
    minima = frame.groupby('method')['mean_error'].min()
    assert minima['nl'] <= 0.375
    assert minima['nl'] == pytest.approx(0.366, abs=0.010)
    assert minima['linear_a'] == pytest.approx(0.375, abs=0.010)
    assert minima['linear_b'] == pytest.approx(0.375, abs=0.010)


@pytest.mark.slow
def test_profile_gap_closes_with_separation():
    scenario = ScenarioConfig(CovModel('model1', 100), n=200, nu_sq=9.0, trials=1000, seed=2)
    spec = ExperimentSpec(scenario=scenario, methods=('nl', 'linear_b'), workers=4)
    minima = run_gamma_profile(spec).frame.groupby('method')['mean_error'].min()
    assert abs(minima['nl'] - minima['linear_b']) <= 0.005


@pytest.mark.slow
def test_consistency_improves_with_size():
    scenario = ScenarioConfig(CovModel('model1', 50), n=100, nu_sq=5.0, trials=100, seed=3)
    spec = ExperimentSpec(scenario=scenario, sizes=((50, 100), (200, 400)), risk=DERIVED, workers=4)
    frame = run_consistency_check(spec).frame
    small, large = frame['mean_abs_dev_oracle'].tolist()
    assert large < small
    assert large <= 0.02


@pytest.mark.slow
def test_selected_gamma_in_band():
    scenario = ScenarioConfig(CovModel('model1', 100), n=50, nu_sq=0.5, trials=500, seed=4)
    spec = ExperimentSpec(scenario=scenario, risk=DERIVED, workers=4)
    frame = run_consistency_check(spec).frame
    assert frame['frac_gamma_in_band'].iloc[0] >= 0.9


@pytest.mark.slow
def test_montecarlo_error_decreases_with_n():
    scenario = ScenarioConfig(CovModel('model1', 100), n=50, nu_sq=2.0, trials=200, seed=6)
    spec = ExperimentSpec(scenario=scenario, sizes=((100, 50), (100, 100), (100, 200)), workers=4)
    frame = run_montecarlo(spec).frame
    errors = frame['mean_error'].to_numpy()
    noise = 2 * frame['std_error'].to_numpy()
    assert (errors[1:] <= errors[:-1] + noise[1:] + noise[:-1]).all()

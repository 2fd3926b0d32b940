"""
Experiment harness
Gamma profiles, Monte Carlo sweeps over n, consistency checks of the risk
estimate and the deterministic-equivalent curve, all written as CSV with a
leading '# spec_hash=... seed=... wall_clock_s=...' line
"""

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from asymptotics import AsymptoticSettings, asymptotic_curve, asymptotic_frame
from classifier import (
    GammaGrid,
    bayes_score,
    decide,
    oracle_conditional_error,
    oracle_D,
    oracle_G,
    score,
    train,
)
from core_stats import LabeledDataset, pooled_covariance, sym_eig, write_csv
from errors import DegenerateError, DomainError, InsufficientSamples
from precision import PrecisionKind, nl_precision, ridge_precision
from risk import RiskSettings
from synth import ScenarioConfig, class_counts, sample_gaussian, trial_rng

logger = logging.getLogger(__name__)

METHODS = ('nl', 'linear_a', 'linear_b', 'linear_target', 'bayes')
GAMMA_BAND = (10 ** 0.5, 10 ** 5)


@dataclass(frozen=True)
class ExperimentSpec:
    """
    One experiment. A synthetic scenario carries its own trials and seed;
    dataset mode (data_path) uses dataset_trials and dataset_seed.
    sizes lists the (p, n) pairs of montecarlo / consistency runs.
    """
    scenario: Optional[ScenarioConfig] = None
    data_path: Optional[str] = None
    methods: Tuple[str, ...] = ('nl',)
    grid: GammaGrid = field(default_factory=GammaGrid.default)
    sizes: Tuple[Tuple[int, int], ...] = ()
    risk: RiskSettings = field(default_factory=RiskSettings)
    asymptotic: AsymptoticSettings = field(default_factory=AsymptoticSettings)
    dataset_trials: int = 100
    dataset_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        methods = tuple(_method_name(m) for m in self.methods)
        if not methods:
            raise DomainError("At least one method is required")
        if (self.scenario is None) == (self.data_path is None):
            raise DomainError("Give exactly one of a synthetic scenario or a dataset path")
        object.__setattr__(self, 'methods', methods)
        object.__setattr__(self, 'sizes', tuple((int(p), int(n)) for p, n in self.sizes))

    @property
    def trials(self) -> int:
        return self.scenario.trials if self.scenario else self.dataset_trials

    @property
    def seed(self) -> int:
        return self.scenario.seed if self.scenario else self.dataset_seed

    def size_list(self) -> List[Tuple[int, int]]:
        if self.sizes:
            return list(self.sizes)
        if self.scenario is None:
            raise DomainError("Dataset mode needs at least one training size n")
        return [(self.scenario.p, self.scenario.n)]


def _method_name(method: str) -> str:
    key = str(method).strip().lower()
    if key == 'bayes':
        return key
    return PrecisionKind.parse(key).value


def spec_hash(spec: ExperimentSpec) -> str:
    """sha256 over the settings that determine the numbers (workers excluded)"""
    payload = {
        'scenario': asdict(spec.scenario) if spec.scenario else None,
        'data_path': spec.data_path,
        'methods': list(spec.methods),
        'grid': list(spec.grid.values),
        'sizes': [list(s) for s in spec.sizes],
        'risk': asdict(spec.risk),
        'asymptotic': asdict(spec.asymptotic),
        'dataset_trials': spec.dataset_trials if spec.scenario is None else None,
        'dataset_seed': spec.dataset_seed if spec.scenario is None else None,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


@dataclass
class ErrorReport:
    kind: str
    frame: pd.DataFrame
    seed: int
    spec_hash: str
    wall_clock_s: float = 0.0
    extras: Dict[str, pd.DataFrame] = field(default_factory=dict)

    def comment(self) -> str:
        return f"spec_hash={self.spec_hash} seed={self.seed} wall_clock_s={self.wall_clock_s:.3f}"

    def write_csv(self, path: str) -> List[str]:
        """Write the main table to path and each extra table beside it; returns the paths"""
        write_csv(self.frame, path, self.comment())
        written = [path]
        stem, ext = os.path.splitext(path)
        for name, frame in self.extras.items():
            extra_path = f"{stem}_{name}{ext or '.csv'}"
            write_csv(frame, extra_path, self.comment())
            written.append(extra_path)
        logger.info("Wrote %s report to %s", self.kind, ', '.join(written))
        return written


def _run_trials(fn: Callable[[int], Dict], trials: int, workers: int) -> List[Dict]:
    """Trial results in trial order, serial or on a thread pool"""
    if workers > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(trials)))
    return [fn(t) for t in range(trials)]


def _summarize(values: Sequence[Optional[float]]) -> Dict[str, float]:
    kept = np.array([v for v in values if v is not None], dtype=float)
    k = kept.size
    mean = float(kept.mean()) if k else float('nan')
    stderr = float(kept.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0
    return {
        'mean_error': mean,
        'std_error': stderr,
        'trials': int(k),
        'degenerate_trials': int(len(values) - k),
        'total_trials': int(len(values)),
    }


def _empirical_error(test: LabeledDataset, labels: np.ndarray) -> float:
    return float(np.mean(labels != test.labels))


def _operator(method: str, eig, S, gamma: float):
    kind = PrecisionKind.parse(method)
    if kind == PrecisionKind.NL:
        return nl_precision(eig, gamma)
    return ridge_precision(S, gamma, kind, eig=eig)


def _fixed_gamma_error(method: str, stats, eig, gamma: float, test: LabeledDataset) -> Optional[float]:
    """Test error of the method at a fixed gamma; None when H m = 0"""
    H = _operator(method, eig, stats.S, gamma)
    if not H.quadratic(stats.m) > 0:
        return None
    scores = score(test.features, stats.m0, stats.m1, H)
    return _empirical_error(test, decide(scores, stats.tau_hat))


def _bayes_error(pop, test: LabeledDataset) -> float:
    tau = float(np.log(pop.pi1 / pop.pi0))
    return _empirical_error(test, decide(bayes_score(test.features, pop), tau))


def _profile_gammas(method: str, grid: GammaGrid) -> List[float]:
    if method == PrecisionKind.LINEAR_TARGET.value:
        return [g for g in grid.values if g < 1.0]
    return list(grid.values)


def _require_scenario(spec: ExperimentSpec, what: str) -> ScenarioConfig:
    if spec.scenario is None:
        raise DomainError(f"{what} needs a synthetic scenario with a known population")
    return spec.scenario


def run_gamma_profile(spec: ExperimentSpec) -> ErrorReport:
    """Average test error against gamma for every method, no gamma selection"""
    scenario = _require_scenario(spec, "A gamma profile")
    start = time.perf_counter()
    pop = scenario.population()
    n0, n1 = scenario.train_counts()
    t0, t1 = scenario.test_counts()
    keys = [(method, g) for method in spec.methods if method != 'bayes'
            for g in _profile_gammas(method, spec.grid)]
    logger.info("Gamma profile: p=%d, n=%d, %d trials, %d grid points",
                scenario.p, scenario.n, scenario.trials, len(spec.grid))

    def one_trial(t: int) -> Dict:
        rng = trial_rng(scenario.seed, t)
        data = sample_gaussian(pop, n0, n1, rng)
        test = sample_gaussian(pop, t0, t1, rng)
        stats = pooled_covariance(data)
        eig = sym_eig(stats.S)
        out = {key: _fixed_gamma_error(key[0], stats, eig, key[1], test) for key in keys}
        if 'bayes' in spec.methods:
            out[('bayes', None)] = _bayes_error(pop, test)
        return out

    results = _run_trials(one_trial, scenario.trials, spec.workers)

    rows = []
    for method in spec.methods:
        if method == 'bayes':
            summary = _summarize([r[('bayes', None)] for r in results])
            rows.extend({'method': method, 'gamma': g, **summary} for g in spec.grid.values)
            continue
        for g in _profile_gammas(method, spec.grid):
            rows.append({'method': method, 'gamma': g, **_summarize([r[(method, g)] for r in results])})

    frame = pd.DataFrame(rows, columns=['method', 'gamma', 'mean_error', 'std_error', 'trials',
                                        'degenerate_trials', 'total_trials'])
    return ErrorReport('profile', frame, scenario.seed, spec_hash(spec), time.perf_counter() - start)


def _oracle_tuned_error(method: str, pop, stats, eig, grid: GammaGrid,
                        test: LabeledDataset) -> Optional[float]:
    """Test error of a linear method at the grid gamma minimizing the true conditional error"""
    best = None
    for g in _profile_gammas(method, grid):
        H = _operator(method, eig, stats.S, g)
        try:
            eps = oracle_conditional_error(pop, stats, H)[2]
        except DegenerateError:
            continue
        if best is None or eps < best[0]:
            best = (eps, H)
    if best is None:
        return None
    scores = score(test.features, stats.m0, stats.m1, best[1])
    return _empirical_error(test, decide(scores, stats.tau_hat))


def _report_method_name(method: str) -> str:
    return method if method in ('nl', 'bayes') else f"{method}_oracle"


def _stratified_split(data: LabeledDataset, n: int, rng: np.random.Generator) -> Tuple[LabeledDataset, LabeledDataset]:
    """Training subset of size n drawn per class without replacement; the rest is the test set"""
    n0, n1 = class_counts(n, data.n0 / data.n)
    idx0 = np.flatnonzero(data.labels == 0)
    idx1 = np.flatnonzero(data.labels == 1)
    if n0 >= idx0.size or n1 >= idx1.size:
        raise InsufficientSamples(f"Training size n={n} leaves no test rows in one class")
    chosen = np.sort(np.concatenate([rng.choice(idx0, n0, replace=False), rng.choice(idx1, n1, replace=False)]))
    mask = np.zeros(data.n, dtype=bool)
    mask[chosen] = True
    train_set = LabeledDataset(data.features[:, mask], data.labels[mask], data.feature_names)
    test_set = LabeledDataset(data.features[:, ~mask], data.labels[~mask], data.feature_names)
    return train_set, test_set


def run_montecarlo(spec: ExperimentSpec) -> ErrorReport:
    """
    Full training (gamma chosen by the risk estimate) and testing per (p, n).
    Linear methods use the grid gamma with the smallest true conditional
    error and are reported as '<method>_oracle'.
    """
    start = time.perf_counter()
    rows = []
    dataset = None
    if spec.scenario is None:
        dataset = LabeledDataset.from_csv(spec.data_path)
        if spec.methods != ('nl',):
            raise DomainError("Dataset mode supports only the nl method")

    for p, n in spec.size_list():
        if dataset is not None:
            results = _dataset_trials(spec, dataset, n)
            p = dataset.p
        else:
            results = _synthetic_trials(spec, spec.scenario.with_size(p, n))
        for method in spec.methods:
            summary = _summarize([r[method] for r in results])
            rows.append({'method': _report_method_name(method), 'p': p, 'n': n, **summary})
        logger.info("Monte Carlo p=%d n=%d done", p, n)

    frame = pd.DataFrame(rows, columns=['method', 'p', 'n', 'mean_error', 'std_error', 'trials',
                                        'degenerate_trials', 'total_trials'])
    return ErrorReport('montecarlo', frame, spec.seed, spec_hash(spec), time.perf_counter() - start)


def _synthetic_trials(spec: ExperimentSpec, scenario: ScenarioConfig) -> List[Dict]:
    pop = scenario.population()
    n0, n1 = scenario.train_counts()
    t0, t1 = scenario.test_counts()

    def one_trial(t: int) -> Dict:
        rng = trial_rng(scenario.seed, t)
        data = sample_gaussian(pop, n0, n1, rng)
        test = sample_gaussian(pop, t0, t1, rng)
        out: Dict[str, Optional[float]] = {}
        stats = eig = None
        for method in spec.methods:
            if method == 'nl':
                model = train(data, spec.grid, spec.risk)
                stats, eig = model.stats, model.eig
                if model.degenerate:
                    out[method] = None
                else:
                    scores = score(test.features, stats.m0, stats.m1, model.H)
                    out[method] = _empirical_error(test, decide(scores, model.tau_hat))
            elif method == 'bayes':
                out[method] = _bayes_error(pop, test)
            else:
                if stats is None:
                    stats = pooled_covariance(data)
                    eig = sym_eig(stats.S)
                out[method] = _oracle_tuned_error(method, pop, stats, eig, spec.grid, test)
        return out

    return _run_trials(one_trial, scenario.trials, spec.workers)


def _dataset_trials(spec: ExperimentSpec, dataset: LabeledDataset, n: int) -> List[Dict]:
    def one_trial(t: int) -> Dict:
        rng = trial_rng(spec.dataset_seed, t)
        train_set, test_set = _stratified_split(dataset, n, rng)
        model = train(train_set, spec.grid, spec.risk)
        if model.degenerate:
            return {'nl': None}
        scores = score(test_set.features, model.stats.m0, model.stats.m1, model.H)
        return {'nl': _empirical_error(test_set, decide(scores, model.tau_hat))}

    return _run_trials(one_trial, spec.dataset_trials, spec.workers)


def run_consistency_check(spec: ExperimentSpec) -> ErrorReport:
    """
    Per (p, n): the risk estimate at the selected gamma against the true
    conditional error and the hold-out error, plus a histogram of the
    selected gamma values.
    """
    base = _require_scenario(spec, "A consistency check")
    start = time.perf_counter()
    rows = []
    histogram = []
    lo, hi = GAMMA_BAND

    for p, n in spec.size_list():
        scenario = base.with_size(p, n)
        pop = scenario.population()
        n0, n1 = scenario.train_counts()
        t0, t1 = scenario.test_counts()

        def one_trial(t: int) -> Optional[Dict]:
            rng = trial_rng(scenario.seed, t)
            data = sample_gaussian(pop, n0, n1, rng)
            test = sample_gaussian(pop, t0, t1, rng)
            model = train(data, spec.grid, spec.risk)
            if model.degenerate:
                return None
            eps_oracle = oracle_conditional_error(pop, model.stats, model.H)[2]
            scores = score(test.features, model.stats.m0, model.stats.m1, model.H)
            return {
                'gamma_star': model.gamma_star,
                'eps_hat': model.eps_hat_star,
                'eps_oracle': eps_oracle,
                'eps_holdout': _empirical_error(test, decide(scores, model.tau_hat)),
            }

        results = _run_trials(one_trial, scenario.trials, spec.workers)
        kept = [r for r in results if r is not None]
        eps_hat = np.array([r['eps_hat'] for r in kept])
        eps_oracle = np.array([r['eps_oracle'] for r in kept])
        eps_holdout = np.array([r['eps_holdout'] for r in kept])
        gammas = np.array([r['gamma_star'] for r in kept])
        in_band = float(np.mean((gammas >= lo * (1 - 1e-12)) & (gammas <= hi * (1 + 1e-12)))) if kept else float('nan')

        rows.append({
            'p': p,
            'n': n,
            'mean_abs_dev_oracle': float(np.mean(np.abs(eps_hat - eps_oracle))) if kept else float('nan'),
            'mean_abs_dev_holdout': float(np.mean(np.abs(eps_hat - eps_holdout))) if kept else float('nan'),
            'mean_eps_hat': float(np.mean(eps_hat)) if kept else float('nan'),
            'mean_eps_oracle': float(np.mean(eps_oracle)) if kept else float('nan'),
            'mean_eps_holdout': float(np.mean(eps_holdout)) if kept else float('nan'),
            'frac_gamma_in_band': in_band,
            'trials': len(kept),
            'degenerate_trials': len(results) - len(kept),
            'total_trials': len(results),
        })
        for g in spec.grid.values:
            count = int(np.sum(gammas == g))
            histogram.append({'p': p, 'n': n, 'gamma': g, 'count': count,
                              'fraction': count / len(kept) if kept else float('nan')})
        logger.info("Consistency p=%d n=%d: mean |eps_hat - eps_oracle| = %.4f", p, n, rows[-1]['mean_abs_dev_oracle'])

    frame = pd.DataFrame(rows)
    extras = {'gamma_hist': pd.DataFrame(histogram, columns=['p', 'n', 'gamma', 'count', 'fraction'])}
    return ErrorReport('consistency', frame, base.seed, spec_hash(spec), time.perf_counter() - start, extras)


def run_asymptotic(spec: ExperimentSpec, montecarlo: bool = False) -> ErrorReport:
    """
    Deterministic-equivalent curve over the grid. With montecarlo=True an extra
    table holds the trial averages of G(mu_i), D and the test error of the
    nonlinear classifier at each gamma.
    """
    scenario = _require_scenario(spec, "The asymptotic curve")
    start = time.perf_counter()
    pop = scenario.population()
    n0, n1 = scenario.train_counts()
    results = asymptotic_curve(pop, n0, n1, spec.grid.values, spec.asymptotic)
    extras = {}

    if montecarlo:
        t0, t1 = scenario.test_counts()

        def one_trial(t: int) -> Dict:
            rng = trial_rng(scenario.seed, t)
            data = sample_gaussian(pop, n0, n1, rng)
            test = sample_gaussian(pop, t0, t1, rng)
            stats = pooled_covariance(data)
            eig = sym_eig(stats.S)
            out = {}
            for g in spec.grid.values:
                H = nl_precision(eig, g)
                scores = score(test.features, stats.m0, stats.m1, H)
                out[g] = (oracle_G(pop.mu0, stats.m0, stats.m1, H),
                          oracle_G(pop.mu1, stats.m0, stats.m1, H),
                          oracle_D(stats.m0, stats.m1, H, pop.Sigma),
                          _empirical_error(test, decide(scores, stats.tau_hat)))
            return out

        trials = _run_trials(one_trial, scenario.trials, spec.workers)
        mc_rows = []
        for g in spec.grid.values:
            values = np.array([r[g] for r in trials])
            mc_rows.append({'gamma': g, 'mean_G0': values[:, 0].mean(), 'mean_G1': values[:, 1].mean(),
                            'mean_D': values[:, 2].mean(), 'mean_error': values[:, 3].mean(),
                            'trials': len(trials)})
        extras['montecarlo'] = pd.DataFrame(mc_rows)

    return ErrorReport('asymptotic', asymptotic_frame(results), scenario.seed, spec_hash(spec),
                       time.perf_counter() - start, extras)


if __name__ == "__main__":
    from synth import CovModel

    scenario = ScenarioConfig(CovModel('model1', 50), n=50, nu_sq=0.5, trials=20, seed=1, test_size=500)
    spec = ExperimentSpec(scenario=scenario, methods=('nl', 'linear_b', 'bayes'),
                          grid=GammaGrid.parse('-2:3:6'))
    report = run_gamma_profile(spec)
    print("=== Gamma profile demo ===\n")
    print(report.frame.to_string(index=False))

"""
RLDA classifier
Score function, decision rule, grid-search training on the consistent risk
estimate, oracle error functionals and model persistence
"""

import json
import logging
import os
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np

from core_stats import (
    ClassStats,
    LabeledDataset,
    PopulationModel,
    SymEig,
    pooled_covariance,
    sym_eig,
)
from errors import ConfigError, DataFormatError, DegenerateD, DimensionMismatch, DomainError
from precision import (
    PrecisionKind,
    PrecisionOperator,
    RegParam,
    nl_precision,
    ridge_precision,
)
from risk import DEFAULT_SETTINGS, RiskPoint, RiskSettings, normal_cdf, risk_point, sweep_risk

logger = logging.getLogger(__name__)

MODEL_FORMAT = 'nl-rlda-model/1'


@dataclass(frozen=True)
class GammaGrid:
    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise DomainError("Gamma grid is empty")
        arr = np.asarray(values)
        if not (np.isfinite(arr).all() and (arr > 0).all()):
            raise DomainError("Gamma grid values must be positive and finite")
        if (np.diff(arr) <= 0).any():
            raise DomainError("Gamma grid must be strictly increasing")
        object.__setattr__(self, 'values', values)

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[float]:
        return iter(self.values)

    @classmethod
    def default(cls) -> 'GammaGrid':
        """gamma(j) = 10^(5j/10), j = -10..10"""
        return cls(tuple(10.0 ** (5 * j / 10) for j in range(-10, 11)))

    @classmethod
    def parse(cls, text: str) -> 'GammaGrid':
        """
        'default', a comma list of values ('0.1,1,10'), or 'lo:hi:k' for k
        log-spaced values between 10^lo and 10^hi.
        """
        text = (text or '').strip()
        if not text or text.lower() == 'default':
            return cls.default()
        try:
            if ':' in text:
                lo, hi, k = text.split(':')
                return cls(tuple(np.logspace(float(lo), float(hi), int(k))))
            values = sorted(float(v) for v in text.split(',') if v.strip())
        except ValueError as e:
            raise DomainError(f"Cannot parse gamma grid '{text}': {e}") from e
        return cls(tuple(values))


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """
    Trained classifier. A degenerate model (no usable grid point) has no
    gamma_star and no H and predicts with score 0, i.e. the prior-only rule.
    """
    stats: ClassStats
    eig: SymEig
    gamma_star: Optional[float]
    H: Optional[PrecisionOperator]
    tau_hat: float
    risk_curve: Tuple[RiskPoint, ...] = ()
    degenerate: bool = False
    kind: PrecisionKind = PrecisionKind.NL
    feature_names: Tuple[str, ...] = ()
    settings: RiskSettings = DEFAULT_SETTINGS

    @property
    def p(self) -> int:
        return self.stats.p

    @property
    def n0(self) -> int:
        return self.stats.n0

    @property
    def n1(self) -> int:
        return self.stats.n1

    @property
    def eps_hat_star(self) -> Optional[float]:
        for pt in self.risk_curve:
            if pt.gamma == self.gamma_star and not pt.degenerate:
                return pt.eps_hat
        return None

    def summary(self) -> Dict:
        return {
            'kind': self.kind.value,
            'p': self.p,
            'n0': self.n0,
            'n1': self.n1,
            'gamma_star': self.gamma_star,
            'tau_hat': self.tau_hat,
            'eps_hat': self.eps_hat_star,
            'degenerate': self.degenerate,
            'risk_settings': asdict(self.settings),
        }


def _apply(H: Union[PrecisionOperator, np.ndarray], v: np.ndarray) -> np.ndarray:
    if isinstance(H, PrecisionOperator):
        return H.apply(v)
    H = np.asarray(H, dtype=float)
    if H.shape != (v.shape[0], v.shape[0]):
        raise DimensionMismatch(f"H has shape {H.shape}, vector has length {v.shape[0]}")
    return H @ v


def _check_means(m0: np.ndarray, m1: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    m0 = np.asarray(m0, dtype=float)
    m1 = np.asarray(m1, dtype=float)
    if m0.ndim != 1 or m0.shape != m1.shape:
        raise DimensionMismatch(f"Class means have shapes {m0.shape} and {m1.shape}")
    return m0, m1


def score(x: np.ndarray, m0: np.ndarray, m1: np.ndarray,
          H: Union[PrecisionOperator, np.ndarray]):
    """
    W(x) = (x - (m0 + m1)/2)^T H (m0 - m1)

    x may be one observation (length p) or a p x k block; a block returns k scores.
    """
    m0, m1 = _check_means(m0, m1)
    x = np.asarray(x, dtype=float)
    if x.shape[0] != m0.shape[0]:
        raise DimensionMismatch(f"Observation has {x.shape[0]} features, model has {m0.shape[0]}")
    w = _apply(H, m0 - m1)
    mid = (m0 + m1) / 2
    if x.ndim == 1:
        return float(np.dot(x - mid, w))
    return (x - mid[:, None]).T @ w


def score_quadratic(x: np.ndarray, m0: np.ndarray, m1: np.ndarray,
                    eig: SymEig, gamma: Union[float, RegParam]) -> float:
    """Score written as half the difference of the two H-weighted squared distances"""
    m0, m1 = _check_means(m0, m1)
    x = np.asarray(x, dtype=float)
    if x.shape != m0.shape or eig.p != m0.shape[0]:
        raise DimensionMismatch(f"Observation shape {x.shape} does not match model dimension {eig.p}")
    H = nl_precision(eig, gamma)
    g0 = x - m0
    g1 = x - m1
    return 0.5 * (H.quadratic(g1) - H.quadratic(g0))


def decide(W, tau_hat: float):
    """Class 0 when W > tau_hat, class 1 otherwise"""
    labels = np.where(np.asarray(W) > tau_hat, 0, 1)
    return int(labels) if labels.ndim == 0 else labels


def bayes_score(x: np.ndarray, pop: PopulationModel):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != pop.p:
        raise DimensionMismatch(f"Observation has {x.shape[0]} features, population has {pop.p}")
    w = pop.solve(pop.mu)
    mid = (pop.mu0 + pop.mu1) / 2
    if x.ndim == 1:
        return float(np.dot(x - mid, w))
    return (x - mid[:, None]).T @ w


def oracle_G(mu_i: np.ndarray, m0: np.ndarray, m1: np.ndarray,
             H: Union[PrecisionOperator, np.ndarray]) -> float:
    return score(np.asarray(mu_i, dtype=float), m0, m1, H)


def oracle_D(m0: np.ndarray, m1: np.ndarray, H: Union[PrecisionOperator, np.ndarray],
             Sigma: np.ndarray) -> float:
    m0, m1 = _check_means(m0, m1)
    w = _apply(H, m0 - m1)
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (w.shape[0], w.shape[0]):
        raise DimensionMismatch(f"Sigma has shape {Sigma.shape}, expected {(w.shape[0],) * 2}")
    return float(w @ Sigma @ w)


def oracle_conditional_error(pop: PopulationModel, stats: ClassStats,
                             H: Union[PrecisionOperator, np.ndarray],
                             tau_hat: Optional[float] = None) -> Tuple[float, float, float]:
    """
    True conditional error of the linear rule built from (m0, m1, H) when the
    data follow pop.

    Returns:
        (eps0, eps1, eps) with eps weighted by the population priors
    """
    tau = stats.tau_hat if tau_hat is None else tau_hat
    G0 = oracle_G(pop.mu0, stats.m0, stats.m1, H)
    G1 = oracle_G(pop.mu1, stats.m0, stats.m1, H)
    D = oracle_D(stats.m0, stats.m1, H, pop.Sigma)
    if not D > 0:
        raise DegenerateD(f"D = {D}", value=D)
    root = np.sqrt(D)
    eps0 = normal_cdf((-G0 + tau) / root)
    eps1 = normal_cdf((G1 - tau) / root)
    return eps0, eps1, pop.pi0 * eps0 + pop.pi1 * eps1


def trivial_error(stats: ClassStats) -> float:
    """Error of the prior-only rule"""
    return min(stats.pi0_hat, stats.pi1_hat)


def train(data: LabeledDataset, grid: Optional[GammaGrid] = None,
          settings: RiskSettings = DEFAULT_SETTINGS, workers: int = 1) -> TrainedModel:
    """
    Fit the nonlinear RLDA classifier: one pooled covariance, one
    eigendecomposition, the risk estimate on every grid point and the
    argmin (ties to the smallest gamma).
    """
    grid = grid or GammaGrid.default()
    stats = pooled_covariance(data)
    eig = sym_eig(stats.S)
    points = tuple(sweep_risk(eig, stats.m, grid.values, stats.n0, stats.n1, settings, workers))

    valid = [pt for pt in points if not pt.degenerate and np.isfinite(pt.eps_hat)]
    if not valid:
        logger.warning("All %d grid points are degenerate; falling back to the prior-only rule", len(points))
        return TrainedModel(stats, eig, None, None, stats.tau_hat, points, degenerate=True,
                            feature_names=data.feature_names, settings=settings)

    best = min(valid, key=lambda pt: (pt.eps_hat, pt.gamma))
    skipped = len(points) - len(valid)
    if skipped:
        logger.warning("Skipped %d degenerate grid points", skipped)
    logger.info("Trained NL-RLDA: p=%d, n0=%d, n1=%d, gamma*=%g, eps_hat=%.4f",
                stats.p, stats.n0, stats.n1, best.gamma, best.eps_hat)
    return TrainedModel(stats, eig, best.gamma, nl_precision(eig, best.gamma), stats.tau_hat,
                        points, feature_names=data.feature_names, settings=settings)


def train_fixed(data: LabeledDataset, gamma: float, kind=PrecisionKind.NL,
                F: Optional[np.ndarray] = None,
                settings: RiskSettings = DEFAULT_SETTINGS) -> TrainedModel:
    """Classifier at a fixed gamma for any precision kind (no grid search)"""
    kind = PrecisionKind.parse(kind)
    stats = pooled_covariance(data)
    eig = sym_eig(stats.S)
    H = ridge_precision(stats.S, gamma, kind, F=F, eig=eig)
    curve: Tuple[RiskPoint, ...] = ()
    if kind == PrecisionKind.NL:
        curve = (risk_point(eig, stats.m, H.gamma.gamma, stats.n0, stats.n1, settings),)
    return TrainedModel(stats, eig, H.gamma.gamma, H, stats.tau_hat, curve, kind=kind,
                        feature_names=data.feature_names, settings=settings)


def predict_scores(model: TrainedModel, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Scores and labels for the columns of X (p x k, or one length-p vector)"""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] != model.p:
        raise DimensionMismatch(f"Expected {model.p} features per observation, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DomainError("Observations contain non-finite values")

    if model.degenerate or model.H is None:
        scores = np.zeros(X.shape[1])
    else:
        scores = np.asarray(score(X, model.stats.m0, model.stats.m1, model.H), dtype=float)
    return scores, np.asarray(decide(scores, model.tau_hat)).reshape(-1)


def predict(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    return predict_scores(model, X)[1]


def _nan_to_none(v: float) -> Optional[float]:
    return None if v is None or not np.isfinite(v) else float(v)


def model_to_dict(model: TrainedModel) -> Dict:
    payload = {
        'format': MODEL_FORMAT,
        'kind': model.kind.value,
        'p': model.p,
        'n0': model.n0,
        'n1': model.n1,
        'gamma_star': model.gamma_star,
        'tau_hat': model.tau_hat,
        'degenerate': model.degenerate,
        'feature_names': list(model.feature_names),
        'risk_settings': asdict(model.settings),
        'm0': model.stats.m0.tolist(),
        'm1': model.stats.m1.tolist(),
        'eigenvalues': model.eig.eigenvalues.tolist(),
        'eigenvectors': model.eig.eigenvectors.tolist(),
        'risk_curve': [
            {
                'gamma': pt.gamma,
                'eps_hat': _nan_to_none(pt.eps_hat),
                'eps0_hat': _nan_to_none(pt.eps0_hat),
                'eps1_hat': _nan_to_none(pt.eps1_hat),
                'degenerate': pt.degenerate,
            }
            for pt in model.risk_curve
        ],
    }
    if model.kind == PrecisionKind.LINEAR_TARGET and model.H is not None:
        payload['operator_eigenvalues'] = model.H.eig.eigenvalues.tolist()
        payload['operator_eigenvectors'] = model.H.eig.eigenvectors.tolist()
    return payload


def save_model(model: TrainedModel, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(model_to_dict(model), f, indent=2)
    logger.info("Saved model to %s", path)


def _nan(v: Optional[float]) -> float:
    return float('nan') if v is None else float(v)


def model_from_dict(payload: Dict) -> TrainedModel:
    if payload.get('format') != MODEL_FORMAT:
        raise DataFormatError(f"Unsupported model format '{payload.get('format')}'")
    try:
        kind = PrecisionKind.parse(payload['kind'])
        p = int(payload['p'])
        m0 = np.array(payload['m0'], dtype=float)
        m1 = np.array(payload['m1'], dtype=float)
        eig = SymEig(np.array(payload['eigenvalues'], dtype=float),
                     np.array(payload['eigenvectors'], dtype=float).reshape(p, p))
        gamma_star = payload['gamma_star']
        curve = tuple(
            RiskPoint(float(pt['gamma']), _nan(pt['eps_hat']), _nan(pt['eps0_hat']),
                      _nan(pt['eps1_hat']), bool(pt['degenerate']))
            for pt in payload['risk_curve']
        )
        stats = ClassStats(m0, m1, eig.reconstruct(), int(payload['n0']), int(payload['n1']))
        degenerate = bool(payload['degenerate'])
        tau_hat = float(payload['tau_hat'])
        names = tuple(payload.get('feature_names') or ())
        settings = RiskSettings(**payload['risk_settings']) if 'risk_settings' in payload else DEFAULT_SETTINGS
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise DataFormatError(f"Malformed model file: {e}") from e

    if m0.shape != (p,) or m1.shape != (p,):
        raise DataFormatError(f"Model means do not have length p={p}")

    H = None
    if not degenerate and gamma_star is not None:
        if kind == PrecisionKind.LINEAR_TARGET:
            op_eig = SymEig(np.array(payload['operator_eigenvalues'], dtype=float),
                            np.array(payload['operator_eigenvectors'], dtype=float).reshape(p, p))
            H = PrecisionOperator(kind, RegParam(gamma_star), op_eig, 1.0 / op_eig.eigenvalues)
        else:
            H = ridge_precision(None, gamma_star, kind, eig=eig)
    return TrainedModel(stats, eig, gamma_star, H, tau_hat, curve, degenerate, kind, names, settings)


def load_model(path: str) -> TrainedModel:
    if not os.path.exists(path):
        raise DataFormatError(f"Model file not found: {path}")
    try:
        with open(path, 'r') as f:
            payload = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"Model file is not valid JSON: {e.msg}", line=e.lineno) from e
    model = model_from_dict(payload)
    logger.info("Loaded model from %s (kind=%s, gamma*=%s)", path, model.kind.value, model.gamma_star)
    return model


if __name__ == "__main__":
    from synth import CovModel, make_population, sample_gaussian, trial_rng

    pop = make_population(CovModel('model1', 50), 2.0)
    data = sample_gaussian(pop, 40, 40, trial_rng(7, 0))
    model = train(data)
    test = sample_gaussian(pop, 2000, 2000, trial_rng(7, 1))
    labels = predict(model, test.features)
    print("=== NL-RLDA demo ===\n")
    print(f"gamma* = {model.gamma_star:g}, eps_hat = {model.eps_hat_star:.4f}")
    print(f"test error = {np.mean(labels != test.labels):.4f}")
    print(f"oracle error = {oracle_conditional_error(pop, model.stats, model.H)[2]:.4f}")

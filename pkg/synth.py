"""
Synthetic Gaussian populations
Covariance models 1-3, Mahalanobis-calibrated means and seeded samplers
"""

import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy import linalg

from core_stats import LabeledDataset, PopulationModel, calibrate_mean_scale, sym_eig
from errors import DomainError, EmptyClass, InsufficientSamples, NotPositiveDefinite

logger = logging.getLogger(__name__)

COV_KINDS = ('model1', 'model2', 'model3')
ROUTES = ('cholesky', 'sqrt')
MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class CovModel:
    """
    model1: unit diagonal, 0.1 off the diagonal
    model2: 0.9^|i-j|
    model3: banded, 0.9 on the four nearest bands, 0.3 on the next five
    """
    kind: str
    p: int

    def __post_init__(self):
        key = str(self.kind).strip().lower().replace(' ', '').replace('_', '')
        if key in ('1', '2', '3'):
            key = f"model{key}"
        if key not in COV_KINDS:
            raise DomainError(f"Unknown covariance model '{self.kind}'")
        if int(self.p) < 2:
            raise DomainError(f"Covariance models need p >= 2, got {self.p}")
        object.__setattr__(self, 'kind', key)
        object.__setattr__(self, 'p', int(self.p))


def build_cov(model: CovModel, check_pd: bool = True) -> np.ndarray:
    idx = np.arange(model.p)
    dist = np.abs(idx[:, None] - idx[None, :])
    if model.kind == 'model1':
        Sigma = np.where(dist == 0, 1.0, 0.1)
    elif model.kind == 'model2':
        Sigma = 0.9 ** dist.astype(float)
    else:
        Sigma = np.select([dist == 0, dist <= 4, dist <= 9], [1.0, 0.9, 0.3], default=0.0)

    if check_pd:
        try:
            linalg.cholesky(Sigma, lower=True)
        except linalg.LinAlgError as e:
            raise NotPositiveDefinite(f"{model.kind} is not positive definite at p={model.p}") from e
    return Sigma


def make_population(model: CovModel, nu_sq: float, pi0: float = 0.5) -> PopulationModel:
    """mu0 = k 1, mu1 = -mu0 with k set so the Mahalanobis distance is nu_sq"""
    Sigma = build_cov(model)
    k = calibrate_mean_scale(Sigma, nu_sq)
    mu0 = np.full(model.p, k)
    return PopulationModel(mu0, -mu0, Sigma, pi0)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_seed(seed: int, trial: int) -> int:
    """64-bit stream seed for one trial: splitmix64(splitmix64(seed) ^ trial)"""
    return splitmix64(splitmix64(int(seed) & MASK64) ^ (int(trial) & MASK64))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(trial_seed(seed, trial))


def class_counts(n: int, pi0: float, minimum: int = 2) -> Tuple[int, int]:
    """Fixed per-trial counts n0 = round(n pi0), n1 = n - n0"""
    if not 0.0 < pi0 < 1.0:
        raise DomainError(f"pi0 must lie in (0, 1), got {pi0}")
    n0 = int(np.floor(n * pi0 + 0.5))
    n1 = int(n) - n0
    if min(n0, n1) < minimum:
        raise InsufficientSamples(f"n={n} with pi0={pi0} gives class counts ({n0}, {n1})")
    return n0, n1


def _symmetric_sqrt(Sigma: np.ndarray) -> np.ndarray:
    eig = sym_eig(Sigma)
    U = eig.eigenvectors
    return (U * np.sqrt(np.maximum(eig.eigenvalues, 0.0))) @ U.T


def sample_gaussian(pop: PopulationModel, n0: int, n1: int, rng: np.random.Generator,
                    route: str = 'cholesky') -> LabeledDataset:
    """
    Draw n0 columns from N(mu0, Sigma) followed by n1 columns from N(mu1, Sigma).

    route: 'cholesky' colors white noise with the Cholesky factor, 'sqrt' with
    the symmetric square root; both give the same law.
    """
    if n0 < 1 or n1 < 1:
        raise EmptyClass(f"Both classes need samples, got n0={n0}, n1={n1}")
    if route not in ROUTES:
        raise DomainError(f"route must be one of {ROUTES}, got '{route}'")
    factor = pop.cholesky if route == 'cholesky' else _symmetric_sqrt(pop.Sigma)
    noise = rng.standard_normal((pop.p, n0 + n1))
    X = factor @ noise
    X[:, :n0] += pop.mu0[:, None]
    X[:, n0:] += pop.mu1[:, None]
    labels = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    return LabeledDataset(X, labels)


@dataclass(frozen=True)
class ScenarioConfig:
    model: CovModel
    n: int
    nu_sq: float
    pi0: float = 0.5
    trials: int = 100
    seed: int = 0
    test_size: int = 1000

    def __post_init__(self):
        if not 0.0 < self.pi0 < 1.0:
            raise DomainError(f"pi0 must lie in (0, 1), got {self.pi0}")
        if self.n * min(self.pi0, 1.0 - self.pi0) < 2:
            raise InsufficientSamples(f"n={self.n} is too small for pi0={self.pi0}")
        if self.trials < 1:
            raise DomainError(f"trials must be at least 1, got {self.trials}")
        if self.test_size < 2:
            raise DomainError(f"test_size must be at least 2, got {self.test_size}")
        if not self.nu_sq > 0:
            raise DomainError(f"nu_sq must be positive, got {self.nu_sq}")

    @property
    def p(self) -> int:
        return self.model.p

    def with_size(self, p: int, n: int) -> 'ScenarioConfig':
        return replace(self, model=CovModel(self.model.kind, p), n=n)

    def population(self) -> PopulationModel:
        return make_population(self.model, self.nu_sq, self.pi0)

    def train_counts(self) -> Tuple[int, int]:
        return class_counts(self.n, self.pi0)

    def test_counts(self) -> Tuple[int, int]:
        return class_counts(self.test_size, self.pi0, minimum=1)


if __name__ == "__main__":
    for kind in COV_KINDS:
        Sigma = build_cov(CovModel(kind, 12), check_pd=False)
        print(f"{kind}: first row {np.round(Sigma[0], 3)}")
    pop = make_population(CovModel('model1', 100), 0.5)
    print(f"\nmodel1, p=100, nu^2=0.5: k = {pop.mu0[0]:.5f}, Mahalanobis^2 = {pop.nu_sq:.6f}")
    data = sample_gaussian(pop, 25, 25, trial_rng(1, 0))
    print(f"sampled dataset: p={data.p}, n0={data.n0}, n1={data.n1}")

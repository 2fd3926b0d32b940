"""
Core statistics for binary discriminant analysis
Dataset container, class means, pooled covariance, symmetric eigendecomposition
and the population model used by oracles and synthetic generators
"""

import logging
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg

from errors import (
    ConvergenceFailure,
    DataFormatError,
    DimensionMismatch,
    DomainError,
    EmptyClass,
    InsufficientSamples,
    NonFinite,
    SingularSigma,
)

logger = logging.getLogger(__name__)

LABEL_COLUMN = 'label'
EIGEN_CLAMP_TOL = 1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _read_raw(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataFormatError(f"Data file not found: {path}")
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise DataFormatError(f"Empty data file: {path}") from e
    except pd.errors.ParserError as e:
        raise DataFormatError(f"Malformed CSV {path}: {e}") from e


def _numeric_block(raw: pd.DataFrame, columns: Sequence[str], path: str) -> np.ndarray:
    """Parse the named columns into a p x n float matrix, failing on the first bad cell"""
    if not columns:
        raise DataFormatError(f"No feature columns in {path}")
    block = []
    for name in columns:
        values = pd.to_numeric(raw[name].str.strip(), errors='coerce').to_numpy(dtype=float)
        bad = ~np.isfinite(values)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DataFormatError(
                f"Non-numeric or missing value '{raw[name].iloc[row]}'",
                line=row + 2, column=name,
            )
        block.append(values)
    return np.vstack(block)


def read_feature_matrix(path: str) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """Feature columns of a CSV (a 'label' column, if present, is ignored) as p x n"""
    raw = _read_raw(path)
    columns = [c for c in raw.columns if c != LABEL_COLUMN]
    return _numeric_block(raw, columns, path), tuple(columns)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix (p x n, one observation per column) with 0/1 labels"""
    features: np.ndarray
    labels: np.ndarray
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        labels = np.array(self.labels).reshape(-1)

        if features.ndim != 2:
            raise DimensionMismatch(f"Features must be a p x n matrix, got shape {features.shape}")
        if labels.shape[0] != features.shape[1]:
            raise DimensionMismatch(
                f"{labels.shape[0]} labels for {features.shape[1]} observations"
            )
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise DomainError("Labels must be 0 or 1")
        if not np.isfinite(features).all():
            raise NonFinite("Feature matrix contains non-finite values")

        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(features.shape[0]))
        if len(names) != features.shape[0]:
            raise DimensionMismatch(f"{len(names)} feature names for {features.shape[0]} features")

        object.__setattr__(self, 'features', _readonly(features))
        object.__setattr__(self, 'labels', _readonly(labels.astype(np.int64)))
        object.__setattr__(self, 'feature_names', names)

    @property
    def p(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def n0(self) -> int:
        return int(np.count_nonzero(self.labels == 0))

    @property
    def n1(self) -> int:
        return int(np.count_nonzero(self.labels == 1))

    def class_block(self, label: int) -> np.ndarray:
        return self.features[:, self.labels == label]

    @classmethod
    def from_csv(cls, path: str) -> 'LabeledDataset':
        """
        Read a CSV with a header row, a 'label' column with values 0/1 and
        numeric feature columns (kept in header order).
        """
        raw = _read_raw(path)
        if LABEL_COLUMN not in raw.columns:
            raise DataFormatError(f"Missing '{LABEL_COLUMN}' column in {path}")
        feature_columns = [c for c in raw.columns if c != LABEL_COLUMN]

        # header is line 1, first data row is line 2
        label_text = raw[LABEL_COLUMN].str.strip()
        bad_labels = ~label_text.isin(('0', '1'))
        if bad_labels.any():
            row = int(np.flatnonzero(bad_labels.to_numpy())[0])
            raise DataFormatError(
                f"Label must be 0 or 1, got '{raw[LABEL_COLUMN].iloc[row]}'",
                line=row + 2, column=LABEL_COLUMN,
            )

        features = _numeric_block(raw, feature_columns, path)
        logger.info("Loaded %s: p=%d, n=%d", path, features.shape[0], features.shape[1])
        return cls(features, label_text.astype(int).to_numpy(), tuple(feature_columns))

    def to_csv(self, path: str) -> None:
        frame = pd.DataFrame(self.features.T, columns=list(self.feature_names))
        frame[LABEL_COLUMN] = self.labels
        write_csv(frame, path)


@dataclass(frozen=True, eq=False)
class ClassStats:
    """Sample means, pooled covariance and class counts"""
    m0: np.ndarray
    m1: np.ndarray
    S: np.ndarray
    n0: int
    n1: int

    @property
    def p(self) -> int:
        return self.m0.shape[0]

    @property
    def n(self) -> int:
        return self.n0 + self.n1

    @property
    def n_tilde(self) -> int:
        return self.n - 2

    @property
    def pi0_hat(self) -> float:
        return self.n0 / self.n

    @property
    def pi1_hat(self) -> float:
        return self.n1 / self.n

    @property
    def tau_hat(self) -> float:
        return float(np.log(self.n1 / self.n0))

    @cached_property
    def m(self) -> np.ndarray:
        return _readonly(self.m0 - self.m1)


@dataclass(frozen=True, eq=False)
class SymEig:
    """Descending eigenvalues and matching orthonormal eigenvectors (columns)"""
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def p(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def largest(self) -> float:
        return float(self.eigenvalues[0]) if self.p else 0.0

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.eigenvalues > 0))

    def coefficients(self, v: np.ndarray) -> np.ndarray:
        """Coordinates of v (vector or column block) in the eigenbasis"""
        return self.eigenvectors.T @ v

    def reconstruct(self) -> np.ndarray:
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.T


@dataclass(frozen=True, eq=False)
class PopulationModel:
    """Ground-truth Gaussian classes N(mu0, Sigma) and N(mu1, Sigma)"""
    mu0: np.ndarray
    mu1: np.ndarray
    Sigma: np.ndarray
    pi0: float = 0.5

    def __post_init__(self):
        mu0 = np.array(self.mu0, dtype=float).reshape(-1)
        mu1 = np.array(self.mu1, dtype=float).reshape(-1)
        Sigma = np.array(self.Sigma, dtype=float)
        p = mu0.shape[0]
        if mu1.shape[0] != p or Sigma.shape != (p, p):
            raise DimensionMismatch(
                f"Population shapes disagree: mu0 {mu0.shape}, mu1 {mu1.shape}, Sigma {Sigma.shape}"
            )
        if not 0.0 < self.pi0 < 1.0:
            raise DomainError(f"pi0 must lie in (0, 1), got {self.pi0}")
        if not (np.isfinite(mu0).all() and np.isfinite(mu1).all() and np.isfinite(Sigma).all()):
            raise NonFinite("Population parameters contain non-finite values")
        try:
            factor = linalg.cho_factor(Sigma, lower=True)
        except linalg.LinAlgError as e:
            raise SingularSigma("Sigma is not positive definite") from e

        object.__setattr__(self, 'mu0', _readonly(mu0))
        object.__setattr__(self, 'mu1', _readonly(mu1))
        object.__setattr__(self, 'Sigma', _readonly(Sigma))
        object.__setattr__(self, '_factor', factor)

    @property
    def p(self) -> int:
        return self.mu0.shape[0]

    @property
    def pi1(self) -> float:
        return 1.0 - self.pi0

    @cached_property
    def mu(self) -> np.ndarray:
        return _readonly(self.mu0 - self.mu1)

    @cached_property
    def cholesky(self) -> np.ndarray:
        return _readonly(np.tril(self._factor[0]))

    def solve(self, v: np.ndarray) -> np.ndarray:
        """Sigma^{-1} v"""
        return linalg.cho_solve(self._factor, v)

    @cached_property
    def nu_sq(self) -> float:
        return float(self.mu @ self.solve(self.mu))


def _canonical_columns(block: np.ndarray) -> np.ndarray:
    # lexicographic column order, so accumulation order does not depend on sample order
    if block.shape[1] < 2:
        return block
    order = np.lexsort(block[::-1])
    return block[:, order]


def sample_means(data: LabeledDataset) -> Tuple[np.ndarray, np.ndarray]:
    means = []
    for label in (0, 1):
        block = data.class_block(label)
        if block.shape[1] == 0:
            raise EmptyClass(f"Class {label} has no samples")
        means.append(_canonical_columns(block).mean(axis=1))
    return means[0], means[1]


def pooled_covariance(data: LabeledDataset) -> ClassStats:
    """
    Pooled sample covariance S = ((n0-1) S0 + (n1-1) S1) / (n-2)

    Returns:
        ClassStats with the class means, S (symmetrized) and class counts
    """
    n0, n1 = data.n0, data.n1
    if n0 < 2 or n1 < 2:
        raise InsufficientSamples(f"Each class needs at least 2 samples (n0={n0}, n1={n1})")

    means = []
    scatter = np.zeros((data.p, data.p))
    for label in (0, 1):
        block = _canonical_columns(data.class_block(label))
        mean = block.mean(axis=1)
        centered = block - mean[:, None]
        scatter += centered @ centered.T
        means.append(mean)

    S = scatter / (n0 + n1 - 2)
    S = (S + S.T) / 2
    return ClassStats(_readonly(means[0]), _readonly(means[1]), _readonly(S), n0, n1)


def sym_eig(S: np.ndarray, clamp_tol: float = EIGEN_CLAMP_TOL) -> SymEig:
    """
    Eigendecomposition of a symmetric matrix, eigenvalues in descending order.
    Eigenvalues within clamp_tol * largest of zero (either sign) are set to zero.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"Expected a square matrix, got shape {S.shape}")
    if not np.isfinite(S).all():
        raise NonFinite("Matrix contains non-finite values")
    try:
        values, vectors = linalg.eigh(S, check_finite=False)
    except linalg.LinAlgError as e:
        raise ConvergenceFailure(f"Eigendecomposition failed: {e}") from e

    values = values[::-1].copy()
    vectors = vectors[:, ::-1].copy()
    if values.size:
        threshold = clamp_tol * max(values[0], 0.0)
        values[np.abs(values) <= threshold] = 0.0
    return SymEig(_readonly(values), _readonly(vectors))


def calibrate_mean_scale(Sigma: np.ndarray, nu_sq: float) -> float:
    """
    Scale k such that mu0 = k*1, mu1 = -mu0 has squared Mahalanobis distance nu_sq,
    i.e. 4 k^2 1' Sigma^{-1} 1 = nu_sq.
    """
    if not (np.isfinite(nu_sq) and nu_sq > 0):
        raise DomainError(f"nu_sq must be positive, got {nu_sq}")
    Sigma = np.asarray(Sigma, dtype=float)
    ones = np.ones(Sigma.shape[0])
    try:
        factor = linalg.cho_factor(Sigma, lower=True)
    except linalg.LinAlgError as e:
        raise SingularSigma("Sigma is not positive definite") from e
    quad = float(ones @ linalg.cho_solve(factor, ones))
    return float(np.sqrt(nu_sq / (4.0 * quad)))


def mahalanobis(pop: PopulationModel) -> float:
    """Squared Mahalanobis distance between the class means"""
    return pop.nu_sq


def write_csv(frame: pd.DataFrame, path: str, comment: Optional[str] = None) -> None:
    """Write a result table, optionally preceded by one '# ...' comment line"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', newline='') as f:
        if comment:
            f.write(f"# {comment}\n")
        frame.to_csv(f, index=False, float_format='%.17g', na_rep='nan')


def dataset_from_blocks(class0: np.ndarray, class1: np.ndarray,
                        feature_names: Optional[Sequence[str]] = None) -> LabeledDataset:
    """Stack two p x n_i blocks into one dataset, class 0 first"""
    class0 = np.atleast_2d(np.asarray(class0, dtype=float))
    class1 = np.atleast_2d(np.asarray(class1, dtype=float))
    if class0.shape[0] != class1.shape[0]:
        raise DimensionMismatch(f"Class blocks have {class0.shape[0]} and {class1.shape[0]} features")
    labels = np.concatenate([np.zeros(class0.shape[1], dtype=int), np.ones(class1.shape[1], dtype=int)])
    return LabeledDataset(np.hstack([class0, class1]), labels, tuple(feature_names or ()))


if __name__ == "__main__":
    data = dataset_from_blocks([[0.0, 2.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 2.0]])
    stats = pooled_covariance(data)
    print("=== Core statistics demo ===\n")
    print(f"m0 = {stats.m0}, m1 = {stats.m1}")
    print(f"S =\n{stats.S}")
    print(f"eigenvalues: {sym_eig(stats.S).eigenvalues}")

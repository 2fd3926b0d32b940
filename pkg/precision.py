"""
Precision-matrix estimators
The nonlinear operator S(S + gamma I)^-2 and the linear ridge forms, all held
as a filtered spectrum over one eigenbasis
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Optional, Tuple, Union

import numpy as np

from core_stats import SymEig, sym_eig
from errors import AllZeroSpectrum, DimensionMismatch, DomainError, SingularTarget

logger = logging.getLogger(__name__)

TARGET_CONDITION_TOL = 1e-12


class PrecisionKind(str, Enum):
    NL = 'nl'
    LINEAR_A = 'linear_a'
    LINEAR_B = 'linear_b'
    LINEAR_TARGET = 'linear_target'

    @classmethod
    def parse(cls, value: Union[str, 'PrecisionKind']) -> 'PrecisionKind':
        """Accepts 'nl', 'LinearA', 'linear-b', 'linear_target' and similar spellings"""
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace('-', '').replace('_', '')
        aliases = {
            'nl': cls.NL,
            'lineara': cls.LINEAR_A,
            'linearb': cls.LINEAR_B,
            'lineartarget': cls.LINEAR_TARGET,
            'linearc': cls.LINEAR_TARGET,
        }
        if key not in aliases:
            raise DomainError(f"Unknown precision kind '{value}'")
        return aliases[key]


@dataclass(frozen=True)
class RegParam:
    gamma: float

    def __post_init__(self):
        gamma = float(self.gamma)
        if not (np.isfinite(gamma) and gamma > 0):
            raise DomainError(f"gamma must be positive and finite, got {self.gamma}")
        object.__setattr__(self, 'gamma', gamma)

    @property
    def z(self) -> float:
        return -self.gamma


def as_reg_param(gamma: Union[float, RegParam]) -> RegParam:
    return gamma if isinstance(gamma, RegParam) else RegParam(gamma)


@dataclass(frozen=True, eq=False)
class PrecisionOperator:
    """
    H = U diag(spectrum) U^T.

    For NL, LinearA and LinearB the basis is the eigenbasis of S. For
    LinearTarget it is the eigenbasis of gamma S + (1 - gamma) F.
    """
    kind: PrecisionKind
    gamma: RegParam
    eig: SymEig
    spectrum: np.ndarray
    target: Optional[np.ndarray] = None

    @property
    def p(self) -> int:
        return self.eig.p

    def apply(self, v: np.ndarray) -> np.ndarray:
        """H v for a vector or a p x k block"""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.p:
            raise DimensionMismatch(f"Operator is {self.p}-dimensional, got input of shape {v.shape}")
        coeffs = self.eig.coefficients(v)
        if coeffs.ndim == 1:
            coeffs = self.spectrum * coeffs
        else:
            coeffs = self.spectrum[:, None] * coeffs
        return self.eig.eigenvectors @ coeffs

    def quadratic(self, u: np.ndarray, v: Optional[np.ndarray] = None) -> float:
        """u^T H v (v defaults to u)"""
        cu = self.eig.coefficients(np.asarray(u, dtype=float))
        cv = cu if v is None else self.eig.coefficients(np.asarray(v, dtype=float))
        return float(np.dot(cu * self.spectrum, cv))

    @cached_property
    def matrix(self) -> np.ndarray:
        U = self.eig.eigenvectors
        H = (U * self.spectrum) @ U.T
        H = (H + H.T) / 2
        H.setflags(write=False)
        return H


def nl_precision(eig: SymEig, gamma: Union[float, RegParam]) -> PrecisionOperator:
    """H = S (S + gamma I)^-2, eigenvalues lambda / (lambda + gamma)^2"""
    reg = as_reg_param(gamma)
    lam = eig.eigenvalues
    spectrum = lam / (lam + reg.gamma) ** 2
    spectrum.setflags(write=False)
    return PrecisionOperator(PrecisionKind.NL, reg, eig, spectrum)


def ridge_precision(S: Optional[np.ndarray], gamma: Union[float, RegParam], kind,
                    F: Optional[np.ndarray] = None, eig: Optional[SymEig] = None) -> PrecisionOperator:
    """
    Linear ridge precision estimators.

    Args:
        S: pooled covariance (may be None when eig is given, except for LinearTarget)
        gamma: regularization
        kind: LINEAR_A -> (gamma S + I)^-1, LINEAR_B -> (S + gamma I)^-1,
              LINEAR_TARGET -> (gamma S + (1 - gamma) F)^-1, NL -> nl_precision
        F: target for LINEAR_TARGET, defaults to diag(S)
        eig: precomputed eigendecomposition of S, reused across a sweep

    Returns:
        PrecisionOperator
    """
    kind = PrecisionKind.parse(kind)
    reg = as_reg_param(gamma)
    g = reg.gamma

    if kind == PrecisionKind.LINEAR_TARGET:
        return _target_precision(S if S is not None else _reconstruct(eig), reg, F)

    if eig is None:
        if S is None:
            raise DimensionMismatch("ridge_precision needs S or its eigendecomposition")
        eig = sym_eig(S)
    if kind == PrecisionKind.NL:
        return nl_precision(eig, reg)

    lam = eig.eigenvalues
    if kind == PrecisionKind.LINEAR_A:
        spectrum = 1.0 / (g * lam + 1.0)
    else:
        spectrum = 1.0 / (lam + g)
    spectrum.setflags(write=False)
    return PrecisionOperator(kind, reg, eig, spectrum)


def _reconstruct(eig: Optional[SymEig]) -> np.ndarray:
    if eig is None:
        raise DimensionMismatch("LinearTarget needs S")
    return eig.reconstruct()


def _target_precision(S: np.ndarray, reg: RegParam, F: Optional[np.ndarray]) -> PrecisionOperator:
    g = reg.gamma
    if not g < 1.0:
        raise DomainError(f"LinearTarget needs gamma in (0, 1), got {g}")
    S = np.asarray(S, dtype=float)
    F = np.diag(np.diag(S)) if F is None else np.array(F, dtype=float)
    if F.shape != S.shape:
        raise DimensionMismatch(f"Target shape {F.shape} does not match S {S.shape}")

    blend = g * S + (1.0 - g) * F
    eig = sym_eig((blend + blend.T) / 2)
    lam = eig.eigenvalues
    if lam.size == 0 or lam[-1] <= TARGET_CONDITION_TOL * max(lam[0], 0.0) or lam[-1] <= 0:
        raise SingularTarget(f"gamma S + (1 - gamma) F is not invertible at gamma={g}")
    spectrum = 1.0 / lam
    spectrum.setflags(write=False)
    F.setflags(write=False)
    return PrecisionOperator(PrecisionKind.LINEAR_TARGET, reg, eig, spectrum, target=F)


def filter_coeff(lam, gamma: float, kind=PrecisionKind.NL):
    """
    Weight the estimator puts on an eigen-direction of S relative to the
    unregularized inverse: NL lambda^2/(lambda+gamma)^2, LinearB lambda/(lambda+gamma),
    LinearA gamma lambda/(gamma lambda + 1).
    """
    kind = PrecisionKind.parse(kind)
    lam_arr = np.asarray(lam, dtype=float)
    if (lam_arr < 0).any() or not gamma > 0:
        raise DomainError("filter_coeff needs lambda >= 0 and gamma > 0")
    if kind == PrecisionKind.NL:
        out = lam_arr ** 2 / (lam_arr + gamma) ** 2
    elif kind == PrecisionKind.LINEAR_B:
        out = lam_arr / (lam_arr + gamma)
    elif kind == PrecisionKind.LINEAR_A:
        out = gamma * lam_arr / (gamma * lam_arr + 1.0)
    else:
        raise DomainError("LinearTarget has no filter in the eigenbasis of S")
    return float(out) if out.ndim == 0 else out


def contribution_ratios(lambdas: np.ndarray, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Filter weight of each eigen-direction relative to the leading one.

    Returns:
        (rho_linear, rho_nl) with rho_nl = rho_linear ** 2
    """
    lam = np.asarray(lambdas, dtype=float)
    lam1 = float(lam.max()) if lam.size else 0.0
    if lam1 <= 0:
        raise AllZeroSpectrum("Contribution ratios need a nonzero leading eigenvalue")
    rho_linear = (lam1 * lam + gamma * lam) / (lam1 * lam + gamma * lam1)
    return rho_linear, rho_linear ** 2


if __name__ == "__main__":
    eig = sym_eig(np.diag([4.0, 1.0, 0.0]))
    print("=== Precision operators demo ===\n")
    for g in (0.1, 1.0, 10.0):
        H = nl_precision(eig, g)
        print(f"gamma={g:>5}: NL spectrum {H.spectrum}, filter {filter_coeff(eig.eigenvalues, g)}")
    rho_l, rho_nl = contribution_ratios(eig.eigenvalues, 1.0)
    print(f"\nratios at gamma=1: linear {rho_l}, nonlinear {rho_nl}")

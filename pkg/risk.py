"""
Consistent misclassification-rate estimator for the nonlinear RLDA classifier
Resolvent trace statistics of S at z = -gamma, the e-hat quantities, theta_G,
D_c and the per-class / total error estimates
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import erfc

from core_stats import SymEig, write_csv
from errors import (
    ConfigError,
    DegenerateD,
    DegenerateError,
    DegeneratePrime,
    DegenerateTrace,
    DimensionMismatch,
    DomainError,
)

logger = logging.getLogger(__name__)

E_NUMERATORS = ('appendix', 'theorem')
FORMULAS = ('standard', 'derived')
RISK_CURVE_COLUMNS = ['gamma', 'eps_hat', 'eps0_hat', 'eps1_hat', 'degenerate_flag']


def normal_cdf(x):
    """Standard normal CDF through erfc, accurate in both tails"""
    out = 0.5 * erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RiskSettings:
    """
    e_numerator: 'appendix' uses tr[SQ] in the numerator of e-hat, 'theorem' uses tr[SQ^2].
    formulas: 'standard' (default) uses theta-hat/n_i in the mean-bias term and the closed-form D_c;
        'derived' scales the bias by n_tilde and evaluates D_c as an eigenbasis sum of squares.
    """
    e_numerator: str = 'appendix'
    formulas: str = 'standard'

    def __post_init__(self):
        if self.e_numerator not in E_NUMERATORS:
            raise ConfigError(f"e_numerator must be one of {E_NUMERATORS}, got '{self.e_numerator}'")
        if self.formulas not in FORMULAS:
            raise ConfigError(f"formulas must be one of {FORMULAS}, got '{self.formulas}'")


DEFAULT_SETTINGS = RiskSettings()


@dataclass(frozen=True)
class ResolventStats:
    """Trace and quadratic-form statistics of Q = (S - zI)^-1 at z = -gamma"""
    gamma: float
    n_tilde: int
    t1: float
    t2: float
    t3: float
    q1: float
    q2: float
    q3: float

    @property
    def z(self) -> float:
        return -self.gamma


@dataclass(frozen=True)
class EQuantities:
    e_hat: float
    e_hat_prime: float
    x_hat: float
    x_hat_prime: float


@dataclass(frozen=True)
class ConsistentRisk:
    gamma: float
    e_hat: float
    e_hat_prime: float
    x_hat: float
    x_hat_prime: float
    theta_G_hat: float
    D_c: float
    eps0_hat: float
    eps1_hat: float
    eps_hat: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class RiskPoint:
    gamma: float
    eps_hat: float
    eps0_hat: float
    eps1_hat: float
    degenerate: bool = False
    reason: Optional[str] = None


def resolvent_stats(eig: SymEig, m: np.ndarray, gamma: float, n_tilde: int) -> ResolventStats:
    """
    Evaluate t1..t3 and q1..q3 in the eigenbasis of S.

    Args:
        eig: eigendecomposition of S
        m: mean difference m0 - m1
        gamma: regularization (> 0)
        n_tilde: n - 2
    """
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    if n_tilde < 1:
        raise DomainError(f"n_tilde must be positive, got {n_tilde}")
    m = np.asarray(m, dtype=float)
    if m.shape != (eig.p,):
        raise DimensionMismatch(f"Mean difference has shape {m.shape}, expected ({eig.p},)")

    lam = eig.eigenvalues
    d = lam + gamma
    c_sq = eig.coefficients(m) ** 2
    weighted = lam * c_sq
    return ResolventStats(
        gamma=float(gamma),
        n_tilde=int(n_tilde),
        t1=float(np.sum(lam / d)) / n_tilde,
        t2=float(np.sum(lam / d ** 2)) / n_tilde,
        t3=float(np.sum(lam / d ** 3)) / n_tilde,
        q1=float(np.sum(weighted / d ** 2)),
        q2=float(np.sum(weighted / d ** 3)),
        q3=float(np.sum(weighted / d ** 4)),
    )


def e_quantities(stats: ResolventStats, settings: RiskSettings = DEFAULT_SETTINGS) -> EQuantities:
    """e-hat, its z-derivative, x-hat = 1/(1+e-hat) and x-hat'"""
    t1, t2, t3 = stats.t1, stats.t2, stats.t3
    if not t1 < 1.0:
        raise DegenerateTrace(f"(1/n_tilde) tr[SQ] = {t1} is not below 1")
    denom = 1.0 - t1
    if settings.e_numerator == 'appendix':
        e = t1 / denom
        e_prime = t2 / denom ** 2
    else:
        # d t2 / dz = 2 t3
        e = t2 / denom
        e_prime = (2.0 * t3 * denom + t2 * t2) / denom ** 2
    x = 1.0 / (1.0 + e)
    return EQuantities(e, e_prime, x, -e_prime * x * x)


def e_hat(stats: ResolventStats, settings: RiskSettings = DEFAULT_SETTINGS) -> float:
    return e_quantities(stats, settings).e_hat


def e_hat_prime(stats: ResolventStats, settings: RiskSettings = DEFAULT_SETTINGS) -> float:
    return e_quantities(stats, settings).e_hat_prime


def theta_G_hat(stats: ResolventStats, eq: EQuantities) -> float:
    """Consistent estimate of (1/n_tilde) tr[Sigma H] for the nonlinear H"""
    if not eq.e_hat_prime > 0:
        raise DegeneratePrime("e-hat' vanishes (S = 0)")
    z = stats.z
    numerator = eq.e_hat_prime * (eq.x_hat - z * eq.x_hat_prime) - stats.t2
    return numerator / (eq.e_hat_prime * eq.x_hat ** 2)


def d_consistent(stats: ResolventStats, eq: EQuantities, formulas: str = 'standard') -> float:
    """
    Consistent estimate of D = m^T H Sigma H m.

    Standard form: z^2 (1+e)^4 q3 + 2 z (1+e)^2 q2 + ((1+e)^2 + 2 z e' (1+e)) q1.
    The derived form is the eigenbasis sum of squares
    sum_d lambda c^2 / (lambda+gamma)^2 [(1+e) lambda/(lambda+gamma) + z e']^2,
    rewritten through q1..q3; it is never negative.
    """
    z = stats.z
    a = 1.0 + eq.e_hat
    q1, q2, q3 = stats.q1, stats.q2, stats.q3
    if formulas == 'standard':
        return z * z * a ** 4 * q3 + 2.0 * z * a * a * q2 + (a * a + 2.0 * z * eq.e_hat_prime * a) * q1
    b = z * eq.e_hat_prime
    return a * a * (q1 + 2.0 * z * q2 + z * z * q3) + 2.0 * a * b * (q1 + z * q2) + b * b * q1


def epsilon_hat(stats: ResolventStats, eq: EQuantities, class_counts: Tuple[int, int],
                G_values: Tuple[float, float], settings: RiskSettings = DEFAULT_SETTINGS) -> ConsistentRisk:
    """
    Per-class and total error estimates.

    Args:
        stats: resolvent statistics at gamma
        eq: e-hat quantities for the same stats
        class_counts: (n0, n1) of the training data
        G_values: (G(m0), G(m1)) for the operator being assessed
    """
    n0, n1 = class_counts
    theta = theta_G_hat(stats, eq)
    D = d_consistent(stats, eq, settings.formulas)
    if not (np.isfinite(D) and D > 0):
        raise DegenerateD(f"D_c = {D} at gamma = {stats.gamma}", value=float(D))

    scale = 1.0 if settings.formulas == 'standard' else float(stats.n_tilde)
    tau = float(np.log(n1 / n0))
    root = np.sqrt(D)
    eps0 = normal_cdf((-G_values[0] + scale * theta / n0 + tau) / root)
    eps1 = normal_cdf((G_values[1] + scale * theta / n1 - tau) / root)
    n = n0 + n1
    eps = (n0 / n) * eps0 + (n1 / n) * eps1
    return ConsistentRisk(
        gamma=stats.gamma,
        e_hat=eq.e_hat,
        e_hat_prime=eq.e_hat_prime,
        x_hat=eq.x_hat,
        x_hat_prime=eq.x_hat_prime,
        theta_G_hat=theta,
        D_c=float(D),
        eps0_hat=eps0,
        eps1_hat=eps1,
        eps_hat=eps,
    )


def consistent_risk(eig: SymEig, m: np.ndarray, gamma: float, n0: int, n1: int,
                    settings: RiskSettings = DEFAULT_SETTINGS) -> ConsistentRisk:
    """All estimator quantities at one gamma for the nonlinear operator"""
    stats = resolvent_stats(eig, m, gamma, n0 + n1 - 2)
    eq = e_quantities(stats, settings)
    # m^T H m = q1 for H = S(S + gamma I)^-2
    half = 0.5 * stats.q1
    return epsilon_hat(stats, eq, (n0, n1), (half, -half), settings)


def risk_point(eig, m, gamma, n0, n1, settings) -> RiskPoint:
    try:
        r = consistent_risk(eig, m, gamma, n0, n1, settings)
    except DegenerateError as e:
        logger.warning("Degenerate grid point gamma=%g: %s", gamma, e)
        return RiskPoint(float(gamma), np.nan, np.nan, np.nan, degenerate=True, reason=str(e))
    return RiskPoint(float(gamma), r.eps_hat, r.eps0_hat, r.eps1_hat)


def sweep_risk(eig: SymEig, m: np.ndarray, gammas: Iterable[float], n0: int, n1: int,
               settings: RiskSettings = DEFAULT_SETTINGS, workers: int = 1) -> List[RiskPoint]:
    """Evaluate the estimate on a grid; degenerate points are recorded, not raised"""
    gammas = [float(g) for g in gammas]
    if workers > 1 and len(gammas) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda g: risk_point(eig, m, g, n0, n1, settings), gammas))
    return [risk_point(eig, m, g, n0, n1, settings) for g in gammas]


def risk_curve_frame(points: Sequence[RiskPoint]) -> pd.DataFrame:
    return pd.DataFrame({
        'gamma': [pt.gamma for pt in points],
        'eps_hat': [pt.eps_hat for pt in points],
        'eps0_hat': [pt.eps0_hat for pt in points],
        'eps1_hat': [pt.eps1_hat for pt in points],
        'degenerate_flag': [int(pt.degenerate) for pt in points],
    }, columns=RISK_CURVE_COLUMNS)


def write_risk_curve(points: Sequence[RiskPoint], path: str, comment: Optional[str] = None) -> None:
    write_csv(risk_curve_frame(points), path, comment)
    logger.info("Wrote risk curve (%d points) to %s", len(points), path)


if __name__ == "__main__":
    from core_stats import sym_eig

    eig = sym_eig(np.eye(2))
    m = np.array([1.0, -1.0])
    for formulas in FORMULAS:
        r = consistent_risk(eig, m, 1.0, 3, 3, RiskSettings(formulas=formulas))
        print(f"{formulas:>8}: e={r.e_hat:.4f} e'={r.e_hat_prime:.4f} theta={r.theta_G_hat:.4f} "
              f"D_c={r.D_c:.6f} eps={r.eps_hat:.4f}")

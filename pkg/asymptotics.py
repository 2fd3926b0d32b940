"""
Deterministic equivalents for the nonlinear RLDA classifier
Fixed points e(z) and b(z), their z-derivatives, the eta functional and the
limiting G, D and error for a known population. Everything is evaluated in
the eigenbasis of Sigma, where the resolvents are diagonal.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import root_scalar

from core_stats import PopulationModel, sym_eig, write_csv
from errors import ConfigError, DegenerateD, DimensionMismatch, DomainError, NoConvergence
from risk import normal_cdf

logger = logging.getLogger(__name__)

C_CONVENTIONS = ('ntilde', 'n')
FORMULAS = ('standard', 'derived')
B_NORMALIZATIONS = ('ntilde', 'p')
P_CAP = 500
INITIAL_DAMPING = 0.5
MIN_DAMPING = 1e-3
ASYMPTOTIC_COLUMNS = ['gamma', 'G_tilde_0', 'G_tilde_1', 'D_tilde', 'eps_bar']


@dataclass(frozen=True)
class AsymptoticSettings:
    """
    c_convention: 'ntilde' uses c = p/(n-2), 'n' uses c = p/n.
    formulas: 'standard' (default) takes G-tilde_1 = -G-tilde_0 and the closed-form
        first eta term; 'derived' keeps the class-count term in both G-tilde and
        the re-derived eta coefficients.
    b_normalization: 'ntilde' (default) or 'p', see solve_b.
    """
    c_convention: str = 'ntilde'
    formulas: str = 'standard'
    b_normalization: str = 'ntilde'
    tol: float = 1e-12
    max_iter: int = 10000

    def __post_init__(self):
        if self.c_convention not in C_CONVENTIONS:
            raise ConfigError(f"c_convention must be one of {C_CONVENTIONS}, got '{self.c_convention}'")
        if self.formulas not in FORMULAS:
            raise ConfigError(f"formulas must be one of {FORMULAS}, got '{self.formulas}'")
        if self.b_normalization not in B_NORMALIZATIONS:
            raise ConfigError(f"b_normalization must be one of {B_NORMALIZATIONS}, "
                              f"got '{self.b_normalization}'")


DEFAULT_SETTINGS = AsymptoticSettings()
# Conventions under which w coincides with x and the eta terms match sampled traces
MATCHED_SETTINGS = AsymptoticSettings(formulas='derived', b_normalization='p')


@dataclass(frozen=True, eq=False)
class AsymptoticState:
    """
    Fixed-point solution at one z < 0. P and P' are the diagonals of
    (w Sigma - zI)^-1 and its z-derivative in the eigenbasis of Sigma.
    Primed fields are None until derivatives() fills them.
    """
    z: float
    n_tilde: int
    c: float
    sigma_eigs: np.ndarray
    sigma_vectors: Optional[np.ndarray]
    settings: AsymptoticSettings
    e: float
    x: float
    phi: float
    phi_tilde: float
    b: float
    w: float
    P: np.ndarray
    xi_PP: float
    e_prime: Optional[float] = None
    x_prime: Optional[float] = None
    phi_prime: Optional[float] = None
    phi_tilde_prime: Optional[float] = None
    w_prime: Optional[float] = None
    P_prime: Optional[np.ndarray] = None
    xi_PPp: Optional[float] = None
    xi_PpPp: Optional[float] = None

    @property
    def p(self) -> int:
        return self.sigma_eigs.shape[0]

    @property
    def has_derivatives(self) -> bool:
        return self.e_prime is not None


@dataclass(frozen=True)
class DeterministicRisk:
    gamma: float
    G_tilde_0: float
    G_tilde_1: float
    D_tilde: float
    eps0_bar: float
    eps1_bar: float
    eps_bar: float


def _check_inputs(sigma_eigs, z: float) -> np.ndarray:
    sigma = np.asarray(sigma_eigs, dtype=float).reshape(-1)
    if not z < 0:
        raise DomainError(f"z must be negative, got {z}")
    if sigma.size == 0 or (sigma < 0).any() or not np.isfinite(sigma).all():
        raise DomainError("Eigenvalues of Sigma must be finite and nonnegative")
    return sigma


def _damped_fixed_point(update: Callable[[float], float], start: float, tol: float,
                        max_iter: int, label: str) -> float:
    """
    Iterate v <- (1 - omega) v + omega update(v). omega starts at 0.5, halves
    whenever the residual grows and otherwise relaxes back toward 1.
    """
    value = start
    omega = INITIAL_DAMPING
    previous = np.inf
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        target = update(value)
        if not np.isfinite(target):
            raise NoConvergence(f"{label} left the domain", residual, iteration)
        residual = abs(target - value)
        if residual <= tol * max(1.0, abs(value)):
            logger.debug("%s converged in %d iterations (residual %.3e)", label, iteration, residual)
            return value
        if residual > previous:
            omega = max(omega / 2, MIN_DAMPING)
        else:
            omega = min(1.0, omega * 1.2)
        value = (1.0 - omega) * value + omega * target
        previous = residual
    raise NoConvergence(f"{label} did not converge", residual, max_iter)


def solve_e(sigma_eigs, z: float, n_tilde: int, tol: float = 1e-12, max_iter: int = 10000,
            start: Optional[float] = None) -> Tuple[float, float]:
    """
    Solve e = (1/n_tilde) sum sigma / (x sigma - z), x = 1/(1+e).

    Returns:
        (e, x)
    """
    sigma = _check_inputs(sigma_eigs, z)
    if n_tilde < 1:
        raise DomainError(f"n_tilde must be positive, got {n_tilde}")

    def update(e: float) -> float:
        x = 1.0 / (1.0 + e)
        return float(np.sum(sigma / (x * sigma - z))) / n_tilde

    if start is None:
        start = float(np.sum(sigma / (sigma - z))) / n_tilde
    e = _damped_fixed_point(update, start, tol, max_iter, "e(z)")
    return e, 1.0 / (1.0 + e)


def solve_b(sigma_eigs, z: float, c: float, n_tilde: int, tol: float = 1e-12,
            max_iter: int = 10000, start: Optional[float] = None,
            normalization: str = 'ntilde') -> Tuple[float, float]:
    """
    Solve b = (1/n_tilde) sum 1 / (sigma (1 - c - c z b) - z), w = 1 - c z b.

    The sum runs over the p eigenvalues of Sigma. normalization='p' instead
    averages over p and returns w = 1 - c - c z b, which is the w that
    coincides with x. Falls back to a bracketed root in v = 1 - c - c z b
    in (0, 1] when the damped iteration fails.

    Returns:
        (b, w)
    """
    sigma = _check_inputs(sigma_eigs, z)
    if c < 0:
        raise DomainError(f"c must be nonnegative, got {c}")
    if normalization not in B_NORMALIZATIONS:
        raise ConfigError(f"normalization must be one of {B_NORMALIZATIONS}, got '{normalization}'")
    if n_tilde < 1:
        raise DomainError(f"n_tilde must be positive, got {n_tilde}")
    count = n_tilde if normalization == 'ntilde' else sigma.size
    shift = c if normalization == 'ntilde' else 0.0

    def v_of(b: float) -> float:
        return 1.0 - c - c * z * b

    def update(b: float) -> float:
        return float(np.sum(1.0 / (sigma * v_of(b) - z))) / count

    if start is None:
        start = 1.0 / abs(z)
    try:
        b = _damped_fixed_point(update, start, tol, max_iter, "b(z)")
    except NoConvergence as e:
        if c == 0:
            raise
        logger.debug("b(z) iteration failed (%s); bracketing v instead", e)

        def h(v: float) -> float:
            return v - 1.0 + c + c * z * float(np.sum(1.0 / (sigma * v - z))) / count

        result = root_scalar(h, bracket=[1e-300, 1.0], method='brentq', xtol=1e-15)
        if not result.converged:
            raise NoConvergence("b(z) bracketing failed", abs(h(result.root)), result.iterations) from e
        b = (1.0 - c - result.root) / (c * z)
    return b, v_of(b) + shift


def _c_value(p: int, n_tilde: int, settings: AsymptoticSettings) -> float:
    return p / n_tilde if settings.c_convention == 'ntilde' else p / (n_tilde + 2)


def solve_state(sigma_eigs, z: float, n_tilde: int, settings: AsymptoticSettings = DEFAULT_SETTINGS,
                sigma_vectors: Optional[np.ndarray] = None, c: Optional[float] = None,
                e_start: Optional[float] = None, b_start: Optional[float] = None) -> AsymptoticState:
    """Fixed points and the derivative-free quantities at z"""
    sigma = _check_inputs(sigma_eigs, z)
    c = _c_value(sigma.size, n_tilde, settings) if c is None else c
    e, x = solve_e(sigma, z, n_tilde, settings.tol, settings.max_iter, e_start)
    b, w = solve_b(sigma, z, c, n_tilde, settings.tol, settings.max_iter, b_start,
                   settings.b_normalization)

    phi = float(np.sum(sigma ** 2 / (x * sigma - z) ** 2)) / n_tilde
    P = 1.0 / (w * sigma - z)
    xi_PP = float(np.sum(sigma ** 2 * P * P)) / n_tilde
    return AsymptoticState(
        z=float(z), n_tilde=int(n_tilde), c=float(c), sigma_eigs=sigma, sigma_vectors=sigma_vectors,
        settings=settings, e=e, x=x, phi=phi, phi_tilde=x * x, b=b, w=w, P=P, xi_PP=xi_PP,
    )


def _richardson(f: Callable[[float], Tuple[float, float]], z: float, h: float) -> Tuple[float, float]:
    """Richardson-extrapolated central differences of a pair-valued function"""
    def central(step: float) -> np.ndarray:
        return (np.asarray(f(z + step)) - np.asarray(f(z - step))) / (2.0 * step)

    coarse = central(h)
    fine = central(h / 2)
    out = (4.0 * fine - coarse) / 3.0
    return float(out[0]), float(out[1])


def derivatives(state: AsymptoticState, h: Optional[float] = None) -> AsymptoticState:
    """
    Fill e', x', phi', phi-tilde', w' and P'.

    e' and w' come from re-solved fixed points at z +/- h; the rest follow
    exactly by the chain rule (x' = -e' x^2, phi-tilde' = 2 x x').
    """
    z = state.z
    if h is None:
        h = 1e-5 * max(1.0, abs(z))
    h = min(h, abs(z) / 4)
    sigma = state.sigma_eigs
    tight = min(state.settings.tol, 1e-13)

    def solved(zz: float) -> Tuple[float, float]:
        e, _ = solve_e(sigma, zz, state.n_tilde, tight, state.settings.max_iter, state.e)
        _, w = solve_b(sigma, zz, state.c, state.n_tilde, tight, state.settings.max_iter, state.b,
                       state.settings.b_normalization)
        return e, w

    e_prime, w_prime = _richardson(solved, z, h)
    x = state.x
    x_prime = -e_prime * x * x
    denom = x * sigma - z
    phi_prime = float(np.sum(-2.0 * sigma ** 2 * (x_prime * sigma - 1.0) / denom ** 3)) / state.n_tilde

    P = state.P
    P_prime = -(w_prime * sigma - 1.0) * P * P
    return replace(
        state,
        e_prime=e_prime,
        x_prime=x_prime,
        phi_prime=phi_prime,
        phi_tilde_prime=2.0 * x * x_prime,
        w_prime=w_prime,
        P_prime=P_prime,
        xi_PPp=float(np.sum(sigma ** 2 * P * P_prime)) / state.n_tilde,
        xi_PpPp=float(np.sum(sigma ** 2 * P_prime * P_prime)) / state.n_tilde,
    )


def analytic_e_prime(state: AsymptoticState) -> float:
    """e' = psi / (1 - phi x^2) with psi = (1/n_tilde) sum sigma / (x sigma - z)^2"""
    sigma = state.sigma_eigs
    psi = float(np.sum(sigma / (state.x * sigma - state.z) ** 2)) / state.n_tilde
    return psi / (1.0 - state.phi * state.x ** 2)


def eta_weights(omega: np.ndarray, state: AsymptoticState) -> float:
    """
    Deterministic equivalent of tr[Theta H Sigma H] for H = S(S - zI)^-2,
    given omega = diag(V^T Theta V) in the eigenbasis V of Sigma.
    """
    if not state.has_derivatives:
        state = derivatives(state)
    omega = np.asarray(omega, dtype=float)
    if omega.shape != state.sigma_eigs.shape:
        raise DimensionMismatch(f"Weights have shape {omega.shape}, expected {state.sigma_eigs.shape}")

    sigma = state.sigma_eigs
    z, x, x_prime = state.z, state.x, state.x_prime
    denom = x * sigma - z
    T2 = float(np.sum(omega * sigma / denom ** 2))
    T3 = float(np.sum(omega * sigma / denom ** 3))

    kappa = state.phi * state.phi_tilde
    kappa_prime = state.phi * state.phi_tilde_prime + state.phi_prime * state.phi_tilde
    one_minus = 1.0 - kappa
    ratio = x_prime / x
    if state.settings.formulas == 'standard':
        c2 = 1.0 / one_minus - z * (kappa_prime + 2.0 * ratio * one_minus) / one_minus ** 2
        c3 = 2.0 * (z - ratio * z * z) / one_minus ** 2
    else:
        c2 = 1.0 / one_minus + z * (kappa_prime - 2.0 * ratio * one_minus) / one_minus ** 2
        c3 = 2.0 * (z - z * z * ratio) / one_minus
    first = c2 * T2 + c3 * T3

    w, w_prime = state.w, state.w_prime
    P, P_prime = state.P, state.P_prime
    K = 1.0 - w * w * state.xi_PP
    A = w * w_prime * state.xi_PP + w * w * state.xi_PPp
    B = w_prime ** 2 * state.xi_PP + 2.0 * w * w_prime * state.xi_PPp + w * w * state.xi_PpPp
    N = float(np.sum(omega * sigma * P * P))
    N1 = float(np.sum(omega * sigma * P * P_prime))
    N12 = float(np.sum(omega * sigma * P_prime * P_prime))
    second = z * z * ((2.0 * A * A + K * B) / K ** 3 * N + 2.0 * A / K ** 2 * N1 + N12 / K)
    return first + second


def eta(Theta: np.ndarray, state: AsymptoticState) -> float:
    """eta for a symmetric p x p Theta; needs the eigenvectors of Sigma on the state"""
    if state.sigma_vectors is None:
        raise DomainError("eta needs the eigenvectors of Sigma on the state")
    Theta = np.asarray(Theta, dtype=float)
    V = state.sigma_vectors
    if Theta.shape != V.shape:
        raise DimensionMismatch(f"Theta has shape {Theta.shape}, expected {V.shape}")
    omega = np.einsum('ij,ik,kj->j', V, Theta, V)
    return eta_weights(omega, state)


def population_state(pop: PopulationModel, n0: int, n1: int, gamma: float,
                     settings: AsymptoticSettings = DEFAULT_SETTINGS) -> AsymptoticState:
    if pop.p > P_CAP:
        raise DomainError(f"The deterministic-equivalent oracle is limited to p <= {P_CAP}, got {pop.p}")
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    eig = sym_eig(pop.Sigma)
    state = solve_state(eig.eigenvalues, -gamma, n0 + n1 - 2, settings, eig.eigenvectors)
    return derivatives(state)


def deterministic_risk(pop: PopulationModel, n0: int, n1: int, gamma: float,
                       settings: AsymptoticSettings = DEFAULT_SETTINGS) -> DeterministicRisk:
    """
    Limits of G(mu_i), D and the error of the nonlinear classifier trained on
    n0 + n1 samples from pop at regularization gamma.
    """
    state = population_state(pop, n0, n1, gamma, settings)
    G0, G1 = _g_limits(state, pop, n0, n1)
    omega_mu = (state.sigma_vectors.T @ pop.mu) ** 2
    D = eta_weights(omega_mu, state) + (1.0 / n0 + 1.0 / n1) * eta_weights(state.sigma_eigs, state)
    if not (np.isfinite(D) and D > 0):
        raise DegenerateD(f"D-tilde = {D} at gamma = {gamma}", value=float(D))

    tau = float(np.log(n1 / n0))
    root = np.sqrt(D)
    eps0 = normal_cdf((-G0 + tau) / root)
    eps1 = normal_cdf((G1 - tau) / root)
    return DeterministicRisk(float(gamma), G0, G1, float(D), eps0, eps1, pop.pi0 * eps0 + pop.pi1 * eps1)


def deterministic_G(pop: PopulationModel, n0: int, n1: int, gamma: float,
                    settings: AsymptoticSettings = DEFAULT_SETTINGS) -> Tuple[float, float]:
    """Limits of G(mu_0) and G(mu_1) alone"""
    return _g_limits(population_state(pop, n0, n1, gamma, settings), pop, n0, n1)


def _g_limits(state: AsymptoticState, pop: PopulationModel, n0: int, n1: int) -> Tuple[float, float]:
    sigma = state.sigma_eigs
    z, x = state.z, state.x
    denom = x * sigma - z
    omega_mu = (state.sigma_vectors.T @ pop.mu) ** 2
    mean_term = float(np.sum(omega_mu * sigma / denom ** 2))
    trace_term = float(np.sum(sigma ** 2 / denom ** 2))
    scale = 0.5 * (x - state.x_prime * z)
    imbalance = 1.0 / n1 - 1.0 / n0
    G0 = scale * (mean_term + imbalance * trace_term)
    if state.settings.formulas == 'standard':
        return G0, -G0
    return G0, scale * (-mean_term + imbalance * trace_term)


def asymptotic_frame(results: Sequence[DeterministicRisk]) -> pd.DataFrame:
    return pd.DataFrame({
        'gamma': [r.gamma for r in results],
        'G_tilde_0': [r.G_tilde_0 for r in results],
        'G_tilde_1': [r.G_tilde_1 for r in results],
        'D_tilde': [r.D_tilde for r in results],
        'eps_bar': [r.eps_bar for r in results],
    }, columns=ASYMPTOTIC_COLUMNS)


def write_asymptotic_csv(results: Sequence[DeterministicRisk], path: str,
                         comment: Optional[str] = None) -> None:
    write_csv(asymptotic_frame(results), path, comment)


def asymptotic_curve(pop: PopulationModel, n0: int, n1: int, gammas: Sequence[float],
                     settings: AsymptoticSettings = DEFAULT_SETTINGS) -> List[DeterministicRisk]:
    """Deterministic risk over gammas; a point with D-tilde <= 0 keeps its G limits and NaN errors"""
    results = []
    for g in gammas:
        try:
            results.append(deterministic_risk(pop, n0, n1, g, settings))
        except DegenerateD as e:
            logger.warning("Skipping gamma = %g: %s", g, e)
            G0, G1 = deterministic_G(pop, n0, n1, g, settings)
            results.append(DeterministicRisk(float(g), G0, G1, e.value, np.nan, np.nan, np.nan))
    return results


if __name__ == "__main__":
    e, x = solve_e(np.ones(10), -1.0, 10)
    print("=== Deterministic equivalents demo ===\n")
    print(f"Sigma = I, p = n_tilde, z = -1: e = {e:.6f} (golden ratio conjugate 0.618034)")
    from synth import CovModel, make_population

    pop = make_population(CovModel('model1', 100), 5.0)
    for r in asymptotic_curve(pop, 100, 100, (0.1, 1.0, 10.0)):
        g = r.gamma
        print(f"gamma={g:>5}: G0={r.G_tilde_0:.4f} G1={r.G_tilde_1:.4f} D={r.D_tilde:.4f} eps={r.eps_bar:.4f}")

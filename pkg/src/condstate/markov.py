"""Markovian position measurements: spectra, closed-form conditional states, SQL bookkeeping.

The measured output is ``y = Z + x`` with ``x = R(Omega) F`` and white
sensing noise ``Z`` and force noise ``F``.  Everything here is in SI units;
the spectra handed to the Wiener engine are expressed in oscillator units
built on ``sqrt(q2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np
import scipy.optimize

from .errors import DomainError
from .gstate import HBAR, SingleModeState, uncertainty_product
from .ratfun import Polynomial, RationalFunction
from .wiener import CovarianceMatrix, SpectrumSet, conditional_covariance, spectra_from_channels

__all__ = [
    "MarkovModel",
    "HomodyneConfig",
    "ClassicalNoise",
    "markov_units",
    "markov_spectra",
    "mechanical_response",
    "conditional_cov_markov",
    "markov_conditional_covariance",
    "homodyne_model",
    "freemass_homodyne_cov",
    "squeezed_input_cov",
    "squeezing_db",
    "classical_noise_model",
    "optimal_measurement_frequency",
    "wiener_kernels_quantum_limit",
    "sql_psd",
]

# floor on damping and imaginary pole offset, relative to sqrt(q2)
REGULARIZATION = 1e-9


def sql_psd(omega, m: float, hbar: float = HBAR):
    """Free-mass standard quantum limit ``2 hbar / (m Omega^2)`` (m^2/Hz-equivalent)."""
    return 2 * hbar / (m * np.asarray(omega, dtype=float) ** 2)


@dataclass(frozen=True)
class MarkovModel:
    """Damped oscillator read out with white, possibly correlated, noises.

    Attributes
    ----------
    m : float
        Mass (kg).
    omega_m, gamma_m : float
        Eigenfrequency and damping rate (rad/s).
    S_ZZ, S_FF, S_ZF : float
        Single-sided sensing, force and cross spectral densities.
    quantum : bool
        Enforce ``mu >= 1``, the Heisenberg relation of the measurement.
    """

    m: float
    S_ZZ: float
    S_FF: float
    S_ZF: float = 0.0
    omega_m: float = 0.0
    gamma_m: float = 0.0
    hbar: float = HBAR
    quantum: bool = True

    def __post_init__(self):
        if self.m <= 0:
            raise DomainError("mass must be positive")
        if self.S_ZZ <= 0 or self.S_FF < 0:
            raise DomainError("S_ZZ must be positive and S_FF nonnegative")
        if self.omega_m < 0 or self.gamma_m < 0:
            raise DomainError("omega_m and gamma_m must be nonnegative")
        if self.quantum and self.mu < 1 - 1e-9:
            raise DomainError(f"quantum measurement requires mu >= 1 (got {self.mu:.6g})")

    @classmethod
    def from_q(cls, q1: float, q2: float, mu: float = 1.0, m: float = 1.0,
               omega_m: float = 0.0, gamma_m: float = 0.0, hbar: float = HBAR) -> "MarkovModel":
        """Model with prescribed ``q1``, ``q2`` and ``mu`` (lossless oscillator)."""
        if not abs(q1) < q2:
            raise DomainError("need |q1| < q2")
        a = q1 - omega_m**2
        b = q2**2 - q1**2 + a**2
        S_ZZ = hbar * math.sqrt(mu) / (m * math.sqrt(q2**2 - q1**2))
        return cls(m, S_ZZ, b * m**2 * S_ZZ, a * m * S_ZZ, omega_m, gamma_m, hbar)

    @property
    def mu(self) -> float:
        return (self.S_ZZ * self.S_FF - self.S_ZF**2) / self.hbar**2

    @property
    def q1(self) -> float:
        return self.omega_m**2 + self.S_ZF / (self.m * self.S_ZZ)

    @property
    def q2(self) -> float:
        w2 = self.omega_m**2
        return math.sqrt(w2**2 + 2 * w2 * self.S_ZF / (self.m * self.S_ZZ) + self.S_FF / (self.m**2 * self.S_ZZ))

    @property
    def measurement_frequency(self) -> float:
        """``(S_FF / (m^2 S_ZZ))**(1/4)``."""
        return (self.S_FF / (self.m**2 * self.S_ZZ)) ** 0.25


def markov_units(model: MarkovModel, scale: float | None = None):
    """Position unit, momentum unit and frequency scale used for the spectra."""
    if scale is None:
        # without force noise or restoring force fall back to the sensing scale
        scale = math.sqrt(model.q2) or math.sqrt(model.hbar / (model.m * model.S_ZZ))
    Om = scale
    return math.sqrt(model.hbar / (model.m * Om)), math.sqrt(model.hbar * model.m * Om), Om


def mechanical_response(omega_m: float, gamma_m: float, eps: float) -> RationalFunction:
    """``-1 / (w^2 + i gamma w - omega^2)`` (unit mass) with poles pushed to ``Im <= -eps``."""
    poles = np.roots([1.0, 1j * gamma_m, -(omega_m**2)])
    poles = np.array([complex(p.real, min(p.imag, -eps)) for p in poles])
    return RationalFunction(Polynomial([-1.0]), poles)


def markov_spectra(model: MarkovModel, regularization: float = REGULARIZATION) -> SpectrumSet:
    """Output, cross and observable spectra for the observables ``(x, p)``.

    Momentum is ``p = -i m Omega x``.  Marginal mechanical poles are moved
    ``regularization * sqrt(q2)`` below the real axis and the damping is
    floored at the same value.
    """
    xu, pu, Om = markov_units(model)
    Fu = pu * Om
    eps = regularization
    g = max(model.gamma_m / Om, eps)
    R = mechanical_response(model.omega_m / Om, g, eps)
    w = RationalFunction.omega()
    Rp = R * w.scale_value(-1j)
    sigma = np.array([
        [model.S_ZZ * Om / xu**2, model.S_ZF * Om / (xu * Fu)],
        [model.S_ZF * Om / (xu * Fu), model.S_FF * Om / Fu**2],
    ])
    zero = RationalFunction(0.0)
    one = RationalFunction.constant(1.0)
    return spectra_from_channels(
        [[zero, R], [zero, Rp]], [one, R], sigma,
        names=("x", "p"), units=(xu, pu), y_unit=xu, freq_scale=Om, hbar=model.hbar,
    )


def markov_conditional_covariance(model: MarkovModel, regularization: float = REGULARIZATION,
                                  extrapolate: bool = True) -> CovarianceMatrix:
    """Conditional ``(x, p)`` covariance from the generic Wiener pipeline.

    The regularized mechanical poles bias the result at first order in
    ``regularization``; with ``extrapolate`` the runs at the floor and at
    half of it are combined to cancel that term.  The relative change
    between the two runs is reported as ``regularization_sensitivity``.
    """
    a = conditional_covariance(markov_spectra(model, regularization))
    if not extrapolate:
        return a
    b = conditional_covariance(markov_spectra(model, regularization / 2))
    V = 2 * b.values - a.values
    sens = float(np.max(np.abs(b.values - a.values)) / np.max(np.abs(V)))
    return CovarianceMatrix(V, b.names, b.hbar, dict(b.diagnostics, regularization_sensitivity=sens))


def conditional_cov_markov(model: MarkovModel) -> SingleModeState:
    """Closed-form conditional state of a lossless oscillator (``gamma_m -> 0``).

    ``V = sqrt(mu) D M D^T`` with ``D = diag(sqrt(hbar/(2 m sqrt q2)), sqrt(hbar m sqrt q2 / 2))``
    and ``M`` built from ``q1/q2``.

    Raises
    ------
    DomainError
        When ``q1 == q2``, which the uncertainty principle forbids.
    """
    q1, q2, mu = model.q1, model.q2, model.mu
    if q1 >= q2:
        raise DomainError("q1 == q2 is forbidden by the uncertainty principle")
    s = math.sqrt(q2)
    d = np.array([math.sqrt(model.hbar / (2 * model.m * s)), math.sqrt(model.hbar * model.m * s / 2)])
    diag = math.sqrt(2 * q2 / (q1 + q2))
    off = math.sqrt((q2 - q1) / (q2 + q1))
    M = np.array([[diag, off], [off, diag]])
    V = math.sqrt(mu) * np.outer(d, d) * M
    return SingleModeState.from_matrix(V, model.m, model.hbar)


# ---------------------------------------------------------------------------
# homodyne readout of a free mass


@dataclass(frozen=True)
class HomodyneConfig:
    """Balanced-homodyne readout of a (nearly) free mirror.

    Classical corner frequencies equal to zero disable the corresponding
    noise.  ``mode="common"`` applies the laser-noise substitutions and
    scales the measurement frequency by ``alpha_ratio``.
    """

    zeta: float = 0.0
    Omega_q: float = 1.0
    Omega_F: float = 0.0
    Omega_x: float = 0.0
    r_op: float = 0.0
    phi_op: float = 0.0
    S_a1a1: float = 1.0
    S_a2a2: float = 1.0
    mode: str = "differential"
    alpha_ratio: float = 1.0
    m: float = 1.0
    hbar: float = HBAR

    def __post_init__(self):
        if self.Omega_q <= 0:
            raise DomainError("Omega_q must be positive")
        if self.r_op < 0:
            raise DomainError("r_op must be nonnegative")
        if self.S_a1a1 < 1 or self.S_a2a2 < 1:
            raise DomainError("laser-noise spectra must be >= 1")
        if self.mode not in ("differential", "common"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.alpha_ratio < 1:
            raise DomainError("alpha_ratio must be >= 1")

    @property
    def effective_Omega_q(self) -> float:
        return self.Omega_q * (self.alpha_ratio if self.mode == "common" else 1.0)

    @property
    def laser_noise(self) -> tuple[float, float]:
        return (self.S_a1a1, self.S_a2a2) if self.mode == "common" else (1.0, 1.0)

    @property
    def xi_F(self) -> float:
        return self.Omega_F / self.effective_Omega_q

    @property
    def xi_x(self) -> float:
        if self.Omega_x == 0 or math.isinf(self.Omega_x):
            return 0.0
        return self.effective_Omega_q / self.Omega_x


def _tan(zeta: float) -> float:
    if abs(math.cos(zeta)) < 1e-12:
        raise DomainError("zeta = +/-pi/2 reads only the amplitude quadrature")
    return math.tan(zeta)


def homodyne_model(cfg: HomodyneConfig, omega_m: float = 0.0, gamma_m: float = 0.0) -> MarkovModel:
    """White-noise model equivalent to a homodyne configuration."""
    t = _tan(cfg.zeta)
    a1, a2 = cfg.laser_noise
    h, m = cfg.hbar, cfg.m
    alpha2 = h * m * cfg.effective_Omega_q**2
    S_ZZ = h**2 / alpha2 * (a2 + a1 * t**2)
    if cfg.xi_x:
        S_ZZ += 2 * h / (m * cfg.Omega_x**2)
    S_FF = alpha2 * a1 + 2 * m * h * cfg.Omega_F**2
    return MarkovModel(m, S_ZZ, S_FF, h * a1 * t, omega_m, gamma_m, h)


def freemass_homodyne_cov(cfg: HomodyneConfig) -> SingleModeState:
    """Closed-form conditional state of a free mass under homodyne readout."""
    if cfg.r_op != 0:
        raise DomainError("input squeezing present; use squeezed_input_cov")
    t = _tan(cfg.zeta)
    a1, a2 = cfg.laser_noise
    A = a1 + 2 * cfg.xi_F**2
    B = a2 + a1 * t**2 + 2 * cfg.xi_x**2
    W = math.sqrt(A * B) - a1 * t
    return _free_state(A, B, W, cfg)


def _free_state(A: float, B: float, W: float, cfg: HomodyneConfig) -> SingleModeState:
    h, m, Om = cfg.hbar, cfg.m, cfg.effective_Omega_q
    V_xx = h / (math.sqrt(2) * m * Om) * math.sqrt(B) * math.sqrt(W)
    V_pp = h * m * Om / math.sqrt(2) * math.sqrt(A) * math.sqrt(W)
    return SingleModeState(V_xx, V_pp, 0.5 * h * W, m, h)


def squeezed_input_cov(cfg: HomodyneConfig) -> SingleModeState:
    """Conditional state with squeezed vacuum input, phase-quadrature readout."""
    if cfg.zeta != 0:
        raise DomainError("squeezed-input formulas assume phase-quadrature readout (zeta = 0)")
    if cfg.mode != "differential":
        raise DomainError("squeezed-input formulas are for the differential mode")
    c2r, s2r = math.cosh(2 * cfg.r_op), math.sinh(2 * cfg.r_op)
    lp2 = c2r + math.cos(2 * cfg.phi_op) * s2r
    lm2 = c2r - math.cos(2 * cfg.phi_op) * s2r
    A = lp2 + 2 * cfg.xi_F**2
    B = lm2 + 2 * cfg.xi_x**2
    W = math.sqrt(A * B) - math.sin(2 * cfg.phi_op) * s2r
    return _free_state(A, B, W, cfg)


def squeezing_db(r_op: float) -> float:
    """Optical squeezing strength in dB for squeeze factor ``r_op``."""
    return 20 / math.log(10) * r_op


# ---------------------------------------------------------------------------


class ClassicalNoise(NamedTuple):
    S_FF_cl: float
    S_ZZ_cl: float
    Omega_cl: float
    beating: float
    U_approx: float
    N_eff_approx: float
    sub_sql_window: bool


def classical_noise_model(Omega_F: float, Omega_x: float, m: float, hbar: float = HBAR) -> ClassicalNoise:
    """White classical force and sensing noise fixed by their SQL crossing frequencies."""
    if Omega_F < 0 or Omega_x <= 0:
        raise DomainError("need Omega_F >= 0 and Omega_x > 0")
    beating = 2 * Omega_F / Omega_x
    return ClassicalNoise(
        2 * hbar * m * Omega_F**2,
        2 * hbar / (m * Omega_x**2),
        math.sqrt(Omega_F * Omega_x),
        beating,
        1 + beating,
        beating / 2,
        Omega_x / Omega_F > 2 if Omega_F > 0 else True,
    )


def optimal_measurement_frequency(cfg: HomodyneConfig, span: float = 1e3):
    """Minimize the uncertainty product over ``Omega_q`` (log-scale bounded search).

    Returns ``(Omega_q_opt, U_min)``.  The search is centred on the
    classical-noise frequency when both classical noises are present.
    """
    if cfg.Omega_F > 0 and cfg.xi_x > 0:
        centre = math.sqrt(cfg.Omega_F * cfg.Omega_x)
    else:
        centre = cfg.Omega_q

    def cost(lg):
        return uncertainty_product(freemass_homodyne_cov(replace(cfg, Omega_q=centre * 10**lg)))

    lim = math.log10(span)
    grid = np.linspace(-lim, lim, 61)
    vals = [cost(g) for g in grid]
    k = int(np.argmin(vals))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = scipy.optimize.minimize_scalar(cost, bounds=(lo, hi), method="bounded",
                                         options={"xatol": 1e-10})
    return centre * 10**res.x, float(res.fun)


def wiener_kernels_quantum_limit(Omega_q: float, m: float) -> tuple[Callable, Callable]:
    """Time-domain position and momentum Wiener kernels (quantum-limited, phase readout)."""
    a = Omega_q / math.sqrt(2)

    def K_x(t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, math.sqrt(2) * Omega_q * np.exp(-a * t) * np.cos(a * t), 0.0)

    def K_p(t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, math.sqrt(2) * m * Omega_q**2 * np.exp(-a * t) * np.cos(a * t + math.pi / 4), 0.0)

    return K_x, K_p

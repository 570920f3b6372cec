"""Test mass inside a finite-bandwidth (optionally detuned) optical cavity.

Model, with ``exp(-i Omega t)`` convention and intracavity quadratures
``b1`` (amplitude) and ``b2`` (phase) normalized to ``[b1, b2] = i``::

    db1/dt = -gamma b1 - Delta b2 + sqrt(2 gamma) a1
    db2/dt = -gamma b2 + Delta b1 + kappa (x + xi_x) + sqrt(2 gamma) a2
    dp/dt  = -m omega_m^2 x - gamma_m p + hbar kappa b1 + xi_F
    o      = -a + sqrt(2 gamma) b,     y = sin(zeta) o1 + cos(zeta) o2

with ``hbar kappa^2 / m = Omega_q_cav^2 gamma / 2``.  ``Delta > 0`` gives a
restoring optical spring.  For ``Delta = 0`` eliminating ``b`` reproduces
the familiar tuned-cavity input-output relations.  Internally everything
is expressed in units ``hbar = m = 1`` with time measured in
``1 / Omega_s``; the cavity quadratures are reported as
``X_c = sqrt(hbar) b1`` and ``P_c = sqrt(hbar) b2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
import scipy.signal
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import DomainError
from .gstate import (
    HBAR,
    SingleModeState,
    TwoModeState,
    log_negativity,
    symplectic_eigenvalues,
    uncertainty_product,
)
from .markov import REGULARIZATION, mechanical_response
from .ratfun import RationalFunction
from .wiener import CovarianceMatrix, SpectrumSet, conditional_covariance, kalman_covariance, spectra_from_channels

__all__ = [
    "CavityModel",
    "ColoredNoise",
    "CompositeState",
    "cavity_units",
    "cavity_spectra",
    "cavity_statespace",
    "realize_factor",
    "optical_spring_response",
    "conditional_cavity_state",
    "cavity_closed_form_cov",
    "freemass_cavity_zeros",
    "composite_state",
    "testmass_state",
    "detuned_sweep",
]

OBSERVABLES = ("x", "p", "Xc", "Pc")
# below this Omega_q_cav / gamma the automatic route switches to Kalman
WIENER_MIN_RATIO = 1.0 / 300


@dataclass(frozen=True)
class CavityModel:
    """Parameters of a single-mode cavity with one movable mirror.

    Parameters
    ----------
    gamma : float
        Half bandwidth (rad/s).
    Omega_q_cav : float, optional
        Measurement frequency (rad/s).  Derived from ``alpha`` and ``L`` when
        omitted; checked against them when all three are given.
    Delta : float
        Detuning (rad/s); positive values produce an optical spring.
    zeta : float
        Homodyne angle; 0 reads the phase quadrature.
    m, omega_m, gamma_m : float
        Mirror mass (kg), mechanical eigenfrequency and damping (rad/s).
        ``gamma_m`` is viscous damping without its fluctuating force; pair
        it with force noise (``Omega_F`` or a thermal :class:`ColoredNoise`)
        or the conditional state can fall below the Heisenberg bound.
    Omega_F, Omega_x : float
        Corner frequencies of white classical force and sensing noise
        (rad/s); 0 disables either.
    L, alpha : float, optional
        Cavity length (m) and carrier amplitude (sqrt(J/s)).
    """

    gamma: float
    Omega_q_cav: float | None = None
    Delta: float = 0.0
    zeta: float = 0.0
    m: float = 1.0
    omega_m: float = 0.0
    gamma_m: float = 0.0
    Omega_F: float = 0.0
    Omega_x: float = 0.0
    L: float | None = None
    alpha: float | None = None
    hbar: float = HBAR

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError("cavity half bandwidth gamma must be positive")
        if self.m <= 0 or self.omega_m < 0 or self.gamma_m < 0:
            raise DomainError("mass must be positive, mechanical frequency and damping nonnegative")
        if self.Omega_F < 0 or self.Omega_x < 0:
            raise DomainError("classical corner frequencies must be nonnegative")
        from_alpha = None
        if self.alpha is not None and self.L is not None:
            from_alpha = self.alpha * math.sqrt(2 * SPEED_OF_LIGHT / (self.m * self.hbar * self.L * self.gamma))
        if self.Omega_q_cav is None:
            if from_alpha is None:
                raise DomainError("give Omega_q_cav or both alpha and L")
            object.__setattr__(self, "Omega_q_cav", from_alpha)
        elif from_alpha is not None and not math.isclose(from_alpha, self.Omega_q_cav, rel_tol=1e-9):
            raise DomainError(f"Omega_q_cav={self.Omega_q_cav} is inconsistent with alpha and L ({from_alpha})")
        if not self.Omega_q_cav > 0:
            raise DomainError("Omega_q_cav must be positive")

    @property
    def tuned(self) -> bool:
        return self.Delta == 0

    @property
    def quantum_only(self) -> bool:
        return self.Omega_F == 0 and self.Omega_x == 0


class ColoredNoise(NamedTuple):
    """Extra classical noise given by a causal spectral factor.

    ``factor`` is a stable RationalFunction of the physical frequency
    (rad/s) with ``|factor|^2`` the single-sided PSD: N^2 s for
    ``kind="force"``, m^2 s for ``kind="sensing"``.
    """

    name: str
    kind: str
    factor: RationalFunction


@dataclass(frozen=True)
class CompositeState:
    cov: CovarianceMatrix
    E_N: float
    U_testmass: float
    symplectic: np.ndarray = field(default_factory=lambda: np.zeros(2))


def cavity_units(model: CavityModel):
    """Position unit, momentum unit, cavity-quadrature unit and frequency scale."""
    Om = model.Omega_q_cav
    h, m = model.hbar, model.m
    return math.sqrt(h / (m * Om)), math.sqrt(h * m * Om), math.sqrt(h), Om


def _params(model: CavityModel):
    """Dimensionless rates and white-noise spectra."""
    xu, pu, cu, Om = cavity_units(model)
    g = model.gamma / Om
    k = math.sqrt(g / 2)  # Omega_q_cav / Omega_s = 1
    sF = 2 * (model.Omega_F / Om) ** 2
    sZ = 2 * (Om / model.Omega_x) ** 2 if model.Omega_x > 0 else 0.0
    return g, model.Delta / Om, k, model.omega_m / Om, model.gamma_m / Om, sF, sZ


def _readout(model: CavityModel) -> tuple[float, float]:
    s, c = math.sin(model.zeta), math.cos(model.zeta)
    if model.tuned and abs(c) < 1e-12:
        raise DomainError("the amplitude quadrature of a tuned cavity carries no signal")
    return s, c


def _scaled_factor(n: ColoredNoise, model: CavityModel) -> RationalFunction:
    xu, pu, _, Om = cavity_units(model)
    if n.kind == "force":
        u = math.sqrt(Om) / (pu * Om)
    elif n.kind == "sensing":
        u = math.sqrt(Om) / xu
    else:
        raise DomainError(f"unknown noise kind {n.kind!r}")
    return n.factor.rescale(Om).scale_value(u)


# ---------------------------------------------------------------------------
# frequency domain


def _transfer_functions(model: CavityModel, regularization: float):
    """Dimensionless transfer functions from the noises (a1, a2, F, Z) to x, b1, b2, y."""
    g, d, k, wm, gm, _, _ = _params(model)
    s, c = _readout(model)
    eps = regularization * max(1.0, g)
    R = mechanical_response(wm, max(gm, eps), eps)
    r2g = math.sqrt(2 * g)
    one = RationalFunction.constant(1.0)
    zero = RationalFunction(0.0)
    pp, pm = complex(d, -g), complex(-d, -g)
    Dinv = RationalFunction.from_zpk([], [pp, pm], -1.0)  # 1 / ((g - iw)^2 + d^2)
    LD = RationalFunction.from_zpk([-1j * g], [pp, pm], 1j)  # (g - iw) / (...)
    if d == 0:
        chi = R
    else:
        chi = R / (one + R * Dinv.scale_value(k * k * d))
    x = [chi * LD.scale_value(k * r2g), chi * Dinv.scale_value(-k * r2g * d), chi,
         chi * Dinv.scale_value(-k * k * d)]
    e = [one if i == j else zero for i in range(4) for j in range(4)]
    e = [e[4 * i:4 * i + 4] for i in range(4)]
    xz = [x[j] + e[3][j] for j in range(4)]
    b1 = [LD * e[0][j].scale_value(r2g) - Dinv * e[1][j].scale_value(r2g * d) - Dinv.scale_value(d * k) * xz[j]
          for j in range(4)]
    b2 = [Dinv * e[0][j].scale_value(r2g * d) + LD * e[1][j].scale_value(r2g) + LD.scale_value(k) * xz[j]
          for j in range(4)]
    y = [(b1[j].scale_value(r2g) - e[0][j]).scale_value(s) + (b2[j].scale_value(r2g) - e[1][j]).scale_value(c)
         for j in range(4)]
    return x, b1, b2, y


def optical_spring_response(model: CavityModel, regularization: float = 0.0) -> RationalFunction:
    """Mirror displacement per unit external force (m/N) as a function of Omega (rad/s).

    Includes the optical spring of a detuned cavity; its poles are the
    optomechanical resonances.
    """
    g, d, k, wm, gm, _, _ = _params(model)
    xu, pu, _, Om = cavity_units(model)
    eps = regularization
    R = mechanical_response(wm, max(gm, eps), eps)
    if d != 0:
        Dinv = RationalFunction.from_zpk([], [complex(d, -g), complex(-d, -g)], -1.0)
        R = R / (RationalFunction.constant(1.0) + R * Dinv.scale_value(k * k * d))
    return R.rescale(1.0 / Om).scale_value(xu / (pu * Om))


def cavity_spectra(model: CavityModel, observables: Sequence[str] = OBSERVABLES,
                   extra: Sequence[ColoredNoise] = (), regularization: float = REGULARIZATION) -> SpectrumSet:
    """Output, cross and observable spectra for the test mass and the cavity mode.

    Observables are chosen among ``x``, ``p``, ``Xc`` and ``Pc``.  Marginal
    mechanical poles are moved ``regularization * max(Omega_q_cav, gamma)``
    below the real axis.  For detuned models the spectra are formal: an optical
    (anti-)spring makes the plant unstable and these functions then
    describe no stationary process (see :func:`conditional_cavity_state`).

    Raises
    ------
    DomainError
        For a readout quadrature that carries no signal.
    """
    _, _, _, _, _, sF, sZ = _params(model)
    x, b1, b2, y = _transfer_functions(model, regularization)
    w = RationalFunction.omega().scale_value(-1j)
    p = [w * f for f in x]
    rows = {"x": x, "p": p, "Xc": b1, "Pc": b2}
    sigma = [1.0, 1.0, sF, sZ]
    for n in extra:
        h = _scaled_factor(n, model)
        j = 2 if n.kind == "force" else 3
        for key in rows:
            rows[key] = rows[key] + [h * rows[key][j]]
        y = y + [h * y[j]]
        sigma.append(1.0)
    keep = [i for i, v in enumerate(sigma) if v != 0]
    pick = lambda row: [row[i] for i in keep]  # noqa: E731
    xu, pu, cu, Om = cavity_units(model)
    units = {"x": xu, "p": pu, "Xc": cu, "Pc": cu}
    for o in observables:
        if o not in rows:
            raise DomainError(f"unknown observable {o!r}")
    return spectra_from_channels(
        [pick(rows[o]) for o in observables], pick(y), np.diag([sigma[i] for i in keep]),
        names=tuple(observables), units=tuple(units[o] for o in observables),
        y_unit=1.0, freq_scale=Om, hbar=model.hbar,
    )


# ---------------------------------------------------------------------------
# state space


def _real_axis_roots(vals: np.ndarray, scale: float):
    """Laplace-domain roots ``s = -i w`` when all lie on the real axis, else None."""
    s = -1j * np.asarray(vals, dtype=complex)
    if s.size and np.max(np.abs(s.imag)) > 1e-12 * scale:
        return None
    return s.real


def _cascade(zs: np.ndarray, ps: np.ndarray):
    """Series connection of first-order sections with unit DC gain where possible.

    Zeros are paired with poles in order of magnitude; poles left over give
    low-pass sections ``-p/(s - p)``.
    """
    ps = ps[np.argsort(np.abs(ps))]
    zs = zs[np.argsort(np.abs(zs))]
    n = len(ps)
    A = np.zeros((n, n))
    B = np.zeros((n, 1))
    u_row, u_d = np.zeros(n), 1.0  # the input of the current section as (C, D)
    for k, p in enumerate(ps):
        if k < len(zs):
            z = zs[k]
            g = p / z if z != 0 and p != 0 else 1.0
            c, d = g * (p - z), g  # g (s - z)/(s - p)
        else:
            c, d = (-p if p != 0 else 1.0), 0.0
        A[k] += u_row
        A[k, k] += p
        B[k, 0] = u_d
        row = d * u_row
        row[k] += c
        u_row, u_d = row, d * u_d
    return A, B, u_row[None, :], np.array([[u_d]])


def realize_factor(h: RationalFunction, allow_marginal: bool = False):
    """Real state-space realization ``(A, B, C, D)`` of a causal spectral factor.

    ``h`` is a function of ``w``; with ``d/dt -> -i w`` the Laplace variable
    is ``s = -i w``.  A global unimodular phase of ``h`` is dropped since
    only ``|h|^2`` matters for an independent noise source.  Factors whose
    poles and zeros all map to real ``s`` are realized as a cascade of
    first-order sections, which stays well conditioned for high orders.
    ``allow_marginal`` admits poles on the real axis (integrators).
    """
    if h.relative_degree < 0:
        raise DomainError("noise shaping filter must be proper")
    if np.any(h.poles.imag > 0) or (not allow_marginal and np.any(h.poles.imag == 0)):
        raise DomainError("noise shaping filter must be causal and stable")
    if h.poles.size == 0:
        # white noise: a pure feedthrough
        return np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), np.array([[abs(complex(h(1.0)))]])
    scale = float(np.max(np.abs(h.poles))) if h.poles.size else 1.0
    scale = scale or 1.0
    ps = _real_axis_roots(h.poles, scale)
    zs = _real_axis_roots(h.zeros, scale) if h.numerator.degree > 0 else np.zeros(0)
    if ps is not None and zs is not None and ps.size:
        A, B, C, D = _cascade(zs, ps)
        w = scale
        Hc = (C @ np.linalg.solve(-1j * w * np.eye(len(ps)) - A, B) + D)[0, 0]
        g = abs(h(w)) / abs(Hc)
        return A, B, C * g, D * g
    num = h.numerator.coef
    den = np.poly(h.poles)[::-1]
    num_s = num * (1j) ** np.arange(len(num))
    den_s = den * (1j) ** np.arange(len(den))
    num_s, den_s = num_s / den_s[-1], den_s / den_s[-1]
    k = int(np.argmax(np.abs(num_s)))
    num_s = num_s * abs(num_s[k]) / num_s[k]
    for v in (num_s, den_s):
        if np.max(np.abs(v.imag)) > 1e-8 * np.max(np.abs(v)):
            raise DomainError("noise shaping filter has no real impulse response")
    A, B, C, D = scipy.signal.tf2ss(num_s.real[::-1], den_s.real[::-1])
    return A, B, C, D


def cavity_statespace(model: CavityModel, extra: Sequence[ColoredNoise] = ()):
    """Dimensionless ``(A, B, C, D, W)`` for the Kalman route.

    States are ``(x, p, b1, b2, shaping states...)``; noises are
    ``(a1, a2, F, Z, extra...)`` with two-sided intensities ``W``.
    """
    g, d, k, wm, gm, sF, sZ = _params(model)
    s, c = _readout(model)
    r2g = math.sqrt(2 * g)
    blocks = [realize_factor(_scaled_factor(n, model)) for n in extra]
    nf = sum(b[0].shape[0] for b in blocks)
    n, q = 4 + nf, 4 + len(extra)
    A = np.zeros((n, n))
    B = np.zeros((n, q))
    A[0, 1] = 1.0
    A[1, :4] = [-(wm**2), -gm, k, 0.0]
    A[2, 2:4] = [-g, -d]
    A[3, :4] = [k, 0.0, d, -g]
    B[1, 2] = 1.0
    B[2, 0] = B[3, 1] = r2g
    B[3, 3] = k
    i0 = 4
    for j, (n_, (Af, Bf, Cf, Df)) in enumerate(zip(extra, blocks)):
        nj = Af.shape[0]
        sl = slice(i0, i0 + nj)
        A[sl, sl] = Af
        B[sl, 4 + j] = Bf[:, 0]
        # shaped noise u = Cf z + Df n enters like F (row p) or like Z (row b2)
        row, gain = (1, 1.0) if n_.kind == "force" else (3, k)
        A[row, sl] += gain * Cf[0]
        B[row, 4 + j] += gain * Df[0, 0]
        i0 += nj
    C = np.zeros((1, n))
    C[0, 2], C[0, 3] = s * r2g, c * r2g
    D = np.zeros((1, q))
    D[0, 0], D[0, 1] = -s, -c
    W = 0.5 * np.diag([1.0, 1.0, sF, sZ] + [1.0] * len(extra))
    return A, B, C, D, W


# ---------------------------------------------------------------------------
# conditional states


def conditional_cavity_state(model: CavityModel, extra: Sequence[ColoredNoise] = (),
                             method: str = "auto", observables: Sequence[str] = OBSERVABLES,
                             verify: bool = False) -> CovarianceMatrix:
    """Conditional covariance of ``observables`` given the past homodyne record.

    ``method="wiener"`` evaluates the residue integrals of the causal Wiener
    filter; ``"kalman"`` solves the filter Riccati equation of
    :func:`cavity_statespace`.  ``"auto"`` picks Wiener for tuned cavities
    and Kalman for detuned ones, whose optical (anti-)spring makes the
    plant unstable.  It also picks Kalman for cavities much broader than
    ``Omega_q_cav``: the output spectrum then has zeros that split from its
    cavity poles only at second order in ``Omega_q_cav / gamma``, which
    double precision root finding cannot resolve.  The conditional state
    does not depend on any ideal feedback that would stabilize the plant,
    so no loop is modelled.
    """
    if method == "auto":
        wide = model.Omega_q_cav < WIENER_MIN_RATIO * model.gamma
        method = "wiener" if model.tuned and not wide else "kalman"
    if method == "wiener":
        # the regularized free mass is biased at first order in the floor;
        # a two-point extrapolation removes it
        a = conditional_covariance(cavity_spectra(model, observables, extra, REGULARIZATION), verify=verify)
        b = conditional_covariance(cavity_spectra(model, observables, extra, REGULARIZATION / 2), verify=verify)
        V = 2 * b.values - a.values
        diag = dict(b.diagnostics, method="wiener",
                    regularization_sensitivity=float(np.max(np.abs(b.values - a.values)) / np.max(np.abs(V))))
        return CovarianceMatrix(V, b.names, b.hbar, diag)
    if method != "kalman":
        raise DomainError(f"unknown method {method!r}")
    P = kalman_covariance(*cavity_statespace(model, extra))
    xu, pu, cu, _ = cavity_units(model)
    units = {"x": xu, "p": pu, "Xc": cu, "Pc": cu}
    idx = [OBSERVABLES.index(o) for o in observables]
    u = np.array([units[o] for o in observables])
    V = P[np.ix_(idx, idx)] * np.outer(u, u)
    return CovarianceMatrix(V, tuple(observables), model.hbar, {"method": "kalman"})


def testmass_state(cov: CovarianceMatrix, m: float = 1.0) -> SingleModeState:
    return SingleModeState(cov["x", "x"], cov["p", "p"], cov["x", "p"], m, cov.hbar)


def composite_state(model: CavityModel, extra: Sequence[ColoredNoise] = (), method: str = "auto") -> CompositeState:
    """Joint conditional state of mirror and cavity mode over ``(x, p, Xc, Pc)``.

    Returns the covariance, the logarithmic negativity between mirror and
    cavity mode and the mirror's uncertainty product.
    """
    cov = conditional_cavity_state(model, extra, method)
    xu, pu, cu, _ = cavity_units(model)
    u = np.array([xu, pu, cu, cu])
    V = cov.values / np.outer(u, u)
    EN = log_negativity(TwoModeState.from_matrix(V, hbar=1.0))
    U = uncertainty_product(testmass_state(cov, model.m))
    nu = symplectic_eigenvalues(V) * model.hbar
    return CompositeState(cov, EN, U, nu)


def detuned_sweep(model: CavityModel, deltas, extra: Sequence[ColoredNoise] = ()) -> np.ndarray:
    """Mirror uncertainty product for each detuning in ``deltas`` (rad/s)."""
    out = []
    for d in np.asarray(deltas, dtype=float):
        cov = conditional_cavity_state(replace(model, Delta=float(d)), extra, method="kalman",
                                       observables=("x", "p"))
        out.append(uncertainty_product(testmass_state(cov, model.m)))
    return np.array(out)


# ---------------------------------------------------------------------------
# closed forms for the tuned free mass, phase readout, quantum noise only


def _ab(ratio: float):
    r = math.sqrt(math.sqrt((2 * ratio) ** 4 + 1) + 1)
    s2 = math.sqrt(2)
    a1 = 0.5 * math.sqrt(math.sqrt(r * r - s2 * r) + r / s2 - 1)
    a2 = 0.5 * math.sqrt(math.sqrt(r * r + s2 * r) - r / s2 - 1)
    b1 = 0.5 * math.sqrt(math.sqrt(r * r - s2 * r) - r / s2 + 1)
    b2 = 0.5 * math.sqrt(math.sqrt(r * r + s2 * r) + r / s2 + 1)
    return a1, b1, a2, b2


def freemass_cavity_zeros(model: CavityModel) -> np.ndarray:
    """The eight zeros ``+/-a_k +/- i b_k`` (rad/s) of the phase-readout output PSD."""
    a1, b1, a2, b2 = _ab(model.Omega_q_cav / model.gamma)
    z = [sa * a + 1j * sb * b for a, b in ((a1, b1), (a2, b2)) for sa in (1, -1) for sb in (1, -1)]
    return np.array(z) * model.gamma


def cavity_closed_form_cov(model: CavityModel) -> SingleModeState:
    """Closed-form conditional mirror state for a tuned cavity and a free mass.

    Valid for phase readout and quantum noise only.
    """
    if not (model.tuned and model.zeta == 0 and model.omega_m == 0 and model.gamma_m == 0
            and model.quantum_only):
        raise DomainError("closed form needs a tuned cavity, a free mass, phase readout and no classical noise")
    a1, b1, a2, b2 = _ab(model.Omega_q_cav / model.gamma)
    z1, z2 = complex(a1, b1), complex(a2, b2)

    def cn(n):
        return 2.0 / n * (z1**n + z2**n - 1j**n).imag

    c1, c3, c5 = cn(1), cn(3), cn(5)
    h, m, g, Oq2 = model.hbar, model.m, model.gamma, model.Omega_q_cav**2
    V_xx = h * g / (6 * m * Oq2) * (c1**3 + 3 * c1**2 + 3 * c1 + 3 * c3)
    V_pp = h * m * g**3 / (120 * Oq2) * (3 * c1**5 + 15 * c1**4 + 20 * c1**3 + 60 * c3 + 60 * c5)
    V_xp = h * g**2 / (16 * Oq2) * c1**2 * (c1 + 2) ** 2
    return SingleModeState(V_xx, V_pp, V_xp, m, h)

"""Causal Wiener filtering and conditional covariances of linear measurements.

All spectra follow the single-sided convention
``C_ab(t) = 1/2 * int dOmega/2pi S_ab(Omega) exp(-i Omega t)`` and cross
spectra are ``S_ab = <a b^*>``.  Functions with poles in the lower half plane
are causal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import CondStateError, DivergentMoments, NoSteadyState
from .gstate import HBAR, symplectic_eigenvalues
from .factorize import anticausal_part, causal_part, spectral_factorize
from .ratfun import RationalFunction, partial_fractions

__all__ = [
    "SpectrumSet",
    "CovarianceMatrix",
    "wiener_filter",
    "conditional_covariance",
    "unconditional_covariance",
    "whiten",
    "real_line_integral",
    "spectra_from_channels",
    "kalman_covariance",
    "riccati_iterates",
    "riccati_oracle",
    "symplectic_eigenvalues",
]

# poles closer than this to the real axis (relative to the spectral scale)
# make a moment integral diverge
MARGINAL_TOL = 1e-6


@dataclass(frozen=True)
class SpectrumSet:
    """Output PSD, observable/output cross spectra and observable cross spectra.

    Spectra may be stored in scaled variables ``w = Omega / freq_scale``
    with observable ``l`` measured in ``units[l]`` and the output in
    ``y_unit``; the stored functions are then
    ``freq_scale * S(freq_scale * w) / (unit_a * unit_b)``.
    """

    S_yy: RationalFunction
    S_xy: tuple
    S_xx: tuple
    names: tuple = ()
    units: tuple = ()
    y_unit: float = 1.0
    freq_scale: float = 1.0
    hbar: float = 1.0
    channels: tuple | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        n = len(self.S_xy)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{l}" for l in range(n)))
        if not self.units:
            object.__setattr__(self, "units", (1.0,) * n)
        object.__setattr__(self, "S_xy", tuple(self.S_xy))
        object.__setattr__(self, "S_xx", tuple(tuple(row) for row in self.S_xx))

    @property
    def n(self) -> int:
        return len(self.S_xy)

    def index(self, name) -> int:
        return name if isinstance(name, int) else self.names.index(name)

    def subset(self, names: Sequence) -> "SpectrumSet":
        idx = [self.index(k) for k in names]
        return SpectrumSet(
            self.S_yy,
            tuple(self.S_xy[i] for i in idx),
            tuple(tuple(self.S_xx[i][j] for j in idx) for i in idx),
            tuple(self.names[i] for i in idx),
            tuple(self.units[i] for i in idx),
            self.y_unit,
            self.freq_scale,
            self.hbar,
            None if self.channels is None else (tuple(self.channels[0][i] for i in idx),) + tuple(self.channels[1:]),
        )

    def physical(self, kind: str, l: int = 0, m: int = 0):
        """Return a spectrum as a callable of the physical frequency (rad/s)."""
        s = self.freq_scale
        if kind == "yy":
            f, u = self.S_yy, self.y_unit**2
        elif kind == "xy":
            f, u = self.S_xy[l], self.units[l] * self.y_unit
        else:
            f, u = self.S_xx[l][m], self.units[l] * self.units[m]
        return lambda w: f(np.asarray(w) / s) * u / s


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric covariance of named observables in SI units."""

    values: np.ndarray
    names: tuple
    hbar: float = 1.0
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v = 0.5 * (v + v.T)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __getitem__(self, key):
        a, b = key
        i = a if isinstance(a, int) else self.names.index(a)
        j = b if isinstance(b, int) else self.names.index(b)
        return float(self.values[i, j])

    @property
    def n(self) -> int:
        return len(self.names)

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.values)

    def symplectic_eigenvalues(self) -> np.ndarray:
        """Symplectic spectrum, assuming the ordering ``(x1, p1, x2, p2, ...)``."""
        return symplectic_eigenvalues(self.values)


# ---------------------------------------------------------------------------
# residue integration


def real_line_integral(f: RationalFunction, entry=None, scale: float = 1.0) -> float:
    """``int_{-inf}^{inf} Re f(Omega) dOmega`` by residues.

    The integrand is replaced by its hermitian part ``(f + reflect f) / 2``,
    which equals ``Re f`` on the real axis, and the integral is closed in the
    upper half plane.

    Raises
    ------
    DivergentMoments
        If the hermitian part does not decay or has a pole within
        ``MARGINAL_TOL * scale`` of the real axis.
    """
    h = 0.5 * (f + f.reflect())
    if h.is_zero:
        return 0.0
    if h.relative_degree < 1:
        raise DivergentMoments("integrand does not decay at high frequency", entry=entry, pole=np.inf)
    pfe = partial_fractions(h)
    total = 0j
    for t in pfe.terms:
        if abs(t.pole.imag) < MARGINAL_TOL * scale:
            raise DivergentMoments(
                f"integrand has a pole at {t.pole:.4g} on the real axis", entry=entry, pole=t.pole
            )
        if t.pole.imag > 0:
            total += t.residues[0]
    val = 2j * np.pi * total
    if h.relative_degree == 1:
        # half of the large-semicircle contribution of the 1/Omega tail
        val -= 1j * np.pi * h.numerator.lead
    return float(val.real)


def _quad_real_line(f: RationalFunction, scale: float) -> float:
    def g(theta):
        w = scale * np.tan(theta)
        return float(np.real(f(w))) * scale / np.cos(theta) ** 2

    poles = np.sort(np.arctan(np.real(f.poles) / scale)) if f.poles.size else []
    pts = [p for p in poles if abs(p) < 0.5 * np.pi - 1e-9]
    val, _ = scipy.integrate.quad(g, -0.5 * np.pi, 0.5 * np.pi, points=pts or None, limit=500,
                                  epsabs=0.0, epsrel=1e-10)
    return val


# ---------------------------------------------------------------------------


def _internal_scale(S: SpectrumSet) -> float:
    mags = np.abs(np.concatenate([S.S_yy.zeros, S.S_yy.poles]))
    mags = mags[mags > 1e-6 * mags.max()] if mags.size else mags
    return float(np.exp(np.mean(np.log(mags)))) if mags.size else 1.0


def _rescaled(S: SpectrumSet, s: float):
    def r(f):
        return f.rescale(s).scale_value(s)

    return (r(S.S_yy), [r(f) for f in S.S_xy], [[r(f) for f in row] for row in S.S_xx])


def wiener_filter(S: SpectrumSet, l=0) -> RationalFunction:
    """Causal Wiener filter ``K_l = [S_xy / s_minus]_+ / s_plus`` in physical units.

    ``K_l(Omega)`` maps the output ``y`` onto the estimate of observable ``l``.
    """
    l = S.index(l)
    pair = spectral_factorize(S.S_yy)
    G = S.S_xy[l] / pair.s_minus
    K = causal_part(G) / pair.s_plus
    return K.rescale(1.0 / S.freq_scale).scale_value(S.units[l] / S.y_unit)


def whiten(S_yy: RationalFunction) -> RationalFunction:
    """Causal whitening filter ``1 / s_plus``."""
    return spectral_factorize(S_yy).s_plus.inverse()


def _moments(S: SpectrumSet, conditional: bool, verify: bool) -> CovarianceMatrix:
    s = _internal_scale(S)
    yy, xy, xx = _rescaled(S, s)
    n = S.n
    V = np.zeros((n, n))
    diag = {"internal_scale": s * S.freq_scale, "polarized": []}
    if conditional:
        pair = spectral_factorize(yy)
        G_minus = [anticausal_part(f / pair.s_minus) for f in xy]
    qerr = 0.0

    minors = compound = None
    if conditional and S.channels is not None:
        minors, compound = _channel_minors(S.channels, s)

    def integrand(Sab, Say, Sby, Ga, Gb, a=None, b=None):
        if not conditional:
            return Sab
        if minors is not None and a is not None:
            # Binet-Cauchy form of S_ab - S_ay S_yb / S_yy: a sum of products
            # over S_yy, so marginal poles cancel exactly against S_yy's poles
            num = RationalFunction(0.0)
            for (p, q), c in compound.items():
                ma, mb = minors[a][p], minors[b][q]
                if not (ma.is_zero or mb.is_zero):
                    num = num + (ma * mb.reflect()).scale_value(c)
            return num / yy + Ga * Gb.reflect()
        return Sab - Say * Sby.reflect() / yy + Ga * Gb.reflect()

    def integrate(f, entry):
        nonlocal qerr
        try:
            val = real_line_integral(f, entry=entry)
        except DivergentMoments as exc:
            if exc.pole is not None and np.isfinite(exc.pole):
                exc.pole = complex(exc.pole) * s * S.freq_scale
            raise
        if verify:
            q = _quad_real_line(0.5 * (f + f.reflect()), 1.0)
            qerr = max(qerr, abs(q - val) / max(abs(val), 1e-300))
        return val / (4 * np.pi)

    G = G_minus if conditional else [None] * n
    for i in range(n):
        V[i, i] = integrate(integrand(xx[i][i], xy[i], xy[i], G[i], G[i], i, i), (S.names[i], S.names[i]))
    for i in range(n):
        for j in range(i + 1, n):
            entry = (S.names[i], S.names[j])
            try:
                V[i, j] = integrate(integrand(xx[i][j], xy[i], xy[j], G[i], G[j], i, j), entry)
            except DivergentMoments:
                # Both variances are finite, so the cross moment is too: the
                # failure is a marginal pole that did not cancel numerically.
                # Recover it from the variance of a balanced combination.
                c = np.sqrt(V[i, i] / V[j, j])
                Suu = xx[i][i] + (xx[i][j] + xx[j][i]).scale_value(c) + xx[j][j].scale_value(c * c)
                yu = xy[i] + xy[j].scale_value(c)
                Gu = G[i] + G[j].scale_value(c) if conditional else None
                Vuu = integrate(integrand(Suu, yu, yu, Gu, Gu), entry)
                V[i, j] = (Vuu - V[i, i] - c * c * V[j, j]) / (2 * c)
                diag["polarized"].append(entry)
            V[j, i] = V[i, j]
    if verify:
        diag["quadrature_rel_error"] = qerr
        if qerr > 1e-6:
            raise CondStateError(f"residue and quadrature evaluations disagree (rel. {qerr:.2e})")
    u = np.asarray(S.units, dtype=float)
    return CovarianceMatrix(V * np.outer(u, u), tuple(S.names), S.hbar, diag)


def _channel_minors(channels, s: float):
    """Minors ``A_li B_j - A_lj B_i`` (``i < j``) in the raw noise basis, rescaled.

    The minors of correlated channels follow from these and the second
    compound of the noise matrix, so each minor is built from the unmixed
    transfer functions and pole cancellations stay exact.
    """
    A, B, sigma = channels
    r = np.sqrt(s)

    def resc(f):
        return f if f.is_zero else f.rescale(s).scale_value(r)

    B = [resc(f) for f in B]
    k = len(B)
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    out = []
    for row in A:
        row = [resc(f) for f in row]
        out.append([row[i] * B[j] - row[j] * B[i] for i, j in pairs])
    compound = {}
    for p, (a, b) in enumerate(pairs):
        for q, (c, d) in enumerate(pairs):
            val = sigma[a, c] * sigma[b, d] - sigma[a, d] * sigma[b, c]
            if val != 0:
                compound[p, q] = float(val)
    return out, compound


def conditional_covariance(S: SpectrumSet, verify: bool = False) -> CovarianceMatrix:
    """Steady-state covariance of the observables given the past output record.

    Uses ``V = 1/2 int dOmega/2pi Re[S_xx - S_xy S_yx / S_yy + G_- G_-^*]``
    with ``G = S_xy / s_minus`` and ``G_-`` its anticausal part; this is the
    residual of the causal Wiener filter written so that the marginal poles
    of free-mass responses cancel algebraically.  Each entry is evaluated
    exactly by residues; ``verify`` adds an adaptive-quadrature cross-check.
    """
    return _moments(S, True, verify)


def unconditional_covariance(S: SpectrumSet, verify: bool = False) -> CovarianceMatrix:
    """``1/2 int dOmega/2pi S_xx``, the covariance without conditioning."""
    return _moments(S, False, verify)


# ---------------------------------------------------------------------------
# channel builder


def spectra_from_channels(A, B, sigma, **meta) -> SpectrumSet:
    """Spectra of linear responses to white noises.

    Parameters
    ----------
    A : sequence of sequences of RationalFunction
        ``A[l][j]`` is the transfer function from noise ``j`` to observable ``l``.
    B : sequence of RationalFunction
        ``B[j]`` is the transfer function from noise ``j`` to the output.
    sigma : array_like
        Real symmetric matrix of single-sided noise (cross) spectral densities.
    **meta
        Forwarded to :class:`SpectrumSet` (names, units, ...).
    """
    sigma = np.asarray(sigma, dtype=float)
    k = len(B)
    pairs = [(a, b, sigma[a, b]) for a in range(k) for b in range(k) if sigma[a, b] != 0]

    def cross(P, Q):
        out = RationalFunction(0.0)
        for a, b, c in pairs:
            if P[a].is_zero or Q[b].is_zero:
                continue
            out = out + (P[a] * Q[b].reflect()).scale_value(c)
        return out

    S_yy = cross(B, B)
    S_xy = tuple(cross(row, B) for row in A)
    S_xx = tuple(tuple(cross(ra, rb) for rb in A) for ra in A)
    channels = (tuple(tuple(row) for row in A), tuple(B), sigma)
    return SpectrumSet(S_yy, S_xy, S_xx, channels=channels, **meta)


# ---------------------------------------------------------------------------
# state-space routes


def kalman_covariance(A, B, C, D, W) -> np.ndarray:
    """Steady-state error covariance of the continuous Kalman-Bucy filter.

    ``dX/dt = A X + B n`` and ``y = C X + D n`` with white ``n`` of
    two-sided intensity ``W``; measurement and process noise may correlate.
    """
    A, B, C, D, W = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, C, D, W))
    Q = B @ W @ B.T
    R = D @ W @ D.T
    Sx = B @ W @ D.T
    try:
        P = scipy.linalg.solve_continuous_are(A.T, C.T, Q, R, s=Sx)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NoSteadyState(f"filter Riccati equation has no stabilizing solution: {exc}") from exc
    # the solver can return a non-stabilizing solution when a marginal mode
    # is undetectable; the filter error then never settles
    K = np.linalg.solve(R, (P @ C.T + Sx).T).T
    lam = np.linalg.eigvals(A - K @ C)
    if lam.size and np.max(lam.real) > -1e-9 * max(1.0, float(np.max(np.abs(lam)))):
        raise NoSteadyState(f"filter error dynamics are not stable (eigenvalue {lam[np.argmax(lam.real)]:.3g})")
    return 0.5 * (P + P.T)


def _van_loan(A, G, h):
    """Exact discretization: transition, process covariance, noise integral."""
    n = A.shape[0]
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = -A
    M[:n, n:] = G
    M[n:, n:] = A.T
    E = scipy.linalg.expm(M * h)
    Phi = E[n:, n:].T
    Qd = Phi @ E[:n, n:]
    return Phi, 0.5 * (Qd + Qd.T)


def _integrated_input(A, B, h):
    # int_0^h exp(A (h - s)) B ds via an augmented exponential
    n, k = B.shape
    M = np.zeros((n + k, n + k))
    M[:n, :n] = A
    M[:n, n:] = B
    return scipy.linalg.expm(M * h)[:n, n:]


def _markov_matrices(model, scale):
    """Nondimensional (x, p) state space of a Markovian model."""
    from .markov import markov_units  # local import: markov builds on this module

    xu, pu, Om = markov_units(model, scale)
    hbar_n = 1.0
    w2 = (model.omega_m / Om) ** 2
    g = model.gamma_m / Om
    A = np.array([[0.0, 1.0], [-w2, -g]])
    Fu = pu * Om
    S_ZZ = model.S_ZZ * Om / xu**2
    S_FF = model.S_FF * Om / Fu**2
    S_ZF = model.S_ZF * Om / (xu * Fu)
    return A, S_ZZ, S_FF, S_ZF, (xu, pu, Om), hbar_n


def riccati_iterates(model, dt: float, steps: int):
    """Yield successive filtered covariances (SI) of the discretized Kalman filter."""
    A, S_ZZ, S_FF, S_ZF, (xu, pu, Om), _ = _markov_matrices(model, None)
    h = dt * Om
    Bf = np.array([[0.0], [1.0]])
    Phi, Q = _van_loan(A, Bf @ Bf.T * (S_FF / 2), h)
    C = np.array([[1.0, 0.0]])
    R = np.array([[S_ZZ / 2 / h]])
    Sc = _integrated_input(A, Bf, h) * (S_ZF / 2) / h
    P = np.diag([1e6, 1e6])
    U = np.diag([xu, pu])
    for _ in range(steps):
        Pf = P - P @ C.T @ np.linalg.solve(C @ P @ C.T + R, C @ P)
        yield U @ Pf @ U
        K = (Phi @ P @ C.T + Sc) @ np.linalg.inv(C @ P @ C.T + R)
        P = Phi @ P @ Phi.T + Q - K @ (Phi @ P @ C.T + Sc).T
        P = 0.5 * (P + P.T)


def _riccati_steady(model, dt: float, horizon: int) -> np.ndarray:
    prev = None
    for k, Pf in enumerate(riccati_iterates(model, dt, horizon)):
        if prev is not None and k > 10:
            if np.max(np.abs(Pf - prev) / np.sqrt(np.outer(np.diag(Pf), np.diag(Pf)))) < 1e-10:
                return Pf
        prev = Pf
    raise NoSteadyState(f"discrete Riccati iteration did not converge within {horizon} steps")


def riccati_oracle(model, dt: float | None = None, horizon: int | None = None,
                   extrapolate: bool = True) -> CovarianceMatrix:
    """Conditional covariance from a time-stepped Kalman filter.

    The (x, p) dynamics are discretized exactly with the matrix exponential;
    the measurement is the record averaged over each step.  With
    ``extrapolate`` the steady states at ``dt``, ``dt/2`` and ``dt/4`` are
    combined by Richardson extrapolation to remove the O(dt) and O(dt^2)
    discretization errors.

    Raises
    ------
    NoSteadyState
        If successive iterates do not settle to 1e-10 within ``horizon`` steps.
    """
    from .markov import markov_units

    _, _, Om = markov_units(model, None)
    if dt is None:
        dt = 0.01 / Om
    periods = 20 * 2 * np.pi / Om
    if horizon is None:
        horizon = int(np.ceil(10 * periods / dt))
    if not extrapolate:
        P = _riccati_steady(model, dt, horizon)
    else:
        P1 = _riccati_steady(model, dt, horizon)
        P2 = _riccati_steady(model, dt / 2, 2 * horizon)
        P4 = _riccati_steady(model, dt / 4, 4 * horizon)
        P = (8 * P4 - 6 * P2 + P1) / 3
    return CovarianceMatrix(P, ("x", "p"), model.hbar, {"dt": dt})

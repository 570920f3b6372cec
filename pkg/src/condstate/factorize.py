"""Spectral factorization and causal projections of rational spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import AmbiguousProjection, DomainError, NotAPSD, NotFactorizable
from .ratfun import (
    CLUSTER_RTOL,
    Polynomial,
    RationalFunction,
    _terms_to_rational,
    cluster_roots,
    partial_fractions,
)

__all__ = [
    "SpectralFactorPair",
    "spectral_factorize",
    "causal_part",
    "anticausal_part",
    "check_psd",
    "REGULARIZATION",
]

# relative size of the imaginary shift applied to marginal (real-axis) roots
REGULARIZATION = 1e-9
# roots with |Im| below this (relative to the spectrum's frequency scale) count as real;
# poles are stored exactly, zeros come from root finding
_REAL_TOL = 1e-11
_REAL_TOL_POLE = 1e-14
_PSD_TOL = 1e-9


@dataclass(frozen=True)
class SpectralFactorPair:
    """``S = s_plus * s_minus`` with ``s_plus`` analytic and zero-free for Im > 0."""

    s_plus: RationalFunction
    s_minus: RationalFunction

    def __call__(self, w):
        return self.s_plus(w) * self.s_minus(w)


def _frequency_scale(S: RationalFunction) -> float:
    mags = np.abs(np.concatenate([S.zeros, S.poles]))
    mags = mags[mags > 0]
    return float(mags.max()) if mags.size else 1.0


def check_psd(S: RationalFunction, n: int = 256) -> None:
    """Sample ``S`` on the real axis and raise ``NotAPSD`` if it is not real and nonnegative.

    Frequencies are log spaced over both signs, six decades around the
    root magnitudes, plus the real parts of the stationary points of ``S``.
    """
    mags = np.abs(np.concatenate([S.zeros, S.poles]))
    mags = mags[mags > 0]
    lo, hi = (mags.min(), mags.max()) if mags.size else (1.0, 1.0)
    w = np.geomspace(1e-3 * lo, 1e3 * hi, n)
    w = np.concatenate([w, -w, [0.0]])
    num = S.numerator.coef
    if S.numerator.degree >= 1 or S.poles.size:
        den = npoly.polyfromroots(S.poles) if S.poles.size else np.ones(1, complex)
        stat = npoly.polysub(npoly.polymul(npoly.polyder(num), den), npoly.polymul(num, npoly.polyder(den)))
        stat = np.trim_zeros(stat, "b")
        if len(stat) > 1:
            w = np.concatenate([w, np.roots(stat[::-1]).real])
    # avoid landing exactly on a marginal pole
    pole_hit = np.any(np.abs(w[:, None] - S.poles[None, :]) == 0, axis=1) if S.poles.size else np.zeros(len(w), bool)
    w = w[~pole_hit]
    with np.errstate(all="ignore"):
        v = S(w)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return
    peak = float(np.max(np.abs(v)))
    if np.any(np.abs(v.imag) > _PSD_TOL * peak + 1e-300):
        raise NotAPSD("spectrum is not real on the real axis")
    if np.any(v.real < -_PSD_TOL * peak):
        i = int(np.argmin(v.real))
        raise NotAPSD(f"spectrum is negative on the real axis (value {v.real[i]:.3e})")


def _split(vals: np.ndarray, scale: float, eps: float, what: str, tol: float):
    """Assign roots to the lower (s_plus) and upper (s_minus) half planes."""
    lower, upper, real = [], [], []
    for v in vals:
        if abs(v.imag) <= tol * scale:
            real.append(v.real)
        elif v.imag < 0:
            lower.append(v)
        else:
            upper.append(v)
    for r, m in cluster_roots(np.array(real, dtype=complex), CLUSTER_RTOL, scale):
        if m % 2:
            raise NotFactorizable(f"real-axis {what} at {r.real:.6g} has odd multiplicity {m}")
        lower.extend([complex(r.real, -eps)] * (m // 2))
        upper.extend([complex(r.real, eps)] * (m // 2))
    if len(lower) != len(upper):
        raise NotFactorizable(f"{what}s are not paired across the real axis")
    return np.array(lower, dtype=complex)


def spectral_factorize(S: RationalFunction, eps: float | None = None) -> SpectralFactorPair:
    """Split a rational PSD as ``S = s_plus * s_minus``.

    ``s_plus`` collects the lower-half-plane zeros and poles with gain
    ``sqrt(lead(S))`` so that its leading coefficient ratio is positive
    real; ``s_minus`` is its reflection.  Real-axis roots of even
    multiplicity are displaced to ``-/+ i*eps`` (``eps`` defaults to
    ``1e-9`` times the spectrum's frequency scale).

    Raises
    ------
    NotFactorizable
        Odd-multiplicity real roots or unpaired roots.
    NotAPSD
        ``S`` negative or complex somewhere on the real axis.
    """
    if not isinstance(S, RationalFunction):
        S = RationalFunction.constant(S)
    if S.is_zero:
        raise NotFactorizable("the zero spectrum has no spectral factor")
    scale = _frequency_scale(S)
    if eps is None:
        eps = REGULARIZATION * scale
    check_psd(S)
    zl = _split(S.zeros, scale, eps, "zero", _REAL_TOL)
    pl = _split(S.poles, scale, eps, "pole", _REAL_TOL_POLE)
    k = S.gain
    if k.real <= 0 or abs(k.imag) > 1e-9 * abs(k):
        raise NotAPSD(f"leading coefficient {k} is not positive real")
    s_plus = RationalFunction(Polynomial.from_roots(zl, np.sqrt(k.real)), pl, reduce=False)
    return SpectralFactorPair(s_plus, s_plus.reflect())


def _projection(F: RationalFunction, keep_lower: bool) -> RationalFunction:
    if not isinstance(F, RationalFunction):
        F = RationalFunction.constant(F)
    if F.is_zero:
        return F
    if not F.strictly_proper:
        raise AmbiguousProjection("causal projection needs a strictly proper function (F -> 0 at infinity)")
    scale = float(np.max(np.abs(F.poles))) if F.poles.size else 1.0
    pfe = partial_fractions(F)
    kept = []
    for t in pfe.terms:
        if abs(t.pole.imag) <= _REAL_TOL_POLE * max(scale, 1e-300):
            raise DomainError(f"real-axis pole at {t.pole.real:.6g} has no causal assignment")
        if (t.pole.imag < 0) == keep_lower:
            kept.append(t)
    if not kept:
        return RationalFunction(0.0)
    return _terms_to_rational(kept)


def causal_part(F: RationalFunction) -> RationalFunction:
    """Sum of the partial-fraction terms of ``F`` with poles in the lower half plane.

    With the ``exp(-i Omega t)`` convention these are the terms whose
    inverse Fourier transform is supported on ``t >= 0``.
    """
    return _projection(F, True)


def anticausal_part(F: RationalFunction) -> RationalFunction:
    """Complement of :func:`causal_part`: upper-half-plane terms only."""
    return _projection(F, False)

import math
from dataclasses import replace

import numpy as np
import pytest

from condstate.errors import DivergentMoments, NoSteadyState
from condstate.factorize import causal_part, spectral_factorize
from condstate.markov import (
    HomodyneConfig,
    MarkovModel,
    conditional_cov_markov,
    freemass_homodyne_cov,
    homodyne_model,
    markov_conditional_covariance,
    markov_spectra,
)
from condstate.ratfun import RationalFunction, partial_fractions
from condstate.wiener import (
    SpectrumSet,
    conditional_covariance,
    kalman_covariance,
    riccati_iterates,
    riccati_oracle,
    unconditional_covariance,
    whiten,
    wiener_filter,
)

HBAR = 1.0


def _rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def _simple_set(S_xy):
    """Observable with spectrum 2/(w^2+1) read out with unit white noise added."""
    Sxx = RationalFunction(2.0, [1j, -1j])
    return SpectrumSet(Sxx + 1.0, (S_xy,), ((Sxx,),))


# -- filter ------------------------------------------------------------------------


def test_zero_cross_spectrum_gives_zero_filter():
    K = wiener_filter(_simple_set(RationalFunction(0.0)), 0)
    assert K.is_zero


def test_quantum_limited_filters_match_kernel_transforms():
    Oq, m = 2.0, 3.0
    S = markov_spectra(homodyne_model(HomodyneConfig(Omega_q=Oq, m=m, hbar=HBAR)))
    a = Oq / math.sqrt(2)
    w = np.linspace(-10, 10, 41) + 0.05
    d = (a - 1j * w) ** 2 + a**2
    # transforms of sqrt2 Oq e^{-at} cos(at) and sqrt2 m Oq^2 e^{-at} cos(at + pi/4)
    Kx_ref = math.sqrt(2) * Oq * (a - 1j * w) / d
    Kp_ref = -1j * m * Oq**2 * w / d
    np.testing.assert_allclose(wiener_filter(S, "x")(w), Kx_ref, rtol=1e-6, atol=1e-8 * Oq)
    np.testing.assert_allclose(wiener_filter(S, "p")(w), Kp_ref, rtol=1e-6, atol=1e-8 * m * Oq)


def test_filter_is_causal():
    model = MarkovModel.from_q(0.5, 1.0, 2.0, hbar=HBAR)
    K = wiener_filter(markov_spectra(model), "x")
    assert np.all(K.poles.imag < 0)


def test_wiener_hopf_optimality():
    # L = S_xy - K S_yy has no lower-half-plane poles and vanishes at infinity
    S = _simple_set(RationalFunction(2.0, [1j, -1j]))
    pair = spectral_factorize(S.S_yy)
    K = causal_part(S.S_xy[0] / pair.s_minus) / pair.s_plus
    L = S.S_xy[0] - K * S.S_yy
    pfe = partial_fractions(L)
    peak = max(abs(r) for t in pfe.terms for r in t.residues)
    for t in pfe.terms:
        if t.pole.imag < 0:
            assert max(abs(r) for r in t.residues) < 1e-10 * peak
    assert abs(L(1e6)) < 1e-5


def test_filter_invariant_under_common_scaling():
    S = _simple_set(RationalFunction(2.0, [1j, -1j]))
    c = 7.3
    S2 = replace(S, S_yy=S.S_yy.scale_value(c), S_xy=(S.S_xy[0].scale_value(c),))
    w = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(wiener_filter(S2, 0)(w), wiener_filter(S, 0)(w), rtol=1e-12)


def test_whiten():
    assert whiten(RationalFunction.constant(4.0))(0.3) == pytest.approx(0.5)
    w = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(whiten(RationalFunction.from_coeffs([1, 0, 1], [1]))(w), 1 / (w + 1j), rtol=1e-14)


def test_whitened_free_mass_output_is_flat():
    S = markov_spectra(MarkovModel.from_q(0.3, 1.0, 1.5, hbar=HBAR))
    h = whiten(S.S_yy)
    w = np.geomspace(1e-3, 1e3, 200)
    for ww in (w, -w):
        np.testing.assert_allclose(np.abs(h(ww)) ** 2 * S.S_yy(ww).real, 1.0, rtol=1e-9)


# -- covariance --------------------------------------------------------------------


def test_free_mass_ground_state():
    Oq, m = 2 * math.pi * 50, 0.7
    V = conditional_covariance(markov_spectra(homodyne_model(HomodyneConfig(Omega_q=Oq, m=m, hbar=HBAR))))
    ref = [[1 / (math.sqrt(2) * m * Oq), 0.5], [0.5, m * Oq / math.sqrt(2)]]
    assert _rel(V.values, ref) < 1e-7


def test_uncorrelated_data_gives_unconditional_covariance():
    S = _simple_set(RationalFunction(0.0))
    assert conditional_covariance(S).values[0, 0] == pytest.approx(unconditional_covariance(S).values[0, 0], rel=1e-12)
    # 1/2 int dw/2pi 2/(w^2+1) = 1/2
    assert conditional_covariance(S).values[0, 0] == pytest.approx(0.5, rel=1e-12)


def test_general_markov_instance_matches_closed_form():
    model = MarkovModel.from_q(0.5, 1.0, 2.0, m=1.0, hbar=HBAR)
    V = conditional_covariance(markov_spectra(model), verify=True)
    assert _rel(V.values, conditional_cov_markov(model).matrix) < 1e-8
    assert V.diagnostics["quadrature_rel_error"] < 1e-6


def test_conditioning_reduces_uncertainty():
    model = MarkovModel(1.0, 0.8, 2.0, 0.1, omega_m=1.0, gamma_m=0.2, hbar=HBAR)
    S = markov_spectra(model)
    Vc = conditional_covariance(S).values
    Vu = unconditional_covariance(S).values
    assert np.min(np.linalg.eigvalsh(Vu - Vc)) >= -1e-9 * np.max(np.abs(Vu))


def test_observable_scaling():
    S = _simple_set(RationalFunction(2.0, [1j, -1j]))
    c = 3.0
    S2 = replace(S, S_xy=(S.S_xy[0].scale_value(c),), S_xx=((S.S_xx[0][0].scale_value(c * c),),))
    assert conditional_covariance(S2).values[0, 0] == pytest.approx(c * c * conditional_covariance(S).values[0, 0], rel=1e-12)


def test_heisenberg_bound_holds():
    for r in (-0.9, 0.0, 0.9, 0.99):
        V = markov_conditional_covariance(MarkovModel.from_q(r, 1.0, 1.0, hbar=HBAR))
        assert V.symplectic_eigenvalues()[0] >= 0.5 - 1e-9
        assert V.diagnostics["regularization_sensitivity"] < 1e-6


def test_free_mass_with_correlated_noise():
    # a rotated homodyne angle correlates sensing and back-action noise
    for zeta in (-1.0, -0.3, 0.7):
        cfg = HomodyneConfig(zeta=zeta, Omega_q=1.0, Omega_F=0.1, Omega_x=3.0, hbar=HBAR)
        V = markov_conditional_covariance(homodyne_model(cfg))
        assert _rel(V.values, freemass_homodyne_cov(cfg).matrix) < 1e-9


def test_divergent_variance_is_reported():
    S = SpectrumSet(RationalFunction.constant(1.0), (RationalFunction(0.0),), ((RationalFunction(1.0, [0.0, 0.0]),),),
                    names=("x",))
    with pytest.raises(DivergentMoments) as info:
        unconditional_covariance(S)
    assert info.value.entry == ("x", "x")


# -- state-space oracles -------------------------------------------------------------


def test_riccati_oracle_ground_state():
    model = homodyne_model(HomodyneConfig(Omega_q=1.0, hbar=HBAR), omega_m=1e-6)
    V = riccati_oracle(model)
    ref = [[1 / math.sqrt(2), 0.5], [0.5, 1 / math.sqrt(2)]]
    assert _rel(V.values, ref) < 1e-5


def test_riccati_oracle_matches_pipeline():
    model = MarkovModel.from_q(0.5, 1.0, 2.0, hbar=HBAR)
    V = riccati_oracle(model).values
    assert _rel(V, conditional_covariance(markov_spectra(model)).values) < 1e-5


def test_riccati_without_force_noise_keeps_shrinking():
    model = MarkovModel(1.0, 1.0, 0.0, quantum=False, hbar=HBAR)
    vals = [P[0, 0] for _, P in zip(range(400), riccati_iterates(model, 0.01, 400))]
    assert np.all(np.diff(vals) <= 0)
    assert vals[-1] < 0.1 * vals[0]


def test_riccati_nonconvergence():
    model = MarkovModel(1.0, 1.0, 0.0, quantum=False, hbar=HBAR)
    with pytest.raises(NoSteadyState):
        riccati_oracle(model, dt=0.01, horizon=50, extrapolate=False)


def test_kalman_matches_closed_form():
    model = MarkovModel.from_q(-0.4, 1.0, 3.0, hbar=HBAR)
    q1, q2 = model.q1, model.q2
    s_zz, s_ff, s_zf = model.S_ZZ, model.S_FF, model.S_ZF
    A = [[0, 1], [0, 0]]
    # noise vector (Z, F): y = x + Z, dp/dt = F; two-sided intensity half the single-sided one
    B = [[0, 0], [0, 1]]
    C = [[1, 0]]
    D = [[1, 0]]
    W = 0.5 * np.array([[s_zz, s_zf], [s_zf, s_ff]])
    P = kalman_covariance(A, B, C, D, W)
    assert _rel(P, conditional_cov_markov(model).matrix) < 1e-10

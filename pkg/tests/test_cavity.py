import math
from dataclasses import replace

import numpy as np
import pytest

from condstate.cavity import (
    CavityModel,
    _ab,
    cavity_closed_form_cov,
    cavity_spectra,
    composite_state,
    conditional_cavity_state,
    detuned_sweep,
    freemass_cavity_zeros,
    optical_spring_response,
    testmass_state as mirror_state,
)
from condstate.errors import DomainError
from condstate.gstate import uncertainty_product
from condstate.markov import HomodyneConfig, freemass_homodyne_cov


def model(ratio, **kw):
    return CavityModel(gamma=1.0, Omega_q_cav=ratio, hbar=1.0, **kw)


def mirror_U(m, method="auto"):
    cov = conditional_cavity_state(m, method=method, observables=("x", "p"))
    return uncertainty_product(mirror_state(cov, m.m))


# ---------------------------------------------------------------------------
# closed form


def test_ab_reference_value():
    a1, b1, a2, b2 = _ab(1.0)
    assert a1 == pytest.approx(0.705, abs=1e-3)
    assert min(a1, b1, a2, b2) > 0


def test_output_zeros_match_closed_form():
    m = model(0.7)
    S = cavity_spectra(m)
    got = np.sort_complex(S.S_yy.zeros * S.freq_scale)
    want = np.sort_complex(freemass_cavity_zeros(m))
    np.testing.assert_allclose(got, want, atol=1e-8)


@pytest.mark.parametrize("ratio", [0.01, 0.1, 1.0, 3.0])
def test_closed_form_matches_pipeline(ratio):
    m = model(ratio)
    cf = cavity_closed_form_cov(m)
    cov = conditional_cavity_state(m, method="wiener", observables=("x", "p"))
    np.testing.assert_allclose([cov["x", "x"], cov["p", "p"], cov["x", "p"]],
                               [cf.V_xx, cf.V_pp, cf.V_xp], rtol=1e-8)


def test_closed_form_limits_and_slope():
    U = lambda r: uncertainty_product(cavity_closed_form_cov(model(r)))
    # the c_n combinations cancel to O(ratio^4), so tiny ratios lose precision
    assert U(1e-3) == pytest.approx(1.0, abs=1e-3)
    assert U(0.1) == pytest.approx(1 + 0.1 / (2 * math.sqrt(2)), abs=1e-2)
    slope = (U(3e-3) - 1) / 3e-3
    assert slope == pytest.approx(1 / (2 * math.sqrt(2)), rel=1e-2)


def test_closed_form_domain():
    with pytest.raises(DomainError):
        cavity_closed_form_cov(model(1.0, zeta=0.3))
    with pytest.raises(DomainError):
        cavity_closed_form_cov(model(1.0, Omega_x=0.1))


# ---------------------------------------------------------------------------
# limits and trends


def test_adiabatic_limit():
    Om = 1.0
    ref = uncertainty_product(freemass_homodyne_cov(HomodyneConfig(Omega_q=Om, hbar=1.0)))
    errs = []
    for g in (1e2, 1e3):
        U = mirror_U(CavityModel(gamma=g, Omega_q_cav=Om, hbar=1.0))
        errs.append(abs(U - ref))
    assert errs[1] < 1e-3
    exponent = math.log10(errs[0] / errs[1])
    assert 0.8 <= exponent <= 1.2


def test_optical_spring_shifts_resonance():
    wm = 0.5
    free = optical_spring_response(model(1.0, omega_m=wm, gamma_m=1e-3))
    spring = optical_spring_response(model(1.0, omega_m=wm, gamma_m=1e-3, Delta=0.5))
    res = lambda R: np.max(np.abs(R.poles.real))
    assert res(free) == pytest.approx(wm, rel=1e-3)
    assert abs(res(spring) - wm) > 1e-2


@pytest.mark.parametrize("ratio", [0.01, 0.1, 1.0, 3.0, 10.0])
def test_composite_state_is_pure(ratio):
    cs = composite_state(model(ratio))
    np.testing.assert_allclose(cs.symplectic, 0.5, rtol=1e-6)


def test_composite_trends():
    states = [composite_state(model(r)) for r in (0.1, 0.3, 1.0, 3.0)]
    U = [s.U_testmass for s in states]
    EN = [s.E_N for s in states]
    assert np.all(np.diff(U) > 0)
    assert np.all(np.diff(EN) > 0)


def test_wiener_and_kalman_agree():
    for ratio in (0.05, 1.0, 5.0):
        m = model(ratio)
        W = conditional_cavity_state(m, method="wiener").values
        K = conditional_cavity_state(m, method="kalman").values
        np.testing.assert_allclose(W, K, rtol=1e-6, atol=1e-9 * np.max(np.abs(K)))


def test_mechanical_frequency_lowers_U():
    for ratio in np.geomspace(0.1, 3.0, 5):
        # viscous damping without its Langevin force is not a physical
        # quantum model, so the oscillator is undamped here
        U = [mirror_U(model(ratio, omega_m=w), method="kalman")
             for w in (0.0, 0.25, 0.5, 1.0, 2.0)]
        assert np.all(np.diff(U) <= 1e-9)


def test_detuned_trends():
    m = model(0.3)
    U_pos = detuned_sweep(m, np.linspace(0, 3, 13))
    assert np.all(np.diff(U_pos) <= 1e-9)
    U_neg = detuned_sweep(m, [0.0, -5.0, -20.0, -80.0])
    assert U_neg[1] > U_neg[0]
    assert np.all(np.diff(U_neg[1:]) > 0)


def test_sensing_noise_curves_coincide_for_narrow_readout():
    # with sensing noise only, readout bandwidths at or above Omega_q give
    # nearly the same mirror state
    for Ox in (0.05, 0.1, 0.3, 1.0):
        U = [mirror_U(CavityModel(gamma=1.0 / r, Omega_q_cav=1.0, Omega_x=Ox, hbar=1.0))
             for r in (0.1, 1.0)]
        assert abs(U[0] - U[1]) / U[0] < 0.1


def test_tuned_amplitude_readout_rejected():
    with pytest.raises(DomainError):
        conditional_cavity_state(model(1.0, zeta=math.pi / 2))

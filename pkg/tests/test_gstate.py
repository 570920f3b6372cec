import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from condstate.entangle import assemble_total_cov
from condstate.errors import DomainError
from condstate.gstate import (
    SingleModeState,
    TwoModeState,
    effective_occupation,
    log_negativity,
    occupation_entropy,
    partial_transpose_min_eigenvalue,
    symplectic_eigenvalues,
    uncertainty_product,
)

H = 1.0
J = np.array([[0.0, 1.0], [-1.0, 0.0]])


def random_symplectic(rng):
    """Rotation, squeeze, rotation: a generic single-mode symplectic matrix."""
    def rot(t):
        return np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])

    r = rng.uniform(-1.5, 1.5)
    return rot(rng.uniform(0, 2 * math.pi)) @ np.diag([math.exp(r), math.exp(-r)]) @ rot(rng.uniform(0, 2 * math.pi))


def thermal(n):
    return (n + 0.5) * H * np.eye(2)


def random_gaussian(rng, n):
    S = random_symplectic(rng)
    return S @ thermal(n) @ S.T


def test_ground_state_values():
    Oq, m = 3.0, 2.0
    s = SingleModeState(H / (math.sqrt(2) * m * Oq), H * m * Oq / math.sqrt(2), H / 2, m, H)
    assert uncertainty_product(s) == pytest.approx(1.0, rel=1e-14)


def test_oscillator_vacuum():
    w, m = 5.0, 0.3
    s = SingleModeState(H / (2 * m * w), H * m * w / 2, 0.0, m, H)
    assert uncertainty_product(s) == pytest.approx(1.0, rel=1e-14)
    occ = effective_occupation(s)
    assert occ.N_eff == pytest.approx(0.0, abs=1e-14)
    assert occ.entropy == 0.0
    assert occ.omega_eff == pytest.approx(w, rel=1e-14)


def test_det_two_gives_sqrt_two():
    s = SingleModeState(math.sqrt(2) / 2, math.sqrt(2) / 2, 0.0, 1.0, H)
    assert uncertainty_product(s) == pytest.approx(math.sqrt(2), rel=1e-14)


def test_occupation_from_u_two():
    s = SingleModeState(1.0, 1.0, 0.0, 1.0, H)
    assert uncertainty_product(s) == pytest.approx(2.0)
    assert effective_occupation(s).N_eff == pytest.approx(0.5)


def test_entropy_formula():
    assert occupation_entropy(0.0) == 0.0
    N = 0.5
    assert occupation_entropy(N) == pytest.approx((N + 1) * math.log(N + 1) - N * math.log(N), rel=1e-14)


def test_heisenberg_violation_rejected():
    with pytest.raises(DomainError):
        SingleModeState(0.1, 0.1, 0.0, 1.0, H)


def test_heisenberg_slack_accepted():
    SingleModeState(0.5 * (1 - 5e-10), 0.5, 0.0, 1.0, H)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 5.0))
def test_u_invariant_under_symplectic_maps(seed, n):
    rng = np.random.default_rng(seed)
    V = random_gaussian(rng, n)
    S = random_symplectic(rng)
    U0 = uncertainty_product(SingleModeState.from_matrix(V, hbar=H))
    U1 = uncertainty_product(SingleModeState.from_matrix(S @ V @ S.T, hbar=H))
    assert U1 == pytest.approx(U0, rel=1e-9)
    assert U0 == pytest.approx(2 * n + 1, rel=1e-9)


# -- two modes -------------------------------------------------------------------


def test_product_of_pure_states_not_entangled():
    t = TwoModeState(np.eye(2) / 2, np.diag([2.0, 0.125]), np.zeros((2, 2)), H)
    assert log_negativity(t) == 0.0


def test_oppositely_squeezed_modes():
    s = 0.4
    Vc = SingleModeState(math.exp(-2 * s) / 2, math.exp(2 * s) / 2, 0.0, 1.0, H)
    Vd = SingleModeState(math.exp(2 * s) / 2, math.exp(-2 * s) / 2, 0.0, 1.0, H)
    t = assemble_total_cov(Vc, Vd)
    # oracle: the 4x4 partial-transpose spectrum computed directly
    sig = partial_transpose_min_eigenvalue(t.matrix)
    assert -math.log2(2 * sig / H) == pytest.approx(2 * s / math.log(2), rel=1e-12)
    assert log_negativity(t) == pytest.approx(2 * s / math.log(2), rel=1e-12)


def _random_two_mode(rng):
    S = np.zeros((4, 4))
    S[:2, :2] = random_symplectic(rng)
    S[2:, 2:] = random_symplectic(rng)
    # beam-splitter mixing followed by local operations
    th = rng.uniform(0, math.pi)
    B = np.kron(np.array([[math.cos(th), math.sin(th)], [-math.sin(th), math.cos(th)]]), np.eye(2))
    r = rng.uniform(0, 1.2)
    Sq = np.diag([math.exp(r), math.exp(-r), math.exp(-r), math.exp(r)])
    V0 = np.diag([rng.uniform(0.5, 3)] * 2 + [rng.uniform(0.5, 3)] * 2) * H
    M = S @ B @ Sq
    return M @ V0 @ M.T


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sigma_minus_matches_eigenvalue_route(seed):
    rng = np.random.default_rng(seed)
    V = _random_two_mode(rng)
    t = TwoModeState.from_matrix(V, H)
    sig = partial_transpose_min_eigenvalue(V)
    expected = max(0.0, -math.log2(2 * sig / H))
    assert log_negativity(t) == pytest.approx(expected, rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_e_n_invariant_under_local_symplectic_maps(seed):
    rng = np.random.default_rng(seed)
    V = _random_two_mode(rng)
    L = np.zeros((4, 4))
    L[:2, :2] = random_symplectic(rng)
    L[2:, 2:] = random_symplectic(rng)
    a = log_negativity(TwoModeState.from_matrix(V, H))
    b = log_negativity(TwoModeState.from_matrix(L @ V @ L.T, H))
    assert b == pytest.approx(a, rel=1e-8, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_separable_mixtures_have_no_negativity(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 6))
    w = rng.dirichlet(np.ones(k))
    mean = np.zeros(4)
    second = np.zeros((4, 4))
    for wi in w:
        blk = np.zeros((4, 4))
        blk[:2, :2] = random_gaussian(rng, rng.uniform(0, 1))
        blk[2:, 2:] = random_gaussian(rng, rng.uniform(0, 1))
        d = rng.normal(size=4)
        mean += wi * d
        second += wi * (blk + np.outer(d, d))
    V = second - np.outer(mean, mean)
    sig = partial_transpose_min_eigenvalue(V)
    assert -math.log2(2 * sig / H) <= 1e-9
    assert log_negativity(TwoModeState.from_matrix(V, H)) == 0.0


def test_unphysical_two_mode_state_rejected():
    with pytest.raises(DomainError):
        log_negativity(TwoModeState(np.eye(2) * 0.1, np.eye(2) * 0.1, np.zeros((2, 2)), H))


def test_symplectic_eigenvalues_of_thermal_pair():
    V = np.diag([1.5, 1.5, 0.5, 0.5])
    np.testing.assert_allclose(symplectic_eigenvalues(V), [0.5, 1.5])

"""Figures of merit for one- and two-mode Gaussian states."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.constants import hbar as HBAR

from .errors import DomainError

__all__ = [
    "HBAR",
    "SingleModeState",
    "TwoModeState",
    "Occupation",
    "uncertainty_product",
    "effective_occupation",
    "occupation_entropy",
    "log_negativity",
    "symplectic_eigenvalues",
    "partial_transpose_min_eigenvalue",
]

_SLACK = 1e-9


def symplectic_eigenvalues(V) -> np.ndarray:
    """Symplectic spectrum of a ``2n x 2n`` covariance ordered ``(x1, p1, x2, p2, ...)``.

    Computed as the moduli of the eigenvalues of ``i J V``, which come in
    +/- pairs; one of each pair is returned, ascending.
    """
    V = np.asarray(V, dtype=float)
    n = V.shape[0] // 2
    J = np.kron(np.eye(n), np.array([[0.0, 1.0], [-1.0, 0.0]]))
    ev = np.sort(np.abs(np.linalg.eigvals(1j * J @ V)))
    return ev[::2]


def partial_transpose_min_eigenvalue(V) -> float:
    """Smallest symplectic eigenvalue of the partial transpose of a two-mode covariance.

    Partial transposition flips the sign of the second mode's momentum.
    """
    P = np.diag([1.0, 1.0, 1.0, -1.0])
    return float(symplectic_eigenvalues(P @ np.asarray(V, dtype=float) @ P)[0])


@dataclass(frozen=True)
class SingleModeState:
    """Second moments of one mechanical mode.

    Parameters
    ----------
    V_xx, V_pp, V_xp : float
        Position variance (m^2), momentum variance ((kg m/s)^2) and the
        symmetrized cross moment (J s).
    m : float
        Mass in kg; used for the effective eigenfrequency.
    hbar : float
        Reduced Planck constant in the units of the moments.
    """

    V_xx: float
    V_pp: float
    V_xp: float
    m: float = 1.0
    hbar: float = HBAR

    def __post_init__(self):
        if not (self.V_xx > 0 and self.V_pp > 0):
            raise DomainError("variances must be positive")
        if self.det < 0.25 * self.hbar**2 * (1 - _SLACK):
            raise DomainError(
                f"state violates the Heisenberg bound (det/(hbar^2/4) = {4 * self.det / self.hbar**2:.12g})"
            )

    @classmethod
    def from_matrix(cls, V, m: float = 1.0, hbar: float = HBAR) -> "SingleModeState":
        V = np.asarray(V, dtype=float)
        return cls(float(V[0, 0]), float(V[1, 1]), float(0.5 * (V[0, 1] + V[1, 0])), m, hbar)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.V_xx, self.V_xp], [self.V_xp, self.V_pp]])

    @property
    def det(self) -> float:
        return self.V_xx * self.V_pp - self.V_xp**2


@dataclass(frozen=True)
class TwoModeState:
    """Two-mode covariance in blocks over ``(x_e, p_e, x_n, p_n)``."""

    V_ee: np.ndarray
    V_nn: np.ndarray
    V_en: np.ndarray
    hbar: float = HBAR

    def __post_init__(self):
        for name in ("V_ee", "V_nn", "V_en"):
            a = np.array(getattr(self, name), dtype=float).reshape(2, 2)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        M = self.matrix
        if not np.allclose(M, M.T, rtol=1e-12, atol=1e-12 * np.max(np.abs(M))):
            raise DomainError("two-mode covariance is not symmetric")

    @classmethod
    def from_matrix(cls, V, hbar: float = HBAR) -> "TwoModeState":
        V = np.asarray(V, dtype=float)
        return cls(V[:2, :2], V[2:, 2:], V[:2, 2:], hbar)

    @property
    def matrix(self) -> np.ndarray:
        return np.block([[self.V_ee, self.V_en], [self.V_en.T, self.V_nn]])

    def is_physical(self) -> bool:
        scale = np.sqrt(np.abs(np.linalg.det(self.V_ee)) + np.abs(np.linalg.det(self.V_nn)))
        if np.min(np.linalg.eigvalsh(self.matrix)) < -_SLACK * np.max(np.abs(self.matrix)):
            return False
        return symplectic_eigenvalues(self.matrix)[0] >= 0.5 * self.hbar * (1 - 1e-6) or scale == 0


def uncertainty_product(s: SingleModeState) -> float:
    """``U = (2/hbar) sqrt(det V)``; unity for a pure state."""
    return 2.0 / s.hbar * np.sqrt(max(s.det, 0.0))


def occupation_entropy(N: float) -> float:
    """Von Neumann entropy (nats) of a thermal state with mean occupation ``N``."""
    if N <= 0:
        return 0.0
    return float((N + 1) * np.log1p(N) - N * np.log(N))


class Occupation(NamedTuple):
    N_eff: float
    omega_eff: float
    entropy: float


def effective_occupation(s: SingleModeState) -> Occupation:
    """Effective thermal occupation, the eigenfrequency realizing it, and the entropy."""
    N = max(0.0, 0.5 * (uncertainty_product(s) - 1.0))
    omega = float(np.sqrt(s.V_pp / (s.m**2 * s.V_xx)))
    return Occupation(N, omega, occupation_entropy(N))


def log_negativity(t: TwoModeState) -> float:
    """Logarithmic negativity (base 2) of a two-mode Gaussian state.

    ``sigma_-`` is the smaller symplectic eigenvalue of the partially
    transposed covariance, obtained from the block invariants; a negative
    discriminant caused by rounding is clamped to zero.

    Raises
    ------
    DomainError
        If the covariance is not a physical quantum state.
    """
    if not t.is_physical():
        raise DomainError("two-mode covariance violates the uncertainty principle")
    det_total = float(np.linalg.det(t.matrix))
    Sigma = float(np.linalg.det(t.V_nn) + np.linalg.det(t.V_ee) - 2 * np.linalg.det(t.V_en))
    disc = max(Sigma**2 - 4 * det_total, 0.0)
    sig2 = max(0.5 * (Sigma - np.sqrt(disc)), 0.0)
    sigma = np.sqrt(sig2)
    if sigma == 0:
        raise DomainError("degenerate two-mode covariance")
    return max(0.0, -float(np.log2(2 * sigma / t.hbar)))

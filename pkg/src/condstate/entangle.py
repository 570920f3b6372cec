"""Entanglement between two mirrors prepared by conditioning common and differential modes."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import scipy.optimize

from .errors import DomainError
from .gstate import HBAR, SingleModeState, TwoModeState, log_negativity
from .markov import HomodyneConfig, freemass_homodyne_cov

__all__ = [
    "EntanglementSetup",
    "EntanglementResult",
    "assemble_total_cov",
    "setup_log_negativity",
    "maximize_entanglement",
]


def assemble_total_cov(V_c: SingleModeState, V_d: SingleModeState) -> TwoModeState:
    """Joint state of the two end mirrors from the common and differential modes."""
    xx_p, xx_m = (V_c.V_xx + V_d.V_xx) / 4, (V_c.V_xx - V_d.V_xx) / 4
    xp_p, xp_m = (V_c.V_xp + V_d.V_xp) / 2, (V_c.V_xp - V_d.V_xp) / 2
    pp_p, pp_m = V_c.V_pp + V_d.V_pp, V_c.V_pp - V_d.V_pp
    same = np.array([[xx_p, xp_p], [xp_p, pp_p]])
    cross = np.array([[xx_m, xp_m], [xp_m, pp_m]])
    return TwoModeState(same, same, cross, V_c.hbar)


@dataclass(frozen=True)
class EntanglementSetup:
    """Homodyne configurations of the two modes; classical noise is shared."""

    differential: HomodyneConfig
    common: HomodyneConfig

    def __post_init__(self):
        d, c = self.differential, self.common
        if (d.Omega_F, d.Omega_x, d.m, d.hbar) != (c.Omega_F, c.Omega_x, c.m, c.hbar):
            raise DomainError("common and differential modes must share Omega_F, Omega_x and m")
        if d.mode != "differential" or c.mode != "common":
            raise DomainError("configs must be tagged differential and common")

    @classmethod
    def from_noise(cls, Omega_F: float, Omega_x: float, m: float = 1.0, S_a1a1: float = 1.0,
                   S_a2a2: float = 1.0, alpha_ratio: float = 1.0, hbar: float = HBAR) -> "EntanglementSetup":
        Om = math.sqrt(Omega_F * Omega_x) if Omega_F > 0 and Omega_x > 0 else 1.0
        base = HomodyneConfig(Omega_q=Om, Omega_F=Omega_F, Omega_x=Omega_x, m=m, hbar=hbar)
        return cls(base, replace(base, mode="common", S_a1a1=S_a1a1, S_a2a2=S_a2a2, alpha_ratio=alpha_ratio))

    @property
    def Omega_cl(self) -> float:
        d = self.differential
        return math.sqrt(d.Omega_F * d.Omega_x) if d.Omega_F > 0 and d.xi_x > 0 else d.Omega_q


class EntanglementResult(NamedTuple):
    E_N_max: float
    Omega_q_c: float
    Omega_q_d: float
    zeta_c: float
    zeta_d: float


def setup_log_negativity(setup: EntanglementSetup, Omega_q_c: float, Omega_q_d: float,
                         zeta_c: float, zeta_d: float) -> float:
    """E_N of the mirror pair for given measurement frequencies and homodyne angles."""
    Vc = freemass_homodyne_cov(replace(setup.common, Omega_q=Omega_q_c, zeta=zeta_c))
    Vd = freemass_homodyne_cov(replace(setup.differential, Omega_q=Omega_q_d, zeta=zeta_d))
    return log_negativity(assemble_total_cov(Vc, Vd))


def _moments(cfg: HomodyneConfig, Om, t):
    """Vectorized free-mass homodyne moments in units hbar = m = 1."""
    a1, a2 = cfg.laser_noise
    Om = Om * (cfg.alpha_ratio if cfg.mode == "common" else 1.0)
    xf = cfg.Omega_F / Om
    xx = Om / cfg.Omega_x if cfg.xi_x else 0.0 * Om
    A = a1 + 2 * xf**2
    B = a2 + a1 * t**2 + 2 * xx**2
    W = np.sqrt(A * B) - a1 * t
    return np.sqrt(B * W) / (math.sqrt(2) * Om), Om * np.sqrt(A * W) / math.sqrt(2), 0.5 * W


def _en_vectorized(setup, Oc, Od, tc, td, clamp=True):
    xc, pc, qc = _moments(setup.common, Oc, tc)
    xd, pd, qd = _moments(setup.differential, Od, td)
    Sigma = xc * pd + pc * xd - 2 * qc * qd
    det = (xc * pc - qc**2) * (xd * pd - qd**2)
    sig2 = 0.5 * (Sigma - np.sqrt(np.maximum(Sigma**2 - 4 * det, 0.0)))
    val = -0.5 * np.log2(4 * np.maximum(sig2, 1e-300))
    return np.maximum(0.0, val) if clamp else val


def maximize_entanglement(setup: EntanglementSetup, fix_zeta: bool = False, n_grid: int = 17,
                          n_zeta: int = 17, span=(1e-2, 1e3), zeta_box=(-0.5 * math.pi, 0.0),
                          tol: float = 1e-6) -> EntanglementResult:
    """Maximize the logarithmic negativity over both measurement frequencies and angles.

    A deterministic coarse grid (log spaced in ``Omega_q``, ``span`` times
    ``Omega_cl``) is followed by Nelder-Mead refinement.  With ``fix_zeta``
    both modes are read out in the phase quadrature.
    """
    Ocl = setup.Omega_cl
    lo, hi = math.log10(span[0]), math.log10(span[1])
    lg = np.linspace(lo, hi, n_grid)
    if fix_zeta:
        zs = np.zeros(1)
    else:
        # open at the amplitude quadrature, denser towards it
        u = np.linspace(0.0, 1.0, n_zeta + 1)[:-1]
        zs = zeta_box[1] + (zeta_box[0] - zeta_box[1]) * np.sin(0.5 * math.pi * u)
        zs = np.sort(zs)
    Lc, Ld, Zc, Zd = np.meshgrid(lg, lg, zs, zs, indexing="ij")
    # the unclamped value keeps the landscape informative where E_N = 0
    vals = _en_vectorized(setup, Ocl * 10**Lc, Ocl * 10**Ld, np.tan(Zc), np.tan(Zd), clamp=False)
    k = int(np.argmax(vals))  # first maximum in lexicographic grid order
    x0 = np.array([Lc.flat[k], Ld.flat[k], Zc.flat[k], Zd.flat[k]])
    best = float(vals.flat[k])

    zmin = zeta_box[0] + 1e-9
    zmax = zeta_box[1]

    def neg(v):
        a, b, c, d = v
        if not (lo <= a <= hi and lo <= b <= hi):
            return np.inf
        if fix_zeta:
            c = d = 0.0
        elif not (zmin <= c <= zmax and zmin <= d <= zmax):
            return np.inf
        return -float(_en_vectorized(setup, Ocl * 10**a, Ocl * 10**b, math.tan(c), math.tan(d), clamp=False))

    step = np.array([0.05, 0.05, 0.02, 0.02])
    # step inwards from any box edge
    signs = np.where(x0 - step > np.array([lo, lo, zmin, zmin]), -1.0, 1.0)
    simplex = np.vstack([x0] + [x0 + np.eye(4)[i] * step[i] * signs[i] for i in range(4)])
    res = scipy.optimize.minimize(neg, x0, method="Nelder-Mead",
                                  options={"initial_simplex": simplex, "fatol": tol * 1e-2,
                                           "xatol": 1e-9, "maxiter": 20000, "maxfev": 40000})
    if -res.fun > best:
        x0, best = res.x, float(-res.fun)
    zc, zd = (0.0, 0.0) if fix_zeta else (float(x0[2]), float(x0[3]))
    return EntanglementResult(max(best, 0.0), Ocl * 10 ** float(x0[0]), Ocl * 10 ** float(x0[1]), zc, zd)

"""Classical noise budgets: rational power-law fits, tabulated spectra and presets.

All spectra are single-sided PSDs per Hz written as rational functions of
the angular frequency ``Omega`` (rad/s): N^2/Hz for force noise, m^2/Hz for
sensing noise.  Fitted shapes are products of factors ``Omega^2 + w_k^2``,
so the causal spectral factor is available in closed form.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
import scipy.optimize
from scipy.constants import c as SPEED_OF_LIGHT

from .cavity import CavityModel, ColoredNoise, conditional_cavity_state, realize_factor, testmass_state
from .errors import DivergentMoments, DomainError, FitError, FormatError, NoSteadyState
from .gstate import HBAR, SingleModeState, effective_occupation, uncertainty_product
from .markov import (
    REGULARIZATION,
    HomodyneConfig,
    MarkovModel,
    homodyne_model,
    markov_units,
    mechanical_response,
    sql_psd,
)
from .ratfun import RationalFunction
from .wiener import conditional_covariance, kalman_covariance, spectra_from_channels

__all__ = [
    "NoiseComponent",
    "NoiseBudget",
    "BudgetResult",
    "powerlaw_rational_fit",
    "powerlaw_component",
    "seismic_component",
    "ingest_noise_table",
    "straw_man_budget",
    "ligo_budget",
    "improved_ligo_budget",
    "conditional_state_with_budget",
    "displacement_psd",
    "LIGO_CALIBRATION",
    "LIGO_INTERFEROMETER",
    "characteristic_frequency",
    "ligo_cavity_model",
]

TWO_PI = 2 * math.pi
FIT_TOL_DB = 1.0
_GRID = 200


# ---------------------------------------------------------------------------
# shapes


@dataclass(frozen=True)
class _Shape:
    """``A prod(Omega^2 + z^2) / prod(Omega^2 + p^2)`` with corner frequencies in rad/s."""

    amplitude: float
    zeros: tuple = ()
    poles: tuple = ()

    def __call__(self, omega):
        w2 = np.asarray(omega, dtype=float) ** 2
        out = np.full_like(w2, self.amplitude, dtype=float)
        for z in self.zeros:
            out = out * (w2 + z * z)
        for p in self.poles:
            out = out / (w2 + p * p)
        return out

    def log10(self, omega):
        w2 = np.asarray(omega, dtype=float) ** 2
        out = np.full_like(w2, math.log10(self.amplitude), dtype=float)
        for z in self.zeros:
            out = out + np.log10(w2 + z * z)
        for p in self.poles:
            out = out - np.log10(w2 + p * p)
        return out

    def scaled(self, c: float) -> "_Shape":
        return replace(self, amplitude=self.amplitude * c)

    def rational(self) -> RationalFunction:
        z = [s * 1j * v for v in self.zeros for s in (1, -1)]
        p = [s * 1j * v for v in self.poles for s in (1, -1)]
        return RationalFunction.from_zpk(z, p, self.amplitude)

    def factor(self) -> RationalFunction:
        """Causal factor ``h`` with ``|h|^2`` equal to the shape on the real axis."""
        z = [-1j * v for v in self.zeros]
        p = [-1j * v for v in self.poles]
        return RationalFunction.from_zpk(z, p, math.sqrt(self.amplitude))


def _max_db(shape: _Shape, omega, target_log10) -> float:
    return float(np.max(np.abs(10 * (shape.log10(omega) - target_log10))))


def _least_squares_shape(omega, target_log10, zeros0, poles0, floor: float = 1e-3) -> _Shape:
    """Refine corner frequencies (in log10) and amplitude to fit ``target_log10``.

    Corners stay above ``floor`` times the lowest fitted frequency.
    """
    nz = len(zeros0)
    x0 = np.log10(np.concatenate([zeros0, poles0]))

    def shape_of(v):
        corners = 10.0**v
        s = _Shape(1.0, tuple(corners[:nz]), tuple(corners[nz:]))
        # the amplitude is linear in log space: take its least-squares value
        a = float(np.mean(target_log10 - s.log10(omega)))
        return replace(s, amplitude=10.0**a)

    def resid(v):
        return shape_of(v).log10(omega) - target_log10

    if x0.size == 0:
        return shape_of(x0)
    lo = math.log10(omega[0] * floor)
    hi = math.log10(omega[-1]) + 3
    res = scipy.optimize.least_squares(resid, np.clip(x0, lo + 1e-9, hi - 1e-9), bounds=(lo, hi),
                                       method="trf", x_scale=1.0, xtol=1e-12, ftol=1e-12, gtol=1e-12)
    return shape_of(res.x)


def _powerlaw_guess(exponent: float, w_lo: float, w_hi: float, order: int):
    """Interleaved corner frequencies whose mean slope over the band is ``exponent``."""
    D = math.log10(w_hi / w_lo)
    if exponent < 0:
        q = math.ceil(-exponent / 2 - 1e-12)
        k = order - q
        if k < 1:
            return None
        s = D / k
        phi = q + exponent / 2  # position of each zero between consecutive poles
        poles = [w_lo * 10 ** (j * s) for j in range(k + 1)] + [w_lo] * (q - 1)
        zeros = [w_lo * 10 ** ((j + phi) * s) for j in range(k)]
    else:
        s = D / order
        zeros = [w_lo * 10 ** (j * s) for j in range(order)]
        poles = [z * 10 ** (exponent / 2 * s) for z in zeros]
    return np.array(zeros), np.array(poles)


def _fit_powerlaw_shape(exponent, f_lo, f_hi, anchor, order):
    w_lo, w_hi = TWO_PI * f_lo, TWO_PI * f_hi
    omega = np.logspace(math.log10(w_lo), math.log10(w_hi), _GRID)
    f0, P0 = anchor
    target = math.log10(P0) + exponent * np.log10(omega / (TWO_PI * f0))
    guess = _powerlaw_guess(exponent, w_lo, w_hi, order)
    if guess is None:
        return None, np.inf, omega, target
    # keep every corner near the band so the fit turns flat just below it
    shape = _least_squares_shape(omega, target, *guess, floor=0.5)
    # pin the anchor exactly
    shape = shape.scaled(P0 / float(shape(TWO_PI * f0)))
    return shape, _max_db(shape, omega, target), omega, target


def powerlaw_rational_fit(exponent: float, band: Sequence[float], anchor: tuple[float, float],
                          order: int | None = None, tol_db: float = FIT_TOL_DB) -> RationalFunction:
    """Rational approximation of ``P0 (f / f0)**exponent`` over a frequency band.

    Parameters
    ----------
    exponent : float
        Power-law exponent of the PSD; must not exceed 2.
    band : (f_lo, f_hi)
        Band in Hz.  Below ``f_lo`` the fit is flat; above ``f_hi`` it falls
        at least as fast as the target.
    anchor : (f0, P0)
        The fit passes exactly through ``P0`` at ``f0`` Hz.
    order : int, optional
        Number of pole pairs.  By default the smallest order meeting
        ``tol_db`` is used.

    Returns
    -------
    RationalFunction
        The PSD as a function of ``Omega`` (rad/s).

    Raises
    ------
    FitError
        If the maximal deviation on a 200-point log grid exceeds ``tol_db``.
    """
    return _powerlaw(exponent, band, anchor, order, tol_db)[0].rational()


def _powerlaw(exponent, band, anchor, order, tol_db):
    f_lo, f_hi = map(float, band)
    if not 0 < f_lo < f_hi:
        raise DomainError("need 0 < f_lo < f_hi")
    if exponent > 2:
        raise DomainError("exponents above 2 are not supported")
    if anchor[1] <= 0:
        raise DomainError("anchor PSD must be positive")
    if exponent == 0:
        return _Shape(float(anchor[1])), 0.0, 0
    decades = math.log10(f_hi / f_lo)
    q = math.ceil(-exponent / 2 - 1e-12) if exponent < 0 else 0
    if order is not None:
        if order < math.ceil(decades - 1e-12) or order <= q:
            raise DomainError(f"order {order} is too low for {decades:.3g} decades at exponent {exponent:g}")
        shape, dev, _, _ = _fit_powerlaw_shape(exponent, f_lo, f_hi, anchor, order)
        if dev > tol_db:
            raise FitError(f"power-law fit deviates by {dev:.3g} dB at order {order}", max_deviation_db=dev)
        return shape, dev, order
    best = np.inf
    start = max(math.ceil(decades - 1e-12), q + 1, 1)
    for n in range(start, start + 12):
        shape, dev, _, _ = _fit_powerlaw_shape(exponent, f_lo, f_hi, anchor, n)
        best = min(best, dev)
        if dev <= tol_db:
            return shape, dev, n
    raise FitError(f"no power-law fit within {tol_db:g} dB (best {best:.3g} dB)", max_deviation_db=best)


# ---------------------------------------------------------------------------
# components and budgets


@dataclass(frozen=True)
class NoiseComponent:
    """One classical noise source.

    Attributes
    ----------
    name : str
    kind : {"force", "sensing"}
    shape : _Shape
        Factored PSD; see :attr:`spectrum` for the rational function.
    low_cutoff : float
        Angular frequency (rad/s) below which the spectrum is flat; 0 means
        the low-frequency rise is not cut off.
    fit_metadata : dict
        Target power law, band, anchor, order and achieved deviation.
    """

    name: str
    kind: str
    shape: Any = field(repr=False)
    low_cutoff: float = 0.0
    fit_metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("force", "sensing"):
            raise DomainError(f"unknown noise kind {self.kind!r}")
        if self.shape.amplitude < 0:
            raise DomainError("noise amplitude must be nonnegative")

    @property
    def spectrum(self) -> RationalFunction:
        return self.shape.rational()

    def psd(self, f_hz):
        """PSD at frequencies in Hz."""
        return self.shape(TWO_PI * np.asarray(f_hz, dtype=float))

    def colored_noise(self) -> ColoredNoise:
        return ColoredNoise(self.name, self.kind, self.shape.factor())

    def scaled(self, amplitude_factor: float) -> "NoiseComponent":
        """Component with its amplitude spectral density multiplied by ``amplitude_factor``."""
        c = amplitude_factor**2
        meta = dict(self.fit_metadata)
        if "anchor" in meta:
            meta["anchor"] = (meta["anchor"][0], meta["anchor"][1] * c)
        if "level" in meta:
            meta["level"] = meta["level"] * c
        return replace(self, shape=self.shape.scaled(c), fit_metadata=meta)

    def with_cutoff(self, low_cutoff: float) -> "NoiseComponent":
        """Refit a power-law component with a new low cutoff (rad/s).

        A cutoff of zero removes the flattening: the lowest corner moves to
        ``Omega = 0`` and the spectrum acquires a pole on the real axis.
        """
        meta = self.fit_metadata
        if meta.get("model") != "powerlaw":
            raise DomainError(f"component {self.name!r} has no power law to refit")
        if low_cutoff < 0:
            raise DomainError("cutoff must be nonnegative")
        if low_cutoff == 0:
            poles = sorted(self.shape.poles)
            shape = replace(self.shape, poles=tuple([0.0] + poles[1:]))
            return replace(self, shape=shape, low_cutoff=0.0, fit_metadata=dict(meta, band_hz=(0.0, meta["band_hz"][1])))
        return powerlaw_component(self.name, self.kind, meta["exponent"], (low_cutoff / TWO_PI, meta["band_hz"][1]),
                                  meta["anchor"], order=None, tol_db=meta["tol_db"])


def powerlaw_component(name: str, kind: str, exponent: float, band, anchor, order: int | None = None,
                       tol_db: float = FIT_TOL_DB) -> NoiseComponent:
    """Noise component following a power law over ``band`` (Hz), flat below it."""
    shape, dev, n = _powerlaw(exponent, band, anchor, order, tol_db)
    meta = dict(model="powerlaw", exponent=exponent, band_hz=tuple(map(float, band)),
                anchor=tuple(map(float, anchor)), order=n, max_deviation_db=dev, tol_db=tol_db)
    return NoiseComponent(name, kind, shape, TWO_PI * float(band[0]), meta)


def seismic_component(level: float, corners_hz=(0.25, 2.0), orders=(4, 4), name: str = "seismic") -> NoiseComponent:
    """Force noise flat at ``level`` (N^2/Hz) below the first corner.

    Each corner adds ``orders[k]`` pole pairs, i.e. a PSD slope steeper by
    ``2 orders[k]``; the displacement of a free mass falls four powers of
    ``f`` faster still.
    """
    poles = tuple(TWO_PI * f for f, k in zip(corners_hz, orders) for _ in range(k))
    base = _Shape(1.0, (), poles)
    shape = base.scaled(level / float(base(0.0)))
    meta = dict(model="corners", corners_hz=tuple(corners_hz), orders=tuple(orders), level=level)
    return NoiseComponent(name, "force", shape, 0.0, meta)


def displacement_psd(component: NoiseComponent, f_hz, m: float):
    """Free-mass displacement PSD (m^2/Hz) produced by a component."""
    P = component.psd(f_hz)
    if component.kind == "force":
        w = TWO_PI * np.asarray(f_hz, dtype=float)
        return P / (m * m * w**4)
    return P


@dataclass(frozen=True)
class NoiseBudget:
    """Classical components added on top of a quantum measurement model.

    ``quantum`` is a :class:`MarkovModel` or :class:`CavityModel`; the
    quantum noise is always part of the budget.
    """

    components: tuple = ()
    quantum: Any = None
    name: str = ""
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        names = [c.name for c in self.components]
        if len(set(names)) != len(names):
            raise DomainError("component names must be unique")

    def __getitem__(self, name: str) -> NoiseComponent:
        for c in self.components:
            if c.name == name:
                return c
        raise KeyError(name)

    def replace_component(self, comp: NoiseComponent) -> "NoiseBudget":
        return replace(self, components=tuple(comp if c.name == comp.name else c for c in self.components))

    def without(self, name: str) -> "NoiseBudget":
        return replace(self, components=tuple(c for c in self.components if c.name != name))

    def with_quantum(self, quantum) -> "NoiseBudget":
        return replace(self, quantum=quantum)

    def with_sensing_cutoff(self, low_cutoff: float) -> "NoiseBudget":
        """Refit every sensing component with a new low cutoff (rad/s)."""
        comps = tuple(c.with_cutoff(low_cutoff) if c.kind == "sensing" else c for c in self.components)
        return replace(self, components=comps)

    def scaled(self, amplitudes: dict) -> "NoiseBudget":
        """Multiply the amplitude spectral densities of named components."""
        comps = tuple(c.scaled(amplitudes.get(c.name, 1.0)) for c in self.components)
        return replace(self, components=comps)


# ---------------------------------------------------------------------------
# tabulated spectra


def _read_table(table):
    if isinstance(table, (str, os.PathLike)):
        try:
            with open(table, newline="") as fh:
                text = fh.read()
        except OSError as e:
            raise FormatError(f"cannot read noise table: {e}") from e
    elif hasattr(table, "read"):
        text = table.read()
    else:
        arr = np.asarray(table, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise FormatError("noise table must have two columns")
        return arr[:, 0], arr[:, 1]
    rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].lstrip().startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != ["freq_hz", "psd"]:
        raise FormatError("noise table needs the header 'freq_hz,psd'")
    try:
        data = np.array([[float(c) for c in r] for r in rows[1:]], dtype=float)
    except ValueError as e:
        raise FormatError(f"malformed noise table row: {e}") from e
    if data.ndim != 2 or data.shape[1] != 2:
        raise FormatError("noise table rows must have two fields")
    return data[:, 0], data[:, 1]


def _table_guesses(w, order, q):
    lo, hi = math.log10(w[0]), math.log10(w[-1])
    nz = order - q
    out = []
    for spread in (0.0, 0.5):
        poles = np.logspace(lo - spread, hi + spread, order + 2)[1:-1]
        zeros = np.logspace(lo - spread, hi + spread, nz + 2)[1:-1] if nz else np.zeros(0)
        out.append((zeros, poles))
    poles = np.logspace(lo, hi, order)
    out.append((poles[:nz] * 1.5, poles))
    return out


def ingest_noise_table(table, kind: str, order: int | None = None, name: str = "table",
                       tol_db: float = 0.1, max_order: int = 10) -> NoiseComponent:
    """Rational fit of a tabulated PSD.

    Parameters
    ----------
    table : path, file object or (N, 2) array
        Frequencies in Hz (strictly increasing) and positive PSD values.
        Text input is CSV with header ``freq_hz,psd``; ``#`` lines are comments.
    kind : {"force", "sensing"}
    order : int, optional
        Number of pole pairs; by default the smallest order within ``tol_db``
        (up to ``max_order``) or else the best one found.

    Raises
    ------
    FormatError
        For fewer than ten rows, non-positive PSDs or a non-increasing
        frequency column.
    """
    f, P = _read_table(table)
    if f.size < 10:
        raise FormatError(f"noise table needs at least 10 rows (got {f.size})")
    if not np.all(np.isfinite(f)) or not np.all(np.isfinite(P)):
        raise FormatError("noise table contains non-finite values")
    if np.any(np.diff(f) <= 0) or f[0] <= 0:
        raise FormatError("frequency column must be positive and strictly increasing")
    if np.any(P <= 0):
        raise FormatError("PSD values must be positive")
    w = TWO_PI * f
    target = np.log10(P)
    span = (float(f[0]), float(f[-1]))
    if np.ptp(target) == 0:
        shape, dev, n = _Shape(float(P[0])), 0.0, 0
    else:
        # the high-frequency slope fixes the pole excess
        tail = max(3, f.size // 10)
        slope = np.polyfit(np.log10(w[-tail:]), target[-tail:], 1)[0]
        q = max(0, math.ceil(-slope / 2 - 0.25))
        orders = [order] if order is not None else range(max(q, 1), max_order + 1)
        best = (None, np.inf, 0)
        for n in orders:
            qn = min(q, n)
            for z0, p0 in _table_guesses(w, n, qn):
                s = _least_squares_shape(w, target, z0, p0)
                d = _max_db(s, w, target)
                if d < best[1]:
                    best = (s, d, n)
            if best[1] <= tol_db and order is None:
                break
        shape, dev, n = best
    meta = dict(model="table", span_hz=span, order=n, max_deviation_db=dev, points=int(f.size))
    return NoiseComponent(name, kind, shape, TWO_PI * span[0], meta)


# ---------------------------------------------------------------------------
# presets

# Amplitude multipliers (ASD) of the straw-man shapes (10 kg) that define the
# Advanced LIGO preset.  One common factor was solved for so that the
# broadband point (290 Hz, 120 Hz, 0.7 pi) gives N_eff = 2.2 with the default
# interferometer below.
LIGO_CALIBRATION = {
    "version": 1,
    "seismic": 2.61,
    "suspension_thermal": 2.61,
    "internal_thermal": 2.61,
}

# arm-cavity interferometer behind the sweep; the differential mode acts as a
# single detuned cavity whose mirror has a quarter of the test-mass mass
LIGO_INTERFEROMETER = {
    "power_w": 8.0e5,
    "arm_length_m": 3995.0,
    "mirror_mass_kg": 40.0,
    "wavelength_m": 1064e-9,
    "mapping_constant": 2.0,
}


def straw_man_budget(m: float, Omega_q: float | None = None, hbar: float = HBAR,
                     sensing_cutoff_hz: float = 3.0, f_high_hz: float = 2000.0,
                     suspension_cross_hz: float = 20.0, internal_cross_hz: float = 500.0,
                     seismic_cross_hz: float = 10.0) -> NoiseBudget:
    """Colored budget of an advanced interferometer around a free-mass quantum model.

    * suspension thermal: force PSD ``~1/f`` above 1 Hz (displacement ASD
      ``~f^(-5/2)``), equal to the free-mass SQL at ``suspension_cross_hz``;
    * internal thermal: sensing PSD ``~1/f`` above ``sensing_cutoff_hz``,
      equal to the SQL at ``internal_cross_hz``;
    * seismic: force noise flat below 0.25 Hz whose displacement ASD falls
      as ``f^-6`` to 2 Hz and ``f^-10`` above, equal to the suspension
      thermal noise at ``seismic_cross_hz`` so that it dominates below.

    The quantum part is phase-quadrature homodyne readout of the free mass
    with measurement frequency ``Omega_q`` (default ``2 pi 100`` rad/s).
    """
    if m <= 0:
        raise DomainError("mass must be positive")
    Om = TWO_PI * 100.0 if Omega_q is None else Omega_q
    w_s = TWO_PI * suspension_cross_hz
    susp = powerlaw_component("suspension_thermal", "force", -1.0, (1.0, f_high_hz),
                              (suspension_cross_hz, m * m * w_s**4 * float(sql_psd(w_s, m, hbar))))
    w_i = TWO_PI * internal_cross_hz
    internal = powerlaw_component("internal_thermal", "sensing", -1.0, (sensing_cutoff_hz, f_high_hz),
                                  (internal_cross_hz, float(sql_psd(w_i, m, hbar))))
    seis = seismic_component(1.0)
    f_x = seismic_cross_hz
    seis = seis.scaled(math.sqrt(float(susp.psd(f_x)) / float(seis.psd(f_x))))
    quantum = homodyne_model(HomodyneConfig(Omega_q=Om, m=m, hbar=hbar))
    meta = dict(suspension_cross_hz=suspension_cross_hz, internal_cross_hz=internal_cross_hz,
                seismic_cross_hz=seismic_cross_hz, sensing_cutoff_hz=sensing_cutoff_hz)
    return NoiseBudget((seis, susp, internal), quantum, "straw-man", meta)


def ligo_budget(calibration: dict | None = None, m: float = 10.0, hbar: float = HBAR) -> NoiseBudget:
    """Advanced LIGO preset: straw-man shapes with calibrated amplitudes.

    The quantum model is left unset; the sweep supplies the detuned cavity.
    """
    cal = dict(LIGO_CALIBRATION if calibration is None else calibration)
    b = straw_man_budget(m, hbar=hbar)
    b = b.scaled({k: v for k, v in cal.items() if k in ("seismic", "suspension_thermal", "internal_thermal")})
    return replace(b, quantum=None, name="advanced-ligo", metadata=dict(b.metadata, calibration=cal))


def characteristic_frequency(power_w: float, arm_length_m: float, mirror_mass_kg: float,
                             wavelength_m: float) -> float:
    """``iota_c = 8 I_c omega_0 / (m L c)`` in rad^3/s^3."""
    w0 = TWO_PI * SPEED_OF_LIGHT / wavelength_m
    return 8 * power_w * w0 / (mirror_mass_kg * arm_length_m * SPEED_OF_LIGHT)


def ligo_cavity_model(lam: float, eps: float, zeta: float = 0.7 * math.pi, interferometer: dict | None = None,
                      hbar: float = HBAR) -> CavityModel:
    """Single detuned cavity equivalent to the differential mode.

    The effective detuning ``lam`` and bandwidth ``eps`` (rad/s) become
    ``Delta`` and ``gamma``; the measurement frequency follows from the
    characteristic frequency as ``Omega_q_cav^2 = kappa iota_c / eps`` with
    ``kappa = interferometer["mapping_constant"]``.
    """
    ifo = dict(LIGO_INTERFEROMETER if interferometer is None else interferometer)
    if eps <= 0:
        raise DomainError("effective bandwidth must be positive")
    iota = characteristic_frequency(ifo["power_w"], ifo["arm_length_m"], ifo["mirror_mass_kg"], ifo["wavelength_m"])
    Oq = math.sqrt(ifo["mapping_constant"] * iota / eps)
    return CavityModel(gamma=eps, Omega_q_cav=Oq, Delta=lam, zeta=zeta, m=ifo["mirror_mass_kg"] / 4, hbar=hbar)


def improved_ligo_budget(calibration: dict | None = None, m: float = 10.0, hbar: float = HBAR) -> NoiseBudget:
    """Advanced LIGO preset with ASD multipliers 0.1 (seismic, suspension thermal) and 1/3 (internal thermal)."""
    b = ligo_budget(calibration, m, hbar)
    b = b.scaled({"seismic": 0.1, "suspension_thermal": 0.1, "internal_thermal": 1 / 3})
    return replace(b, name="improved-ligo")


# ---------------------------------------------------------------------------
# conditional state under a budget


@dataclass(frozen=True)
class BudgetResult:
    state: SingleModeState
    N_eff: float
    diagnostics: dict


def _markov_budget_spectra(model: MarkovModel, comps: Sequence[NoiseComponent],
                           regularization: float = REGULARIZATION):
    xu, pu, Om = markov_units(model)
    Fu = pu * Om
    eps = regularization
    g = max(model.gamma_m / Om, eps)
    R = mechanical_response(model.omega_m / Om, g, eps)
    Rp = R * RationalFunction.omega().scale_value(-1j)
    zero = RationalFunction(0.0)
    one = RationalFunction.constant(1.0)
    ax, ap, ay = [zero, R], [zero, Rp], [one, R]
    sigma = [[model.S_ZZ * Om / xu**2, model.S_ZF * Om / (xu * Fu)],
             [model.S_ZF * Om / (xu * Fu), model.S_FF * Om / Fu**2]]
    for c in comps:
        h = c.shape.factor().rescale(Om)
        if c.kind == "force":
            h = h.scale_value(math.sqrt(Om) / Fu)
            ax.append(R * h)
            ap.append(Rp * h)
            ay.append(R * h)
        else:
            h = h.scale_value(math.sqrt(Om) / xu)
            ax.append(zero)
            ap.append(zero)
            ay.append(h)
    n = len(ay)
    S = np.zeros((n, n))
    S[:2, :2] = sigma
    S[2:, 2:] = np.eye(n - 2)
    return spectra_from_channels([ax, ap], ay, S, names=("x", "p"), units=(xu, pu), y_unit=xu,
                                 freq_scale=Om, hbar=model.hbar)


def _markov_budget_statespace(model: MarkovModel, comps: Sequence[NoiseComponent]):
    """Dimensionless ``(A, B, C, D, W)`` with states ``(x, p, shaping states...)``."""
    xu, pu, Om = markov_units(model)
    Fu = pu * Om
    blocks = []
    for c in comps:
        u = math.sqrt(Om) / (Fu if c.kind == "force" else xu)
        blocks.append(realize_factor(c.shape.factor().rescale(Om).scale_value(u), allow_marginal=True))
    n = 2 + sum(b[0].shape[0] for b in blocks)
    q = 2 + len(comps)
    A = np.zeros((n, n))
    B = np.zeros((n, q))
    C = np.zeros((1, n))
    D = np.zeros((1, q))
    A[0, 1] = 1.0
    A[1, :2] = [-((model.omega_m / Om) ** 2), -model.gamma_m / Om]
    B[1, 1] = 1.0
    C[0, 0] = 1.0
    D[0, 0] = 1.0
    i0 = 2
    for j, (c, (Af, Bf, Cf, Df)) in enumerate(zip(comps, blocks)):
        sl = slice(i0, i0 + Af.shape[0])
        A[sl, sl] = Af
        B[sl, 2 + j] = Bf[:, 0]
        if c.kind == "force":
            A[1, sl] += Cf[0]
            B[1, 2 + j] += Df[0, 0]
        else:
            C[0, sl] += Cf[0]
            D[0, 2 + j] += Df[0, 0]
        i0 = sl.stop
    W = np.eye(q)
    W[:2, :2] = [[model.S_ZZ * Om / xu**2, model.S_ZF * Om / (xu * Fu)],
                 [model.S_ZF * Om / (xu * Fu), model.S_FF * Om / Fu**2]]
    return A, B, C, D, 0.5 * W


def _state(quantum, comps, method="auto") -> SingleModeState:
    """Conditional test-mass state; ``"auto"`` solves the filter Riccati equation.

    Colored budgets span many decades in level and frequency, where the
    polynomial root finding behind the Wiener route loses accuracy, so the
    Kalman route is the default.
    """
    if method == "auto":
        method = "kalman"
    if method not in ("kalman", "wiener"):
        raise DomainError(f"unknown method {method!r}")
    if isinstance(quantum, CavityModel):
        cm = "kalman" if method == "kalman" else "wiener"
        cov = conditional_cavity_state(quantum, [c.colored_noise() for c in comps], method=cm,
                                       observables=("x", "p"))
        return testmass_state(cov, quantum.m)
    if not isinstance(quantum, MarkovModel):
        raise DomainError("quantum model must be a MarkovModel or a CavityModel")
    if method == "kalman":
        xu, pu, _ = markov_units(quantum)
        try:
            P = kalman_covariance(*_markov_budget_statespace(quantum, comps))
        except NoSteadyState as e:
            raise DivergentMoments(f"conditional moments diverge: {e}") from e
        V = P[:2, :2] * np.outer([xu, pu], [xu, pu])
    else:
        # the regularized free mass is biased at first order in the floor
        a = conditional_covariance(_markov_budget_spectra(quantum, comps, REGULARIZATION)).values
        b = conditional_covariance(_markov_budget_spectra(quantum, comps, REGULARIZATION / 2)).values
        V = 2 * b - a
    return SingleModeState(V[0, 0], V[1, 1], 0.5 * (V[0, 1] + V[1, 0]), quantum.m, quantum.hbar)


def _culprit(comps, err: DivergentMoments) -> str | None:
    for c in comps:
        if c.low_cutoff == 0 and c.kind == "sensing" and min(c.shape.poles, default=1.0) == 0:
            return c.name
    for c in comps:
        if min(c.shape.poles, default=1.0) == 0:
            return c.name
    return None


def conditional_state_with_budget(budget: NoiseBudget, model=None, contributions: bool = True,
                                  cutoff_check: bool = True, method: str = "auto") -> BudgetResult:
    """Conditional test-mass state with all budget components added to the quantum noise.

    Parameters
    ----------
    budget : NoiseBudget
    model : MarkovModel or CavityModel, optional
        Quantum measurement model; defaults to ``budget.quantum``.
    contributions : bool
        Report, per component, the change of ``V_xx``, ``V_pp`` and ``U``
        when that component alone is added to the quantum noise.
    cutoff_check : bool
        Recompute with every sensing cutoff halved and report the relative
        change of ``U``; the flag is raised above 1 %.

    Raises
    ------
    DivergentMoments
        With ``component`` set to the offending noise source when known.
    """
    quantum = budget.quantum if model is None else model
    if quantum is None:
        raise DomainError("no quantum model given")
    comps = budget.components
    try:
        state = _state(quantum, comps, method)
    except DivergentMoments as e:
        name = _culprit(comps, e)
        msg = f"{e} (component {name!r})" if name else str(e)
        raise DivergentMoments(msg, entry=e.entry, pole=e.pole, component=name) from e
    U = uncertainty_product(state)
    diag: dict = {"U": U, "components": [c.name for c in comps]}
    if contributions and comps:
        base = _state(quantum, (), method)
        Ub = uncertainty_product(base)
        diag["quantum_only"] = {"V_xx": base.V_xx, "V_pp": base.V_pp, "V_xp": base.V_xp, "U": Ub}
        contrib = {}
        for c in comps:
            try:
                s = _state(quantum, (c,), method)
            except DivergentMoments:
                contrib[c.name] = None
                continue
            contrib[c.name] = {"V_xx": s.V_xx - base.V_xx, "V_pp": s.V_pp - base.V_pp,
                               "U": uncertainty_product(s) - Ub}
        diag["contributions"] = contrib
    if cutoff_check:
        sens = [c for c in comps if c.kind == "sensing" and c.low_cutoff > 0]
        if sens and all(c.fit_metadata.get("model") == "powerlaw" for c in sens):
            halved = tuple(c.with_cutoff(c.low_cutoff / 2) if c in sens else c for c in comps)
            try:
                U2 = uncertainty_product(_state(quantum, halved, method))
                change = abs(U2 - U) / U
            except DivergentMoments:
                change = math.inf
            diag["cutoff_sensitivity"] = change
            diag["cutoff_sensitive"] = bool(change > 0.01)
    return BudgetResult(state, effective_occupation(state).N_eff, diag)

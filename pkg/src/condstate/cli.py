"""Command-line driver: single evaluations, grid sweeps and table output.

Every physical quantity in a config file carries its unit in the key name
(``omega_q_hz``, ``mass_kg``, ...).  Results go to ``<out>/<command>.json``
and, for tables, ``<out>/<command>.csv``.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import functools
import itertools
import json
import math
import os
import sys
from dataclasses import dataclass, replace
from typing import Any, Callable

import numpy as np

from . import __version__
from .budget import (
    LIGO_CALIBRATION,
    LIGO_INTERFEROMETER,
    conditional_state_with_budget,
    improved_ligo_budget,
    _read_table,
    ingest_noise_table,
    ligo_budget,
    ligo_cavity_model,
)
from .cavity import CavityModel, composite_state, conditional_cavity_state, testmass_state
from .entangle import EntanglementSetup, maximize_entanglement
from .errors import CondStateError, DomainError, FormatError
from .factorize import spectral_factorize
from .gstate import effective_occupation, uncertainty_product
from .markov import HomodyneConfig, freemass_homodyne_cov, optimal_measurement_frequency, squeezed_input_cov
from .ratfun import RationalFunction

__all__ = ["SweepSpec", "GridAxis", "parse_grid", "run_command", "run_ligo_sweep", "main"]

TWO_PI = 2 * math.pi
DIGITS = 12


class UsageError(CondStateError):
    code = "usage"


# ---------------------------------------------------------------------------
# config schemas: key -> default; None marks a required or optional entry

_CAVITY = {
    "mass_kg": 1.0,
    "gamma_hz": 100.0,
    "omega_q_cav_hz": 100.0,
    "delta_hz": 0.0,
    "zeta_rad": 0.0,
    "omega_m_hz": 0.0,
    "gamma_m_hz": 0.0,
    "omega_F_hz": 0.0,
    "omega_x_hz": 0.0,
    "method": "auto",
}

SCHEMAS: dict[str, dict[str, Any]] = {
    "markov": {
        "mass_kg": 1.0,
        "omega_q_hz": 100.0,
        "omega_F_hz": 0.0,
        "omega_x_hz": 0.0,
        "zeta_rad": 0.0,
        "optimize_omega_q": False,
    },
    "squeeze": {
        "mass_kg": 1.0,
        "omega_q_hz": 100.0,
        "omega_F_hz": 0.0,
        "omega_x_hz": 0.0,
        "squeeze_r": 0.0,
        "squeeze_phi_rad": 0.0,
    },
    "entangle": {
        "mass_kg": 1.0,
        "omega_F_hz": 1.0,
        "omega_x_hz": 5.0,
        "laser_S_a1a1": 1.0,
        "laser_S_a2a2": 1.0,
        "alpha_ratio": 1.0,
        "fix_zeta": False,
    },
    "cavity": dict(_CAVITY),
    "detuned": dict(_CAVITY, delta_lo_hz=-500.0, delta_hi_hz=300.0, delta_count=17, omega_q_cav_hz=30.0),
    "budget-fit": {
        "table_path": None,
        "kind": "sensing",
        "order": None,
        "name": "table",
        "tol_db": 0.1,
    },
    "ligo-sweep": {
        "preset": "advanced-ligo",
        "zeta_rad": 0.7 * math.pi,
        "lambda_lo_hz": 0.0,
        "lambda_hi_hz": 1000.0,
        "lambda_count": 11,
        "epsilon_lo_hz": 25.0,
        "epsilon_hi_hz": 1600.0,
        "epsilon_count": 7,
        "broadband_lambda_hz": 290.0,
        "broadband_epsilon_hz": 120.0,
        "power_w": LIGO_INTERFEROMETER["power_w"],
        "arm_length_m": LIGO_INTERFEROMETER["arm_length_m"],
        "mirror_mass_kg": LIGO_INTERFEROMETER["mirror_mass_kg"],
        "wavelength_m": LIGO_INTERFEROMETER["wavelength_m"],
        "mapping_constant": LIGO_INTERFEROMETER["mapping_constant"],
        "calibration": None,
    },
    "factorize": {
        "numerator": [1.0, 0.0, 1.0],
        "denominator": [1.0],
    },
}

OBJECTIVES = {"markov": "U", "squeeze": "U", "entangle": "E_N_max", "cavity": "U", "detuned": "U",
              "ligo-sweep": "N_eff"}
MAXIMIZE = {"E_N_max"}


def load_config(command: str, path: str | None) -> dict:
    """Defaults of ``command`` overridden by the JSON object in ``path``."""
    cfg = dict(SCHEMAS[command])
    if path is None:
        return cfg
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as e:
        raise FormatError(f"cannot read config {path!r}: {e.strerror}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"config {path!r} is not valid JSON: {e.msg} at line {e.lineno}") from e
    if not isinstance(user, dict):
        raise FormatError("config must be a JSON object")
    unknown = sorted(set(user) - set(cfg))
    if unknown:
        raise FormatError(f"unknown config keys for {command}: {', '.join(unknown)}")
    cfg.update(user)
    return cfg


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridAxis:
    key: str
    lo: float
    hi: float
    count: int
    log: bool = False

    def __post_init__(self):
        if self.count < 2:
            raise UsageError(f"grid axis {self.key!r} needs at least 2 points")
        if self.log and not (self.lo > 0 and self.hi > 0):
            raise UsageError(f"log grid axis {self.key!r} needs a positive range")

    def values(self) -> np.ndarray:
        if self.log:
            return np.geomspace(self.lo, self.hi, self.count)
        return np.linspace(self.lo, self.hi, self.count)


@dataclass(frozen=True)
class SweepSpec:
    """Cartesian grid over config keys and the objective to optimize."""

    axes: tuple
    objective: str
    config: dict

    def points(self):
        keys = [a.key for a in self.axes]
        for combo in itertools.product(*(a.values() for a in self.axes)):
            yield dict(zip(keys, (float(v) for v in combo)))


def parse_grid(spec: str) -> GridAxis:
    """Parse ``axis=lo:hi:n[:log]``."""
    try:
        key, rng = spec.split("=", 1)
        parts = rng.split(":")
        if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] not in ("log", "lin")):
            raise ValueError
        return GridAxis(key.strip(), float(parts[0]), float(parts[1]), int(parts[2]), len(parts) == 4 and parts[3] == "log")
    except ValueError:
        raise UsageError(f"malformed grid {spec!r}; expected axis=lo:hi:n[:log]") from None


# ---------------------------------------------------------------------------
# evaluators: config -> flat dict of scalars


def _hz(cfg, key):
    return TWO_PI * float(cfg[key])


def _state_fields(s, prefix=""):
    occ = effective_occupation(s)
    return {f"{prefix}U": uncertainty_product(s), f"{prefix}N_eff": occ.N_eff,
            f"{prefix}omega_eff_hz": occ.omega_eff / TWO_PI, f"{prefix}V_xx_m2": s.V_xx,
            f"{prefix}V_pp_kg2m2_s2": s.V_pp, f"{prefix}V_xp_J_s": s.V_xp}


def _eval_markov(cfg):
    hc = HomodyneConfig(zeta=float(cfg["zeta_rad"]), Omega_q=_hz(cfg, "omega_q_hz"), Omega_F=_hz(cfg, "omega_F_hz"),
                        Omega_x=_hz(cfg, "omega_x_hz"), m=float(cfg["mass_kg"]))
    out = {}
    if cfg["optimize_omega_q"]:
        Oq, _ = optimal_measurement_frequency(hc)
        hc = replace(hc, Omega_q=Oq)
        out["omega_q_opt_hz"] = Oq / TWO_PI
    out.update(_state_fields(freemass_homodyne_cov(hc)))
    return out


def _eval_squeeze(cfg):
    hc = HomodyneConfig(Omega_q=_hz(cfg, "omega_q_hz"), Omega_F=_hz(cfg, "omega_F_hz"), Omega_x=_hz(cfg, "omega_x_hz"),
                        r_op=float(cfg["squeeze_r"]), phi_op=float(cfg["squeeze_phi_rad"]), m=float(cfg["mass_kg"]))
    return _state_fields(squeezed_input_cov(hc))


def _eval_entangle(cfg):
    setup = EntanglementSetup.from_noise(_hz(cfg, "omega_F_hz"), _hz(cfg, "omega_x_hz"), float(cfg["mass_kg"]),
                                         float(cfg["laser_S_a1a1"]), float(cfg["laser_S_a2a2"]),
                                         float(cfg["alpha_ratio"]))
    r = maximize_entanglement(setup, fix_zeta=bool(cfg["fix_zeta"]))
    return {"E_N_max": r.E_N_max, "omega_q_common_hz": r.Omega_q_c / TWO_PI,
            "omega_q_differential_hz": r.Omega_q_d / TWO_PI, "zeta_common_rad": r.zeta_c,
            "zeta_differential_rad": r.zeta_d}


def _cavity_model(cfg):
    return CavityModel(gamma=_hz(cfg, "gamma_hz"), Omega_q_cav=_hz(cfg, "omega_q_cav_hz"), Delta=_hz(cfg, "delta_hz"),
                       zeta=float(cfg["zeta_rad"]), m=float(cfg["mass_kg"]), omega_m=_hz(cfg, "omega_m_hz"),
                       gamma_m=_hz(cfg, "gamma_m_hz"), Omega_F=_hz(cfg, "omega_F_hz"),
                       Omega_x=_hz(cfg, "omega_x_hz"))


def _eval_cavity(cfg):
    model = _cavity_model(cfg)
    cs = composite_state(model, method=cfg["method"])
    out = _state_fields(testmass_state(cs.cov, model.m))
    out["E_N_mirror_cavity"] = cs.E_N
    nu = np.sort(cs.symplectic) / model.hbar
    out["symplectic_1_hbar"], out["symplectic_2_hbar"] = float(nu[0]), float(nu[1])
    return out


def _eval_detuned(cfg):
    model = _cavity_model(cfg)
    cov = conditional_cavity_state(model, method="kalman", observables=("x", "p"))
    return _state_fields(testmass_state(cov, model.m))


def _ligo_inputs(cfg):
    ifo = {k: float(cfg[k]) for k in LIGO_INTERFEROMETER}
    cal = cfg["calibration"] if cfg["calibration"] is not None else LIGO_CALIBRATION
    if cfg["preset"] == "advanced-ligo":
        budget = ligo_budget(cal)
    elif cfg["preset"] == "improved-ligo":
        budget = improved_ligo_budget(cal)
    else:
        raise DomainError(f"unknown preset {cfg['preset']!r}")
    return ifo, budget


def _eval_ligo(cfg):
    ifo, budget = _ligo_inputs(cfg)
    model = ligo_cavity_model(_hz(cfg, "lambda_hz"), _hz(cfg, "epsilon_hz"), float(cfg["zeta_rad"]), ifo)
    r = conditional_state_with_budget(budget, model, contributions=False, cutoff_check=False)
    return {"N_eff": r.N_eff, "U": r.diagnostics["U"]}


EVALUATORS: dict[str, Callable[[dict], dict]] = {
    "markov": _eval_markov,
    "squeeze": _eval_squeeze,
    "entangle": _eval_entangle,
    "cavity": _eval_cavity,
    "detuned": _eval_detuned,
    "ligo-sweep": _eval_ligo,
}


def _evaluate(command: str, cfg: dict, point: dict) -> dict:
    """One grid point; divergent or invalid points are recorded, not raised."""
    try:
        return dict(EVALUATORS[command](dict(cfg, **point)), status="ok")
    except CondStateError as e:
        return {"status": e.code}


def _run_grid(command: str, spec: SweepSpec, threads: int) -> list[dict]:
    points = list(spec.points())
    fn = functools.partial(_evaluate, command, spec.config)
    if threads > 1 and len(points) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(fn, points, chunksize=max(1, len(points) // (4 * threads))))
    else:
        results = [fn(p) for p in points]
    return [dict(p, **r) for p, r in zip(points, results)]


def _optimum(rows: list[dict], objective: str):
    ok = [r for r in rows if r.get("status") == "ok" and np.isfinite(r.get(objective, np.nan))]
    if not ok:
        return None
    key = (lambda r: -r[objective]) if objective in MAXIMIZE else (lambda r: r[objective])
    return min(ok, key=key)  # first optimum in grid order


def run_ligo_sweep(config: dict, grid: list[GridAxis] | None = None, threads: int = 1):
    """N_eff over an (effective detuning, effective bandwidth) grid.

    Returns ``(rows, summary)``; the summary holds the optimum and the
    broadband configuration, evaluated separately and tagged.
    """
    cfg = dict(SCHEMAS["ligo-sweep"], **config)
    axes = grid or [
        GridAxis("lambda_hz", float(cfg["lambda_lo_hz"]), float(cfg["lambda_hi_hz"]), int(cfg["lambda_count"])),
        GridAxis("epsilon_hz", float(cfg["epsilon_lo_hz"]), float(cfg["epsilon_hi_hz"]), int(cfg["epsilon_count"]),
                 log=True),
    ]
    _ligo_inputs(cfg)  # validate the preset before fanning out
    rows = _run_grid("ligo-sweep", SweepSpec(tuple(axes), "N_eff", cfg), threads)
    bb = {"lambda_hz": float(cfg["broadband_lambda_hz"]), "epsilon_hz": float(cfg["broadband_epsilon_hz"])}
    summary = {"optimum": _optimum(rows, "N_eff"), "broadband": dict(bb, **_evaluate("ligo-sweep", cfg, bb))}
    return rows, summary


# ---------------------------------------------------------------------------
# commands with their own output shape


def _cmd_budget_fit(cfg):
    if not cfg["table_path"]:
        raise FormatError("budget-fit needs table_path in the config")
    comp = ingest_noise_table(cfg["table_path"], cfg["kind"], order=cfg["order"], name=cfg["name"],
                              tol_db=float(cfg["tol_db"]))
    sh = comp.shape
    f0, f1 = comp.fit_metadata["span_hz"]
    f, P = _read_table(cfg["table_path"])
    fit = comp.psd(f)
    rows = [{"freq_hz": a, "psd": b, "fit_psd": c, "deviation_db": 10 * math.log10(c / b)} for a, b, c in zip(f, P, fit)]
    summary = {"order": comp.fit_metadata["order"], "max_deviation_db": comp.fit_metadata["max_deviation_db"],
               "amplitude": sh.amplitude, "zeros_hz": [z / TWO_PI for z in sh.zeros],
               "poles_hz": [p / TWO_PI for p in sh.poles], "span_hz": [f0, f1], "kind": comp.kind}
    return rows, summary


def _format_poly(coef) -> str:
    terms = []
    for k, c in enumerate(coef):
        if c == 0:
            continue
        c = complex(c)
        if c.imag == 0:
            cs = f"{c.real:.{DIGITS}g}"
        elif c.real == 0:
            cs = f"{c.imag:.{DIGITS}g}i"
        else:
            cs = f"({c.real:.{DIGITS}g}{c.imag:+.{DIGITS}g}i)"
        if k == 0:
            terms.append(cs)
        else:
            mon = "Omega" if k == 1 else f"Omega^{k}"
            terms.append(mon if cs == "1" else f"{cs}*{mon}")
    return " + ".join(reversed(terms)).replace("+ -", "- ") or "0"


def _cmd_factorize(cfg):
    try:
        num = np.asarray(cfg["numerator"], dtype=float)
        den = np.asarray(cfg["denominator"], dtype=float)
    except (TypeError, ValueError) as e:
        raise FormatError("numerator and denominator must be lists of numbers (ascending powers of Omega)") from e
    S = RationalFunction.from_coeffs(num, den)
    pair = spectral_factorize(S)
    sp = pair.s_plus

    def clean(c):
        c = complex(c)
        return complex(round(c.real, DIGITS) + 0.0, round(c.imag, DIGITS) + 0.0)

    num_c = [clean(c) for c in sp.numerator.coef]
    summary = {
        "s_plus": f"({_format_poly(num_c)}) / ({_format_poly([clean(c) for c in sp.denominator.coef])})"
        if sp.poles.size else _format_poly(num_c),
        "s_plus_numerator": [[c.real, c.imag] for c in num_c],
        "s_plus_zeros": [[clean(z).real, clean(z).imag] for z in np.sort_complex(sp.zeros)],
        "s_plus_poles": [[clean(p).real, clean(p).imag] for p in np.sort_complex(sp.poles)],
    }
    return None, summary


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.{DIGITS}g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return float(f"{v:.{DIGITS}g}") if math.isfinite(v) else None
    return v


def write_csv(path: str, rows: list[dict]) -> None:
    cols: list[str] = []
    for r in rows:
        cols.extend(k for k in r if k not in cols)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) if c in r else "" for c in cols])


def write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


# ---------------------------------------------------------------------------
# entry points


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="condstate", description="Conditional quantum states of continuously measured test masses.")
    p.add_argument("--version", action="version", version=f"condstate {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "markov": "free mass under homodyne readout with white classical noise",
        "squeeze": "free mass with squeezed input light",
        "entangle": "maximal entanglement between two mirrors",
        "cavity": "finite-bandwidth cavity: mirror state and mirror-cavity entanglement",
        "detuned": "mirror purity versus cavity detuning",
        "budget-fit": "rational fit of a tabulated noise spectrum",
        "ligo-sweep": "occupation number over effective detuning and bandwidth",
        "factorize": "spectral factor of a rational spectrum",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", help="JSON file overriding the defaults")
        sp.add_argument("--out", default="out", help="output directory (default: ./out)")
        sp.add_argument("--threads", type=int, default=1, help="worker processes for grids")
        sp.add_argument("--grid", action="append", default=[], metavar="AXIS=LO:HI:N[:log]",
                        help="sweep a config key; repeat for a Cartesian grid")
    return p


def _execute(args) -> dict:
    command = args.command
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    cfg = load_config(command, args.config)
    grid = [parse_grid(g) for g in args.grid]
    sweepable = ("lambda_hz", "epsilon_hz") if command == "ligo-sweep" else cfg
    for ax in grid:
        if ax.key not in sweepable:
            raise UsageError(f"cannot sweep {ax.key!r} for {command}")
    rows = None
    if command == "ligo-sweep":
        rows, summary = run_ligo_sweep(cfg, grid or None, args.threads)
    elif command == "budget-fit":
        if grid:
            raise UsageError("budget-fit takes no grid")
        rows, summary = _cmd_budget_fit(cfg)
    elif command == "factorize":
        if grid:
            raise UsageError("factorize takes no grid")
        rows, summary = _cmd_factorize(cfg)
    else:
        if command == "detuned" and not grid:
            grid = [GridAxis("delta_hz", float(cfg["delta_lo_hz"]), float(cfg["delta_hi_hz"]), int(cfg["delta_count"]))]
        if grid:
            objective = OBJECTIVES[command]
            rows = _run_grid(command, SweepSpec(tuple(grid), objective, cfg), args.threads)
            summary = {"objective": objective, "optimum": _optimum(rows, objective), "points": len(rows)}
        else:
            summary = EVALUATORS[command](cfg)
    os.makedirs(args.out, exist_ok=True)
    result = {"command": command, "version": __version__, "config": cfg, "results": summary,
              "grid": [f"{a.key}={a.lo}:{a.hi}:{a.count}{':log' if a.log else ''}" for a in grid]}
    if rows is not None:
        write_csv(os.path.join(args.out, f"{command}.csv"), rows)
    write_json(os.path.join(args.out, f"{command}.json"), result)
    return result


def _error_line(code: str, message: str) -> str:
    return json.dumps({"error": code, "message": " ".join(str(message).split())})


def run_command(argv: list[str] | None = None) -> int:
    """Run the CLI; returns the exit status (0 on success)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _execute(args)
    except SystemExit as e:  # --help and --version
        return int(e.code or 0)
    except CondStateError as e:
        print(_error_line(e.code, e), file=sys.stderr)
        return 2 if isinstance(e, UsageError) else 1
    except OSError as e:
        print(_error_line("io", f"{e.strerror}: {e.filename}" if e.filename else e), file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))

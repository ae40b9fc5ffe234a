"""Command-line interface.

    thermalep <command> --config <path> [--out <dir>] [--override key=value ...]

Commands: spectrum, ep-find, evolve, ratio, ho. A config is a flat JSON
document; ``--recipe NAME`` loads one of the bundled figure recipes instead.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from . import __version__
from .dynamics import (
    InitialKind,
    classify_damping,
    initial_state,
    max_positive_scale,
    propagate,
    propagate_ode,
    ratio_R,
    smallest_liouvillian,
    steady_state,
    trace_distance,
)
from .errors import (
    DefectiveSpectrumError,
    IntegrationError,
    InvalidStateError,
    NotAnEPError,
    ParameterError,
    SubspaceError,
    ThermalEPError,
    UnsupportedCombinationError,
    WrongBuilderError,
)
from .ho import HOParams, ho_propagate, ho_propagate_rk4, ho_ratio
from .model import MachineParams, Regime, Statistics, build_liouvillian, derived_rates
from .observables import heat_currents, concurrence, heat_current
from .spectral import (
    EPKind,
    analytic_spectrum,
    ep_flags,
    ep_loci,
    find_eps,
    jordan_chain,
    match_spectra,
    sort_key_order,
)

COMMANDS = ("spectrum", "ep-find", "evolve", "ratio", "ho")
RECIPES = ("fig1b", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class ConfigError(ThermalEPError, ValueError):
    """Invalid run configuration."""


GValue = Union[float, str]  # a number, "g_bar" or "beta_zero"


@dataclass
class RunConfig:
    """Flat run configuration; every key has a documented default."""

    # machine
    epsilon: float = 1.0
    T1: float = 3.0
    T2: float = 0.7
    gamma1: float = 0.01
    gamma2: float = 0.01
    g: GValue = 0.005
    statistics: str = "bosonic"
    regime: str = "local"
    # spectrum
    dim: int = 16
    g_values: Optional[List[GValue]] = None
    # time grid (t_max null -> 20 / Gamma; t_min null -> 1e-2 / epsilon)
    t_spacing: str = "log"
    t_min: Optional[float] = None
    t_max: Optional[float] = None
    n_t: int = 400
    # dynamics
    initial_states: List[str] = field(default_factory=lambda: ["thermal_product"])
    ep_weights: List[List[float]] = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    ep_margin: float = 0.9
    method: str = "auto"
    oracle: bool = False
    # ratio
    comparator_g: GValue = 0.005
    # ep-find
    free_parameter: str = "g"
    bounds: Optional[List[float]] = None
    include_unreachable: bool = False
    loci_axes: List[str] = field(default_factory=list)
    loci_gamma: List[float] = field(default_factory=lambda: [1e-3, 0.1, 41])
    loci_epsilon: List[float] = field(default_factory=lambda: [0.5, 2.0, 31])
    loci_T_ratios: List[float] = field(default_factory=lambda: [1.5, 0.1])
    # oscillator
    ho_m: float = 1.0
    ho_k: float = 1.0
    ho_gamma_ep: float = 1.0
    ho_gammas: List[float] = field(default_factory=lambda: [0.5, 2.0])
    ho_f0: List[float] = field(default_factory=lambda: [0.3, 1.0])
    ho_convention: str = "appendix"
    # output
    precision: int = 12

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg = cls(**doc)
        cfg.check()
        return cfg

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def check(self):
        if self.statistics not in ("bosonic", "fermionic"):
            raise ConfigError("statistics must be 'bosonic' or 'fermionic'")
        if self.regime not in ("local", "global"):
            raise ConfigError("regime must be 'local' or 'global'")
        if self.dim not in (6, 8, 16):
            raise ConfigError("dim must be 6, 8 or 16")
        if self.t_spacing not in ("log", "linear"):
            raise ConfigError("t_spacing must be 'log' or 'linear'")
        if self.method not in ("auto", "spectral", "jordan", "ode", "expm"):
            raise ConfigError(f"unknown method {self.method!r}")
        if not isinstance(self.n_t, int) or self.n_t < 2:
            raise ConfigError("n_t must be an integer >= 2")
        for s in self.initial_states:
            try:
                InitialKind(s)
            except ValueError:
                raise ConfigError(f"unknown initial state {s!r}") from None
        for a in self.loci_axes:
            if a not in ("gamma", "epsilon"):
                raise ConfigError("loci_axes entries must be 'gamma' or 'epsilon'")
        if not isinstance(self.precision, int) or not 1 <= self.precision <= 17:
            raise ConfigError("precision must be an integer in [1, 17]")
        for g in [self.g, self.comparator_g] + list(self.g_values or []):
            if isinstance(g, str) and g not in ("g_bar", "beta_zero"):
                raise ConfigError(f"g must be a number, 'g_bar' or 'beta_zero', got {g!r}")

    # -- parameter resolution ------------------------------------------------
    def base_params(self, g: float = 0.0) -> MachineParams:
        return MachineParams(
            epsilon=float(self.epsilon),
            T1=float(self.T1),
            T2=float(self.T2),
            gamma1=float(self.gamma1),
            gamma2=float(self.gamma2),
            g=float(g),
            statistics=Statistics(self.statistics),
            regime=Regime(self.regime),
        )

    def resolve_g(self, g: GValue) -> float:
        if not isinstance(g, str):
            return float(g)
        base = self.base_params()
        if g == "g_bar":
            return derived_rates(base).g_bar
        reps = [r for r in find_eps(base.replace(g=max(base.g, 1e-9)), "g") if r.kind is EPKind.BETA_ZERO]
        if not reps:
            raise ConfigError("no beta = 0 exceptional point in the default g range")
        return float(reps[0].value)

    def params(self, g: Optional[GValue] = None) -> MachineParams:
        return self.base_params(self.resolve_g(self.g if g is None else g))

    def time_grid(self, params: MachineParams) -> np.ndarray:
        G = derived_rates(params).Gamma
        t_max = 20 / G if self.t_max is None else float(self.t_max)
        if self.t_spacing == "log":
            t_min = 1e-2 / params.epsilon if self.t_min is None else float(self.t_min)
            if not 0 < t_min < t_max:
                raise ConfigError("log grid needs 0 < t_min < t_max")
            return np.logspace(np.log10(t_min), np.log10(t_max), self.n_t)
        t_min = 0.0 if self.t_min is None else float(self.t_min)
        if not 0 <= t_min < t_max:
            raise ConfigError("linear grid needs 0 <= t_min < t_max")
        return np.linspace(t_min, t_max, self.n_t)


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------
def fmt(x, precision: int = 12) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if v == 0:
            return "0"
        return format(v, f".{precision}g")
    return str(x)


def csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]], precision: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v, precision) for v in row])
    return buf.getvalue()


def _jsonable(obj, precision):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v, precision) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v, precision) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(format(v, f".{precision}g")) if np.isfinite(v) else None
    if isinstance(obj, complex):
        return [_jsonable(obj.real, precision), _jsonable(obj.imag, precision)]
    return obj


def json_text(doc, precision: int) -> str:
    return json.dumps(_jsonable(doc, precision), indent=2, sort_keys=True) + "\n"


def write_outputs(out_dir: str, files: Dict[str, str]) -> None:
    """Write every file atomically (temp file then rename); nothing is written on earlier failure."""
    os.makedirs(out_dir, exist_ok=True)
    for name in sorted(files):
        fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(files[name])
            os.replace(tmp, os.path.join(out_dir, name))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


# ---------------------------------------------------------------------------
# commands; each returns {filename: text}
# ---------------------------------------------------------------------------
def _kind_label(params: MachineParams, dim: int) -> str:
    if params.regime is Regime.GLOBAL:
        return "global"
    return "full" if dim == 16 else "reduced"


def cmd_spectrum(cfg: RunConfig) -> Dict[str, str]:
    cases = cfg.g_values if cfg.g_values else [cfg.g]
    rows, summary = [], {"cases": []}
    for case, gv in enumerate(cases):
        p = cfg.params(gv)
        dim = 16 if p.regime is Regime.GLOBAL else cfg.dim
        L = build_liouvillian(p, dim)
        an = analytic_spectrum(p, dim)
        num = np.linalg.eigvals(L.matrix)
        an = an[sort_key_order(an)]
        mismatch, perm = match_spectra(an, num)
        num = num[perm]
        kind = _kind_label(p, dim)
        for source, vals in (("analytic", an), ("numeric", num)):
            for i, lam in enumerate(vals):
                rows.append([case, p.g, i + 1, lam.real, lam.imag, source, kind])
        info = {"case": case, "g": p.g, "dim": dim, "kind": kind, "max_mismatch": mismatch, "ep_flags": ep_flags(p)}
        if p.regime is Regime.LOCAL:
            r = derived_rates(p)
            info.update(Gamma=r.Gamma, DeltaGamma=r.DeltaGamma, eta=complex(r.eta), g_bar=r.g_bar)
            if p.g > 0:
                info["damping"] = classify_damping(p).value
        warn = p.validity_warning
        if warn:
            info["validity_warning"] = warn
        summary["cases"].append(info)
    header = ["case", "g", "index", "re", "im", "source", "kind"]
    return {
        "spectrum.csv": csv_text(header, rows, cfg.precision),
        "spectrum.json": json_text(summary, cfg.precision),
    }


def cmd_ep_find(cfg: RunConfig) -> Dict[str, str]:
    p = cfg.params()
    bounds = tuple(cfg.bounds) if cfg.bounds else None
    reports = find_eps(p, cfg.free_parameter, bounds, include_unreachable=cfg.include_unreachable)
    rows = []
    for rep in reports:
        z = rep.merged_eigenvalues[0] if rep.merged_eigenvalues else complex("nan")
        rows.append([
            rep.kind.value, rep.order, rep.free_parameter,
            "" if rep.value is None else rep.value,
            z.real, z.imag,
            rep.diagnostics.get("min_eigenvector_distance", ""),
            rep.diagnostics.get("condition_number", ""),
            rep.reachable,
        ])
    header = ["kind", "order", "free_parameter", "value", "merged_re", "merged_im",
              "min_eigenvector_distance", "condition_number", "reachable"]
    files = {"eps.csv": csv_text(header, rows, cfg.precision)}
    summary: Dict[str, Any] = {"n_eps": len(reports), "kinds": [r.kind.value for r in reports]}
    if cfg.loci_axes:
        lrows = []
        summary["loci"] = {}
        for axis in cfg.loci_axes:
            lo, hi, n = (cfg.loci_gamma if axis == "gamma" else cfg.loci_epsilon)
            values = np.logspace(np.log10(lo), np.log10(hi), int(n)) if axis == "gamma" else np.linspace(lo, hi, int(n))
            base = p.replace(T1=cfg.loci_T_ratios[0] * p.epsilon, T2=cfg.loci_T_ratios[1] * p.epsilon)
            loci = ep_loci(base, axis, values, T_ratios=tuple(cfg.loci_T_ratios))
            for x, gval, kind in loci:
                lrows.append([axis, x, gval, kind.value])
            summary["loci"][axis] = loci_summary(loci)
        files["loci.csv"] = csv_text(["axis", "free1", "free2_g", "kind"], lrows, cfg.precision)
    files["ep_find.json"] = json_text(summary, cfg.precision)
    return files


def loci_summary(loci) -> Dict[str, Any]:
    """Counts per kind and whether the eta = 0 and beta = 0 curves cross."""
    eta = {x: g for x, g, k in loci if k is EPKind.ETA_ZERO}
    beta = {x: g for x, g, k in loci if k is EPKind.BETA_ZERO}
    common = sorted(set(eta) & set(beta))
    gaps = [beta[x] - eta[x] for x in common]
    signs = {int(np.sign(d)) for d in gaps}
    return {
        "n_eta_zero": len(eta),
        "n_beta_zero": len(beta),
        "min_abs_gap": min((abs(d) for d in gaps), default=None),
        "intersect": bool(0 in signs or len(signs) > 1),
    }


def _initial_states(cfg: RunConfig, params: MachineParams):
    """(label, rho0) pairs; ep_subspace expands into one state per ep_weights entry."""
    out = []
    for kind in cfg.initial_states:
        if kind == InitialKind.EP_SUBSPACE.value:
            r = derived_rates(params)
            jd = jordan_chain(params.replace(g=r.g_bar))
            for w in cfg.ep_weights:
                L = jd.liouvillian
                d = w[0] * L.unvec(jd.rho_p) + w[1] * L.unvec(jd.rho_pp)
                s = max_positive_scale(jd.steady_state, (d + d.conj().T) / 2)
                weights = (cfg.ep_margin * s * w[0], cfg.ep_margin * s * w[1])
                label = f"ep_subspace[{fmt(float(w[0]))};{fmt(float(w[1]))}]"
                out.append((label, initial_state(kind, params, weights, jordan=jd)))
        else:
            out.append((kind, initial_state(kind, params)))
    return out


def cmd_evolve(cfg: RunConfig) -> Dict[str, str]:
    cases = cfg.g_values if cfg.g_values else [cfg.g]
    rows, summary = [], {"runs": []}
    for gv in cases:
        p = cfg.params(gv)
        t = cfg.time_grid(p)
        rss = steady_state(p)
        j_ss = [heat_current(rss, p, 0), heat_current(rss, p, 1)]
        for label, rho0 in _initial_states(cfg, p):
            traj = propagate(p, rho0, t, method=cfg.method)
            s = traj.states
            J1, J2 = heat_currents(s, p, 0), heat_currents(s, p, 1)
            C = [concurrence(r) for r in s]
            T = traj.distances_to(rss)
            regime = classify_damping(p).value if (p.g > 0 and p.regime is Regime.LOCAL) else "none"
            for k in range(len(t)):
                rows.append([
                    label, p.g, regime, t[k],
                    s[k, 0, 0].real, s[k, 1, 1].real, s[k, 2, 2].real, s[k, 3, 3].real,
                    s[k, 1, 2].real, s[k, 1, 2].imag, T[k], J1[k], J2[k], C[k], traj.provenance.value,
                ])
            info = {
                "state": label, "g": p.g, "regime": regime, "provenance": traj.provenance.value,
                "J1_ss": j_ss[0], "J2_ss": j_ss[1], "C_ss": concurrence(rss),
            }
            if cfg.oracle:
                L = smallest_liouvillian(p, rho0) if p.regime is Regime.LOCAL else build_liouvillian(p, 16)
                ode = propagate_ode(L, rho0, t, params=p)
                info["oracle_max_trace_distance"] = max(trace_distance(a, b) for a, b in zip(s, ode.states))
            summary["runs"].append(info)
    header = ["state", "g", "regime", "t", "p11", "p10", "p01", "p00", "re_rho23", "im_rho23",
              "trace_distance", "J1", "J2", "C", "provenance"]
    return {"evolve.csv": csv_text(header, rows, cfg.precision), "evolve.json": json_text(summary, cfg.precision)}


def cmd_ratio(cfg: RunConfig) -> Dict[str, str]:
    p_non = cfg.params(cfg.comparator_g)
    p_ep = cfg.params("g_bar")
    t = cfg.time_grid(p_non)
    rows, summary = [], {"g_ep": p_ep.g, "g_comparator": p_non.g, "states": []}
    for label, rho0 in _initial_states(cfg, p_ep):
        R = ratio_R(p_ep, p_non, rho0, t)
        for tk, v in zip(R.times, R.values):
            rows.append([label, tk, v])
        summary["states"].append({
            "state": label,
            "crossing_time": R.crossing_time(),
            "t_max": float(R.times[-1]),
            "R_t_max": float(R.values[-1]),
            "c6": abs(R.c6),
            "no_crossing_guarantee": not R.crossing_guaranteed,
            "truncated": R.truncated,
        })
    return {"ratio.csv": csv_text(["state", "t", "R"], rows, cfg.precision), "ratio.json": json_text(summary, cfg.precision)}


def cmd_ho(cfg: RunConfig) -> Dict[str, str]:
    p_ep = HOParams(cfg.ho_m, cfg.ho_gamma_ep, cfg.ho_k, cfg.ho_convention)
    if cfg.t_max is None:
        t = np.linspace(0.0, 50.0, cfg.n_t) if cfg.t_spacing == "linear" else np.logspace(-2, np.log10(50.0), cfg.n_t)
    else:
        t0 = 0.0 if cfg.t_spacing == "linear" else (cfg.t_min or 1e-2)
        t = np.linspace(t0, cfg.t_max, cfg.n_t) if cfg.t_spacing == "linear" else np.logspace(np.log10(t0), np.log10(cfg.t_max), cfg.n_t)
    rows = []
    summary = {"ep_detected": p_ep.at_ep, "ep_regime": p_ep.regime().value, "comparators": []}
    rk_dev = float(np.abs(ho_propagate(p_ep, cfg.ho_f0, t) - ho_propagate_rk4(p_ep, cfg.ho_f0, t)).max())
    for gam in cfg.ho_gammas:
        p = HOParams(cfg.ho_m, gam, cfg.ho_k, cfg.ho_convention)
        R = ho_ratio(p_ep, p, cfg.ho_f0, t)
        for tk, v in zip(R.times, R.values):
            rows.append([gam, p.regime().value, tk, v])
        dev = float(np.abs(ho_propagate(p, cfg.ho_f0, t) - ho_propagate_rk4(p, cfg.ho_f0, t)).max())
        rk_dev = max(rk_dev, dev)
        summary["comparators"].append({
            "gamma": gam, "regime": p.regime().value, "R_t_max": float(R.values[-1]), "truncated": R.truncated,
        })
    summary["rk4_max_deviation"] = rk_dev
    return {"ho.csv": csv_text(["comparator_gamma", "regime", "t", "R_HO"], rows, cfg.precision),
            "ho.json": json_text(summary, cfg.precision)}


DISPATCH = {
    "spectrum": cmd_spectrum,
    "ep-find": cmd_ep_find,
    "evolve": cmd_evolve,
    "ratio": cmd_ratio,
    "ho": cmd_ho,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def load_recipe(name: str) -> Dict[str, Any]:
    if name not in RECIPES:
        raise ConfigError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}")
    text = resources.files("thermalep.recipes").joinpath(f"{name}.json").read_text(encoding="utf-8")
    doc = json.loads(text)
    doc.pop("command", None)
    return doc


def parse_override(item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thermalep", description="Exceptional points of a two-qubit thermal machine.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    src = ap.add_mutually_exclusive_group()
    src.add_argument("--config", help="JSON config file")
    src.add_argument("--recipe", choices=RECIPES, help="bundled figure recipe")
    ap.add_argument("--out", default=".", help="output directory (default: current directory)")
    ap.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config key; VALUE is parsed as JSON when possible")
    return ap


def _error(code: int, exc: BaseException) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return code


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
        elif args.recipe:
            doc = load_recipe(args.recipe)
        else:
            doc = {}
        for item in args.override:
            key, value = parse_override(item)
            doc[key] = value
        cfg = RunConfig.from_dict(doc)
        files = DISPATCH[args.command](cfg)
        files["config.json"] = cfg.to_json()
    except (ConfigError, ParameterError, WrongBuilderError, UnsupportedCombinationError, SubspaceError, TypeError) as exc:
        return _error(EXIT_CONFIG, exc)
    except OSError as exc:
        return _error(EXIT_IO, exc)
    except (DefectiveSpectrumError, NotAnEPError, IntegrationError, InvalidStateError, ArithmeticError) as exc:
        return _error(EXIT_NUMERIC, exc)
    try:
        write_outputs(args.out, files)
    except OSError as exc:
        return _error(EXIT_IO, exc)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

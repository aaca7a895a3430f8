"""Command-line driver for scenario runs, closed-form reports, and references.

Subcommands
-----------
run             integrate a scenario ensemble; write one CSV per observable,
                a spread curve, profile snapshots, a JSON summary, and (by
                default) rendered figures next to the CSVs.
analyze         closed-form sampling-spread curves, useful-window table and
                method recommendation for a configuration -- no trajectories.
oracle          independent reference curves (truncated-Fock or small exact
                diagonalization), written in the same CSV series format.
bench           per-step integrator cost across lattice sizes for the dense
                and FFT engines.
optimize-gauge  numeric noise-mixing optimization; dumps the mixing matrix
                and site-resolved gauge profiles.

Configuration is an INI file whose sections mirror the library modules,
overridden first by repeated ``--set section.key=value`` and then by the
dedicated flags (``--seed``, ``--trajectories``, ...).  Every CSV starts with
``# config_hash=<sha256 of the canonical effective config>``; rerunning with
an identical config and seed reproduces the CSV bytes exactly.

Exit codes: 0 success, 2 configuration error, 3 run failed (ensemble
unusable), 4 a reference-solver guard refused to run.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import hashlib
import io
import json
import os
import sys
import time

import numpy as np

from . import analytics, gauges, phasespace, sde
from . import model as model_mod
from . import oracle as oracle_mod
from .errors import (ConfigurationError, EstimatorDegenerateError,
                     OracleGuardError, RunFailedError)

SCENARIOS = ("bose_hubbard_quench", "rydberg_echo", "custom")
METHODS = ("positive_p", "gauge_p", "diffusion_only")
ENGINES = ("direct", "spectral")
KNOWN_SECTIONS = ("run", "model", "gauge", "stepper", "echo", "oracle",
                  "bench", "optimize")

# Base defaults; scenario-specific overlays below.  All values are strings
# (INI semantics); they are cast on use and serialized verbatim for hashing.
DEFAULTS = {
    "run": {
        "scenario": "bose_hubbard_quench",
        "out": "runs/out",
        "seed": "12345",
        "engine": "direct",
        "method": "gauge_p",
        "n_traj": "10000",
        "t_fin": "0.2",
        "grid_points": "41",
        "v_max": "10.0",
        "halt_on_spread": "true",
        "threads": "0",
        "plot": "true",
    },
    "model": {
        "m_sites": "6",
        "box_half_length": "2.0",
        "c6": "-32.0",
        "eps": "1.0",
        "a_exp": "2.0",
        "b_exp": "3.0",
        "j_tunnel": "0.0",
        "mass": "0.0",
        "density": "1.2",
        "contact_g": "",
    },
    "gauge": {
        "diffusion": "global",
        "a": "",
        "t_opt": "",
    },
    "stepper": {
        "dt": "1e-4",
        "scheme": sde.SCHEME_MIDPOINT,
        "midpoint_iters": "3",
        "max_field": "1e15",
    },
    "echo": {
        "kappa": "3.0",
        "tau": "0.18",
        "n_atoms": "500",
        "analysis_density": "0.125",
    },
    "oracle": {
        "cutoff": "",
        "cutoff_ed": "8",
    },
    "bench": {
        "m_list": "1024,2048,4096,8192,16384",
        "engines": "spectral",
        "steps": "4",
        "n_traj": "8",
        "dt": "1e-5",
        "spacing": "1.0",
    },
    "optimize": {
        "t_opt": "0.15",
        "peak_density": "0.5",
        "width": "200.0",
        "max_iter": "200",
        "fd_step": "1e-5",
        "a_init": "",
        "compare_nonlocal": "false",
    },
}

# Overlaid between DEFAULTS and the config file once the scenario is known.
SCENARIO_DEFAULTS = {
    "bose_hubbard_quench": {},
    "custom": {},
    "rydberg_echo": {
        "run": {"t_fin": "0.3", "grid_points": "31", "n_traj": "1000"},
        "model": {"m_sites": "64", "box_half_length": "50.0",
                  "c6": "-5.96e7", "eps": "12.5"},
        "gauge": {"diffusion": "adaptive", "t_opt": "0.27"},
        "stepper": {"dt": "5e-4"},
    },
}


# ----------------------------------------------------------------------------
# configuration: parse, merge, serialize, hash
# ----------------------------------------------------------------------------

def parse_config_file(path: str) -> dict:
    """Read an INI file into {section: {key: value-string}}."""
    cp = configparser.ConfigParser(interpolation=None,
                                   inline_comment_prefixes=("#",))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path!r}: {exc}")
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config file {path!r}: {exc}")
    cfg = {sec: dict(cp.items(sec)) for sec in cp.sections()}
    for sec in cfg:
        if sec not in KNOWN_SECTIONS:
            raise ConfigurationError(f"unknown config section [{sec}] in {path!r}")
    return cfg


def parse_config_text(text: str) -> dict:
    """Parse INI content from a string (round-trip helper)."""
    cp = configparser.ConfigParser(interpolation=None,
                                   inline_comment_prefixes=("#",))
    try:
        cp.read_file(io.StringIO(text))
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config text: {exc}")
    return {sec: dict(cp.items(sec)) for sec in cp.sections()}


def serialize_config(cfg: dict) -> str:
    """Canonical INI text: sections and keys sorted, one ``key = value`` per
    line.  ``parse_config_text(serialize_config(c))`` returns ``c`` again."""
    lines = []
    for sec in sorted(cfg):
        lines.append(f"[{sec}]")
        for key in sorted(cfg[sec]):
            lines.append(f"{key} = {cfg[sec][key]}")
        lines.append("")
    return "\n".join(lines)


# Presentation-only keys: they never affect the emitted numbers, so they are
# left out of the hashed canonical form (same data -> same hash).
HASH_EXCLUDED = (("run", "out"), ("run", "plot"), ("run", "threads"))


def config_hash(cfg: dict) -> str:
    trimmed = copy.deepcopy(cfg)
    for sec, key in HASH_EXCLUDED:
        trimmed.get(sec, {}).pop(key, None)
    return hashlib.sha256(serialize_config(trimmed).encode("utf-8")).hexdigest()


def _apply_assignments(cfg: dict, assignments) -> None:
    for item in assignments:
        if "=" not in item:
            raise ConfigurationError(
                f"--set expects section.key=value, got {item!r}")
        key, value = item.split("=", 1)
        if "." not in key:
            raise ConfigurationError(
                f"--set expects section.key=value, got {item!r}")
        sec, opt = key.split(".", 1)
        sec = sec.strip().lower()
        opt = opt.strip().lower()
        if sec not in KNOWN_SECTIONS:
            raise ConfigurationError(f"unknown config section {sec!r} in --set")
        cfg.setdefault(sec, {})[opt] = value.strip()


# Dedicated flags override --set; mapping flag -> (section, key).
_FLAG_MAP = {
    "seed": ("run", "seed"),
    "trajectories": ("run", "n_traj"),
    "dt": ("stepper", "dt"),
    "t_fin": ("run", "t_fin"),
    "method": ("run", "method"),
    "gauge": ("gauge", "diffusion"),
    "engine": ("run", "engine"),
    "threads": ("run", "threads"),
    "out": ("run", "out"),
}


def effective_config(args) -> dict:
    """Merge defaults <- scenario defaults <- file <- --set <- flags."""
    file_cfg = parse_config_file(args.config) if args.config else {}

    # Resolve the scenario first so its defaults can be overlaid.
    scenario = DEFAULTS["run"]["scenario"]
    scenario = file_cfg.get("run", {}).get("scenario", scenario)
    for item in args.overrides:
        if item.replace(" ", "").startswith("run.scenario="):
            scenario = item.split("=", 1)[1].strip()
    if scenario not in SCENARIOS:
        raise ConfigurationError(
            f"unknown scenario {scenario!r}; choose from {SCENARIOS}")

    cfg = copy.deepcopy(DEFAULTS)
    for sec, opts in SCENARIO_DEFAULTS[scenario].items():
        cfg[sec].update(opts)
    for sec, opts in file_cfg.items():
        cfg[sec].update(opts)
    _apply_assignments(cfg, args.overrides)
    for flag, (sec, key) in _FLAG_MAP.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[sec][key] = repr(value) if isinstance(value, float) else str(value)
    if getattr(args, "no_plot", False):
        cfg["run"]["plot"] = "false"
    cfg["run"]["scenario"] = scenario
    return cfg


# ----------------------------------------------------------------------------
# typed access to string config values
# ----------------------------------------------------------------------------

def _raw(cfg, sec, key) -> str:
    try:
        return cfg[sec][key]
    except KeyError:
        raise ConfigurationError(f"missing config value [{sec}] {key}")


def _as_str(cfg, sec, key) -> str:
    return _raw(cfg, sec, key).strip()


def _as_float(cfg, sec, key) -> float:
    value = _as_str(cfg, sec, key)
    try:
        return float(value)
    except ValueError:
        raise ConfigurationError(f"[{sec}] {key}: expected a number, got {value!r}")


def _as_opt_float(cfg, sec, key):
    value = _as_str(cfg, sec, key)
    return None if value == "" else _as_float(cfg, sec, key)


def _as_int(cfg, sec, key) -> int:
    value = _as_str(cfg, sec, key)
    try:
        return int(value)
    except ValueError:
        try:
            f = float(value)
        except ValueError:
            raise ConfigurationError(
                f"[{sec}] {key}: expected an integer, got {value!r}")
        if not f.is_integer():
            raise ConfigurationError(
                f"[{sec}] {key}: expected an integer, got {value!r}")
        return int(f)


def _as_bool(cfg, sec, key) -> bool:
    value = _as_str(cfg, sec, key).lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"[{sec}] {key}: expected a boolean, got {value!r}")


def _as_int_list(cfg, sec, key) -> list:
    value = _as_str(cfg, sec, key)
    try:
        return [int(tok) for tok in value.split(",") if tok.strip()]
    except ValueError:
        raise ConfigurationError(
            f"[{sec}] {key}: expected comma-separated integers, got {value!r}")


def _as_float_list(cfg, sec, key) -> list:
    value = _as_str(cfg, sec, key)
    try:
        return [float(tok) for tok in value.split(",") if tok.strip()]
    except ValueError:
        raise ConfigurationError(
            f"[{sec}] {key}: expected comma-separated numbers, got {value!r}")


def _seed(cfg) -> int:
    seed = _as_int(cfg, "run", "seed")
    if not 0 <= seed < 2 ** 64:
        raise ConfigurationError(f"[run] seed must be an unsigned 64-bit value")
    return seed


# ----------------------------------------------------------------------------
# builders: config -> library objects
# ----------------------------------------------------------------------------

def _build_lattice(cfg) -> model_mod.LatticeSpec:
    extents = tuple(_as_int_list(cfg, "model", "m_sites"))
    if not extents or any(e < 1 for e in extents):
        raise ConfigurationError("[model] m_sites must be positive integers")
    halves = _as_float_list(cfg, "model", "box_half_length")
    if len(halves) == 1:
        halves = halves * len(extents)
    if len(halves) != len(extents):
        raise ConfigurationError(
            "[model] box_half_length must match m_sites dimensionality")
    lengths = tuple(2.0 * h for h in halves)
    return model_mod.LatticeSpec(extents, lengths)


def _build_model(cfg, frozen: bool = False) -> model_mod.ModelSpec:
    lattice = _build_lattice(cfg)
    j = _as_float(cfg, "model", "j_tunnel")
    mass = _as_float(cfg, "model", "mass")
    if frozen:
        omega = None
    elif j != 0.0:
        omega = model_mod.tunneling_omega(lattice, j)
    elif mass > 0.0:
        omega = model_mod.kinetic_omega(lattice, mass)
    else:
        omega = None
    contact_g = _as_opt_float(cfg, "model", "contact_g")
    if contact_g is not None:
        return model_mod.ModelSpec.contact(lattice, contact_g, omega)
    potential = model_mod.InteractionPotential(
        c6=_as_float(cfg, "model", "c6"),
        eps=_as_float(cfg, "model", "eps"),
        power_r=_as_float(cfg, "model", "a_exp"),
        power_outer=_as_float(cfg, "model", "b_exp"))
    return model_mod.ModelSpec.from_potential(lattice, potential, omega)


def _build_gauge(cfg, model, n0, t_fin_run):
    """GaugeConfig for the configured method; returns (gauge, a_used).

    a_used is the global mixing strength actually applied (None for the
    plain method, drift-only gauges, and per-trajectory adaptive mixing).
    When [gauge] a is blank the recommended strength for the target window
    [gauge] t_opt (default: the run horizon) is used.
    """
    method = _as_str(cfg, "run", "method")
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {METHODS}")
    if method == "positive_p":
        return gauges.GaugeConfig(), None

    diffusion = _as_str(cfg, "gauge", "diffusion")
    t_opt = _as_opt_float(cfg, "gauge", "t_opt")
    if t_opt is None:
        t_opt = t_fin_run
    drift = "standard" if method == "gauge_p" else "none"
    if method == "diffusion_only" and diffusion in ("", "none"):
        diffusion = "global"
    if diffusion == "none":
        return gauges.GaugeConfig(drift=drift), None

    if diffusion == "global":
        a = _as_opt_float(cfg, "gauge", "a")
        if a is None:
            ints = gauges.gauge_integrals(model, n0)
            pick = gauges.a_approx if method == "gauge_p" else gauges.a_opt_diffusion_only
            a = float(np.asarray(pick(ints, t_opt)))
        return gauges.GaugeConfig(drift=drift, diffusion="global", a=a), a
    if diffusion == "adaptive":
        if method != "gauge_p":
            raise ConfigurationError(
                "adaptive noise mixing requires the weighted method (gauge_p)")
        return gauges.GaugeConfig(drift="standard", diffusion="adaptive",
                                  t_fin=t_opt), None
    if diffusion == "nonlocal":
        A = gauges.nonlocal_A(model, n0, t_opt)
        return gauges.GaugeConfig(drift=drift, diffusion="nonlocal", A=A), None
    raise ConfigurationError(
        f"diffusion gauge {diffusion!r} is not available from the command line")


def _build_stepper(cfg) -> sde.StepperConfig:
    stepper = sde.StepperConfig(
        dt=_as_float(cfg, "stepper", "dt"),
        scheme=_as_str(cfg, "stepper", "scheme"),
        midpoint_iters=_as_int(cfg, "stepper", "midpoint_iters"),
        max_field=_as_float(cfg, "stepper", "max_field"))
    stepper.validate()
    return stepper


def _time_grid(cfg) -> np.ndarray:
    t_fin = _as_float(cfg, "run", "t_fin")
    points = _as_int(cfg, "run", "grid_points")
    if t_fin <= 0 or points < 2:
        raise ConfigurationError("[run] t_fin must be > 0 and grid_points >= 2")
    return np.linspace(0.0, t_fin, points)


def _centered_x(lattice: model_mod.LatticeSpec) -> np.ndarray:
    """First-axis site coordinate measured from the box center."""
    return lattice.positions()[:, 0] - 0.5 * lattice.lengths[0]


# ----------------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, cfg_hash, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _write_series_csv(path, cfg_hash, t, series: sde.ObservableSeries) -> None:
    rows = ([_fmt(tk), _fmt(np.real(mk)), _fmt(np.imag(mk)), _fmt(ek), str(int(nk))]
            for tk, mk, ek, nk in zip(t, series.mean, series.stderr, series.n_used))
    _write_csv(path, cfg_hash, ["t", "re_mean", "im_mean", "stderr", "n_traj_used"],
               rows)


def _write_reference_csv(path, cfg_hash, t, values) -> None:
    """Reference curves share the series format with stderr 0, n 0."""
    rows = ([_fmt(tk), _fmt(np.real(vk)), _fmt(np.imag(vk)), _fmt(0.0), "0"]
            for tk, vk in zip(t, values))
    _write_csv(path, cfg_hash, ["t", "re_mean", "im_mean", "stderr", "n_traj_used"],
               rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    if isinstance(obj, (np.complexfloating, complex)):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    return obj


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _note(out_dir, name) -> str:
    path = os.path.join(out_dir, name)
    print(f"  wrote {path}")
    return path


def _safe_estimate(fn, name):
    """Wrap a nonlinear estimator so a degenerate point records NaN instead
    of aborting the whole run (e.g. a normalized correlation before any
    population exists)."""
    def wrapped(ens):
        try:
            return fn(ens)
        except EstimatorDegenerateError:
            return phasespace.ObservableEstimate(
                mean=complex(float("nan"), 0.0), stderr=float("nan"),
                n_used=0, name=name)
    return wrapped


def _tsim_payload(report: analytics.VarianceReport | None):
    if report is None:
        return None
    est = report.tsim
    return {"method": est.method, "times": est.times,
            "governing": est.governing, "kinetic_caveat": est.kinetic_caveat}


def _pyplot():
    import matplotlib
    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt
    return plt


# ----------------------------------------------------------------------------
# run: single-field scenarios (uniform coherent start)
# ----------------------------------------------------------------------------

def _analytic_overlay(model, n0, method, t, a_used, t_opt):
    """Closed-form spread curve on the recorded grid; None when the forms
    do not apply (e.g. they are guidance only and fail to evaluate)."""
    try:
        return analytics.variance_report(model, n0, method, t,
                                         t_opt=t_opt, a=a_used)
    except (ConfigurationError, FloatingPointError, np.linalg.LinAlgError):
        return None


def _run_single_field(cfg, out_dir, plot, cfg_hash, scenario):
    t_start = time.perf_counter()
    model = _build_model(cfg)
    M = model.n_sites
    density = _as_float(cfg, "model", "density")
    if density <= 0:
        raise ConfigurationError("[model] density must be positive")
    phi = np.full(M, np.sqrt(density), dtype=complex)
    n0 = np.full(M, density, dtype=complex)

    grid = _time_grid(cfg)
    t_fin = float(grid[-1])
    gauge, a_used = _build_gauge(cfg, model, n0, t_fin)
    stepper = _build_stepper(cfg)
    seed = _seed(cfg)
    n_traj = _as_int(cfg, "run", "n_traj")
    if n_traj < 2:
        raise ConfigurationError("[run] n_traj must be at least 2")
    engine = _as_str(cfg, "run", "engine")
    method = _as_str(cfg, "run", "method")

    observables = {
        "mean_field": phasespace.mean_field,
        "total_number": phasespace.total_number,
        "g1_1": _safe_estimate(lambda ens: phasespace.g1(ens, 1), "g1(1)"),
    }
    res = sde.run_ensemble(model, phi, gauge, stepper, n_traj, seed, grid,
                           observables=observables, engine=engine,
                           v_max=_as_float(cfg, "run", "v_max"),
                           halt_on_v=_as_bool(cfg, "run", "halt_on_spread"))

    t_opt = _as_opt_float(cfg, "gauge", "t_opt") or t_fin
    report = _analytic_overlay(model, n0, method, res.t, a_used, t_opt)

    # Reference overlay: with no quadratic part the occupation-diagonal
    # reference applies at any size.
    oracle_mean = None
    if not model.has_quadratic_part:
        try:
            oracle_mean = np.array([
                oracle_mod.fock_diagonal_evolve(model, phi, tk, ("a", 0))
                for tk in res.t])
        except OracleGuardError:
            oracle_mean = None

    for name in sorted(res.series):
        _write_series_csv(_note(out_dir, f"{name}.csv"), cfg_hash,
                          res.t, res.series[name])

    v_ana = report.v_analytic if report is not None else np.full(res.t.shape, np.nan)
    _write_csv(_note(out_dir, "spread.csv"), cfg_hash,
               ["t", "v_empirical", "v_analytic", "excluded_fraction"],
               ([_fmt(tk), _fmt(vk), _fmt(ak), _fmt(xk)] for tk, vk, ak, xk
                in zip(res.t, res.V_emp, v_ana, res.excluded_fraction)))

    x = _centered_x(model.lattice)
    t_last = float(res.t[-1])
    try:
        dens = phasespace.density_profile(res.final)
    except RunFailedError:
        dens = np.full(M, np.nan)
    _write_csv(_note(out_dir, "density_profile.csv"), cfg_hash,
               ["site", "x", "t", "density"],
               ([str(i), _fmt(x[i]), _fmt(t_last), _fmt(dens[i])] for i in range(M)))

    g1_rows = []
    for dn in range(M // 2 + 1):
        est = _safe_estimate(lambda ens, d=dn: phasespace.g1(ens, d), "g1")(res.final)
        g1_rows.append([str(dn), _fmt(np.real(est.mean)), _fmt(est.stderr),
                        _fmt(t_last)])
    _write_csv(_note(out_dir, "g1_profile.csv"), cfg_hash,
               ["dn", "value", "stderr", "t"], iter(g1_rows))

    summary = {
        "scenario": scenario,
        "config_hash": cfg_hash,
        "method": method,
        "engine": engine,
        "gauge": {"drift": gauge.drift, "diffusion": gauge.diffusion,
                  "a_used": a_used, "t_opt": t_opt},
        "seed": seed,
        "n_traj": n_traj,
        "dt": stepper.dt,
        "scheme": stepper.scheme,
        "t_fin": t_fin,
        "t_sim_empirical": res.t_sim_empirical,
        "t_sim_analytic": report.t_sim_analytic if report is not None else None,
        "tsim_estimates": _tsim_payload(report),
        "halted": res.halted,
        "reliable": res.reliable,
        "excluded_fraction_final": float(res.excluded_fraction[-1]),
        "v_emp_final": float(res.V_emp[-1]),
        "wall_time_s": time.perf_counter() - t_start,
    }
    _write_json(_note(out_dir, "summary.json"), summary)

    if plot:
        _figure_single_field(os.path.join(out_dir, f"{scenario}.png"),
                             res, report, oracle_mean)
        _note(out_dir, f"{scenario}.png")
    print(f"  t_sim_empirical={res.t_sim_empirical}  "
          f"t_sim_analytic={summary['t_sim_analytic']}  halted={res.halted}")


def _figure_single_field(path, res, report, oracle_mean):
    plt = _pyplot()
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7.0, 7.5), sharex=True)
    s = res.series["mean_field"]
    ax1.errorbar(res.t, s.mean.real, yerr=s.stderr, fmt="o", ms=3.5,
                 capsize=2, label=r"Re $\langle a \rangle$ (trajectories)")
    ax1.errorbar(res.t, s.mean.imag, yerr=s.stderr, fmt="s", ms=3.5,
                 capsize=2, label=r"Im $\langle a \rangle$ (trajectories)")
    if oracle_mean is not None:
        ax1.plot(res.t, oracle_mean.real, "k-", lw=1.2, label="reference (Re)")
        ax1.plot(res.t, oracle_mean.imag, "k--", lw=1.2, label="reference (Im)")
    ax1.set_ylabel(r"site-averaged $\langle a \rangle$")
    ax1.legend(loc="best", fontsize=8)
    ax1.grid(alpha=0.3)

    ax2.semilogy(res.t, np.maximum(res.V_emp, 1e-8), "o-", ms=3.5,
                 label="empirical spread")
    if report is not None:
        ax2.semilogy(res.t, np.maximum(report.v_analytic, 1e-8), "-", lw=1.2,
                     label="analytic spread")
    ax2.axhline(res.v_max, color="r", ls=":", lw=1, label="usefulness limit")
    if res.t_sim_empirical is not None:
        ax2.axvline(res.t_sim_empirical, color="r", ls="--", lw=1)
    ax2.set_xlabel("t")
    ax2.set_ylabel("sampling spread")
    ax2.legend(loc="best", fontsize=8)
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ----------------------------------------------------------------------------
# run: two-component echo scenario
# ----------------------------------------------------------------------------

def _run_echo(cfg, out_dir, plot, cfg_hash):
    t_start = time.perf_counter()
    mass = _as_float(cfg, "model", "mass")
    model = _build_model(cfg)          # kinetic quadratic part when mass > 0
    M = model.n_sites
    engine = _as_str(cfg, "run", "engine")
    if engine != "direct":
        raise ConfigurationError("the echo scenario runs on the direct engine")

    kappa = _as_float(cfg, "echo", "kappa")
    tau = _as_float(cfg, "echo", "tau")
    if tau <= 0:
        raise ConfigurationError("[echo] tau must be positive")
    n_atoms = _as_float(cfg, "echo", "n_atoms")
    phi_g = np.full(M, np.sqrt(n_atoms / M), dtype=complex)
    n_ana = _as_float(cfg, "echo", "analysis_density")
    n0 = np.full(M, n_ana, dtype=complex)

    grid = _time_grid(cfg)
    t_fin = float(grid[-1])
    gauge, a_used = _build_gauge(cfg, model, n0, t_fin)
    stepper = _build_stepper(cfg)
    seed = _seed(cfg)
    n_traj = _as_int(cfg, "run", "n_traj")
    method = _as_str(cfg, "run", "method")

    prop = sde.TwoComponentPropagator(
        model, kappa, gauge, flip_time=0.5 * tau,
        omega_g=model.omega if mass > 0 else None)
    ens = phasespace.ensemble_from_coherent(
        [np.zeros(M, dtype=complex), phi_g], n_traj,
        field_names=("e", "g"), master_seed=seed)
    observables = {
        "n_e": lambda e: phasespace.total_number(e, component="e"),
        "n_g": lambda e: phasespace.total_number(e, component="g"),
        "mean_field_e": lambda e: phasespace.mean_field(e, component="e"),
        "g2_0": _safe_estimate(lambda e: phasespace.g2(e, 0, component="e"),
                               "g2(0)"),
    }
    res = sde.run_trajectories(prop, ens, stepper, grid,
                               observables=observables,
                               v_max=_as_float(cfg, "run", "v_max"),
                               halt_on_v=_as_bool(cfg, "run", "halt_on_spread"))

    t_opt = _as_opt_float(cfg, "gauge", "t_opt") or t_fin
    report = _analytic_overlay(model, n0, method, res.t, a_used, t_opt)

    for name in sorted(res.series):
        _write_series_csv(_note(out_dir, f"{name}.csv"), cfg_hash,
                          res.t, res.series[name])

    v_ana = report.v_analytic if report is not None else np.full(res.t.shape, np.nan)
    _write_csv(_note(out_dir, "spread.csv"), cfg_hash,
               ["t", "v_empirical", "v_analytic", "excluded_fraction"],
               ([_fmt(tk), _fmt(vk), _fmt(ak), _fmt(xk)] for tk, vk, ak, xk
                in zip(res.t, res.V_emp, v_ana, res.excluded_fraction)))

    t_last = float(res.t[-1])
    g2_rows = []
    for r in range(M // 2 + 1):
        est = _safe_estimate(lambda e, rr=r: phasespace.g2(e, rr, component="e"),
                             "g2")(res.final)
        g2_rows.append([str(r), _fmt(np.real(est.mean)), _fmt(est.stderr),
                        _fmt(t_last)])
    _write_csv(_note(out_dir, "g2_profile.csv"), cfg_hash,
               ["r", "value", "stderr", "t"], iter(g2_rows))

    n_e = res.series["n_e"]
    k_tau = int(np.argmin(np.abs(res.t - tau)))
    summary = {
        "scenario": "rydberg_echo",
        "config_hash": cfg_hash,
        "method": method,
        "engine": engine,
        "gauge": {"drift": gauge.drift, "diffusion": gauge.diffusion,
                  "a_used": a_used, "t_opt": t_opt},
        "seed": seed,
        "n_traj": n_traj,
        "dt": stepper.dt,
        "scheme": stepper.scheme,
        "t_fin": t_fin,
        "kappa": kappa,
        "tau": tau,
        "flip_time": 0.5 * tau,
        "n_atoms": n_atoms,
        "frozen": mass <= 0,
        "n_e_at_tau": {"t": float(res.t[k_tau]),
                       "value": float(np.real(n_e.mean[k_tau])),
                       "stderr": float(n_e.stderr[k_tau])},
        "t_sim_empirical": res.t_sim_empirical,
        "t_sim_analytic": report.t_sim_analytic if report is not None else None,
        "tsim_estimates": _tsim_payload(report),
        "halted": res.halted,
        "reliable": res.reliable,
        "excluded_fraction_final": float(res.excluded_fraction[-1]),
        "v_emp_final": float(res.V_emp[-1]),
        "wall_time_s": time.perf_counter() - t_start,
    }
    _write_json(_note(out_dir, "summary.json"), summary)

    if plot:
        _figure_echo(os.path.join(out_dir, "rydberg_echo.png"), res, report, tau)
        _note(out_dir, "rydberg_echo.png")
    print(f"  t_sim_empirical={res.t_sim_empirical}  "
          f"N_e(tau)={summary['n_e_at_tau']['value']:.4g}  halted={res.halted}")


def _figure_echo(path, res, report, tau):
    plt = _pyplot()
    fig, axes = plt.subplots(3, 1, figsize=(7.0, 9.0), sharex=True)
    n_e = res.series["n_e"]
    axes[0].errorbar(res.t, n_e.mean.real, yerr=n_e.stderr, fmt="o-", ms=3,
                     capsize=2, label=r"$N_e(t)$")
    axes[0].axvline(0.5 * tau, color="k", ls=":", lw=1, label="drive flip")
    axes[0].axvline(tau, color="k", ls="--", lw=1, label=r"$t=\tau$")
    axes[0].set_ylabel("transferred population")
    axes[0].legend(loc="best", fontsize=8)
    axes[0].grid(alpha=0.3)

    g2 = res.series["g2_0"]
    axes[1].errorbar(res.t, g2.mean.real, yerr=g2.stderr, fmt="s-", ms=3,
                     capsize=2, color="tab:green")
    axes[1].axhline(1.0, color="k", ls=":", lw=1)
    axes[1].set_ylabel(r"$g^{(2)}(0)$")
    axes[1].grid(alpha=0.3)

    axes[2].semilogy(res.t, np.maximum(res.V_emp, 1e-8), "o-", ms=3,
                     label="empirical spread")
    if report is not None:
        axes[2].semilogy(res.t, np.maximum(report.v_analytic, 1e-8), "-",
                         lw=1.2, label="analytic spread")
    axes[2].axhline(res.v_max, color="r", ls=":", lw=1)
    if res.t_sim_empirical is not None:
        axes[2].axvline(res.t_sim_empirical, color="r", ls="--", lw=1)
    axes[2].set_xlabel("t")
    axes[2].set_ylabel("sampling spread")
    axes[2].legend(loc="best", fontsize=8)
    axes[2].grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


# ----------------------------------------------------------------------------
# analyze: closed forms only
# ----------------------------------------------------------------------------

def _cmd_analyze(cfg, out_dir, plot, cfg_hash):
    scenario = _as_str(cfg, "run", "scenario")
    model = _build_model(cfg, frozen=(scenario == "rydberg_echo"
                                      and _as_float(cfg, "model", "mass") <= 0))
    M = model.n_sites
    if scenario == "rydberg_echo":
        density = _as_float(cfg, "echo", "analysis_density")
    else:
        density = _as_float(cfg, "model", "density")
    n0 = np.full(M, density, dtype=complex)
    grid = _time_grid(cfg)
    t_opt = _as_opt_float(cfg, "gauge", "t_opt") or float(grid[-1])
    a_conf = _as_opt_float(cfg, "gauge", "a")

    reports = {}
    for method in METHODS:
        a = a_conf if method == "gauge_p" else None
        reports[method] = analytics.variance_report(model, n0, method, grid,
                                                    t_opt=t_opt, a=a)
    strategy = analytics.gauge_strategy(model, n0)
    ints = strategy.integrals

    _write_csv(_note(out_dir, "v_curves.csv"), cfg_hash,
               ["t", "v_positive_p", "v_gauge_p", "v_diffusion_only"],
               ([_fmt(tk), _fmt(vp), _fmt(vg), _fmt(vd)] for tk, vp, vg, vd
                in zip(grid, reports["positive_p"].v_analytic,
                       reports["gauge_p"].v_analytic,
                       reports["diffusion_only"].v_analytic)))

    payload = {
        "scenario": scenario,
        "config_hash": cfg_hash,
        "density": density,
        "t_opt": t_opt,
        "integrals": {
            "I1": float(np.real(np.mean(ints.I1))),
            "I2": float(np.real(np.mean(ints.I2))),
            "I1P": float(np.real(np.mean(ints.I1P))),
            "I2P": float(np.real(np.mean(ints.I2P))),
            "U0": float(ints.U0),
            "W0": float(ints.W0),
        },
        "methods": {
            name: {
                "a_used": rep.a_used,
                "t_sim_analytic": rep.t_sim_analytic,
                "tsim_estimates": _tsim_payload(rep),
            } for name, rep in reports.items()
        },
        "strategy": {
            "diffusion_only_preferred": strategy.diffusion_only_preferred,
            "diffusion_gauge_useful": strategy.diffusion_gauge_useful,
            "recommended": strategy.recommended,
            "notes": strategy.notes,
        },
    }
    _write_json(_note(out_dir, "report.json"), payload)

    if plot:
        plt = _pyplot()
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        for name, style in (("positive_p", "-"), ("gauge_p", "--"),
                            ("diffusion_only", ":")):
            ax.semilogy(grid, np.maximum(reports[name].v_analytic, 1e-10),
                        style, lw=1.4, label=name)
        ax.axhline(analytics.V_USEFUL_LIMIT, color="r", ls=":", lw=1,
                   label="usefulness limit")
        ax.set_xlabel("t")
        ax.set_ylabel("analytic sampling spread")
        ax.legend(loc="best", fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "variance.png"), dpi=150)
        plt.close(fig)
        _note(out_dir, "variance.png")
    print(f"  recommended method: {strategy.recommended}")


# ----------------------------------------------------------------------------
# oracle: independent reference curves
# ----------------------------------------------------------------------------

def _cmd_oracle(cfg, out_dir, plot, cfg_hash):
    scenario = _as_str(cfg, "run", "scenario")
    grid = _time_grid(cfg)
    curves = {}

    if scenario == "rydberg_echo":
        mass = _as_float(cfg, "model", "mass")
        if mass > 0:
            raise OracleGuardError(
                "the two-component reference only covers the frozen lattice")
        model = _build_model(cfg, frozen=True)
        M = model.n_sites
        kappa = _as_float(cfg, "echo", "kappa")
        tau = _as_float(cfg, "echo", "tau")
        n_atoms = _as_float(cfg, "echo", "n_atoms")
        phi_g = np.full(M, np.sqrt(n_atoms / M), dtype=complex)
        cutoff = _as_int(cfg, "oracle", "cutoff_ed")
        vals = np.array([oracle_mod.exact_diag_two_component(
            model.W, kappa, phi_g, cutoff, tk, ("n_e_total",),
            flip_time=0.5 * tau) for tk in grid])
        curves["oracle_n_e"] = vals
        _write_reference_csv(_note(out_dir, "oracle_n_e.csv"), cfg_hash,
                             grid, vals)
    else:
        model = _build_model(cfg)
        M = model.n_sites
        density = _as_float(cfg, "model", "density")
        phi = np.full(M, np.sqrt(density), dtype=complex)
        if not model.has_quadratic_part:
            cutoff = _as_opt_float(cfg, "oracle", "cutoff")
            cutoff = None if cutoff is None else int(cutoff)
            mean = np.array([oracle_mod.fock_diagonal_evolve(
                model, phi, tk, ("a", 0), cutoff=cutoff) for tk in grid])
            g1v = np.array([oracle_mod.fock_g1(model, phi, tk, 1,
                                               cutoff=cutoff) for tk in grid])
            curves["oracle_mean_field"] = mean
            curves["oracle_g1_1"] = g1v
            _write_reference_csv(_note(out_dir, "oracle_mean_field.csv"),
                                 cfg_hash, grid, mean)
            _write_reference_csv(_note(out_dir, "oracle_g1_1.csv"),
                                 cfg_hash, grid, g1v)
        else:
            cutoff = _as_int(cfg, "oracle", "cutoff_ed")
            mean = np.array([oracle_mod.exact_diag_small(
                model, phi, cutoff, tk, ("a", 0)) for tk in grid])
            ntot = np.array([oracle_mod.exact_diag_small(
                model, phi, cutoff, tk, ("n_total",)) for tk in grid])
            curves["oracle_mean_field"] = mean
            curves["oracle_total_number"] = ntot
            _write_reference_csv(_note(out_dir, "oracle_mean_field.csv"),
                                 cfg_hash, grid, mean)
            _write_reference_csv(_note(out_dir, "oracle_total_number.csv"),
                                 cfg_hash, grid, ntot)

    if plot:
        plt = _pyplot()
        fig, ax = plt.subplots(figsize=(7.0, 4.5))
        for name, vals in curves.items():
            ax.plot(grid, np.real(vals), "-", lw=1.4, label=f"{name} (Re)")
            if np.max(np.abs(np.imag(vals))) > 1e-12:
                ax.plot(grid, np.imag(vals), "--", lw=1.4, label=f"{name} (Im)")
        ax.set_xlabel("t")
        ax.set_ylabel("reference expectation")
        ax.legend(loc="best", fontsize=8)
        ax.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "oracle.png"), dpi=150)
        plt.close(fig)
        _note(out_dir, "oracle.png")


# ----------------------------------------------------------------------------
# bench: per-step engine cost across sizes
# ----------------------------------------------------------------------------

def _cmd_bench(cfg, out_dir, plot, cfg_hash):
    from . import spectral as spectral_mod

    m_list = _as_int_list(cfg, "bench", "m_list")
    engines = [tok.strip() for tok in _as_str(cfg, "bench", "engines").split(",")
               if tok.strip()]
    for engine in engines:
        if engine not in ENGINES:
            raise ConfigurationError(f"unknown bench engine {engine!r}")
    steps = _as_int(cfg, "bench", "steps")
    n_traj = _as_int(cfg, "bench", "n_traj")
    spacing = _as_float(cfg, "bench", "spacing")
    if steps < 1 or n_traj < 1 or spacing <= 0:
        raise ConfigurationError("[bench] steps, n_traj, spacing must be positive")
    dt = _as_float(cfg, "bench", "dt")
    density = _as_float(cfg, "model", "density")
    a = _as_opt_float(cfg, "gauge", "a")
    gauge = gauges.GaugeConfig(drift="standard", diffusion="global",
                               a=0.5 if a is None else a)
    stepper = sde.StepperConfig(dt=dt)
    stepper.validate()
    potential = model_mod.InteractionPotential(
        c6=_as_float(cfg, "model", "c6"),
        eps=_as_float(cfg, "model", "eps"),
        power_r=_as_float(cfg, "model", "a_exp"),
        power_outer=_as_float(cfg, "model", "b_exp"))
    seed = _seed(cfg)

    rows = []
    results = {engine: ([], []) for engine in engines}
    for m_sites in m_list:
        lattice = model_mod.LatticeSpec((m_sites,), (m_sites * spacing,))
        phi = np.full(m_sites, np.sqrt(density), dtype=complex)
        for engine in engines:
            if engine == "direct":
                if m_sites > 8192:
                    raise ConfigurationError(
                        "direct-engine benches are capped at 8192 sites "
                        "(dense kernel memory); use the spectral engine")
                spec = model_mod.ModelSpec.from_potential(lattice, potential)
                prop = sde.SingleFieldPropagator(spec, gauge)
            else:
                kernel = spectral_mod.SpectralKernel.from_potential(lattice,
                                                                    potential)
                prop = spectral_mod.SpectralFieldPropagator(kernel, gauge)
            ens = phasespace.ensemble_from_coherent(phi, n_traj,
                                                    master_seed=seed)
            sde.step_ensemble(ens, prop, stepper, 0)      # warm-up
            t0 = time.perf_counter()
            for k in range(steps):
                sde.step_ensemble(ens, prop, stepper, k + 1)
            per_step = (time.perf_counter() - t0) / steps
            rows.append([engine, str(m_sites), _fmt(per_step)])
            results[engine][0].append(m_sites)
            results[engine][1].append(per_step)
            print(f"  {engine:9s} M={m_sites:<6d} {per_step * 1e3:9.3f} ms/step")

    _write_csv(_note(out_dir, "bench.csv"), cfg_hash,
               ["engine", "m_sites", "seconds_per_step"], iter(rows))

    slopes = {}
    for engine, (ms, secs) in results.items():
        if len(ms) >= 2:
            coef = np.polyfit(np.log(np.asarray(ms, float)),
                              np.log(np.asarray(secs, float)), 1)
            slopes[engine] = float(coef[0])
    _write_json(_note(out_dir, "summary.json"),
                {"config_hash": cfg_hash, "n_traj": n_traj, "steps": steps,
                 "cost_exponent": slopes})

    if plot:
        plt = _pyplot()
        fig, ax = plt.subplots(figsize=(6.5, 4.5))
        for engine, (ms, secs) in results.items():
            label = engine
            if engine in slopes:
                label += f" (slope {slopes[engine]:.2f})"
            ax.loglog(ms, secs, "o-", label=label)
        ax.set_xlabel("lattice sites M")
        ax.set_ylabel("seconds per step")
        ax.legend(loc="best", fontsize=8)
        ax.grid(alpha=0.3, which="both")
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "bench.png"), dpi=150)
        plt.close(fig)
        _note(out_dir, "bench.png")


# ----------------------------------------------------------------------------
# optimize-gauge: numeric noise-mixing matrix
# ----------------------------------------------------------------------------

def _cmd_optimize(cfg, out_dir, plot, cfg_hash):
    model = _build_model(cfg)
    M = model.n_sites
    x = _centered_x(model.lattice)
    peak = _as_float(cfg, "optimize", "peak_density")
    width = _as_float(cfg, "optimize", "width")
    if peak <= 0:
        raise ConfigurationError("[optimize] peak_density must be positive")
    if width > 0:
        n0 = peak * np.exp(-x ** 2 / width)
    else:
        n0 = np.full(M, peak)
    n0 = n0.astype(complex)
    t_opt = _as_float(cfg, "optimize", "t_opt")
    res = gauges.optimize_O_numeric(
        model, n0, t_opt,
        a_init=_as_opt_float(cfg, "optimize", "a_init"),
        max_iter=_as_int(cfg, "optimize", "max_iter"),
        fd_step=_as_float(cfg, "optimize", "fd_step"))

    _write_csv(_note(out_dir, "o_matrix.csv"), cfg_hash,
               ["i", "j", "re", "im"],
               ([str(i), str(j), _fmt(res.O[i, j].real), _fmt(res.O[i, j].imag)]
                for i in range(2 * M) for j in range(2 * M)))
    _write_csv(_note(out_dir, "gauge_profiles.csv"), cfg_hash,
               ["site", "x", "density", "a_site", "a_profile"],
               ([str(i), _fmt(x[i]), _fmt(n0[i].real), _fmt(res.a_site[i]),
                 _fmt(res.a_profile[i])] for i in range(M)))

    summary = {
        "config_hash": cfg_hash,
        "t_opt": t_opt,
        "v_init_global": res.V_init,
        "v_optimized": res.V_opt,
        "reduction": res.V_init / res.V_opt if res.V_opt > 0 else None,
        "n_iter": res.n_iter,
        "converged": res.converged,
        "grad_norm": res.grad_norm,
        "history": res.history,
    }

    if _as_bool(cfg, "optimize", "compare_nonlocal"):
        n_u = np.full(M, float(np.mean(n0.real)), dtype=complex)
        ints_u = gauges.gauge_integrals(model, n_u)
        a_g = float(np.asarray(gauges.a_approx(ints_u, t_opt)))
        moments = analytics.InitialMoments.deterministic(n_u)
        v_global = analytics.v_gauge_p(t_opt, model,
                                       gauges.global_O(a_g, M), moments)
        A = gauges.nonlocal_A(model, n_u, t_opt)
        v_nonlocal = analytics.v_gauge_p(t_opt, model,
                                         gauges.nonlocal_O(A), moments)
        summary["nonlocal_uniform"] = {
            "density": float(n_u[0].real),
            "a_global": a_g,
            "v_global": float(v_global),
            "v_nonlocal": float(v_nonlocal),
            "reduction": float(v_global / v_nonlocal) if v_nonlocal > 0 else None,
        }

    _write_json(_note(out_dir, "summary.json"), summary)

    if plot:
        plt = _pyplot()
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.0, 4.2))
        ax1.plot(x, res.a_site, "o-", ms=3.5, label="site mixing a(x)")
        ax1.plot(x, res.a_profile, "s--", ms=3.5, label="mixing row profile")
        ax1b = ax1.twinx()
        ax1b.plot(x, n0.real, "k:", lw=1, label="density")
        ax1b.set_ylabel("density")
        ax1.set_xlabel("x")
        ax1.set_ylabel("mixing strength")
        ax1.legend(loc="best", fontsize=8)
        ax1.grid(alpha=0.3)
        if res.history:
            ax2.semilogy(np.arange(len(res.history)), res.history, "-")
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("spread estimate")
        ax2.grid(alpha=0.3)
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, "gauge_profiles.png"), dpi=150)
        plt.close(fig)
        _note(out_dir, "gauge_profiles.png")
    print(f"  V {res.V_init:.4g} -> {res.V_opt:.4g} "
          f"(x{res.V_init / max(res.V_opt, 1e-300):.2f}, "
          f"{res.n_iter} iterations, converged={res.converged})")


# ----------------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------------

def _cmd_run(cfg, out_dir, plot, cfg_hash):
    scenario = _as_str(cfg, "run", "scenario")
    if scenario == "rydberg_echo":
        _run_echo(cfg, out_dir, plot, cfg_hash)
    else:
        _run_single_field(cfg, out_dir, plot, cfg_hash, scenario)


_COMMANDS = {
    "run": _cmd_run,
    "analyze": _cmd_analyze,
    "oracle": _cmd_oracle,
    "bench": _cmd_bench,
    "optimize-gauge": _cmd_optimize,
}

_THREAD_LIMIT = None


def _apply_thread_cap(n: int) -> None:
    """Best-effort cap on BLAS/FFT worker threads."""
    global _THREAD_LIMIT
    if n <= 0:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import threadpoolctl
        _THREAD_LIMIT = threadpoolctl.threadpool_limits(n)
    except Exception:
        pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaugep",
        description="Stochastic phase-space runs for interacting lattice "
                    "bosons: scenario integration, spread analysis, "
                    "reference curves, engine benchmarks, and gauge "
                    "optimization.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "run": "integrate a scenario and write CSV series, JSON summary, figures",
        "analyze": "closed-form spread curves and method recommendation",
        "oracle": "independent reference curves for small or diagonal cases",
        "bench": "per-step cost of the dense and FFT engines across sizes",
        "optimize-gauge": "numeric noise-mixing optimization and profiles",
    }
    for name in _COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", metavar="PATH",
                        help="INI configuration file")
        sp.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--trajectories", type=int, metavar="N",
                        help="number of trajectories")
        sp.add_argument("--dt", type=float, help="integrator step")
        sp.add_argument("--t-fin", dest="t_fin", type=float,
                        help="final recorded time")
        sp.add_argument("--method", choices=METHODS,
                        help="sampling method")
        sp.add_argument("--gauge", choices=("none", "global", "adaptive",
                                            "nonlocal"),
                        help="diffusion (noise-mixing) gauge kind")
        sp.add_argument("--engine", choices=ENGINES,
                        help="kernel application engine")
        sp.add_argument("--threads", type=int, metavar="N",
                        help="cap BLAS/FFT worker threads")
        sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--no-plot", action="store_true",
                        help="skip figure rendering")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args)
        _apply_thread_cap(_as_int(cfg, "run", "threads"))
        out_dir = _as_str(cfg, "run", "out")
        os.makedirs(out_dir, exist_ok=True)
        plot = _as_bool(cfg, "run", "plot")
        cfg_hash = config_hash(cfg)
        print(f"[gaugep {args.command}] config_hash={cfg_hash}")
        with open(os.path.join(out_dir, "config.ini"), "w",
                  encoding="utf-8") as fh:
            fh.write(f"# config_hash={cfg_hash}\n")
            fh.write(serialize_config(cfg))
        _note(out_dir, "config.ini")
        _COMMANDS[args.command](cfg, out_dir, plot, cfg_hash)
        return 0
    except ConfigurationError as exc:
        print(f"gaugep: configuration error: {exc}", file=sys.stderr)
        return 2
    except OracleGuardError as exc:
        print(f"gaugep: reference-solver guard: {exc}", file=sys.stderr)
        return 4
    except RunFailedError as exc:
        print(f"gaugep: run failed: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

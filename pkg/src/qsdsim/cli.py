"""Experiment driver.

Each subcommand reads a JSON config, runs one experiment family, writes
CSV/JSON outputs plus a manifest and a gnuplot stub into the output
directory, and exits 0 only when the experiment's own pass condition
holds.  Exit codes: 0 pass, 1 assertion fail, 2 config error,
3 numerical error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
from jsonschema import ValidationError, validate

from . import __version__
from .constants import (CHI2_MIN_EXPECTED, CHI2_MIN_P,
                        DECORRELATION_TIME_FACTOR, LATE_FRACTION, SHAPE_TOL,
                        SIGMA_BAND, SUPPRESSION_THRESHOLD,
                        CONTROL_SUPPRESSION_MIN, TAIL_TOL_DEFAULT)
from .errors import ConfigError, SimulationError
from .model import ModelParams, build_operators, temperature_for_nbar
from .observables import fit_exponential_decay, write_bundle_csv
from .oracle import LindbladPropagatorConfig, propagate
from .qsd import IntegratorConfig, run_trajectory
from .ensemble import (EnsembleConfig, InitialStateSpec, run_ensemble,
                       trace_distance, write_stats_csv)
from .histories import (HistorySpec, PhaseCell, classical_peaking_report,
                        decoherence_functional, write_decoherence_json,
                        write_suppression_csv)

_NUMBER = {"type": "number"}
_COMPLEX = {"oneOf": [{"type": "number"},
                      {"type": "array", "items": _NUMBER,
                       "minItems": 2, "maxItems": 2}]}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["params", "fock"],
    "properties": {
        "params": {
            "type": "object",
            "additionalProperties": False,
            "required": ["m", "omega", "gamma"],
            "properties": {
                "m": _NUMBER, "omega": _NUMBER, "gamma": _NUMBER,
                "temperature": _NUMBER, "nbar": _NUMBER,
                "hbar": _NUMBER, "k_B": _NUMBER,
            },
        },
        "fock": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n_fock"],
            "properties": {
                "n_fock": {"type": "integer", "minimum": 2},
                "tail_tol": _NUMBER,
            },
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dt", "t_end"],
            "properties": {
                "dt": _NUMBER, "t_end": _NUMBER,
                "record_stride": {"type": "integer", "minimum": 1},
                "renormalize": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "required": ["m"],
            "properties": {
                "m": {"type": "integer", "minimum": 1},
                "base_seed": {"type": "integer", "minimum": 0},
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["coherent", "fock", "cat", "custom"]},
                "alpha": _COMPLEX,
                "n": {"type": "integer", "minimum": 0},
                "phase": _NUMBER,
                "amplitudes": {"type": "array", "items": _COMPLEX},
            },
        },
        "localize": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                # cat separations d = 2|alpha| in units of the coherent label
                "separations": {"type": "array", "items": _NUMBER,
                                "minItems": 1},
            },
        },
        "thermalize": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_n": {"type": "integer", "minimum": 1},
            },
        },
        "oracle_compare": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dt_oracle"],
            "properties": {
                "dt_oracle": _NUMBER,
            },
        },
        "histories": {
            "type": "object",
            "additionalProperties": False,
            "required": ["times", "cells", "h", "dt_oracle"],
            "properties": {
                "times": {"type": "array", "items": _NUMBER, "minItems": 1},
                "cells": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["center", "w_re", "w_im"],
                        "properties": {
                            "center": _COMPLEX,
                            "w_re": _NUMBER,
                            "w_im": _NUMBER,
                        },
                    },
                },
                "h": _NUMBER,
                "dt_oracle": _NUMBER,
                "include_complement": {"type": "boolean"},
                "control": {"type": "boolean"},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"gnuplot": {"type": "boolean"}},
        },
    },
}

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _as_complex(value) -> complex:
    if isinstance(value, (list, tuple)):
        return complex(value[0], value[1])
    return complex(value)


def load_config(path: Path) -> dict:
    try:
        raw = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    try:
        cfg = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        validate(cfg, CONFIG_SCHEMA)
    except ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc
    return cfg


def build_params(section: dict) -> ModelParams:
    if ("temperature" in section) == ("nbar" in section):
        raise ConfigError("params needs exactly one of temperature, nbar")
    base = ModelParams(
        m=section["m"], omega=section["omega"], gamma=section["gamma"],
        temperature=section.get("temperature", 0.0),
        hbar=section.get("hbar", 1.0), k_B=section.get("k_B", 1.0))
    if "nbar" in section:
        base = ModelParams(
            m=base.m, omega=base.omega, gamma=base.gamma,
            temperature=temperature_for_nbar(section["nbar"], base),
            hbar=base.hbar, k_B=base.k_B)
    return base


def build_initial(section: dict) -> InitialStateSpec:
    amps = section.get("amplitudes")
    if amps is not None:
        amps = tuple(_as_complex(a) for a in amps)
    return InitialStateSpec(
        kind=section["kind"],
        alpha=_as_complex(section.get("alpha", 0.0)),
        n=section.get("n", 0),
        phase=section.get("phase", 0.0),
        amplitudes=amps)


def _integrator(cfg: dict, seed_override) -> IntegratorConfig:
    sec = cfg["integrator"]
    seed = sec.get("seed", 0)
    if seed_override is not None:
        seed = seed_override
    return IntegratorConfig(
        dt=sec["dt"], t_end=sec["t_end"], seed=seed,
        record_stride=sec.get("record_stride", 1),
        renormalize=sec.get("renormalize", True),
        tail_tol=cfg["fock"].get("tail_tol", TAIL_TOL_DEFAULT))


def _ensemble_config(cfg: dict, icfg: IntegratorConfig, seed_override,
                     rho_times=(), store_series=()) -> EnsembleConfig:
    if "ensemble" not in cfg or "initial" not in cfg:
        raise ConfigError("this subcommand needs ensemble and initial "
                          "config sections")
    sec = cfg["ensemble"]
    base_seed = sec.get("base_seed", 0)
    if seed_override is not None:
        base_seed = seed_override
    return EnsembleConfig(
        m=sec["m"], base_seed=base_seed, integrator=icfg,
        initial=build_initial(cfg["initial"]),
        rho_times=tuple(rho_times), store_series=tuple(store_series))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Runner:
    """Holds common plumbing: output dir, manifest, gnuplot stub."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.config_path = Path(args.config)
        self.cfg = load_config(self.config_path)
        self.started = time.monotonic()
        self.outputs: list[str] = []
        self.checks: list[tuple[str, bool]] = []

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def check(self, label: str, ok: bool) -> None:
        self.checks.append((label, bool(ok)))
        print(f"[{'PASS' if ok else 'FAIL'}] {label}")

    @property
    def passed(self) -> bool:
        return all(ok for _, ok in self.checks)

    def finish(self, command: str) -> int:
        manifest = {
            "command": command,
            "config": self.config_path.name,
            "config_sha256": _sha256(self.config_path),
            "versions": {
                "package": __version__,
                "python": sys.version.split()[0],
                "numpy": np.__version__,
            },
            "seed_override": self.args.seed,
            "workers": self.args.workers,
            "wall_time_s": round(time.monotonic() - self.started, 3),
            "outputs": self.outputs,
            "checks": [{"label": lbl, "passed": ok}
                       for lbl, ok in self.checks],
            "passed": self.passed,
        }
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
        return EXIT_PASS if self.passed else EXIT_FAIL

    def gnuplot_stub(self, csv_name: str, columns: dict[str, int],
                     title: str) -> None:
        if not self.cfg.get("output", {}).get("gnuplot", True):
            return
        lines = [
            "# gnuplot stub; run: gnuplot plot.gp",
            "set datafile separator comma",
            "set key autotitle columnhead",
            "set grid",
            f'set title "{title}"',
            'set xlabel "t"',
            "plot " + ", \\\n     ".join(
                f'"{csv_name}" using 1:{idx} with lines title "{name}"'
                for name, idx in columns.items()),
        ]
        with open(self.out / "plot.gp", "w") as fh:
            fh.write("\n".join(lines) + "\n")
        self.outputs.append("plot.gp")


def cmd_stationary(args) -> int:
    run = Runner(args)
    cfg, params = run.cfg, build_params(run.cfg["params"])
    ops = build_operators(params, cfg["fock"]["n_fock"])
    icfg = _integrator(cfg, args.seed)
    psi0 = build_initial(cfg.get("initial", {"kind": "coherent",
                                             "alpha": 1.0})).build(ops)
    record = run_trajectory(psi0, ops, icfg)
    write_bundle_csv(run.path("trajectory.csv"), record.bundles)
    run.gnuplot_stub("trajectory.csv",
                     {"Q": 7, "P": 8, "delta_alpha_sq": 9}, "shape drift")

    excess_q = np.array([b.excess_q for b in record.bundles])
    excess_p = np.array([b.excess_p for b in record.bundles])
    r_corr = np.array([b.R for b in record.bundles])
    dalpha2 = np.array([b.delta_alpha_sq for b in record.bundles])
    # Q labels the position excess, P the momentum excess
    diags = {
        "max|Q|": np.max(np.abs(excess_q)),
        "max|P|": np.max(np.abs(excess_p)),
        "max|R|/hbar": np.max(np.abs(r_corr)) / params.hbar,
        "max_dalpha2": np.max(dalpha2),
    }
    if args.expect_fail:
        # a non-coherent start must break shape early, then localize
        series = np.stack([np.abs(excess_q), np.abs(excess_p),
                           np.abs(r_corr) / params.hbar, dalpha2])
        worst = series.max(axis=0)
        half = worst.size // 2
        run.check("shape broken early (some diagnostic > "
                  f"{SHAPE_TOL} in first half)",
                  float(worst[:half].max()) > SHAPE_TOL)
        run.check("diagnostics decay below threshold by the end",
                  float(worst[-1]) < SHAPE_TOL)
    else:
        for name, value in diags.items():
            run.check(f"{name} = {value:.4g} < {SHAPE_TOL}",
                      value < SHAPE_TOL)
    return run.finish("stationary")


def _localize_rate(cfg, params, ops, icfg, args, spec, tag, run):
    ecfg = EnsembleConfig(
        m=cfg["ensemble"]["m"],
        base_seed=(args.seed if args.seed is not None
                   else cfg["ensemble"].get("base_seed", 0)),
        integrator=icfg, initial=spec)
    stats = run_ensemble(ecfg, ops, workers=args.workers)
    write_stats_csv(run.path(f"localize_{tag}.csv"), stats)
    fit = fit_exponential_decay(stats.times,
                                stats.means["delta_alpha_sq"],
                                stats.stderrs["delta_alpha_sq"])
    return stats, fit


def cmd_localize(args) -> int:
    run = Runner(args)
    cfg, params = run.cfg, build_params(run.cfg["params"])
    ops = build_operators(params, cfg["fock"]["n_fock"])
    icfg = _integrator(cfg, None)
    if "ensemble" not in cfg or "initial" not in cfg:
        raise ConfigError("localize needs ensemble and initial sections")
    initial = build_initial(cfg["initial"])
    if initial.kind not in ("fock", "cat"):
        raise ConfigError("localize expects a fock or cat initial state")
    bound = 2.0 * params.gamma * (params.nbar + 0.5)
    report: dict = {"rate_bound": bound}

    separations = cfg.get("localize", {}).get("separations")
    if initial.kind == "cat" and separations:
        rates = []
        for d in separations:
            spec = InitialStateSpec(kind="cat", alpha=d / 2.0,
                                    phase=initial.phase)
            _, fit = _localize_rate(cfg, params, ops, icfg, args, spec,
                                    f"d{d:g}", run)
            rates.append({"separation": d, "rate": fit.rate,
                          "ci95": fit.ci95})
            print(f"d={d:g}: rate {fit.rate:.4f} +- {fit.ci95:.4f}")
        report["sweep"] = rates
        for lo, hi in zip(rates, rates[1:]):
            expected = (hi["separation"] / lo["separation"]) ** 2
            ratio = hi["rate"] / lo["rate"]
            run.check(
                f"rate ratio d={hi['separation']:g}/{lo['separation']:g}"
                f" = {ratio:.2f} within 50% of {expected:g}",
                abs(ratio - expected) <= 0.5 * expected)
    else:
        stats, fit = _localize_rate(cfg, params, ops, icfg, args, initial,
                                    "main", run)
        report["rate"] = fit.rate
        report["ci95"] = fit.ci95
        if params.gamma == 0.0:
            series = stats.means["delta_alpha_sq"]
            drift = abs(series[-1] - series[0]) / max(series[0], 1e-12)
            run.check(f"no decay at gamma=0 (relative drift {drift:.3f})",
                      drift < 0.1)
        else:
            run.check(
                f"fitted rate {fit.rate:.4f} +- {fit.ci95:.4f} >= "
                f"bound {bound:.4f} within 95% interval",
                fit.rate + fit.ci95 >= bound)
    with open(run.path("localize_report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    run.gnuplot_stub(run.outputs[0], {"delta_alpha_sq mean": 3},
                     "localization decay")
    return run.finish("localize")


def cmd_thermalize(args) -> int:
    run = Runner(args)
    cfg, params = run.cfg, build_params(run.cfg["params"])
    ops = build_operators(params, cfg["fock"]["n_fock"])
    icfg = _integrator(cfg, None)
    if icfg.t_end < 10.0 / params.gamma:
        raise ConfigError("thermalize needs t_end >= 10/gamma")
    ecfg = _ensemble_config(cfg, icfg, args.seed)
    stats = run_ensemble(ecfg, ops, workers=args.workers)
    write_stats_csv(run.path("thermalize.csv"), stats)
    run.gnuplot_stub("thermalize.csv", {"mean": 3}, "occupation relaxation")

    nbar = params.nbar
    times = stats.times
    n_mean = stats.means["n_mean"]
    n_err = stats.stderrs["n_mean"]
    late = times >= (1.0 - LATE_FRACTION) * times[-1]

    if nbar == 0.0:
        fit = fit_exponential_decay(times, n_mean, n_err)
        ok_rate = abs(fit.rate - params.gamma) <= max(fit.ci95,
                                                      0.25 * params.gamma)
        run.check(f"T=0 decay rate {fit.rate:.4f} ~ gamma "
                  f"{params.gamma:g}", ok_rate)
        run.check(f"final occupation {n_mean[-1]:.2e} < 0.01",
                  n_mean[-1] < 0.01)
        return run.finish("thermalize")

    late_mean = float(n_mean[late].mean())
    late_err = float(np.mean(n_err[late]))
    run.check(
        f"late mean occupation {late_mean:.4f} = nbar {nbar:g} within "
        f"{SIGMA_BAND:g} stderr ({late_err:.4f})",
        abs(late_mean - nbar) <= SIGMA_BAND * late_err)

    # chi-square against the thermal law on decorrelated late snapshots
    stride_t = DECORRELATION_TIME_FACTOR / params.gamma
    step = max(1, int(round(stride_t / (times[1] - times[0]))))
    rows = np.flatnonzero(late)[::step]
    occ = stats.occupation[rows].mean(axis=0)
    m_eff = ecfg.m * rows.size
    max_n = cfg.get("thermalize", {}).get("max_n", 6)
    expected_p = np.array([nbar ** n / (1 + nbar) ** (n + 1)
                           for n in range(max_n + 1)])
    observed = occ[:max_n + 1] * m_eff
    expected = expected_p * m_eff
    if np.any(expected < CHI2_MIN_EXPECTED):
        raise ConfigError("expected counts below "
                          f"{CHI2_MIN_EXPECTED:g}; raise M or lower max_n")
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    from scipy.stats import chi2 as chi2_dist
    p_value = float(chi2_dist.sf(chi2, df=max_n))
    with open(run.path("occupation_histogram.csv"), "w") as fh:
        fh.write("n,observed_fraction,thermal_fraction\n")
        for n in range(max_n + 1):
            fh.write(f"{n},{float(occ[n])!r},{float(expected_p[n])!r}\n")
    run.check(f"occupation chi-square p = {p_value:.3f} > {CHI2_MIN_P}",
              p_value > CHI2_MIN_P)
    return run.finish("thermalize")


def cmd_oracle_compare(args) -> int:
    run = Runner(args)
    cfg, params = run.cfg, build_params(run.cfg["params"])
    ops = build_operators(params, cfg["fock"]["n_fock"])
    if "oracle_compare" not in cfg:
        raise ConfigError("oracle-compare needs an oracle_compare section")
    icfg = _integrator(cfg, None)
    t_end = icfg.t_end
    initial = build_initial(cfg["initial"])
    psi0 = initial.build(ops)
    rho0 = np.outer(psi0, psi0.conj())
    pcfg = LindbladPropagatorConfig(
        dt_oracle=cfg["oracle_compare"]["dt_oracle"], t_end=t_end)
    oracle_rho = propagate(rho0, ops, pcfg, sample_times=[t_end]).rhos[0]

    base_seed = (args.seed if args.seed is not None
                 else cfg["ensemble"].get("base_seed", 0))

    def distance(m, dt):
        ic = IntegratorConfig(dt=dt, t_end=t_end, seed=icfg.seed,
                              record_stride=max(1, int(round(t_end / dt))),
                              renormalize=icfg.renormalize,
                              tail_tol=icfg.tail_tol)
        ecfg = EnsembleConfig(m=m, base_seed=base_seed, integrator=ic,
                              initial=initial, rho_times=(t_end,))
        stats = run_ensemble(ecfg, ops, workers=args.workers)
        return trace_distance(stats.rhos[0], oracle_rho)

    m = cfg["ensemble"]["m"]
    dt = icfg.dt
    d_m = distance(m, dt)
    d_4m = distance(4 * m, dt)
    d_half = distance(4 * m, dt / 2.0)
    rows = [("M", m, dt, d_m), ("4M", 4 * m, dt, d_4m),
            ("4M_dt/2", 4 * m, dt / 2.0, d_half)]
    with open(run.path("oracle_compare.csv"), "w") as fh:
        fh.write("label,m,dt,trace_distance\n")
        for label, mm, dd, dist in rows:
            fh.write(f"{label},{mm},{float(dd)!r},{float(dist)!r}\n")
    ratio = d_m / d_4m
    run.check(f"distance halves when M quadruples: ratio {ratio:.2f} "
              "in [1.4, 2.6]", 1.4 <= ratio <= 2.6)
    run.check(f"distance falls when dt halves: {d_half:.4g} < {d_4m:.4g}",
              d_half < d_4m)
    return run.finish("oracle-compare")


def cmd_histories(args) -> int:
    run = Runner(args)
    cfg, params = run.cfg, build_params(run.cfg["params"])
    ops = build_operators(params, cfg["fock"]["n_fock"])
    sec = cfg.get("histories")
    if sec is None:
        raise ConfigError("histories needs a histories section")
    if "initial" not in cfg:
        raise ConfigError("histories needs an initial section")
    psi0 = build_initial(cfg["initial"]).build(ops)
    rho0 = np.outer(psi0, psi0.conj())
    cells = tuple(PhaseCell(center=_as_complex(c["center"]),
                            w_re=c["w_re"], w_im=c["w_im"], h=sec["h"])
                  for c in sec["cells"])
    spec = HistorySpec(times=tuple(sec["times"]),
                       cells=tuple(cells for _ in sec["times"]),
                       rho0=rho0,
                       include_complement=sec.get("include_complement",
                                                  True))
    pcfg = LindbladPropagatorConfig(dt_oracle=sec["dt_oracle"],
                                    t_end=max(sec["times"]))
    dmat = decoherence_functional(spec, ops, pcfg, workers=args.workers)
    write_decoherence_json(run.path("decoherence.json"), dmat, spec)
    write_suppression_csv(run.path("suppression.csv"), dmat)
    report = classical_peaking_report(dmat, spec, ops)
    with open(run.path("peaking_report.json"), "w") as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")

    ratios, valid = dmat.suppression()
    off = ratios[valid]
    worst = float(off.max()) if off.size else 0.0
    if sec.get("control", False):
        run.check(f"control keeps coherence: max suppression ratio "
                  f"{worst:.3f} > {CONTROL_SUPPRESSION_MIN}",
                  worst > CONTROL_SUPPRESSION_MIN)
    else:
        run.check(f"max off-diagonal suppression ratio {worst:.3f} < "
                  f"{SUPPRESSION_THRESHOLD}",
                  worst < SUPPRESSION_THRESHOLD)
    return run.finish("histories")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qsdsim",
        description="stochastic pure-state simulator for a damped "
                    "harmonic oscillator in a thermal bath")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON config path")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--seed", type=int, default=None,
                        help="override config seeds")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stationary", parents=[common],
                       help="single-trajectory coherent shape preservation")
    p.add_argument("--expect-fail", action="store_true",
                   help="pass iff the shape breaks early and then decays")
    p.set_defaults(func=cmd_stationary)
    sub.add_parser("localize", parents=[common],
                   help="ensemble localization rate vs the analytic bound"
                   ).set_defaults(func=cmd_localize)
    sub.add_parser("thermalize", parents=[common],
                   help="relaxation to the thermal occupation law"
                   ).set_defaults(func=cmd_thermalize)
    sub.add_parser("oracle-compare", parents=[common],
                   help="ensemble density matrix against the deterministic "
                        "propagator").set_defaults(func=cmd_oracle_compare)
    sub.add_parser("histories", parents=[common],
                   help="decoherence functional over phase-space cells"
                   ).set_defaults(func=cmd_histories)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Batch command line front end.

    nvsim <command> --config <path> [--out <dir>] [--threads N] [--stamp]

Every command validates the whole config before computing anything and
writes CSV/JSON files atomically into the output directory. Exit codes:
0 ok, 2 configuration error, 3 numerical error, 4 fit failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import CalibrationInput, invert_field
from .config import ExperimentConfig, load_config
from .errors import ConfigError, FitFailure, NumericalError
from .lindblad import build_model, depolarization_envelope, depolarization_rates
from .photophysics import RateSet, polarization_envelope, polarization_vs_angle
from .sequences import (DriveTone, LambdaModel, cpt_scaling, cpt_spectrum, fit_cpt,
                        polarization_sequence)
from .traces import TimeTrace, write_json, write_table
from .transitions import (ground_eigensystem, resolved_lines, strength_ratio_curve, synth_odmr,
                          transition_table)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_FIT = 0, 2, 3, 4
COMMANDS = ("spectrum", "ratio", "polarization", "depolarization", "cpt", "cpt-sweep",
            "polarize", "calibrate")


class Context:
    def __init__(self, cfg: ExperimentConfig, out: Path, threads: int, stamp: bool):
        self.cfg = cfg
        self.out = out
        self.threads = max(1, threads)
        self.stamp = stamp
        self.written: list[Path] = []

    def meta(self, **items) -> dict:
        if self.stamp:
            items["nvsim_version"] = __version__
        return items

    def table(self, name, columns, **meta):
        self.written.append(write_table(self.out / name, columns, self.meta(**meta)))

    def json(self, name, obj: dict):
        obj = dict(obj)
        if self.stamp:
            obj["nvsim_version"] = __version__
        self.written.append(write_json(self.out / name, obj))

    def map(self, fn, items):
        items = list(items)
        if self.threads == 1 or len(items) < 2:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))


def _field_meta(cfg: ExperimentConfig) -> dict:
    return {"B_gauss": cfg.field.B, "theta_deg": cfg.field.theta_deg}


def _rates_meta(rs: RateSet) -> dict:
    return {"rate_set": rs.name, "k_las_mhz": rs.k_Las}


def _tag(label: str) -> str:
    return label.replace("/", "_")


# -- commands -----------------------------------------------------------------

def cmd_spectrum(ctx: Context):
    c = ctx.cfg.spectrum
    params, field = ctx.cfg.params.build(), ctx.cfg.field.build()
    eig = ground_eigensystem(params, field)
    merge = c.merge_mhz if c.merge_mhz is not None else 0.5 * c.linewidth_mhz
    table, lines = [], []
    for branch in c.branches:
        t = transition_table(eig, branch)
        table.extend(t)
        lines.extend(resolved_lines(t, merge, c.min_intensity, c.axis))
    table.sort(key=lambda r: r.frequency)
    f = [r.frequency for r in table]
    grid = np.linspace(min(f) - c.margin_mhz, max(f) + c.margin_mhz, c.points)
    trace = synth_odmr(table, c.linewidth_mhz, c.contrast, c.axis, grid)
    trace.metadata = ctx.meta(**_field_meta(ctx.cfg), **trace.metadata)
    trace.to_csv(ctx.out / "spectrum.csv")
    ctx.written.append(ctx.out / "spectrum.csv")
    ctx.json("lines.json", {"field": _field_meta(ctx.cfg), "branches": list(c.branches),
                            "drive_axis": c.axis, "merge_mhz": merge,
                            "min_intensity": c.min_intensity,
                            "transitions": [r.to_dict() for r in table], "lines": lines})


def cmd_ratio(ctx: Context):
    c = ctx.cfg.ratio
    params = ctx.cfg.params.build()
    grid = np.linspace(math.radians(c.theta_min_deg), math.radians(c.theta_max_deg), c.points)
    jobs = [(B, axis) for B in c.B_values for axis in c.axes]
    curves = ctx.map(lambda j: strength_ratio_curve(params, j[0], c.numerator, c.denominator,
                                                    grid, j[1]), jobs)
    for (B, axis), rows in zip(jobs, curves):
        ctx.table(f"ratio_B{B:g}_{axis}.csv", {"theta_rad": rows[:, 0], "ratio": rows[:, 1]},
                  B_gauss=B, drive_axis=axis, numerator=c.numerator, denominator=c.denominator)


def cmd_polarization(ctx: Context):
    c = ctx.cfg.polarization
    params = ctx.cfg.params.build()
    grid = np.linspace(0.0, math.pi / 2, c.theta_points)
    jobs = [(B, s) for B in c.B_values for s in c.sets]

    def run(job):
        B, s = job
        rs = ctx.cfg.rates.model_copy(update={"set": s}).build()
        if c.envelope:
            return rs, polarization_envelope(params, rs, B, grid, c.level, c.normalize)
        return rs, polarization_vs_angle(params, rs, B, grid, c.level, c.normalize)

    for (B, s), (rs, rows) in zip(jobs, ctx.map(run, jobs)):
        cols = {"theta_rad": rows[:, 0], "population": rows[:, 1]}
        if c.envelope:
            cols.update(lo=rows[:, 2], hi=rows[:, 3])
        ctx.table(f"polarization_B{B:g}_{s}.csv", cols, B_gauss=B, level=c.level,
                  normalize=c.normalize, **_rates_meta(rs))


def cmd_depolarization(ctx: Context):
    c = ctx.cfg.depolarization
    params, field, rs = ctx.cfg.params.build(), ctx.cfg.field.build(), ctx.cfg.rates.build()
    model = build_model(params, field, rs)
    res = depolarization_rates(model, horizon=c.horizon_us, n_samples=c.n_samples, discard=c.discard)
    out = {"field": _field_meta(ctx.cfg), "rates": _rates_meta(rs), **res.to_dict()}
    for key, name in (("0,+0", "p_signal_0.csv"), ("0,+1", "p_signal_plus1.csv")):
        t, sig = res.traces[key]
        tr = TimeTrace(t, sig, ctx.meta(**_field_meta(ctx.cfg), init=key), observable="p_signal")
        tr.to_csv(ctx.out / name)
        ctx.written.append(ctx.out / name)
    if c.envelope_gamma_las:
        alt = ctx.cfg.rates.model_copy(update={"set": "set2" if rs.name == "set1" else "set1"}).build()
        env = depolarization_envelope(params, field, rs, c.envelope_gamma_las,
                                      a_perp_es=tuple(c.a_perp_es_range), alternative=alt,
                                      corners=c.envelope_corners, n_samples=c.n_samples,
                                      discard=c.discard, horizon=c.horizon_us)
        central = env.pop("central")
        ctx.table("depolarization_sweep.csv", {"gamma_las_mhz": central[:, 0],
                                               "gamma_0": central[:, 1],
                                               "gamma_plus1": central[:, 2]})
        for region, rows in env.items():
            for label, lo, hi in (("gamma0", 1, 2), ("gamma_plus1", 3, 4)):
                ctx.table(f"envelope_{region}_{label}.csv",
                          {"gamma_las_mhz": rows[:, 0], "lo": rows[:, lo], "hi": rows[:, hi]},
                          region=region, rate=label)
    ctx.json("depolarization.json", out)


def _lambda_model(ctx: Context) -> LambdaModel:
    c = ctx.cfg.cpt
    return LambdaModel.from_fractions(c.omega_a_mhz, c.omega_1_mhz, c.gamma_las, c.e2g1_fraction,
                                      c.g2g1_fraction, c.dephasing_ge)


def _cpt_grid(ctx: Context) -> np.ndarray:
    c = ctx.cfg.cpt
    return np.linspace(-c.half_span_mhz, c.half_span_mhz, c.points)


def cmd_cpt(ctx: Context):
    model, grid = _lambda_model(ctx), _cpt_grid(ctx)
    trace = cpt_spectrum(model, grid, ctx.cfg.cpt.odmr_depth)
    trace.metadata = ctx.meta(**trace.metadata)
    trace.to_csv(ctx.out / "cpt_spectrum.csv")
    ctx.written.append(ctx.out / "cpt_spectrum.csv")
    fit = fit_cpt(model, grid)
    ctx.json("cpt_fit.json", {**fit.to_dict(), "fwhm_khz": 1e3 * fit["fwhm"]})


def cmd_cpt_sweep(ctx: Context):
    c = ctx.cfg.cpt_sweep
    model, grid = _lambda_model(ctx), _cpt_grid(ctx)
    rows = ctx.map(lambda x: cpt_scaling(model, c.sweep, [x], grid, c.rates_follow_gamma)[0], c.values)
    ctx.table("cpt_sweep.csv", {f"{c.sweep}_mhz": [r["x"] for r in rows],
                                "fwhm_mhz": [r["fwhm"] for r in rows],
                                "contrast": [r["contrast"] for r in rows],
                                "fit_ok": [float(r["ok"]) for r in rows]}, sweep=c.sweep)


def cmd_polarize(ctx: Context):
    c = ctx.cfg.polarize
    params, field, rs = ctx.cfg.params.build(), ctx.cfg.field.build(), ctx.cfg.rates.build()
    model = build_model(params, field, rs)

    def run(pump):
        tone = DriveTone("a-", 0.0) if pump == "none" else DriveTone(pump, c.rabi_mhz)
        stark = c.stark if c.stark == "auto" else c.stark == "on"
        return polarization_sequence(model, tone, tuple(c.durations_us), c.read_linewidth_mhz,
                                     stark=stark)

    results = ctx.map(run, c.pumps)
    out = {"field": _field_meta(ctx.cfg), "rates": _rates_meta(rs), "rabi_mhz": c.rabi_mhz,
           "pumps": {}}
    for pump, res in zip(c.pumps, results):
        out["pumps"][pump] = res.to_dict()
        res.readout.metadata = ctx.meta(**res.readout.metadata)
        if pump == "none":
            res.readout.metadata["pump"] = "none"
        name = f"readout_{_tag(pump)}.csv"
        res.readout.to_csv(ctx.out / name)
        ctx.written.append(ctx.out / name)
    ctx.json("polarize.json", out)


def cmd_calibrate(ctx: Context, args):
    c = ctx.cfg.calibrate
    ep = args.e_plus if args.e_plus is not None else c.E_plus
    em = args.e_minus if args.e_minus is not None else c.E_minus
    sp = args.sigma_plus if args.sigma_plus is not None else c.sigma_plus
    sm = args.sigma_minus if args.sigma_minus is not None else c.sigma_minus
    if ep is None or em is None:
        raise ConfigError("calibrate needs E_plus and E_minus (config or --e-plus/--e-minus)")
    try:
        inp = CalibrationInput(ep, em, sp, sm)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    res = invert_field(ctx.cfg.params.build(), inp)
    ctx.json("calibration.json", {"input": {"E_plus_mhz": ep, "E_minus_mhz": em,
                                            "sigma_plus_mhz": sp, "sigma_minus_mhz": sm},
                                  **res.to_dict()})


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nvsim", description="NV electron-nuclear spin simulator")
    p.add_argument("--version", action="version", version=f"nvsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="TOML experiment config")
        s.add_argument("--out", default=None, help="output directory (overrides [output].dir)")
        s.add_argument("--threads", type=int, default=None, help="worker threads for sweeps")
        s.add_argument("--stamp", action="store_true", help="record the package version in outputs")
        if name == "calibrate":
            s.add_argument("--e-plus", type=float, default=None, help="upper line (MHz)")
            s.add_argument("--e-minus", type=float, default=None, help="lower line (MHz)")
            s.add_argument("--sigma-plus", type=float, default=None)
            s.add_argument("--sigma-minus", type=float, default=None)
    return p


def _threads(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("NVSIM_THREADS")
    if env is None:
        return 1
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"NVSIM_THREADS must be an integer, got {env!r}") from exc


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        threads = _threads(args.threads)
        if threads < 1:
            raise ConfigError("thread count must be >= 1")
        ctx = Context(cfg, Path(args.out or cfg.output.dir), threads, args.stamp)
        if args.command == "calibrate":
            cmd_calibrate(ctx, args)
        else:
            globals()["cmd_" + args.command.replace("-", "_")](ctx)
    except ConfigError as exc:
        print(f"nvsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitFailure as exc:
        print(f"nvsim: fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except NumericalError as exc:
        print(f"nvsim: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in ctx.written:
        print(path)
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

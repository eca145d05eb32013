"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from . import constants as const
from .clocksim import ServoInstabilityError, projection_noise_coefficient, run_comparison
from .config import ConfigError, RunConfig
from .cooling import (NoCoolingError, RepumpFitError, cooling_stark_shift, doppler_nbar,
                      fit_repump, scattering_nbar)
from .crystal import AXES, FitError, InvalidConfigError, UnstableTrapError
from .freqstats import (NonWhiteError, adev_with_diagnostic, fit_asymptote, log_taus,
                        measurements_from_series, nsample_std, overlapping_adev,
                        synthetic_campaign, weighted_mean_chi2)
from .io import (DataError, csv_text, read_measurements_csv, read_repump_csv, read_series_csv,
                 write_csv, write_manifest)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("ionclock")


def _emit(text, out):
    if out is None or str(out) == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(out).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _trace(cfg: RunConfig):
    return f"config {cfg.source} hash {cfg.hash}, constants {const.CONSTANTS_VERSION}, " \
           f"ionclock {__version__}"


# modes

def _mode_rows(spectrum, occ):
    header = ("axis", "freq_hz", "zpa_logic_m", "zpa_clock_m", "td_per_quantum")
    if occ is not None:
        header += ("nbar", "td_total")
    yield header
    for i, m in enumerate(spectrum.modes):
        row = (m.axis, m.frequency, m.zpa[0], m.zpa[1], m.td_per_quantum)
        if occ is not None:
            row += (occ.nbar[i], m.td_per_quantum * (occ.nbar[i] + 0.5))
        yield row


def modes_text(cfg: RunConfig):
    trap, spec, fit = cfgmod.mode_spectrum(cfg)
    occ = cfgmod.occupation(cfg, len(spec.modes))
    logic, clock = spec.species
    lines = [f"Normal modes of {logic.name} - {clock.name}", ""]
    head = f"{'axis':<4} {'freq (MHz)':>10} {'zpa ' + logic.name + ' (nm)':>16} " \
           f"{'zpa ' + clock.name + ' (nm)':>16} {'TD/quantum (1e-18)':>19}"
    if occ is not None:
        head += f" {'nbar':>6} {'TD total (1e-18)':>17}"
    lines.append(head)
    total = 0.0
    for i, m in enumerate(spec.modes):
        line = f"{m.axis:<4} {m.frequency / 1e6:>10.3f} {m.zpa[0] * 1e9:>16.2f} " \
               f"{m.zpa[1] * 1e9:>16.2f} {m.td_per_quantum / 1e-18:>19.3f}"
        if occ is not None:
            td = m.td_per_quantum * (occ.nbar[i] + 0.5)
            total += td
            line += f" {occ.nbar[i]:>6.1f} {td / 1e-18:>17.3f}"
        lines.append(line)
    if occ is not None:
        lines.append(f"total secular time dilation: {-total / 1e-18:.1f}e-18")
    lines.append("")
    lines.append(f"axial frequency ({logic.name}, single ion): {trap.axial_freq(logic) / 1e6:.4f} MHz")
    lines.append(f"pseudopotential frequency ({clock.name}): {trap.pseudo_freq(clock) / 1e6:.4f} MHz")
    lines.append(f"radial asymmetry: {trap.radial_asymmetry:.6e} Hz^2")
    z_hi, z_lo = spec.axis_modes("z")
    lines.append(f"axial mode ratio: {z_hi.frequency / z_lo.frequency:.6f}")
    if fit is not None:
        lines.append(f"trap fit max relative residual: {fit.max_residual:.2e}")
    lines.append(_trace(cfg))
    return "\n".join(lines), csv_text(_mode_rows(spec, occ))


def cmd_modes(args):
    cfg = RunConfig.load(args.config)
    text, table = modes_text(cfg)
    _emit(table if args.format == "csv" else text, args.out)
    return EXIT_OK


# budget

def budget_text(cfg: RunConfig, b=None):
    b = b or cfgmod.budget(cfg)
    lines = [b.render_text(), "", "Provenance"]
    for e in b.entries:
        parts = ", ".join(f"{k}={_fmt(v)}" for k, v in e.inputs.items())
        lines.append(f"  {e.name}: {parts or 'no inputs'}")
    lines.append(_trace(cfg))
    return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, tuple):
        return "(" + ", ".join(_fmt(x) for x in v) + ")"
    return str(v)


def cmd_budget(args):
    cfg = RunConfig.load(args.config)
    b = cfgmod.budget(cfg)
    _emit(csv_text(b.csv_rows()) if args.format == "csv" else budget_text(cfg, b), args.out)
    return EXIT_OK


# cooling

def cmd_cool(args):
    cfg = RunConfig.load(args.config)
    _, spec, _ = cfgmod.mode_spectrum(cfg)
    beam = cfgmod.cooling_beam(cfg)
    measured = cfgmod.occupation(cfg, len(spec.modes))
    rows = [("axis", "freq_hz", "projection", "nbar_calculated", "nbar_measured",
             "nbar_scattering")]
    rng = np.random.default_rng(args.seed)
    for i, m in enumerate(spec.modes):
        n_calc = doppler_nbar(m, beam, spec.species[0])
        n_meas = measured.nbar[i] if measured is not None else math.nan
        n_mc = math.nan
        if args.trajectories:
            n_mc = scattering_nbar(m.frequency, beam, beam.projection(m.axis), spec.species[0].mass,
                                   n_traj=args.trajectories, n_steps=args.steps, rng=rng)
        rows.append((m.axis, m.frequency, beam.projection(m.axis), n_calc, n_meas, n_mc))
    s, s_unc = cfgmod.saturation(cfg)
    extra = []
    if args.repump:
        t, counts = read_repump_csv(args.repump)
        fit = fit_repump(t, counts)
        s, s_unc = fit.saturation_, fit.saturation_err_
        extra.append(f"repump fit: tau = {fit.tau_ * 1e3:.4f} +/- {fit.tau_err_ * 1e3:.4f} ms, "
                     f"S = {s:.4f} +/- {s_unc:.4f}")
    stark = cooling_stark_shift(s, s_unc)
    if args.format == "csv":
        _emit(csv_text(rows), args.out)
        return EXIT_OK
    lines = [f"Doppler cooling at {beam.detuning / 1e6:.1f} MHz detuning, S = {s:.4f}, "
             f"direction {tuple(round(c, 4) for c in beam.direction)}", "",
             f"{'axis':<4} {'freq (MHz)':>10} {'proj':>6} {'nbar calc':>10} {'nbar meas':>10} "
             f"{'nbar MC':>8}"]
    for axis, f, c, nc, nm, nmc in rows[1:]:
        lines.append(f"{axis:<4} {f / 1e6:>10.3f} {c:>6.3f} {nc:>10.2f} {nm:>10.2f} {nmc:>8.2f}")
    lines += [""] + extra
    v, u = stark.rendered()
    lines.append(f"cooling laser Stark shift: {v} +/- {u} (1e-18)")
    lines.append(_trace(cfg))
    _emit("\n".join(lines), args.out)
    return EXIT_OK


# simulate / compare

def _summary(run, cfg: RunConfig):
    series = run.series
    st = cfg.section("stats")
    taus = log_taus(series, st["taus_per_octave"])
    window = cfgmod.fit_window(cfg, series)
    curve = overlapping_adev(series, taus)
    out = {"mean": series.mean(), "expected_difference": run.truth["expected_difference"],
           "duration_s": series.duration, "cycles": len(series),
           "wrong_order_fraction": run.truth["wrong_order_fraction"]}
    try:
        fit = fit_asymptote(curve, window)
    except ValueError as exc:
        log.warning("no ADEV asymptote fit: %s", exc)
        out.update(coefficient=math.nan, exponent=math.nan, white=False, sigma=math.nan)
        return out
    out.update(coefficient=fit.coefficient, coefficient_err=fit.coefficient_err,
               exponent=fit.exponent, white=fit.white,
               sigma=fit.coefficient / math.sqrt(series.duration), fit_window_s=list(window))
    return out


def _execute(cfg: RunConfig, seed, duration, compare):
    a = cfgmod.clock_config(cfg, "clock_a")
    b = cfgmod.clock_config(cfg, "clock_b") if compare else None
    noise = cfgmod.noise_model(cfg)
    run_cfg = cfg.section("run")
    try:
        run = run_comparison(a, b, noise, duration, seed, cfg.section("noise")["laser_offset"],
                             n_sub=run_cfg["fine_steps_per_cycle"])
    except ValueError as exc:
        raise ConfigError(f"[run] {exc}") from exc
    summary = _summary(run, cfg)
    clocks = [a] + ([b] if b is not None else [])
    summary["projection_coefficient"] = projection_noise_coefficient(clocks, noise.detection)
    return run, summary


def _replica_job(job):
    cfg, seed, duration, compare, out = job
    run, summary = _execute(cfg, seed, duration, compare)
    _write_run(cfg, run, summary, seed, duration, out, "compare" if compare else "simulate")
    return summary


def _write_run(cfg, run, summary, seed, duration, out, command):
    out = Path(out)
    write_csv(run.csv_rows(), out)
    manifest = {"command": command, "seed": seed, "duration_s": duration,
                "version": __version__, "config_source": cfg.source, "config_hash": cfg.hash,
                "constants_version": const.CONSTANTS_VERSION, "constants": const.as_dict(),
                "config": cfg.resolved(), "outputs": [out.name],
                "summary": {k: v for k, v in summary.items()}}
    write_manifest(out.with_suffix(".manifest.json"), manifest)


def _summary_text(summary, label=""):
    head = f"{label}: " if label else ""
    lines = [f"{head}mean difference {summary['mean']:.4e} "
             f"(expected {summary['expected_difference']:.4e}) over {summary['duration_s']:.0f} s"]
    if math.isfinite(summary.get("coefficient", math.nan)):
        lines.append(f"{head}ADEV coefficient {summary['coefficient']:.3e} tau^-1/2 "
                     f"(slope {summary['exponent']:.3f}, white {summary['white']}), "
                     f"sigma {summary['sigma']:.3e}")
    lines.append(f"{head}projection-noise coefficient {summary['projection_coefficient']:.3e}")
    if summary["wrong_order_fraction"]:
        lines.append(f"{head}wrong-order fraction {summary['wrong_order_fraction']:.4f}")
    return "\n".join(lines)


def _run_command(args, compare):
    cfg = RunConfig.load(args.config)
    run_cfg = cfg.section("run")
    seed = run_cfg["seed"] if args.seed is None else args.seed
    duration = run_cfg["duration_s"] if args.duration is None else args.duration
    name = "compare" if compare else "simulate"
    out = Path(args.out or f"{name}_seed{seed}.csv")
    if compare and args.replicas and args.replicas > 1:
        jobs = [(cfg, seed + i, duration, True, out.with_name(f"{out.stem}_r{i}{out.suffix}"))
                for i in range(args.replicas)]
        with ProcessPoolExecutor() as pool:
            summaries = list(pool.map(_replica_job, jobs))
        for (_, s, _, _, path), summ in zip(jobs, summaries):
            print(_summary_text(summ, f"seed {s} -> {path}"))
        coeffs = [s["coefficient"] for s in summaries if math.isfinite(s["coefficient"])]
        if coeffs:
            print(f"mean ADEV coefficient over {len(coeffs)} replicas: {np.mean(coeffs):.3e}")
        return EXIT_OK
    run, summary = _execute(cfg, seed, duration, compare)
    _write_run(cfg, run, summary, seed, duration, out, name)
    print(_summary_text(summary))
    print(f"wrote {out} and {out.with_suffix('.manifest.json')}")
    return EXIT_OK


def cmd_simulate(args):
    return _run_command(args, compare=False)


def cmd_compare(args):
    return _run_command(args, compare=True)


# statistics

def cmd_adev(args):
    series = read_series_csv(args.data)
    taus = log_taus(series, args.per_octave)
    window = (args.window_min if args.window_min is not None else 10 * series.dt,
              series.duration * args.window_fraction)
    rows = []
    curve, fit = adev_with_diagnostic(series, taus, window)
    curves = [curve]
    if args.estimator in ("nsample_std", "both"):
        curves.append(nsample_std(series, taus))
    if args.estimator == "nsample_std":
        curves = curves[1:]
    for i, c in enumerate(curves):
        body = list(c.csv_rows())
        rows += body if i == 0 else body[1:]
    if args.format == "csv":
        _emit(csv_text(rows), args.out)
        return EXIT_OK
    lines = [f"{len(series)} samples at {series.dt:g} s, mean {series.mean():.4e}"]
    for c in curves:
        lines.append(f"{c.estimator}:")
        lines += [f"  tau {t:>10.4g} s  {d:.4e}  [{lo:.4e}, {hi:.4e}]"
                  for t, d, lo, hi in zip(c.taus, c.adev, c.ci_low, c.ci_high)]
    if fit is not None:
        lines.append(f"asymptote {fit.coefficient:.4e} tau^-1/2 +/- {fit.coefficient_err:.2e}, "
                     f"free slope {fit.exponent:.3f} +/- {fit.exponent_err:.3f}, white {fit.white}")
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def _load_campaign_file(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
    if "sigma" in header.split(","):
        return read_measurements_csv(path), []
    return [], [read_series_csv(path)]


def cmd_campaign(args):
    ms, records, labels = [], [], []
    if args.synthetic:
        rng = np.random.default_rng(0 if args.seed is None else args.seed)
        records = synthetic_campaign(rng, args.synthetic, args.coefficient, args.truth)
        labels = [f"synthetic {i}" for i in range(len(records))]
    for p in args.data:
        m, r = _load_campaign_file(p)
        ms += m
        records += r
        labels += [p] * len(r)
    rejected = []
    if records:
        rec_ms, rej = measurements_from_series(records)
        ms += rec_ms
        rejected = [labels[i] for i in rej]
        for lab in rejected:
            log.warning("%s: not white-FM limited, left out", lab)
    if len(ms) < 2:
        raise DataError("campaign needs at least two usable measurements")
    res = weighted_mean_chi2(ms)
    if args.format == "csv":
        _emit(csv_text([("mean", "sigma_mean", "chi2_reduced", "n", "rejected"),
                        (res.mean, res.sigma_mean, res.chi2_reduced, res.n, len(rejected))]),
              args.out)
        return EXIT_OK
    _emit(f"weighted mean {res.mean:.4e} +/- {res.sigma_mean:.2e}\n"
          f"reduced chi^2 {res.chi2_reduced:.3f} over {res.n} measurements"
          + (f" ({len(rejected)} rejected)" if rejected else ""), args.out)
    return EXIT_OK


def cmd_report(args):
    cfg = RunConfig.load(args.config)
    if args.format == "csv":
        _emit(csv_text(cfgmod.budget(cfg).csv_rows()), args.out)
        return EXIT_OK
    parts = [f"ionclock report, {_trace(cfg)}", "", budget_text(cfg)]
    if cfg.has("species.logic") and cfg.has("species.clock"):
        parts += ["", modes_text(cfg)[0]]
    _emit("\n".join(parts), args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ionclock", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ionclock {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log config defaults and progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, fmt=True):
        if config:
            sp.add_argument("--config", required=True,
                            help="TOML file or shipped config name (paper_tableI, ...)")
        if fmt:
            sp.add_argument("--format", choices=("text", "csv"), default="text")
        sp.add_argument("--out", help="output file (default stdout)")
        return sp

    common(sub.add_parser("modes", help="normal modes and time dilation per quantum")) \
        .set_defaults(func=cmd_modes)
    common(sub.add_parser("budget", help="systematic shift budget")).set_defaults(func=cmd_budget)
    sp = common(sub.add_parser("cool", help="Doppler-cooling occupations and repump calibration"))
    sp.add_argument("--repump", help="CSV with t_seconds,counts to fit the repump time constant")
    sp.add_argument("--trajectories", type=int, default=0,
                    help="also run the scattering Monte Carlo with this many trajectories")
    sp.add_argument("--steps", type=int, default=20000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_cool)
    for name, func in (("simulate", cmd_simulate), ("compare", cmd_compare)):
        sp = common(sub.add_parser(name, help=f"{name} clock servo operation"), fmt=False)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--duration", type=float, help="seconds")
        if name == "compare":
            sp.add_argument("--replicas", type=int, default=1,
                            help="independent runs with seeds seed, seed+1, ...")
        sp.set_defaults(func=func)
        if name == "simulate":
            sp.set_defaults(replicas=None)
    sp = common(sub.add_parser("adev", help="stability curves of one frequency record"),
                config=False)
    sp.add_argument("data")
    sp.add_argument("--estimator", choices=("overlapping_adev", "nsample_std", "both"),
                    default="overlapping_adev")
    sp.add_argument("--per-octave", type=int, default=1)
    sp.add_argument("--window-min", type=float, help="asymptote fit window start (s)")
    sp.add_argument("--window-fraction", type=float, default=0.1,
                    help="fit window end as a fraction of the record length")
    sp.set_defaults(func=cmd_adev)
    sp = common(sub.add_parser("campaign", help="weighted mean over measurements"), config=False)
    sp.add_argument("data", nargs="*", help="series or measurement CSVs")
    sp.add_argument("--synthetic", type=int, default=0,
                    help="add this many synthetic white-FM records")
    sp.add_argument("--coefficient", type=float, default=2.8e-15)
    sp.add_argument("--truth", type=float, default=-1.8e-17)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_campaign)
    common(sub.add_parser("report", help="budget and mode tables with provenance")) \
        .set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, UnstableTrapError, RepumpFitError, ServoInstabilityError, NoCoolingError,
            NonWhiteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

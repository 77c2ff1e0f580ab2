"""Command-line entry point: ``rabimag <subcommand> [options]``.

Every subcommand writes CSV files plus a ``<name>_summary.txt`` of
``key = value`` lines into the output directory. Outputs depend only on the
resolved configuration and seed, never on wall time or worker count.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 runtime or fit
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
import warnings
from typing import Optional

import numpy as np

from . import __version__
from .comms import (ModulationKind, bpsk_calibration, demod_am, demod_bpsk, synthesize_omega)
from .config import RunConfig, config_hash, dump_config, load_config
from .ensemble import Ensemble, characterize_vs_omega, default_tau_grid, ensemble_rabi_trace
from .errors import ConfigError, DomainError, RabimagError
from .fitting import fit_rabi_decay
from .noise import apply_noise, calibrate_residual
from .optimize import fom_sweep, slope_scan
from .protocol import Protocol
from .sequence import TimeSeries, hyperfine_suppression_metric, render_time_series
from .spectral import invert_photon_budget, measure_sensitivity, shot_noise_limit
from .spin import drive_for_rabi

TWO_PI = 2.0 * math.pi
EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class CliError(RabimagError):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def fmt(x) -> str:
    """Shortest round-trip text for a number; identical bits give identical text."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


class Outputs:
    """Writes CSVs and the key-value summary for one subcommand invocation."""

    def __init__(self, cfg: RunConfig, command: str):
        self.cfg = cfg
        self.command = command
        self.hash = config_hash(cfg)
        self.dir = cfg.output_dir
        try:
            os.makedirs(self.dir, exist_ok=True)
        except OSError as exc:
            raise CliError(f"run.output_dir: cannot create {self.dir!r}: {exc}") from None
        if not os.access(self.dir, os.W_OK):
            raise CliError(f"run.output_dir: {self.dir!r} is not writable")
        self.files = []

    def path(self, name: str) -> str:
        return os.path.join(self.dir, name)

    def csv(self, name: str, columns, rows, meta: Optional[dict] = None):
        lines = [f"# rabimag {__version__} {self.command}", f"# config_hash = {self.hash}"]
        for k, v in (meta or {}).items():
            lines.append(f"# {k} = {fmt(v)}")
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(fmt(v) for v in row))
        self._write(name, "\n".join(lines) + "\n")

    def summary(self, values: dict):
        lines = [f"command = {self.command}", f"config_hash = {self.hash}"]
        lines += [f"{k} = {fmt(v)}" for k, v in values.items()]
        text = "\n".join(lines) + "\n"
        self._write(f"{self.command}_summary.txt", text)
        sys.stdout.write(text)

    def _write(self, name: str, text: str):
        with open(self.path(name), "w", newline="\n") as fh:
            fh.write(text)
        self.files.append(name)


def read_csv(path: str):
    """Return ``(meta, columns, data)`` from a file written by :class:`Outputs`."""
    meta, columns, rows = {}, None, []
    try:
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if "=" in line:
                        k, v = line[1:].split("=", 1)
                        meta[k.strip()] = v.strip()
                elif columns is None:
                    columns = [c.strip() for c in line.split(",")]
                else:
                    rows.append([float(v) for v in line.split(",")])
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {path!r}: {exc}") from None
    if columns is None:
        raise CliError(f"{path!r} has no header row")
    return meta, columns, np.array(rows, dtype=float).reshape(-1, len(columns))


def _column(columns, data, name, path):
    if name not in columns:
        raise CliError(f"{path!r} lacks column {name!r}")
    return data[:, columns.index(name)]


def _ensemble(cfg: RunConfig) -> Ensemble:
    return Ensemble(cfg.ensemble, cfg.n_samples, cfg.seed, workers=cfg.workers)


def _slope_grid(cfg: RunConfig, center: float) -> np.ndarray:
    sw = cfg.sweep
    lo, hi = center * (1.0 - sw.slope_window), center * (1.0 + sw.slope_window)
    n = int(math.floor((hi - lo) / sw.slope_step)) + 1
    return lo + sw.slope_step * np.arange(n)


def _operating_point(cfg: RunConfig, ens: Ensemble, seq=None):
    seq = seq or cfg.sequence
    return slope_scan(ens, seq, cfg.hyperfine, _slope_grid(cfg, cfg.sweep.slope_center))


def _fit_at(cfg: RunConfig, omega: float):
    row = characterize_vs_omega(cfg.ensemble, [omega], hf=None, n_samples=cfg.n_samples, seed=cfg.seed,
                                pi_fidelity=cfg.sequence.pi_fidelity, tau_max=cfg.sweep.tau_max,
                                workers=cfg.workers)[0]
    return row


def _noisy_record(cfg: RunConfig, ens: Ensemble, omega_of_t, duration: float) -> TimeSeries:
    clean = render_time_series(omega_of_t, cfg.ensemble, cfg.sequence, cfg.hyperfine, duration,
                               ensemble=ens)
    return apply_noise(clean, cfg.ensemble, cfg.sequence, cfg.noise)


def _write_series(out: Outputs, name: str, series: TimeSeries, extra_meta=None):
    meta = {"sample_rate_hz": series.sample_rate}
    meta.update(extra_meta or {})
    out.csv(name, ["time_s", "signal"], zip(series.times, series.samples), meta)


def cmd_rabi_trace(cfg: RunConfig, args) -> int:
    omega = TWO_PI * args.omega
    tau_max = cfg.sweep.tau_max if args.tau_max is None else args.tau_max
    if not tau_max > 0:
        raise CliError(f"--tau-max must be > 0, got {tau_max!r}")
    if not omega > 0:
        raise CliError(f"--omega must be > 0, got {args.omega!r}")
    protocols = {"on-off": [Protocol.ON_OFF], "pi": [Protocol.PI_PULSE],
                 "both": [Protocol.ON_OFF, Protocol.PI_PULSE]}[args.protocol]
    grid = default_tau_grid(omega, tau_max, min_points=cfg.sweep.tau_points)
    out = Outputs(cfg, "rabi_trace")
    traces, values, failed = {}, {"omega_hz": args.omega, "tau_max_s": tau_max}, False
    for proto in protocols:
        trace = ensemble_rabi_trace(cfg.ensemble, omega, grid, cfg.hyperfine, cfg.n_samples, cfg.seed,
                                    proto, cfg.sequence.pi_fidelity, workers=cfg.workers)
        traces[proto] = trace
        tag = proto.value.lower()
        out.csv(f"rabi_trace_{tag}.csv", ["tau_us", "signal"], zip(grid * 1e6, trace.signal),
                {"protocol": proto.value, "omega_hz": args.omega})
        fit = fit_rabi_decay(trace)
        failed |= not fit.ok
        values.update({f"{tag}_fit_ok": fit.ok, f"{tag}_trace_contrast": fit.contrast,
                       f"{tag}_t2_rho_us": fit.t2_rho * 1e6, f"{tag}_stretch": fit.stretch,
                       f"{tag}_omega_fit_hz": fit.omega_fit / TWO_PI, f"{tag}_residual_rms": fit.residual_rms})
        if not fit.ok:
            values[f"{tag}_fit_message"] = fit.message
    if len(traces) == 2:
        values["suppression_metric"] = hyperfine_suppression_metric(
            traces[Protocol.ON_OFF], traces[Protocol.PI_PULSE], cfg.hyperfine.beat_frequency)
    out.summary(values)
    return EXIT_RUNTIME if failed else EXIT_OK


def _omega_grid(cfg: RunConfig) -> np.ndarray:
    sw = cfg.sweep
    if sw.omega_points == 1 or sw.omega_min == sw.omega_max:
        return np.array([sw.omega_min])
    return np.geomspace(sw.omega_min, sw.omega_max, sw.omega_points)


def _characterize(cfg: RunConfig, omegas):
    return characterize_vs_omega(cfg.ensemble, omegas, hf=None, n_samples=cfg.n_samples, seed=cfg.seed,
                                 pi_fidelity=cfg.sequence.pi_fidelity, tau_max=cfg.sweep.tau_max,
                                 workers=cfg.workers)


def _table_rows(rows):
    return [(r.omega / TWO_PI, r.contrast, r.t2_rho * 1e6, r.stretch, r.fit.omega_fit / TWO_PI,
             r.fit.residual_rms) for r in rows]


TABLE_COLUMNS = ["omega_hz", "contrast", "t2_rho_us", "stretch", "omega_fit_hz", "residual_rms"]


def cmd_characterize(cfg: RunConfig, args) -> int:
    out = Outputs(cfg, "characterize")
    rows = _characterize(cfg, _omega_grid(cfg))
    out.csv("characterize.csv", TABLE_COLUMNS, _table_rows(rows))
    out.summary({"points": len(rows)})
    return EXIT_OK


def load_table(path: str):
    """Rows ``(omega rad/s, C, T2rho s, p)`` from a CSV with omega_hz, contrast, t2_rho_us[, stretch]."""
    _, columns, data = read_csv(path)
    omega = _column(columns, data, "omega_hz", path) * TWO_PI
    contrast = _column(columns, data, "contrast", path)
    t2 = _column(columns, data, "t2_rho_us", path) * 1e-6
    stretch = _column(columns, data, "stretch", path) if "stretch" in columns else np.ones_like(omega)
    if data.shape[0] == 0:
        raise CliError(f"{path!r} has no rows")
    if np.any(omega <= 0) or np.any(t2 <= 0) or np.any(contrast < 0) or np.any(stretch <= 0):
        raise CliError(f"{path!r}: omega_hz, t2_rho_us, stretch must be > 0 and contrast >= 0")
    return list(zip(omega.tolist(), contrast.tolist(), t2.tolist(), stretch.tolist()))


def cmd_optimize(cfg: RunConfig, args) -> int:
    out = Outputs(cfg, "optimize")
    if args.table:
        table = load_table(args.table)
    else:
        rows = _characterize(cfg, _omega_grid(cfg))
        out.csv("characterize.csv", TABLE_COLUMNS, _table_rows(rows))
        table = rows
    seq = cfg.sequence
    sw = cfg.sweep
    sweep = fom_sweep(table, seq.overhead, (sw.tau_search_min, sw.tau_search_max), sw.tau_resolution)
    out.csv("fom_sweep.csv", ["omega_hz", "tau_opt_us", "fom_sqrt_s", "at_boundary"],
            [(p.omega / TWO_PI, p.tau_opt * 1e6, p.fom_value, p.at_boundary) for p in sweep.points])
    best = sweep.best
    values = {"omega_fom_hz": best.omega / TWO_PI, "tau_opt_us": best.tau_opt * 1e6,
              "fom_sqrt_s": best.fom_value, "at_boundary": best.at_boundary}
    if not args.no_slope_scan:
        seq_opt = dataclasses.replace(seq, mw_duration=best.tau_opt)
        scan = slope_scan(_ensemble(cfg), seq_opt, cfg.hyperfine, _slope_grid(cfg, best.omega))
        out.csv("slope_scan.csv", ["omega_hz", "signal", "slope_per_rad_s"],
                zip(scan.omegas / TWO_PI, scan.signal, scan.derivative), {"tau_us": best.tau_opt * 1e6})
        values.update({"omega_opt_hz": scan.omega_opt / TWO_PI, "slope_per_rad_s": scan.slope})
    out.summary(values)
    return EXIT_OK


def cmd_sense(cfg: RunConfig, args) -> int:
    duration = cfg.sweep.duration if args.duration is None else args.duration
    minimum = 2.0 / cfg.sequence.data_rate
    if not duration >= minimum:
        raise CliError(f"--duration must be >= 2/data_rate = {minimum!r} s, got {duration!r}")
    out = Outputs(cfg, "sense")
    ens = _ensemble(cfg)
    scan = _operating_point(cfg, ens)
    row = _fit_at(cfg, scan.omega_opt)
    eta_shot = shot_noise_limit(cfg.ensemble, cfg.sequence, row.contrast, row.t2_rho, row.stretch)
    omega_of_t = _constant(scan.omega_opt)
    values = {"omega_opt_hz": scan.omega_opt / TWO_PI, "slope_per_rad_s": scan.slope,
              "contrast": row.contrast, "t2_rho_us": row.t2_rho * 1e6, "stretch": row.stretch}
    if args.with_signal:
        if cfg.modulation is None:
            raise CliError("--with-signal needs an enabled [modulation] section")
        omega_of_t = synthesize_omega(cfg.modulation, drive_for_rabi(scan.omega_opt, cfg.ensemble.gamma),
                                      cfg.ensemble.gamma)
        values["signal_kind"] = cfg.modulation.kind.value
    series = _noisy_record(cfg, ens, omega_of_t, duration)
    spec, report = measure_sensitivity(series, scan.slope, cfg.ensemble.gamma, cfg.sweep.cutoff, eta_shot)
    _write_series(out, "sense_timeseries.csv", series)
    out.csv("sense_asd.csv", ["frequency_hz", "asd_per_rthz"], zip(spec.frequencies, spec.amplitudes),
            {"bin_width_hz": spec.bin_width, "window": spec.window})
    values.update({"duration_s": series.duration, "sigma_s": report.sigma_s, "enbw_hz": report.enbw,
                   "sigma_b_t": report.sigma_b, "eta_t_per_rthz": report.eta,
                   "eta_shot_t_per_rthz": report.eta_shot, "eta_over_eta_shot": report.shot_ratio,
                   "eta_over_target": report.eta / cfg.calibration.target_eta})
    row_values = report.as_dict()
    out.csv("sense_report.csv", [f"{k}{_REPORT_UNITS[k]}" for k in row_values], [row_values.values()])
    if args.with_signal and cfg.modulation.kind is ModulationKind.AM_SINE:
        tone = demod_am(series, cfg.modulation.mod_frequency, scan.slope, cfg.ensemble.gamma)
        values.update({"tone_amplitude_t": tone.amplitude, "tone_noise_floor_t": tone.noise_floor})
    out.summary(values)
    return EXIT_OK


_REPORT_UNITS = {"sigma_s": "", "slope": "_per_rad_s", "enbw": "_hz", "sigma_b": "_t", "eta": "_t_per_rthz",
                 "eta_shot": "_t_per_rthz", "eta_over_eta_shot": ""}


class _constant:
    """Picklable constant waveform ``t -> omega``."""

    def __init__(self, omega: float):
        self.omega = omega

    def __call__(self, t):
        return np.full(np.shape(t), self.omega)


def cmd_demod(cfg: RunConfig, args) -> int:
    kind = ModulationKind.AM_SINE if args.mode == "am" else ModulationKind.BPSK
    base = cfg.modulation
    if base is None:
        raise CliError("demod needs an enabled [modulation] section")
    spec = dataclasses.replace(base, kind=kind)
    if kind is ModulationKind.BPSK and not spec.bits:
        rng = np.random.default_rng([cfg.seed, 7])
        spec = dataclasses.replace(spec, bits=tuple(int(b) for b in rng.integers(0, 2, args.bits)))
    out = Outputs(cfg, f"demod_{args.mode}")
    ens = _ensemble(cfg)
    scan = _operating_point(cfg, ens)
    gamma = cfg.ensemble.gamma
    waveform = synthesize_omega(spec, drive_for_rabi(scan.omega_opt, gamma), gamma)
    duration = cfg.sweep.duration
    if kind is ModulationKind.BPSK:
        duration = max(duration, len(spec.bits) / spec.bit_rate)
    if args.input:
        meta, columns, data = read_csv(args.input)
        if "sample_rate_hz" not in meta:
            raise CliError(f"{args.input!r} lacks a sample_rate_hz header line")
        series = TimeSeries(float(meta["sample_rate_hz"]), _column(columns, data, "signal", args.input))
    else:
        series = _noisy_record(cfg, ens, waveform, duration)
        _write_series(out, f"demod_{args.mode}_timeseries.csv", series)
    values = {"omega_opt_hz": scan.omega_opt / TWO_PI, "slope_per_rad_s": scan.slope}
    if kind is ModulationKind.AM_SINE:
        tone = demod_am(series, spec.mod_frequency, scan.slope, gamma)
        injected = spec.depth * spec.signal_amplitude / 2.0
        values.update({"mod_frequency_hz": spec.mod_frequency, "injected_tone_t": injected,
                       "recovered_tone_t": tone.amplitude, "noise_floor_t": tone.noise_floor,
                       "relative_error": tone.amplitude / injected - 1.0 if injected else math.nan})
    else:
        cal = bpsk_calibration(ens, cfg.sequence, cfg.hyperfine, waveform)
        result = demod_bpsk(series, spec.bit_rate, cal, truth=spec.bits)
        with open(out.path("demod_bpsk_bits.txt"), "w") as fh:
            fh.write(result.bitstring() + "\n")
        values.update({"bit_rate_hz": spec.bit_rate, "bits": len(result.bits), "bit_errors": result.errors,
                       "ber": result.ber, "level_zero": cal.level_zero, "level_one": cal.level_one})
    out.summary(values)
    return EXIT_OK


def cmd_calibrate(cfg: RunConfig, args) -> int:
    """Tune photons per NV and the laser residual to the [calibration] targets."""
    ens = _ensemble(cfg)
    scan = _operating_point(cfg, ens)
    row = _fit_at(cfg, scan.omega_opt)
    target = cfg.calibration
    budget = invert_photon_budget(target.target_shot_eta, cfg.ensemble, cfg.sequence, row.contrast,
                                  row.t2_rho, row.stretch)
    ens_params = dataclasses.replace(cfg.ensemble, photons_per_nv=budget / cfg.ensemble.nv_count)
    eta_shot = shot_noise_limit(ens_params, cfg.sequence, row.contrast, row.t2_rho, row.stretch)
    eps = calibrate_residual(target.target_eta, eta_shot, cfg.noise, scan.slope, ens_params.gamma,
                             cfg.sequence.data_rate, cfg.sweep.duration, cfg.sweep.cutoff)
    calibrated = dataclasses.replace(cfg, ensemble=ens_params,
                                     noise=dataclasses.replace(cfg.noise, cancellation_residual=eps))
    out = Outputs(calibrated, "calibrate")
    # execution settings are left at their defaults so the file does not depend on where it ran
    portable = dataclasses.replace(calibrated, output_dir=RunConfig.output_dir, workers=RunConfig.workers)
    out._write("calibrated.ini", dump_config(portable))
    out.summary({"omega_opt_hz": scan.omega_opt / TWO_PI, "slope_per_rad_s": scan.slope,
                 "contrast": row.contrast, "t2_rho_us": row.t2_rho * 1e6, "stretch": row.stretch,
                 "photon_budget": budget, "photons_per_nv": ens_params.photons_per_nv,
                 "eta_shot_t_per_rthz": eta_shot, "cancellation_residual": eps})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (default: $RABIMAG_CONFIG, else built-in defaults)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("--seed", type=int, help="master seed (run.seed)")
    common.add_argument("--workers", type=int, help="worker threads (run.workers)")
    common.add_argument("--n-samples", type=int, help="Monte Carlo samples per ensemble (run.n_samples)")
    common.add_argument("--output-dir", help="output directory (run.output_dir)")

    parser = argparse.ArgumentParser(prog="rabimag", description="Rabi-beat magnetometer simulator")
    parser.add_argument("--version", action="version", version=f"rabimag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rabi-trace", parents=[common], help="ensemble Rabi traces with decay fits")
    p.add_argument("--omega", type=float, required=True, help="Rabi frequency in Hz (Omega / 2 pi)")
    p.add_argument("--tau-max", type=float, help="longest pulse in s (sweep.tau_max_s)")
    p.add_argument("--protocol", choices=["on-off", "pi", "both"], default="both")
    p.set_defaults(func=cmd_rabi_trace)

    p = sub.add_parser("characterize", parents=[common], help="contrast and T2rho versus Rabi frequency")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("optimize", parents=[common], help="figure-of-merit sweep and slope scan")
    p.add_argument("--table", help="CSV with omega_hz, contrast, t2_rho_us[, stretch] instead of simulating")
    p.add_argument("--no-slope-scan", action="store_true", help="stop after the figure-of-merit stage")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("sense", parents=[common], help="noisy record, ASD and sensitivity")
    p.add_argument("--duration", type=float, help="record length in s (sweep.duration_s)")
    p.add_argument("--with-signal", action="store_true", help="inject the [modulation] test field")
    p.set_defaults(func=cmd_sense)

    p = sub.add_parser("demod", parents=[common], help="recover an AM tone or a BPSK bit stream")
    p.add_argument("--mode", choices=["am", "bpsk"], required=True)
    p.add_argument("--input", help="time-series CSV to demodulate instead of simulating one")
    p.add_argument("--bits", type=int, default=1000, help="random bits when [modulation] bits is empty")
    p.set_defaults(func=cmd_demod)

    p = sub.add_parser("calibrate", parents=[common],
                       help="fit photon budget and laser residual to the [calibration] targets")
    p.set_defaults(func=cmd_calibrate)
    return parser


def resolve_config(args) -> RunConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(item, "expected SECTION.KEY=VALUE")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    for flag, key in (("seed", "run.seed"), ("workers", "run.workers"), ("n_samples", "run.n_samples"),
                      ("output_dir", "run.output_dir")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = str(value)
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(cfg, args)
    except ConfigError as exc:
        print(f"rabimag: config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except CliError as exc:
        print(f"rabimag: {exc}", file=sys.stderr)
        return exc.code
    except DomainError as exc:
        print(f"rabimag: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RabimagError as exc:
        print(f"rabimag: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

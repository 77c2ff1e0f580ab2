"""Acceptance suite: one test per criterion, reported as PASS/FAIL at session end."""

import dataclasses
import filecmp
import math
import os
import time

import numpy as np
import pytest

from rabimag.cli import main
from rabimag.comms import (ModulationKind, ModulationSpec, bpsk_calibration, demod_am, demod_bpsk,
                           predicted_tone_sigma, synthesize_omega, tone_amplitude)
from rabimag.config import RunConfig
from rabimag.ensemble import Ensemble, characterize_vs_omega, default_tau_grid, ensemble_rabi_trace
from rabimag.noise import apply_noise, apply_shot_noise
from rabimag.optimize import fom, fom_sweep, optimal_tau, slope_scan, stationarity_residual
from rabimag.sequence import Protocol, SequenceParams, hyperfine_suppression_metric, render_time_series
from rabimag.spectral import asd, highpass_rms, invert_photon_budget, measure_sensitivity, shot_noise_limit
from rabimag.spin import DriveParams, bloch_integrate, drive_for_rabi, rabi_population

TWO_PI = 2 * math.pi
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
MAX_WORKERS = max(4, os.cpu_count() or 1)
TIMING = {}


def criterion(number, title):
    return pytest.mark.criterion(number, title)


class Constant:
    def __init__(self, omega):
        self.omega = omega

    def __call__(self, t):
        return np.full(np.shape(t), self.omega)


@pytest.fixture(scope="module")
def op():
    """Default configuration, its ensemble, operating point and fitted decay at the optimum."""
    start = time.perf_counter()
    cfg = RunConfig()
    ens = Ensemble(cfg.ensemble, cfg.n_samples, cfg.seed)
    sw = cfg.sweep
    lo = sw.slope_center * (1 - sw.slope_window)
    n = int(math.floor(2 * sw.slope_window * sw.slope_center / sw.slope_step)) + 1
    scan = slope_scan(ens, cfg.sequence, cfg.hyperfine, lo + sw.slope_step * np.arange(n))
    row = characterize_vs_omega(cfg.ensemble, [scan.omega_opt], hf=None, n_samples=cfg.n_samples,
                                seed=cfg.seed, tau_max=sw.tau_max)[0]
    TIMING["setup"] = time.perf_counter() - start
    return cfg, ens, scan, row


@criterion("1", "closed-form Rabi population matches Bloch integration")
def test_closed_form_fidelity(record):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        drive = DriveParams(rng.uniform(0, TWO_PI * 1e6), rng.uniform(-TWO_PI * 1e6, TWO_PI * 1e6))
        tau = rng.uniform(0.1e-6, 100e-6)
        worst = max(worst, abs(bloch_integrate(drive, tau) - rabi_population(drive, tau)))
    runtime = time.perf_counter() - start
    record("max_abs_error", worst)
    record("runtime_s", runtime)
    assert worst < 1e-8
    assert runtime < 10.0


@criterion("2", "ENBW of a 1 s record above a 100 Hz brick wall")
def test_enbw(record):
    seq = SequenceParams()
    series = render_time_series(Constant(TWO_PI * 50e3), RunConfig().ensemble, seq, None, 1.0, n_samples=100)
    series = apply_shot_noise(series, RunConfig().ensemble, seq, seed=1)
    _, enbw = highpass_rms(asd(series), 100.0)
    record("sample_rate_hz", series.sample_rate)
    record("enbw_hz", enbw)
    assert series.samples.size == 6615
    assert enbw == 3207.0


@criterion("3", "shot-noise closed loop over 10 one-second records")
def test_shot_noise_closed_loop(op, record):
    cfg, ens, scan, row = op
    start = time.perf_counter()
    seq = cfg.sequence
    budget = invert_photon_budget(1.34e-12, cfg.ensemble, seq, row.contrast, row.t2_rho, row.stretch)
    params = dataclasses.replace(cfg.ensemble, photons_per_nv=budget / cfg.ensemble.nv_count)
    eta_shot = shot_noise_limit(params, seq, row.contrast, row.t2_rho, row.stretch)
    clean = render_time_series(Constant(scan.omega_opt), params, seq, cfg.hyperfine, 1.0, ensemble=ens)
    etas = []
    for k in range(10):
        noisy = apply_shot_noise(clean, params, seq, seed=1000 + k)
        etas.append(measure_sensitivity(noisy, scan.slope, params.gamma, 100.0, eta_shot)[1].eta)
    # includes building the operating point
    runtime = time.perf_counter() - start + TIMING["setup"]
    ratios = np.array(etas) / eta_shot
    record("eta_shot_pT", eta_shot * 1e12)
    record("mean_eta_over_eta_shot", float(ratios.mean()))
    record("worst_record_ratio", float(ratios[np.argmax(np.abs(ratios - 1))]))
    record("runtime_s", runtime)
    assert eta_shot == pytest.approx(1.34e-12, rel=1e-9)
    assert abs(ratios.mean() - 1) < 0.15
    assert np.all(np.abs(ratios - 1) < 0.15)
    assert runtime < 120.0


@criterion("3b", "absolute sensitivity after laser-residual calibration")
def test_epsilon_calibrated_headline(op, record):
    # the absolute figure depends on the calibrated laser residual, not on prediction
    cfg, ens, scan, row = op
    eta_shot = shot_noise_limit(cfg.ensemble, cfg.sequence, row.contrast, row.t2_rho, row.stretch)
    clean = render_time_series(Constant(scan.omega_opt), cfg.ensemble, cfg.sequence, cfg.hyperfine, 1.0,
                               ensemble=ens)
    _, rep = measure_sensitivity(apply_noise(clean, cfg.ensemble, cfg.sequence, cfg.noise), scan.slope,
                                 cfg.ensemble.gamma, 100.0, eta_shot)
    record("calibrated_eta_pT", rep.eta * 1e12)
    assert rep.eta == pytest.approx(3.4e-12, rel=0.15)


@criterion("4", "pi-pulse over on-off signal and SNR ratio")
def test_protocol_snr(op, record):
    cfg, ens, scan, _ = op
    tau = cfg.sequence.mw_duration
    om = scan.omega_opt
    grid = default_tau_grid(om)
    pi = ens.signal(om, grid, None, Protocol.PI_PULSE)
    oo = ens.signal(om, grid, None, Protocol.ON_OFF)
    amp_ratio = np.ptp(pi) / np.ptp(oo)
    d = TWO_PI * 50.0
    slopes = {p: float(np.diff(ens.signal(np.array([om - d, om + d]), tau, None, p))[0]) / (2 * d)
              for p in (Protocol.PI_PULSE, Protocol.ON_OFF)}
    slope_ratio = abs(slopes[Protocol.PI_PULSE] / slopes[Protocol.ON_OFF])
    b = drive_for_rabi(om, cfg.ensemble.gamma)
    waveform = synthesize_omega(ModulationSpec(ModulationKind.AM_SINE, 4.4e-9, 25.0, 1.0), b, cfg.ensemble.gamma)
    snr = {}
    for p in (Protocol.PI_PULSE, Protocol.ON_OFF):
        seq = dataclasses.replace(cfg.sequence, protocol=p)
        series = apply_shot_noise(render_time_series(waveform, cfg.ensemble, seq, None, 1.0, ensemble=ens),
                                  cfg.ensemble, seq, seed=77)
        sigma, _ = highpass_rms(asd(series), 100.0)
        snr[p] = tone_amplitude(series, 25.0) / sigma
    snr_ratio = snr[Protocol.PI_PULSE] / snr[Protocol.ON_OFF]
    record("amplitude_ratio", amp_ratio)
    record("slope_ratio", slope_ratio)
    record("snr_ratio", snr_ratio)
    assert abs(amp_ratio - 2.0) < 1e-9
    assert abs(slope_ratio - 2.0) < 1e-9
    assert abs(snr_ratio - 2.0) < 0.2


@criterion("5", "pi-pulse residual hyperfine modulation below 10% of on-off")
def test_hyperfine_suppression(record):
    cfg = RunConfig()
    om = TWO_PI * 220e3
    grid = np.linspace(0, cfg.sweep.tau_max, cfg.sweep.tau_points)
    traces = [ensemble_rabi_trace(cfg.ensemble, om, grid, cfg.hyperfine, cfg.n_samples, cfg.seed, p)
              for p in (Protocol.ON_OFF, Protocol.PI_PULSE)]
    metric = hyperfine_suppression_metric(*traces, cfg.hyperfine.beat_frequency)
    record("modulation_depth", cfg.hyperfine.modulation_depth)
    record("suppression_metric", metric)
    assert cfg.hyperfine.modulation_depth == 0.3
    assert metric < 0.1


@criterion("6", "tau optimizer stationarity and brute-force agreement")
def test_optimizer(record):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(50):
        t2, t_o = rng.uniform(10e-6, 150e-6), rng.uniform(0, 100e-6)
        opt = optimal_tau(rng.uniform(0.001, 0.05), t2, 1.0, t_o)
        if not opt.at_boundary:
            worst = max(worst, abs(stationarity_residual(opt.tau, t2, t_o)) * opt.tau)
    agree = 0
    t_o = 44.8e-6
    tau = np.arange(1e-6, 200e-6, 0.01e-6)
    for _ in range(20):
        omegas = np.sort(TWO_PI * rng.uniform(5e3, 200e3, 15))
        table = [(om, rng.uniform(0.002, 0.02), rng.uniform(10e-6, 200e-6), 1.0) for om in omegas]
        brute = int(np.argmax([np.max(fom(c, t2, p, tau, t_o)) for _, c, t2, p in table]))
        agree += fom_sweep(table, t_o).best_index == brute
    record("max_relative_stationarity_residual", worst)
    record("brute_force_agreement", f"{agree}/20")
    assert worst < 1e-6
    assert agree == 20


@criterion("7", "T2rho falls and contrast rises with drive strength")
def test_ensemble_trends(record):
    cfg = RunConfig()
    omegas = TWO_PI * np.array([10e3, 25e3, 50e3, 100e3, 200e3])
    seeds = (1, 2, 3)
    c = np.zeros((len(seeds), omegas.size))
    t2 = np.zeros_like(c)
    for i, seed in enumerate(seeds):
        rows = characterize_vs_omega(cfg.ensemble, omegas, n_samples=cfg.n_samples, seed=seed,
                                     tau_max=cfg.sweep.tau_max)
        c[i] = [r.contrast for r in rows]
        t2[i] = [r.t2_rho for r in rows]
    c_mean, c_err = c.mean(0), c.std(0, ddof=1) / math.sqrt(len(seeds))
    t_mean, t_err = t2.mean(0), t2.std(0, ddof=1) / math.sqrt(len(seeds))
    record("contrast", " ".join(f"{m:.4g}+-{e:.1g}" for m, e in zip(c_mean, c_err)))
    record("t2_rho_us", " ".join(f"{m * 1e6:.4g}+-{e * 1e6:.1g}" for m, e in zip(t_mean, t_err)))
    # every step must exceed the combined Monte Carlo error bar
    assert np.all(np.diff(c_mean) > np.hypot(c_err[1:], c_err[:-1]))
    assert np.all(-np.diff(t_mean) > np.hypot(t_err[1:], t_err[:-1]))
    assert np.all(np.diff(c, axis=1) >= 0) and np.all(np.diff(t2, axis=1) <= 0)


@criterion("8", "AM tone round trip and BPSK bit stream")
def test_comms_round_trip(op, record):
    cfg, ens, scan, _ = op
    gamma = cfg.ensemble.gamma
    b = drive_for_rabi(scan.omega_opt, gamma)
    seq = cfg.sequence
    spec = ModulationSpec(ModulationKind.AM_SINE, 4.4e-9, 25.0, 1.0)
    clean = render_time_series(synthesize_omega(spec, b, gamma), cfg.ensemble, seq, cfg.hyperfine, 1.0,
                               ensemble=ens)
    injected = 4.4e-9 / 2
    noiseless = demod_am(clean, 25.0, scan.slope, gamma).amplitude
    sigma = predicted_tone_sigma(math.sqrt(2.0 / cfg.ensemble.photon_budget), clean.samples.size, scan.slope,
                                 gamma)
    z = [(demod_am(apply_shot_noise(clean, cfg.ensemble, seq, seed=s), 25.0, scan.slope, gamma).amplitude
          - injected) / sigma for s in range(1, 6)]
    record("noiseless_relative_error", noiseless / injected - 1)
    record("predicted_sigma_pT", sigma * 1e12)
    record("max_abs_z", float(np.max(np.abs(z))))
    assert abs(noiseless / injected - 1) < 0.05
    assert np.all(np.abs(z) < 3)

    bits = tuple(int(x) for x in np.random.default_rng([cfg.seed, 7]).integers(0, 2, 1000))
    bspec = ModulationSpec(ModulationKind.BPSK, 4.4e-9, bits=bits, bit_rate=100.0)
    waveform = synthesize_omega(bspec, b, gamma)
    cal = bpsk_calibration(ens, seq, cfg.hyperfine, waveform)
    clean = render_time_series(waveform, cfg.ensemble, seq, cfg.hyperfine, 10.0, ensemble=ens)
    per_bit = seq.data_rate / bspec.bit_rate
    half_gap = (cal.level_one - cal.level_zero) / 2
    # photon budget that puts the per-bit SNR at exactly 20 dB
    sigma_20db = abs(half_gap) * math.sqrt(per_bit) / 10.0
    lam_20db = 2.0 / sigma_20db ** 2
    results = {}
    for name, params in (("default", cfg.ensemble),
                         ("20dB", dataclasses.replace(cfg.ensemble, photons_per_nv=lam_20db / cfg.ensemble.nv_count))):
        snr_db = 10 * math.log10(half_gap ** 2 * per_bit * params.photon_budget / 2.0)
        res = demod_bpsk(apply_shot_noise(clean, params, seq, seed=11), bspec.bit_rate, cal, truth=bits)
        results[name] = (snr_db, res.errors, len(res.bits))
        record(f"bpsk_{name}_snr_db", snr_db)
        record(f"bpsk_{name}_errors", f"{res.errors}/{len(res.bits)}")
    for snr_db, errors, n in results.values():
        assert snr_db >= 20.0 - 1e-9
        assert n == 1000 and errors == 0


def _run_twice(tmp_path, name, args):
    dirs = []
    for tag, workers in (("serial", 1), ("parallel", MAX_WORKERS)):
        out = tmp_path / f"{name}_{tag}"
        assert main([*args, "--workers", str(workers), "--output-dir", str(out)]) == 0
        dirs.append(out)
    again = tmp_path / f"{name}_again"
    assert main([*args, "--workers", "1", "--output-dir", str(again)]) == 0
    dirs.append(again)
    names = sorted(os.listdir(dirs[0]))
    for d in dirs[1:]:
        assert sorted(os.listdir(d)) == names
        _, mismatch, errors = filecmp.cmpfiles(dirs[0], d, names, shallow=False)
        assert not mismatch and not errors, (name, mismatch)
    return len(names)


@criterion("9", "byte-identical outputs across repeats and worker counts")
def test_determinism(tmp_path, record):
    small = ["--n-samples", "4000"]
    table = os.path.join(ROOT, "configs", "anchored_fom_table.csv")
    runs = {
        "rabi-trace": ["rabi-trace", "--omega", "220e3", *small],
        "characterize": ["characterize", "--set", "sweep.omega_points=3", *small],
        "optimize-table": ["optimize", "--table", table, *small],
        "optimize-sim": ["optimize", "--set", "sweep.omega_points=4", *small],
        "sense": ["sense", "--with-signal", *small],
        "demod-am": ["demod", "--mode", "am", *small],
        "demod-bpsk": ["demod", "--mode", "bpsk", "--bits", "300", *small],
        "calibrate": ["calibrate", *small],
    }
    files = 0
    for name, args in runs.items():
        files += _run_twice(tmp_path, name, args)
    record("subcommands", len(runs))
    record("files_compared", files)
    record("max_workers", MAX_WORKERS)

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rabimag.ensemble import EnsembleParams
from rabimag.errors import CalibrationError, DomainError, EmptyBandError
from rabimag.sequence import SequenceParams, TimeSeries
from rabimag.spectral import (RECTANGULAR, asd, calibrate_sensitivity, highpass_rms, invert_photon_budget,
                              measure_sensitivity, shot_noise_limit)

FS = 6615.0
GAMMA = 2 * math.pi * 2.8e10

# arbitrary-precision (mpmath, 40 digits) evaluations, frozen
ETA_HAND_CASE = 1.2293010423337214359e-8
SIGMA_B_HAND_CASE = 9.8451588468177151698e-7
ETA_SHOT_GENERIC = 8.0190237986883436959e-12


def series(x):
    return TimeSeries(FS, np.asarray(x, dtype=float))


def t1s():
    return np.arange(int(FS)) / FS


def test_tone_lands_in_single_bin_with_expected_height():
    spec = asd(series(np.sin(2 * np.pi * 25 * t1s())))
    k = int(np.argmax(spec.amplitudes))
    assert spec.frequencies[k] == 25.0
    assert spec.amplitudes[k] == pytest.approx(1 / math.sqrt(2 * spec.bin_width), rel=1e-9)
    others = np.delete(spec.amplitudes, k)
    assert others.max() < 1e-9
    assert spec.window == RECTANGULAR
    assert spec.bin_width == pytest.approx(1 / spec.source_duration)
    assert spec.frequencies.max() <= FS / 2


def test_zero_series_gives_zero_spectrum():
    assert np.all(asd(series(np.zeros(100))).amplitudes == 0)


def test_short_series_rejected():
    with pytest.raises(DomainError):
        asd(series([1.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 3000), st.integers(0, 2 ** 31))
def test_parseval(n, seed):
    x = np.random.default_rng(seed).standard_normal(n)
    spec = asd(series(x))
    assert np.sum(spec.amplitudes ** 2) * spec.bin_width == pytest.approx(np.mean(x ** 2), rel=1e-9)


def test_white_noise_band_mean():
    rng = np.random.default_rng(1)
    acc = 0.0
    for _ in range(20):
        spec = asd(series(rng.standard_normal(6615)))
        acc = acc + spec.amplitudes ** 2
    band = spec.frequencies > 0
    assert math.sqrt(np.mean(acc[band] / 20)) == pytest.approx(math.sqrt(2 / FS), rel=0.05)


def test_enbw_is_3207():
    spec = asd(series(np.random.default_rng(0).standard_normal(6615)))
    _, enbw = highpass_rms(spec, 100.0)
    assert enbw == 3207.0


def test_cutoff_zero_recovers_std():
    x = 3 + np.random.default_rng(2).standard_normal(6615)
    sigma, _ = highpass_rms(asd(series(x)), 0.0)
    assert sigma == pytest.approx(np.std(x), rel=1e-9)


def test_two_tone_keeps_only_high_tone():
    t = t1s()
    x = 0.7 * np.sin(2 * np.pi * 50 * t) + 0.2 * np.sin(2 * np.pi * 500 * t + 0.4)
    sigma, _ = highpass_rms(asd(series(x)), 100.0)
    assert sigma == pytest.approx(0.2 / math.sqrt(2), rel=1e-6)


def test_highpass_idempotent():
    spec = asd(series(np.random.default_rng(5).standard_normal(6615)))
    s1, e1 = highpass_rms(spec, 100.0)
    keep = spec.frequencies > 100
    filtered = dataclasses.replace(spec, amplitudes=np.where(keep, spec.amplitudes, 0.0))
    s2, e2 = highpass_rms(filtered, 100.0)
    assert (s1, e1) == (s2, e2)


def test_cutoff_at_nyquist_rejected():
    spec = asd(series(np.ones(100)))
    with pytest.raises(EmptyBandError):
        highpass_rms(spec, FS / 2)


def test_calibration_hand_case():
    rep = calibrate_sensitivity(1e-4, 1e-9, 3207.0, GAMMA)
    assert rep.eta == pytest.approx(ETA_HAND_CASE, rel=1e-12)
    assert rep.sigma_b == pytest.approx(SIGMA_B_HAND_CASE, rel=1e-12)
    assert rep.eta == pytest.approx(rep.sigma_b / math.sqrt(2 * rep.enbw), rel=1e-15)


def test_doubling_slope_halves_eta():
    a = calibrate_sensitivity(1e-4, 1e-9, 3207.0, GAMMA).eta
    b = calibrate_sensitivity(1e-4, 2e-9, 3207.0, GAMMA).eta
    assert b == a / 2


def test_zero_slope_rejected():
    with pytest.raises(CalibrationError):
        calibrate_sensitivity(1e-4, 0.0, 3207.0, GAMMA)


def test_report_hits_headline_when_tuned():
    sigma_s = 3.4e-12 * math.sqrt(2 * 3207) * GAMMA * 3e-7 / math.sqrt(3)
    rep = calibrate_sensitivity(sigma_s, 3e-7, 3207.0, GAMMA, eta_shot=1.34e-12)
    assert rep.eta == pytest.approx(3.4e-12, rel=1e-12)
    assert rep.shot_ratio == pytest.approx(3.4 / 1.34)
    assert set(rep.as_dict()) >= {"sigma_s", "slope", "enbw", "sigma_b", "eta", "eta_shot"}


def test_measure_sensitivity_runs_pipeline():
    x = 1e-5 * np.random.default_rng(3).standard_normal(6615)
    spec, rep = measure_sensitivity(series(x), -3e-7, GAMMA)
    sigma, enbw = highpass_rms(spec, 100.0)
    assert rep.sigma_s == sigma and rep.enbw == enbw and rep.slope == 3e-7


def test_shot_noise_limit_generic_oracle():
    ens = dataclasses.replace(EnsembleParams(), projection=0.5, nv_count=1e10, photons_per_nv=1.0)
    seq = SequenceParams(mw_duration=20e-6, overhead=40e-6)
    assert shot_noise_limit(ens, seq, 0.01, 50e-6, 1.5) == pytest.approx(ETA_SHOT_GENERIC, rel=1e-12)


def test_shot_noise_limit_duty_factor_without_decay():
    ens = EnsembleParams()
    vals = []
    for tau in (5e-6, 20e-6, 80e-6):
        seq = SequenceParams(mw_duration=tau)
        vals.append(shot_noise_limit(ens, seq, 0.01, math.inf, 1.0) * tau / math.sqrt(tau + seq.overhead))
    assert max(vals) == pytest.approx(min(vals), rel=1e-12)


def test_shot_noise_limit_scales_with_budget():
    seq = SequenceParams()
    a = shot_noise_limit(EnsembleParams(photons_per_nv=0.01), seq, 0.01, 60e-6, 1.0)
    b = shot_noise_limit(EnsembleParams(photons_per_nv=0.04), seq, 0.01, 60e-6, 1.0)
    assert a / b == pytest.approx(2.0, rel=1e-14)


def test_inverted_budget_reproduces_target():
    ens, seq = EnsembleParams(), SequenceParams()
    lam = invert_photon_budget(1.34e-12, ens, seq, 0.016, 92e-6, 0.82)
    ens2 = dataclasses.replace(ens, photons_per_nv=lam / ens.nv_count)
    assert shot_noise_limit(ens2, seq, 0.016, 92e-6, 0.82) == pytest.approx(1.34e-12, rel=1e-12)


def test_shot_noise_limit_validation():
    with pytest.raises(DomainError):
        shot_noise_limit(EnsembleParams(), SequenceParams(), 0.0, 1e-5)

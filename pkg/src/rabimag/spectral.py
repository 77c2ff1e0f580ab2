"""Sensitivity pipeline: amplitude spectral density, brick-wall band selection,
slope calibration to tesla, and the analytic shot-noise limit.

Conventions
-----------
* One-sided ASD from a rectangular-window FFT: a sinusoid of amplitude ``A``
  centered on a bin shows ``A / sqrt(2 * bin_width)``, and
  ``sum(asd**2) * bin_width`` equals the mean square of the record.
* The high-pass keeps bins strictly above the cutoff. For a 1 s record at
  6.615 kHz and a 100 Hz cutoff that is bins 101..3307 Hz, i.e. 3207 bins and
  an equivalent noise bandwidth of 3207 Hz.
* Slopes are signal per rad/s of Rabi frequency; ``gamma`` is in rad s^-1 T^-1.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .ensemble import EnsembleParams
from .errors import CalibrationError, DomainError, EmptyBandError
from .sequence import SequenceParams, TimeSeries

RECTANGULAR = "RECTANGULAR"


@dataclass
class Spectrum:
    frequencies: np.ndarray
    amplitudes: np.ndarray
    bin_width: float
    sample_rate: float
    source_duration: float
    window: str = RECTANGULAR

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    def bins(self):
        return list(zip(self.frequencies.tolist(), self.amplitudes.tolist()))


@dataclass
class SensitivityReport:
    sigma_s: float
    slope: float
    enbw: float
    sigma_b: float
    eta: float
    eta_shot: float = math.nan

    @property
    def shot_ratio(self) -> float:
        return self.eta / self.eta_shot if self.eta_shot and math.isfinite(self.eta_shot) else math.nan

    def as_dict(self) -> dict:
        d = asdict(self)
        d["eta_over_eta_shot"] = self.shot_ratio
        return d


def asd(series: TimeSeries) -> Spectrum:
    """Single-sided amplitude spectral density with rectangular windowing."""
    x = np.asarray(series.samples, dtype=float)
    n = x.size
    if n < 2:
        raise DomainError("need at least 2 samples for a spectrum")
    fs = series.sample_rate
    power = np.abs(np.fft.rfft(x)) ** 2 / (fs * n)
    if n % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    return Spectrum(np.fft.rfftfreq(n, 1.0 / fs), np.sqrt(power), fs / n, fs, n / fs)


def highpass_rms(spec: Spectrum, cutoff: float):
    """Band standard deviation and ENBW after a brick-wall high-pass.

    Returns
    -------
    sigma_s : float
        Root-sum-square of the retained bins, in time-domain signal units.
    enbw : float
        Retained bin count times bin width.
    """
    if cutoff >= spec.nyquist:
        raise EmptyBandError(f"cutoff {cutoff:g} Hz at or above Nyquist {spec.nyquist:g} Hz")
    keep = spec.frequencies > cutoff
    if not np.any(keep):
        raise EmptyBandError("no bins above cutoff")
    sigma = math.sqrt(float(np.sum(spec.amplitudes[keep] ** 2)) * spec.bin_width)
    return sigma, int(np.count_nonzero(keep)) * spec.bin_width


def calibrate_sensitivity(sigma_s: float, slope: float, enbw: float, gamma: float,
                          eta_shot: float = math.nan) -> SensitivityReport:
    """Convert a band rms in signal units to tesla per sqrt(Hz).

    ``sigma_B = sqrt(3) sigma_S / (gamma |slope|)`` and
    ``eta = sigma_B / sqrt(2 f_ENBW)``; the ``sqrt(3)`` is the projection of the
    <100> field onto each NV's transverse plane.
    """
    slope = abs(slope)
    if slope == 0 or not math.isfinite(slope):
        raise CalibrationError("zero slope: operating point not set")
    if enbw <= 0:
        raise CalibrationError("ENBW must be positive")
    sigma_b = math.sqrt(3.0) * sigma_s / (gamma * slope)
    return SensitivityReport(sigma_s, slope, enbw, sigma_b, sigma_b / math.sqrt(2.0 * enbw), eta_shot)


def measure_sensitivity(series: TimeSeries, slope: float, gamma: float, cutoff: float = 100.0,
                        eta_shot: float = math.nan):
    """Run ASD, high-pass and calibration on a zero-signal record."""
    spec = asd(series)
    sigma_s, enbw = highpass_rms(spec, cutoff)
    return spec, calibrate_sensitivity(sigma_s, slope, enbw, gamma, eta_shot)


def shot_noise_limit(ens: EnsembleParams, seq: SequenceParams, contrast: float, t2_rho: float,
                     stretch: float = None, tau: float = None) -> float:
    """Photon-shot-noise-limited sensitivity of the Rabi magnetometer.

    ``sqrt(2)/gamma / F_perp / sqrt(N n_avg) / (C exp(-(tau/T2rho)^p)) * sqrt(tau + t_O) / tau``
    with ``tau`` and ``t_O`` taken from ``seq`` unless ``tau`` is given.
    """
    p = ens.stretch if stretch is None else stretch
    tau = seq.mw_duration if tau is None else tau
    if min(contrast, t2_rho, tau) <= 0:
        raise DomainError("contrast, t2_rho and tau must be positive")
    envelope = contrast * math.exp(-((tau / t2_rho) ** p))
    return (math.sqrt(2.0) / ens.gamma / ens.projection / math.sqrt(ens.photon_budget)
            / envelope * math.sqrt(tau + seq.overhead) / tau)


def invert_photon_budget(eta_target: float, ens: EnsembleParams, seq: SequenceParams, contrast: float,
                         t2_rho: float, stretch: float = None) -> float:
    """Photons per readout ``N * n_avg`` that give ``eta_target`` from :func:`shot_noise_limit`."""
    eta_now = shot_noise_limit(ens, seq, contrast, t2_rho, stretch)
    return ens.photon_budget * (eta_now / eta_target) ** 2

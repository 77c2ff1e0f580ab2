"""Instrument noise: photon shot noise on each readout and the laser intensity
noise left over after reference-photodiode cancellation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleParams
from .errors import CalibrationError, DomainError
from .sequence import SequenceParams, TimeSeries

# Above this mean count the Poisson draw is replaced by its Gaussian limit.
POISSON_GAUSS_CROSSOVER = 1000.0

_SHOT_STREAM = 11
_LASER_STREAM = 23


@dataclass(frozen=True)
class NoiseConfig:
    """Noise sources applied to rendered series.

    ``laser_white_asd`` is relative intensity per sqrt(Hz); the residual
    ``cancellation_residual`` is the fraction surviving common-mode
    cancellation. Its default comes from :func:`calibrate_residual` run on the
    default parameters and is a modeling choice, not a measured value.
    """

    shot_noise_enabled: bool = True
    laser_white_asd: float = 1.0e-6
    laser_flicker_corner: float = 0.0
    cancellation_residual: float = 0.139
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.cancellation_residual <= 1.0:
            raise DomainError(f"cancellation_residual must lie in [0, 1], got {self.cancellation_residual}")
        if self.laser_white_asd < 0 or self.laser_flicker_corner < 0:
            raise DomainError("laser spectral parameters must be non-negative")


def apply_shot_noise(series: TimeSeries, ens: EnsembleParams, seq: SequenceParams = None,
                     seed: int = 0, enabled: bool = True) -> TimeSeries:
    """Add independent photon-count fluctuations to both readouts of every pair.

    Each readout collects ``lam = N * n_avg`` photons on average; the pair
    difference normalized by ``lam`` has standard deviation ``sqrt(2 / lam)``.
    """
    if not enabled:
        return series
    lam = ens.photon_budget
    if lam < 1:
        raise DomainError(f"photon budget N*n_avg = {lam:g} must be >= 1")
    rng = np.random.default_rng([int(seed), _SHOT_STREAM])
    n = series.samples.size
    if lam > POISSON_GAUSS_CROSSOVER:
        counts = lam + math.sqrt(lam) * rng.standard_normal((2, n))
    else:
        counts = rng.poisson(lam, (2, n)).astype(float)
    return series.replace(series.samples + (counts[0] - counts[1]) / lam)


def laser_noise_realization(n: int, sample_rate: float, white_asd: float, flicker_corner: float,
                            seed: int) -> np.ndarray:
    """Gaussian noise with single-sided ASD ``white_asd * sqrt(1 + corner / f)`` (zero mean)."""
    rng = np.random.default_rng([int(seed), _LASER_STREAM])
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    shape = np.zeros_like(f)
    shape[1:] = np.sqrt(1.0 + flicker_corner / f[1:])
    return np.fft.irfft(spec * shape, n) * white_asd * math.sqrt(sample_rate / 2.0)


def apply_laser_noise(series: TimeSeries, cfg: NoiseConfig) -> TimeSeries:
    """Add the uncancelled fraction of laser intensity noise."""
    eps = cfg.cancellation_residual
    if eps == 0.0 or cfg.laser_white_asd == 0.0:
        return series
    noise = laser_noise_realization(series.samples.size, series.sample_rate, cfg.laser_white_asd,
                                    cfg.laser_flicker_corner, cfg.seed)
    return series.replace(series.samples + eps * noise)


def apply_noise(series: TimeSeries, ens: EnsembleParams, seq: SequenceParams, cfg: NoiseConfig) -> TimeSeries:
    series = apply_shot_noise(series, ens, seq, cfg.seed, cfg.shot_noise_enabled)
    return apply_laser_noise(series, cfg)


def calibrate_residual(target_eta: float, shot_eta: float, cfg: NoiseConfig, slope: float, gamma: float,
                       sample_rate: float, duration: float = 1.0, cutoff: float = 100.0) -> float:
    """Residual fraction that lifts a shot-noise floor ``shot_eta`` to ``target_eta``.

    Shot and laser noise add in quadrature. The laser band power is summed
    over the same bins the sensitivity pipeline keeps (``cutoff < f <= fs/2``).
    """
    if target_eta <= shot_eta:
        raise CalibrationError("target sensitivity must exceed the shot-noise floor")
    if cfg.laser_white_asd <= 0:
        raise CalibrationError("laser_white_asd must be > 0 to calibrate")
    n = int(round(duration * sample_rate))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    band = f[f > cutoff]
    if band.size == 0:
        raise CalibrationError("empty analysis band")
    df = sample_rate / n
    enbw = band.size * df
    sigma_unit = cfg.laser_white_asd * math.sqrt(np.sum(1.0 + cfg.laser_flicker_corner / band) * df)
    eta_laser = math.sqrt(target_eta ** 2 - shot_eta ** 2)
    eps = eta_laser * gamma * abs(slope) * math.sqrt(2.0 * enbw) / (math.sqrt(3.0) * sigma_unit)
    if eps > 1.0:
        raise CalibrationError(f"required residual {eps:.3g} > 1; laser_white_asd too small")
    return eps

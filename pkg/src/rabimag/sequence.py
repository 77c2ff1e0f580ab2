"""Pulse-protocol engine: sequence timing, subtracted time series and the
hyperfine-suppression figure for the two subtraction protocols."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .ensemble import DEFAULT_SAMPLES, Ensemble, EnsembleParams, RabiTrace
from .errors import DomainError, UndefinedMetricError
from .protocol import Protocol, pair_populations, readouts, subtract, subtracted_signal
from .spin import HyperfineModel

__all__ = [
    "Protocol", "SequenceParams", "TimeSeries", "subtracted_signal", "pair_populations",
    "readouts", "subtract", "render_time_series", "modulation_index",
    "hyperfine_suppression_metric", "zero_crossing",
]


@dataclass(frozen=True)
class SequenceParams:
    """Timing of the Rabi magnetometry sequence.

    ``sequence_rate`` is configured independently of ``mw_duration + overhead``;
    the data rate is half of it because two sequences make one sample.
    """

    mw_duration: float = 30e-6
    overhead: float = 44.8e-6
    protocol: Protocol = Protocol.PI_PULSE
    sequence_rate: float = 13.23e3
    pi_fidelity: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol.parse(self.protocol))
        if self.protocol is Protocol.SINGLE:
            raise DomainError("sequence protocol must be ON_OFF or PI_PULSE")
        if not self.mw_duration > 0:
            raise DomainError(f"mw_duration must be > 0, got {self.mw_duration}")
        if not self.overhead >= 0:
            raise DomainError(f"overhead must be >= 0, got {self.overhead}")
        if not self.sequence_rate > 0:
            raise DomainError(f"sequence_rate must be > 0, got {self.sequence_rate}")
        if not 0.0 <= self.pi_fidelity <= 1.0:
            raise DomainError(f"pi_fidelity must lie in [0, 1], got {self.pi_fidelity}")

    @property
    def data_rate(self) -> float:
        return self.sequence_rate / 2.0


@dataclass
class TimeSeries:
    sample_rate: float
    samples: np.ndarray
    start_time: float = 0.0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not self.sample_rate > 0:
            raise DomainError("sample_rate must be > 0")
        if not np.all(np.isfinite(self.samples)):
            raise DomainError("time series contains non-finite samples")

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(self.samples.size) / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def replace(self, samples) -> "TimeSeries":
        return TimeSeries(self.sample_rate, samples, self.start_time)


def render_time_series(omega_of_t: Callable, ens: EnsembleParams, seq: SequenceParams,
                       hf: Optional[HyperfineModel], duration: float, seed: int = 0,
                       n_samples: int = DEFAULT_SAMPLES, ensemble: Optional[Ensemble] = None,
                       workers: int = 1) -> TimeSeries:
    """Noise-free subtracted signal sampled once per sequence pair.

    The drive ``Omega(t)`` is held constant within each pair (quasi-static).
    Pass a prebuilt ``ensemble`` to reuse one realization across calls;
    otherwise one is drawn from ``seed``.
    """
    rate = seq.data_rate
    if duration < 2.0 / rate:
        raise DomainError(f"duration {duration:g} s shorter than two samples at {rate:g} Hz")
    fm = getattr(omega_of_t, "mod_frequency", None)
    if fm is not None and fm > rate / 10.0:
        warnings.warn(f"modulation at {fm:g} Hz exceeds data_rate/10; quasi-static approximation is poor",
                      stacklevel=2)
    n = int(round(duration * rate))
    t = np.arange(n) / rate
    omega = np.broadcast_to(np.asarray(omega_of_t(t), dtype=float), t.shape)
    if np.any(omega < 0) or not np.all(np.isfinite(omega)):
        raise DomainError("Omega(t) must be finite and non-negative")
    if ensemble is None:
        ensemble = Ensemble(ens, n_samples, seed, workers=workers)
    levels, inverse = np.unique(omega, return_inverse=True)
    values = ensemble.signal(levels, seq.mw_duration, hf, seq.protocol, seq.pi_fidelity)
    return TimeSeries(rate, values[inverse.ravel()])


def zero_crossing(ensemble: Ensemble, seq: SequenceParams, omega_lo: float, omega_hi: float,
                  hf: Optional[HyperfineModel] = None) -> float:
    """Drive strength in ``[omega_lo, omega_hi]`` where the subtracted signal crosses zero."""
    from scipy.optimize import brentq

    def f(om):
        return float(ensemble.signal(om, seq.mw_duration, hf, seq.protocol, seq.pi_fidelity))

    return brentq(f, omega_lo, omega_hi, xtol=1e-9, rtol=1e-15)


def _tone(tau, x, w, freq):
    return abs(np.sum(w * x * np.exp(-2j * np.pi * freq * tau)))


def modulation_index(trace: RabiTrace, beat_frequency: float, carrier_frequency: Optional[float] = None) -> float:
    """Hann-windowed tone amplitude at ``beat_frequency`` relative to the carrier.

    The carrier defaults to the trace's drive ``omega / 2pi``.
    """
    tau = trace.tau_grid
    carrier = trace.omega / (2 * math.pi) if carrier_frequency is None else carrier_frequency
    span = tau[-1] - tau[0]
    w = 0.5 - 0.5 * np.cos(2 * np.pi * (tau - tau[0]) / span)
    x = trace.signal - np.sum(w * trace.signal) / np.sum(w)
    car = _tone(tau, x, w, carrier)
    if car <= 1e-14 * np.sum(w * np.abs(trace.signal)) or car == 0:
        raise UndefinedMetricError("zero carrier power in trace")
    return _tone(tau, x, w, beat_frequency) / car


def hyperfine_suppression_metric(trace_onoff: RabiTrace, trace_pi: RabiTrace, beat_frequency: float,
                                 carrier_frequency: Optional[float] = None, floor: float = 1e-3) -> float:
    """Residual modulation index of the pi-pulse trace over that of the on-off trace.

    Indices below ``floor`` are clamped to it, so two traces without any
    hyperfine modulation compare as 1.
    """
    if trace_onoff.tau_grid.shape != trace_pi.tau_grid.shape or \
            not np.array_equal(trace_onoff.tau_grid, trace_pi.tau_grid):
        raise DomainError("traces must share the same tau grid")
    m_onoff = max(modulation_index(trace_onoff, beat_frequency, carrier_frequency), floor)
    m_pi = max(modulation_index(trace_pi, beat_frequency, carrier_frequency), floor)
    return m_pi / m_onoff

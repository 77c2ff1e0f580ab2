"""Modulated test fields and their recovery from the magnetometer output.

AM convention: the signal field envelope is ``dB (1 + m sin(2 pi f t)) / 2``,
so at ``m = 1`` it swings between 0 and ``dB`` and the recovered tone
amplitude is ``m dB / 2``. Phase modulation maps onto Rabi frequency through
the co-axial cosine composition, so the phase levels must differ in ``cos``
to be visible (0 and pi/4 for PM, 0 and pi for BPSK).
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ensemble import Ensemble
from .errors import DomainError, UnsupportedModeError
from .sequence import SequenceParams, TimeSeries
from .spectral import asd
from .spin import GAMMA_NV, HyperfineModel, PROJECTION_100, compose_rabi


class ModulationKind(str, enum.Enum):
    AM_SINE = "AM_SINE"
    PM_SQUARE = "PM_SQUARE"
    BPSK = "BPSK"


@dataclass(frozen=True)
class ModulationSpec:
    kind: ModulationKind = ModulationKind.AM_SINE
    signal_amplitude: float = 4.4e-9
    mod_frequency: float = 25.0
    depth: float = 1.0
    phase_deviation: Optional[float] = None
    bits: tuple = ()
    bit_rate: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ModulationKind(str(self.kind).split(".")[-1].upper()))
        object.__setattr__(self, "bits", tuple(int(b) for b in self.bits))
        if self.signal_amplitude < 0:
            raise DomainError("signal_amplitude must be >= 0")
        if not 0.0 <= self.depth <= 1.0:
            raise DomainError("depth must lie in [0, 1]")
        if self.phase_deviation is not None and abs(self.phase_deviation) > math.pi:
            raise DomainError("|phase_deviation| must not exceed pi")
        if any(b not in (0, 1) for b in self.bits):
            raise DomainError("bits must be 0 or 1")
        if self.kind is not ModulationKind.BPSK and self.mod_frequency < 0:
            raise DomainError("mod_frequency must be >= 0")
        if self.kind is ModulationKind.BPSK and not self.bit_rate > 0:
            raise DomainError("bit_rate must be > 0")

    @property
    def deviation(self) -> float:
        """Phase step; unset means pi/4 for PM and pi for BPSK."""
        if self.phase_deviation is not None:
            return self.phase_deviation
        return math.pi if self.kind is ModulationKind.BPSK else math.pi / 4


def bit_index(t, bit_rate: float):
    return np.floor(np.asarray(t, dtype=float) * bit_rate).astype(np.int64)


class OmegaWaveform:
    """Callable ``t -> Omega(t)`` for a modulated field riding on the drive."""

    def __init__(self, spec: ModulationSpec, drive_amplitude: float, gamma: float = GAMMA_NV):
        self.spec = spec
        self.drive_amplitude = drive_amplitude
        self.gamma = gamma
        if spec.kind is ModulationKind.BPSK:
            self.mod_frequency = spec.bit_rate / 2.0
        else:
            self.mod_frequency = spec.mod_frequency

    @property
    def bounds(self):
        lo = self.drive_amplitude - self.spec.signal_amplitude
        hi = self.drive_amplitude + self.spec.signal_amplitude
        return self.gamma * lo * PROJECTION_100, self.gamma * hi * PROJECTION_100

    def phase(self, t):
        s = self.spec
        t = np.asarray(t, dtype=float)
        if s.kind is ModulationKind.PM_SQUARE:
            return np.where(np.mod(t * s.mod_frequency, 1.0) >= 0.5, s.deviation, 0.0)
        if s.kind is ModulationKind.BPSK:
            bits = np.asarray(s.bits + (0,), dtype=float)
            k = np.clip(bit_index(t, s.bit_rate), 0, len(s.bits))
            return bits[k] * s.deviation
        return np.zeros_like(t)

    def envelope(self, t):
        s = self.spec
        t = np.asarray(t, dtype=float)
        if s.kind is ModulationKind.AM_SINE:
            return s.signal_amplitude * (1.0 + s.depth * np.sin(2 * np.pi * s.mod_frequency * t)) / 2.0
        return np.full_like(t, s.signal_amplitude)

    def __call__(self, t):
        return compose_rabi(self.drive_amplitude, self.envelope(t), self.phase(t), self.gamma)


def synthesize_omega(spec: ModulationSpec, drive_amplitude: float, gamma: float = GAMMA_NV) -> OmegaWaveform:
    """Rabi-frequency waveform produced by the drive plus the modulated signal field."""
    if spec.signal_amplitude > drive_amplitude:
        raise DomainError("signal amplitude exceeds drive amplitude")
    if spec.signal_amplitude > 0.1 * drive_amplitude:
        warnings.warn("signal field above 10% of drive; small-signal picture degrades", stacklevel=2)
    return OmegaWaveform(spec, drive_amplitude, gamma)


@dataclass
class ToneEstimate:
    amplitude: float
    noise_floor: float
    signal_amplitude: float


def tone_amplitude(series: TimeSeries, frequency: float) -> float:
    """Amplitude of the component at exactly ``frequency`` (single-bin correlation)."""
    x = series.samples - series.samples.mean()
    t = np.arange(x.size) / series.sample_rate
    return 2.0 * abs(np.sum(x * np.exp(-2j * np.pi * frequency * t))) / x.size


def predicted_tone_sigma(sample_sigma: float, n: int, slope: float, gamma: float = GAMMA_NV) -> float:
    """Standard error of a recovered tone amplitude (tesla) for white noise per sample."""
    return math.sqrt(3.0) / (gamma * abs(slope)) * sample_sigma * math.sqrt(2.0 / n)


def demod_am(series: TimeSeries, mod_frequency: float, slope: float, gamma: float = GAMMA_NV,
             guard_bins: int = 2, neighbor_bins: int = 10) -> ToneEstimate:
    """Recover the amplitude (tesla) of a field tone at ``mod_frequency``.

    The signal-unit tone is scaled by ``sqrt(3) / (gamma |slope|)``. The noise
    floor is the rms of neighbouring ASD bins expressed as a tone amplitude.
    """
    duration = series.duration
    if not 2.0 / duration <= mod_frequency < series.sample_rate / 2.0:
        raise DomainError(f"{mod_frequency:g} Hz not resolvable in a {duration:g} s record")
    if slope == 0:
        raise DomainError("zero slope")
    scale = math.sqrt(3.0) / (gamma * abs(slope))
    amp = tone_amplitude(series, mod_frequency)
    spec = asd(series)
    dist = np.abs(spec.frequencies - mod_frequency) / spec.bin_width
    near = (dist > guard_bins) & (dist <= guard_bins + neighbor_bins) & (spec.frequencies > 0)
    floor = math.sqrt(float(np.mean(spec.amplitudes[near] ** 2)) * 2.0 * spec.bin_width) if near.any() else math.nan
    return ToneEstimate(scale * amp, scale * floor, amp)


@dataclass(frozen=True)
class BpskCalibration:
    """Noise-free subtracted-signal levels for bit 0 and bit 1."""

    level_zero: float
    level_one: float

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.level_zero + self.level_one)


def bpsk_calibration(ensemble: Ensemble, seq: SequenceParams, hf: Optional[HyperfineModel],
                     waveform: OmegaWaveform) -> BpskCalibration:
    s = waveform.spec
    om = compose_rabi(waveform.drive_amplitude, s.signal_amplitude, np.array([0.0, s.deviation]),
                      waveform.gamma)
    lv = ensemble.signal(om, seq.mw_duration, hf, seq.protocol, seq.pi_fidelity)
    return BpskCalibration(float(lv[0]), float(lv[1]))


@dataclass
class BpskResult:
    bits: np.ndarray
    errors: Optional[int] = None
    ber: Optional[float] = None

    def bitstring(self) -> str:
        return "".join(str(int(b)) for b in self.bits)


def demod_bpsk(series: TimeSeries, bit_rate: float, calibration: BpskCalibration,
               truth: Optional[Sequence[int]] = None, timing: str = "shared") -> BpskResult:
    """Integrate-and-dump over each bit period of a shared bit clock, then threshold."""
    if timing != "shared":
        raise UnsupportedModeError("only a shared bit clock is supported; no timing recovery")
    if bit_rate > series.sample_rate / 10.0:
        raise DomainError("bit_rate must not exceed data_rate/10")
    if calibration.level_one == calibration.level_zero:
        raise DomainError("calibration levels coincide")
    t = np.arange(series.samples.size) / series.sample_rate
    k = bit_index(t, bit_rate)
    n_bits = int(math.floor(series.duration * bit_rate + 1e-9))
    if truth is not None:
        n_bits = min(n_bits, len(truth))
    sums = np.bincount(k, weights=series.samples, minlength=n_bits)[:n_bits]
    counts = np.bincount(k, minlength=n_bits)[:n_bits]
    means = sums / counts
    polarity = math.copysign(1.0, calibration.level_one - calibration.level_zero)
    bits = ((means - calibration.midpoint) * polarity > 0).astype(np.int8)
    if truth is None:
        return BpskResult(bits)
    ref = np.asarray(truth[:n_bits], dtype=np.int8)
    errors = int(np.count_nonzero(bits != ref))
    return BpskResult(bits, errors, errors / n_bits if n_bits else math.nan)

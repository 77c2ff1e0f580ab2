"""Driven two-level spin dynamics in the rotating frame.

The closed-form Rabi population is the workhorse of the whole package; the
fixed-step propagator in :func:`bloch_integrate` exists to cross-check it.
All frequencies are angular (rad/s), all durations in seconds, fields in tesla.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError

#: Electron gyromagnetic ratio, 2*pi x 2.8 MHz/G expressed in rad s^-1 T^-1.
GAMMA_NV = 2.0 * math.pi * 2.8e10

#: Projection of a <100>-directed MW field onto the transverse plane of a
#: <111> NV axis, folded into the Rabi frequency as Omega = gamma * B / sqrt(3).
PROJECTION_100 = 1.0 / math.sqrt(3.0)

_TAYLOR_ORDER = 12


@dataclass(frozen=True)
class DriveParams:
    """Rabi drive seen by a single spin.

    ``carrier`` and ``resonance`` are informational; when both are given the
    detuning must equal their difference.
    """

    rabi_frequency: float
    detuning: float = 0.0
    carrier: Optional[float] = None
    resonance: Optional[float] = None

    def __post_init__(self):
        if not self.rabi_frequency >= 0:
            raise DomainError(f"rabi_frequency must be >= 0, got {self.rabi_frequency}")
        if self.carrier is not None and self.resonance is not None:
            expected = self.carrier - self.resonance
            if not math.isclose(self.detuning, expected, rel_tol=1e-12, abs_tol=1e-9):
                raise DomainError(
                    f"detuning {self.detuning} inconsistent with carrier - resonance = {expected}"
                )

    @classmethod
    def from_frequencies(cls, rabi_frequency: float, carrier: float, resonance: float) -> "DriveParams":
        return cls(rabi_frequency, carrier - resonance, carrier, resonance)


@dataclass(frozen=True)
class HyperfineModel:
    """Phenomenological hyperfine-mediated modulation of the Rabi signal.

    A fraction ``w(tau) = depth * sin^2(pi * beat_frequency * tau)`` of the
    population is transferred to the spectator hyperfine line detuned by
    ``hf_detuning``. The parameters are modeling knobs, not measured values.
    """

    beat_frequency: float = 0.0
    modulation_depth: float = 0.0
    hf_detuning: float = 2.0 * math.pi * 3.0e6

    def __post_init__(self):
        if not 0.0 <= self.modulation_depth <= 1.0:
            raise DomainError(f"modulation_depth must lie in [0, 1], got {self.modulation_depth}")
        if not self.beat_frequency >= 0:
            raise DomainError(f"beat_frequency must be >= 0, got {self.beat_frequency}")

    @classmethod
    def from_bias_field(
        cls,
        bias_field: float,
        nuclear_gamma: float = 7.5e7,
        modulation_depth: float = 0.3,
        hf_detuning: float = 2.0 * math.pi * 3.0e6,
    ) -> "HyperfineModel":
        """Build the model with the beat frequency set by ``nuclear_gamma * bias_field``.

        ``nuclear_gamma`` is in Hz/T. The default (75 kHz/mT) stands for an
        effective, hyperfine-enhanced nuclear ratio and is a tunable guess.
        """
        return cls(nuclear_gamma * bias_field, modulation_depth, hf_detuning)

    def weight(self, tau):
        return self.modulation_depth * np.sin(np.pi * self.beat_frequency * np.asarray(tau, dtype=float)) ** 2


@dataclass(frozen=True)
class FieldVector:
    """Drive field plus a small co-axial signal field with relative phase."""

    drive_amplitude: float
    signal_amplitude: float = 0.0
    phase: float = 0.0

    def __post_init__(self):
        if not self.drive_amplitude >= 0:
            raise DomainError(f"drive_amplitude must be >= 0, got {self.drive_amplitude}")
        if not self.signal_amplitude >= 0:
            raise DomainError(f"signal_amplitude must be >= 0, got {self.signal_amplitude}")


def rabi_probability(omega, delta, tau):
    """Vectorized Rabi formula ``Omega^2/W^2 * sin^2(W tau / 2)``, ``W^2 = Omega^2 + delta^2``.

    Broadcasts over array inputs. The Omega = delta = 0 point resolves to 0.
    """
    omega = np.asarray(omega, dtype=float)
    delta = np.asarray(delta, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise DomainError("pulse duration must be non-negative")
    w2 = omega * omega + delta * delta
    with np.errstate(invalid="ignore", divide="ignore"):
        amp = np.where(w2 > 0, omega * omega / np.where(w2 > 0, w2, 1.0), 0.0)
    return amp * np.sin(np.sqrt(w2) * tau / 2.0) ** 2


def rabi_population(drive: DriveParams, tau):
    """Excited-state population after a square pulse of duration ``tau`` (no decay)."""
    p = rabi_probability(drive.rabi_frequency, drive.detuning, tau)
    return float(p) if np.ndim(p) == 0 else p


def _taylor_step(omega: float, delta: float, h: float) -> np.ndarray:
    # exp(-i H h) to 12th order, H = (omega sx + delta sz) / 2; equal to a
    # 12-stage explicit Runge-Kutta step for this linear, time-invariant system
    a = -0.5j * h * np.array([[delta, omega], [omega, -delta]], dtype=complex)
    step = np.eye(2, dtype=complex)
    term = np.eye(2, dtype=complex)
    for k in range(1, _TAYLOR_ORDER + 1):
        term = term @ a / k
        step = step + term
    return step


def bloch_integrate(drive: DriveParams, tau: float, step: float = 1e-9) -> float:
    """Numerically propagate the rotating-frame Schrodinger equation.

    The pulse is split into ``n = ceil(tau / step)`` equal steps, each advanced by
    a 12th-order Taylor propagator. Identical steps are composed by binary
    powering, which is exact in arithmetic to stepping ``n`` times.

    Parameters
    ----------
    drive : DriveParams
    tau : float
        Pulse duration in seconds.
    step : float
        Maximum step; must not exceed ``tau / 100``.

    Returns
    -------
    float
        Population of the driven state, starting from the undriven state.
    """
    if tau < 0:
        raise DomainError("pulse duration must be non-negative")
    if not step > 0:
        raise DomainError("step must be positive")
    if tau == 0:
        return 0.0
    if step > tau / 100.0 * (1 + 1e-12):
        raise DomainError(f"step {step:g} s exceeds tau/100 = {tau / 100:g} s")
    n = int(math.ceil(tau / step - 1e-9))
    h = tau / n
    norm = 0.5 * math.hypot(drive.rabi_frequency, drive.detuning) * h
    if norm > 0.5:
        raise DomainError(f"step too coarse for convergence: |H| h = {norm:.3g} > 0.5")
    u = np.linalg.matrix_power(_taylor_step(drive.rabi_frequency, drive.detuning, h), n)
    return float(abs(u[1, 0]) ** 2)


def hyperfine_population(drive: DriveParams, hf: HyperfineModel, tau):
    """Rabi population with the hyperfine mixture applied.

    ``(1 - w) P(delta, tau) + w P(delta + hf_detuning, tau)``; reduces to
    :func:`rabi_population` when the modulation depth is zero.
    """
    w = hf.weight(tau)
    main = rabi_probability(drive.rabi_frequency, drive.detuning, tau)
    side = rabi_probability(drive.rabi_frequency, drive.detuning + hf.hf_detuning, tau)
    p = (1.0 - w) * main + w * side
    return float(p) if np.ndim(p) == 0 else p


def compose_rabi(drive_amplitude, signal_amplitude, phase, gamma: float = GAMMA_NV):
    """Vectorized ``gamma * |B_MW + dB_MW cos(phi)| / sqrt(3)``."""
    total = np.asarray(drive_amplitude, dtype=float) + np.asarray(signal_amplitude, dtype=float) * np.cos(phase)
    out = gamma * np.abs(total) * PROJECTION_100
    return float(out) if out.ndim == 0 else out


def effective_rabi(fields: FieldVector, gamma: float = GAMMA_NV) -> float:
    """Rabi frequency produced by the co-axial sum of drive and signal fields.

    For ``dB_MW <= B_MW`` the result lies between ``gamma (B_MW - dB_MW) / sqrt(3)``
    and ``gamma (B_MW + dB_MW) / sqrt(3)``.
    """
    if not gamma > 0:
        raise DomainError("gamma must be positive")
    return compose_rabi(fields.drive_amplitude, fields.signal_amplitude, fields.phase, gamma)


def drive_for_rabi(omega: float, gamma: float = GAMMA_NV) -> float:
    """Drive field amplitude (T) that alone produces Rabi frequency ``omega``."""
    return omega / (gamma * PROJECTION_100)

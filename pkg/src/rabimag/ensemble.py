"""Monte Carlo model of an inhomogeneously broadened NV ensemble.

Each NV gets a static detuning drawn from a Lorentzian of half width 1/T2*
and a drive strength scaled by a Gaussian fractional error. Ensemble signals
are plain averages of the single-spin Rabi formula over these samples, so
the fringe decay emerges from dephasing rather than from an inserted
exponential.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, FitError
from .fitting import FitResult, fit_rabi_decay
from .protocol import Protocol, pair_populations, protocol_gain, readouts, subtract
from .spin import GAMMA_NV, HyperfineModel

# Block size for seeding; fixed so sample i never depends on n_samples or workers.
SEED_BLOCK = 4096
# Target number of float64 elements materialized per evaluation batch.
_BATCH_ELEMENTS = 2_000_000

DEFAULT_SAMPLES = 20_000


@dataclass(frozen=True)
class EnsembleParams:
    """Physical description of the NV ensemble (SI units, angular frequencies)."""

    gamma: float = GAMMA_NV
    t2_star: float = 9e-6
    mw_inhomogeneity: float = 0.025
    nv_count: float = 1.0e13
    # photon budget tuned by `rabimag calibrate` for a 1.34 pT/rtHz shot floor
    photons_per_nv: float = 0.0155918
    contrast_ceiling: float = 0.02
    stretch: float = 1.0
    projection: float = 1.0 / math.sqrt(6.0)
    bias_field: float = 2.23e-4

    def __post_init__(self):
        checks = [
            ("gamma", self.gamma > 0, "must be > 0"),
            ("t2_star", self.t2_star > 0, "must be > 0"),
            ("mw_inhomogeneity", 0 <= self.mw_inhomogeneity < 1, "must lie in [0, 1)"),
            ("nv_count", self.nv_count >= 1, "must be >= 1"),
            ("photons_per_nv", self.photons_per_nv > 0, "must be > 0"),
            ("contrast_ceiling", 0 < self.contrast_ceiling < 1, "must lie in (0, 1)"),
            ("stretch", self.stretch >= 1, "must be >= 1"),
            ("projection", 0 < self.projection <= 1, "must lie in (0, 1]"),
            ("bias_field", self.bias_field >= 0, "must be >= 0"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise DomainError(f"{name} {msg}, got {getattr(self, name)}")

    @property
    def linewidth(self) -> float:
        """Full resonance linewidth 2/T2* in rad/s."""
        return 2.0 / self.t2_star

    @property
    def photon_budget(self) -> float:
        """Photons collected per readout, ``N * n_avg``."""
        return self.nv_count * self.photons_per_nv


@dataclass
class RabiTrace:
    tau_grid: np.ndarray
    signal: np.ndarray
    omega: float = 0.0
    protocol: str = Protocol.SINGLE.value

    def __post_init__(self):
        self.tau_grid = np.asarray(self.tau_grid, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        if self.tau_grid.shape != self.signal.shape or self.tau_grid.ndim != 1:
            raise DomainError("tau_grid and signal must be 1-D arrays of equal length")
        if np.any(np.diff(self.tau_grid) <= 0):
            raise DomainError("tau_grid must be strictly increasing")


@dataclass
class CharacterizationRow:
    omega: float
    contrast: float
    t2_rho: float
    stretch: float
    fit: FitResult = field(repr=False)


def sample_ensemble(params: EnsembleParams, omega_nominal: float, n_samples: int,
                    seed: int, detuning: float = 0.0):
    """Draw per-NV ``(delta_i, Omega_i)``.

    Returns two arrays. Samples are generated in fixed blocks seeded by
    ``(seed, block_index)``, so a given sample index always gets the same value.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    hwhm = 0.0 if math.isinf(params.t2_star) else 1.0 / params.t2_star
    n_blocks = -(-n_samples // SEED_BLOCK)
    deltas, scales = [], []
    for b in range(n_blocks):
        rng = np.random.default_rng([int(seed), b])
        u = rng.random(SEED_BLOCK)
        x = rng.standard_normal(SEED_BLOCK)
        # open interval keeps tan finite
        u = (u * (1.0 - 2e-16)) + 1e-16
        deltas.append(hwhm * np.tan(np.pi * (u - 0.5)))
        scales.append(1.0 + params.mw_inhomogeneity * x)
    delta = detuning + np.concatenate(deltas)[:n_samples]
    omega = omega_nominal * np.concatenate(scales)[:n_samples]
    return delta, omega


class Ensemble:
    """A fixed realization of the NV ensemble, evaluable at any drive and duration.

    The same NVs are used for every ``Omega``, which keeps finite differences
    over drive strength free of Monte Carlo jitter.
    """

    def __init__(self, params: EnsembleParams, n_samples: int = DEFAULT_SAMPLES, seed: int = 0,
                 detuning: float = 0.0, workers: int = 1):
        self.params = params
        self.n_samples = int(n_samples)
        self.seed = int(seed)
        self.workers = max(1, int(workers))
        self.delta, self.scale = sample_ensemble(params, 1.0, self.n_samples, self.seed, detuning)
        self._blocks = [slice(i, min(i + SEED_BLOCK, self.n_samples))
                        for i in range(0, self.n_samples, SEED_BLOCK)]

    def _rows(self, omega: np.ndarray, tau: np.ndarray, offset: float) -> np.ndarray:
        out = np.zeros(omega.size)
        for blk in self._blocks:
            om = omega[:, None] * self.scale[None, blk]
            de = self.delta[None, blk] + offset
            w2 = om * om + de * de
            with np.errstate(invalid="ignore", divide="ignore"):
                amp = np.where(w2 > 0, om * om / np.where(w2 > 0, w2, 1.0), 0.0)
            out += np.sum(amp * np.sin(np.sqrt(w2) * tau[:, None] / 2.0) ** 2, axis=1)
        return out / self.n_samples

    def mean_population(self, omega, tau, offset: float = 0.0) -> np.ndarray:
        """Ensemble-averaged Rabi population, broadcast over ``omega`` and ``tau``.

        ``offset`` shifts every detuning (used for the spectator hyperfine line).
        Every element is reduced in the same fixed order, independent of how
        rows are batched or how many worker threads run.
        """
        omega, tau = np.broadcast_arrays(np.asarray(omega, dtype=float), np.asarray(tau, dtype=float))
        if np.any(tau < 0):
            raise DomainError("pulse duration must be non-negative")
        if np.any(omega < 0):
            raise DomainError("Rabi frequency must be non-negative")
        shape = omega.shape
        om, ta = omega.ravel(), tau.ravel()
        rows = max(1, _BATCH_ELEMENTS // SEED_BLOCK)
        batches = [slice(i, min(i + rows, om.size)) for i in range(0, om.size, rows)]
        if self.workers > 1 and len(batches) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(lambda s: self._rows(om[s], ta[s], offset), batches))
        else:
            parts = [self._rows(om[s], ta[s], offset) for s in batches]
        return (np.concatenate(parts) if parts else np.zeros(0)).reshape(shape)

    def signal(self, omega, tau, hf: Optional[HyperfineModel] = None,
               protocol: Protocol = Protocol.SINGLE, pi_fidelity: float = 1.0) -> np.ndarray:
        """Normalized fluorescence (SINGLE) or subtracted signal, in fluorescence units."""
        protocol = Protocol.parse(protocol)
        c = self.params.contrast_ceiling
        p = self.mean_population(omega, tau)
        mixing = 0.0
        if hf is not None and hf.modulation_depth > 0 and protocol is not Protocol.PI_PULSE:
            side = self.mean_population(omega, tau, offset=hf.hf_detuning)
            mixing = hf.weight(np.broadcast_to(tau, p.shape)) * (p - side)
        if protocol is Protocol.SINGLE:
            return readouts([p - mixing], c)[0]
        first, second = readouts(pair_populations(p, protocol, pi_fidelity, mixing), c)
        return subtract(first, second, protocol)


def ensemble_rabi_trace(params: EnsembleParams, omega_nominal: float, tau_grid,
                        hf: Optional[HyperfineModel] = None, n_samples: int = DEFAULT_SAMPLES,
                        seed: int = 0, protocol: Protocol = Protocol.SINGLE,
                        pi_fidelity: float = 1.0, detuning: float = 0.0,
                        workers: int = 1) -> RabiTrace:
    """Ensemble-averaged Rabi trace versus pulse duration.

    With ``protocol=SINGLE`` the signal is ``1 - C_max * <P_hf>``; the subtracted
    protocols return the pair difference in the same fluorescence units.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    ens = Ensemble(params, n_samples, seed, detuning, workers)
    sig = ens.signal(omega_nominal, tau_grid, hf, protocol, pi_fidelity)
    return RabiTrace(tau_grid, sig, float(omega_nominal), Protocol.parse(protocol).value)


def default_tau_grid(omega: float, tau_max: float = 100e-6, min_periods: float = 4.0,
                     points_per_period: int = 24, min_points: int = 401) -> np.ndarray:
    """Uniform grid from 0 that covers ``tau_max`` and at least ``min_periods`` fringes."""
    period = 2.0 * math.pi / omega
    t_end = max(tau_max, min_periods * period)
    n = max(min_points, int(math.ceil(t_end / period * points_per_period)) + 1)
    return np.linspace(0.0, t_end, n)


def characterize_vs_omega(params: EnsembleParams, omega_list: Sequence[float], tau_grid=None,
                          hf: Optional[HyperfineModel] = None, n_samples: int = DEFAULT_SAMPLES,
                          seed: int = 0, pi_fidelity: float = 1.0, fix_stretch: Optional[float] = None,
                          tau_max: float = 100e-6, workers: int = 1) -> list:
    """Fit C, T2rho and p for each drive strength.

    Traces are taken with the pi-pulse protocol, which removes the hyperfine
    modulation, and the fitted amplitude is converted back to single-sequence
    contrast. Raises :class:`FitError` carrying the failing ``omega``.
    """
    if len(omega_list) == 0:
        raise DomainError("omega_list must be non-empty")
    ens = Ensemble(params, n_samples, seed, workers=workers)
    gain = protocol_gain(Protocol.PI_PULSE, pi_fidelity)
    rows = []
    for omega in omega_list:
        grid = default_tau_grid(omega, tau_max) if tau_grid is None else np.asarray(tau_grid, float)
        sig = ens.signal(omega, grid, hf, Protocol.PI_PULSE, pi_fidelity)
        trace = RabiTrace(grid, sig, float(omega), Protocol.PI_PULSE.value)
        fit = fit_rabi_decay(trace, fix_stretch=fix_stretch)
        if not fit.ok:
            raise FitError(f"fit failed at omega = 2pi x {omega / 2 / math.pi:.6g} Hz: {fit.message}",
                           omega=omega)
        rows.append(CharacterizationRow(float(omega), fit.contrast / gain, fit.t2_rho, fit.stretch, fit))
    return rows

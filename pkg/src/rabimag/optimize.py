"""Operating-point selection.

Two stages: a figure-of-merit sweep over tabulated ``C(Omega)``, ``T2rho(Omega)``
picks a Rabi frequency and pulse length, then a slope scan at that fixed pulse
length picks the drive strength where the signal responds most steeply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ensemble import DEFAULT_SAMPLES, Ensemble, EnsembleParams
from .errors import DomainError, GridTooCoarseError
from .sequence import SequenceParams
from .spin import HyperfineModel

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class TauOptimum:
    tau: float
    fom: float
    at_boundary: bool = False


@dataclass
class FomPoint:
    omega: float
    tau_opt: float
    fom_value: float
    at_boundary: bool = False


@dataclass
class FomSweep:
    points: list
    best_index: int

    @property
    def best(self) -> FomPoint:
        return self.points[self.best_index]


@dataclass
class SlopeScan:
    omega_opt: float
    slope: float
    omegas: np.ndarray
    signal: np.ndarray
    derivative: np.ndarray


def fom(contrast, t2_rho, stretch, tau, overhead):
    """``C exp(-(tau/T2rho)^p) tau / sqrt(tau + t_O)``; larger is more sensitive."""
    tau = np.asarray(tau, dtype=float)
    val = contrast * np.exp(-((tau / t2_rho) ** stretch)) * tau / np.sqrt(tau + overhead)
    return float(val) if val.ndim == 0 else val


def stationarity_residual(tau, t2_rho, overhead):
    """``1/tau - 1/T2rho - 1/(2 (tau + t_O))``, zero at the optimum when p = 1."""
    return 1.0 / tau - 1.0 / t2_rho - 1.0 / (2.0 * (tau + overhead))


def _golden_max(f, a, b, xtol):
    c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > xtol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def optimal_tau(contrast: float, t2_rho: float, stretch: float, overhead: float,
                search_range=(1e-6, 200e-6), resolution: float = 1e-6) -> TauOptimum:
    """Pulse length maximizing :func:`fom`.

    Grid search at ``resolution`` then golden-section refinement between the
    neighbours of the best grid point. ``at_boundary`` is set when the grid
    maximum sits on either end of ``search_range``.
    """
    lo, hi = search_range
    if not (0 < lo < hi and math.isfinite(hi)):
        raise DomainError("search_range must be finite, positive and increasing")
    n = int(round((hi - lo) / resolution)) + 1
    grid = np.linspace(lo, hi, max(n, 3))
    if contrast <= 0:
        return TauOptimum(float(grid[0]), 0.0, True)
    # log form keeps the flat top well conditioned
    def log_f(t):
        return -((t / t2_rho) ** stretch) + math.log(t) - 0.5 * math.log(t + overhead)

    vals = -((grid / t2_rho) ** stretch) + np.log(grid) - 0.5 * np.log(grid + overhead)
    i = int(np.argmax(vals))
    if i == 0 or i == grid.size - 1:
        tau = float(grid[i])
        return TauOptimum(tau, fom(contrast, t2_rho, stretch, tau, overhead), True)
    tau = _golden_max(log_f, float(grid[i - 1]), float(grid[i + 1]), xtol=1e-12 * grid[i])
    return TauOptimum(tau, fom(contrast, t2_rho, stretch, tau, overhead), False)


def _row_values(row):
    if hasattr(row, "omega"):
        return row.omega, row.contrast, row.t2_rho, row.stretch
    omega, contrast, t2_rho, stretch = row
    return omega, contrast, t2_rho, stretch


def fom_sweep(table: Sequence, overhead: float, search_range=(1e-6, 200e-6),
              resolution: float = 1e-6) -> FomSweep:
    """Optimal pulse length for each tabulated Rabi frequency and the best row.

    Rows are ``(omega, C, T2rho, p)`` tuples or objects with those attributes.
    Ties go to the lowest ``omega``.
    """
    if len(table) == 0:
        raise DomainError("table must be non-empty")
    rows = sorted((_row_values(r) for r in table), key=lambda r: r[0])
    points = []
    for omega, c, t2, p in rows:
        opt = optimal_tau(c, t2, p, overhead, search_range, resolution)
        points.append(FomPoint(float(omega), opt.tau, opt.fom, opt.at_boundary))
    best = int(np.argmax([pt.fom_value for pt in points]))
    return FomSweep(points, best)


def anchored_fom_table(omegas, omega_star: float, tau_star: float, overhead: float,
                       contrast_max: float = 0.02, exponent: float = 1.0) -> list:
    """Synthetic ``C(Omega)``, ``T2rho(Omega)`` whose FOM optimum is ``(omega_star, tau_star)``.

    ``C = C_max Omega^2 / (Omega^2 + Omega_c^2)`` and
    ``T2rho = T* (omega_star / Omega)^exponent`` with p = 1; ``T*`` solves the
    stationarity condition at ``tau_star`` and ``Omega_c`` balances the two
    logarithmic derivatives at ``omega_star``.
    """
    t_star = 1.0 / (1.0 / tau_star - 1.0 / (2.0 * (tau_star + overhead)))
    k = exponent * tau_star / t_star
    if not 0 < k < 2:
        raise DomainError("no interior optimum for these anchors")
    omega_c = omega_star * math.sqrt(k / (2.0 - k))
    out = []
    for om in np.asarray(omegas, dtype=float):
        c = contrast_max * om * om / (om * om + omega_c * omega_c)
        out.append((float(om), float(c), float(t_star * (omega_star / om) ** exponent), 1.0))
    return out


def slope_scan(ens, seq: SequenceParams, hf: Optional[HyperfineModel], omega_grid,
               n_samples: int = DEFAULT_SAMPLES, seed: int = 0, workers: int = 1) -> SlopeScan:
    """Steepest point of the subtracted signal versus drive strength at fixed pulse length.

    ``ens`` is an :class:`Ensemble` or :class:`EnsembleParams`. The slope is the
    centred secant ``(S[i+1] - S[i-1]) / (Omega[i+1] - Omega[i-1])`` at the
    interior point where its magnitude peaks.
    """
    omegas = np.asarray(omega_grid, dtype=float)
    if omegas.ndim != 1 or omegas.size < 3 or np.any(np.diff(omegas) <= 0):
        raise DomainError("omega_grid must be strictly increasing with >= 3 points")
    fringe = 2.0 * math.pi / seq.mw_duration
    step = float(np.max(np.diff(omegas)))
    if step >= fringe / 10.0:
        raise GridTooCoarseError(f"grid step {step:.4g} rad/s not below fringe period/10 = {fringe / 10:.4g} rad/s")
    if isinstance(ens, EnsembleParams):
        ens = Ensemble(ens, n_samples, seed, workers=workers)
    sig = ens.signal(omegas, seq.mw_duration, hf, seq.protocol, seq.pi_fidelity)
    deriv = np.full(omegas.shape, np.nan)
    deriv[1:-1] = (sig[2:] - sig[:-2]) / (omegas[2:] - omegas[:-2])
    i = 1 + int(np.argmax(np.abs(deriv[1:-1])))
    return SlopeScan(float(omegas[i]), float(deriv[i]), omegas, sig, deriv)

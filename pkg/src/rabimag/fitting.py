"""Stretched-exponential decaying sinusoid fit for Rabi traces.

Model::

    S(tau) = B - A * exp(-(tau / T)**p) * cos(w * tau + phi)

Starting values come from the spectral peak (frequency) and a straight-line
fit to the log of the Hilbert envelope (decay time). Refinement is a damped
Gauss-Newton (Levenberg-Marquardt) loop on ``(B, A, ln T, ln p, w, phi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import hilbert

_MAX_ITER = 300


@dataclass
class FitResult:
    contrast: float
    t2_rho: float
    stretch: float
    omega_fit: float
    phase: float
    residual_rms: float
    offset: float = 0.0
    ok: bool = True
    degenerate: bool = False
    iterations: int = 0
    message: str = ""

    @property
    def amplitude(self) -> float:
        return self.contrast / 2.0


def decay_model(tau, offset, amplitude, t2_rho, stretch, omega, phase):
    tau = np.asarray(tau, dtype=float)
    env = np.exp(-(tau / t2_rho) ** stretch)
    return offset - amplitude * env * np.cos(omega * tau + phase)


def _model_and_jacobian(theta, tau, free_p):
    b, a, ln_t, ln_p, w, ph = theta
    t2, p = math.exp(ln_t), math.exp(ln_p)
    pos = tau > 0
    log_ratio = np.zeros_like(tau)
    log_ratio[pos] = np.log(tau[pos] / t2)
    u = np.where(pos, np.exp(p * log_ratio), 0.0)
    env = np.exp(-u)
    c, s = np.cos(w * tau + ph), np.sin(w * tau + ph)
    m = b - a * env * c
    jac = np.empty((tau.size, 6))
    jac[:, 0] = 1.0
    jac[:, 1] = -env * c
    jac[:, 2] = -a * c * env * p * u
    jac[:, 3] = a * c * env * p * log_ratio * u if free_p else 0.0
    jac[:, 4] = a * env * s * tau
    jac[:, 5] = a * env * s
    return m, jac


def _initial_guess(tau, y):
    b0 = float(np.mean(y))
    yc = y - b0
    # resample to a uniform grid for the FFT and Hilbert steps
    uniform = np.linspace(tau[0], tau[-1], tau.size)
    yu = np.interp(uniform, tau, yc)
    dt = uniform[1] - uniform[0]
    n_fft = 8 * (1 << int(math.ceil(math.log2(yu.size))))
    spec = np.abs(np.fft.rfft(yu * np.hanning(yu.size), n_fft))
    freqs = np.fft.rfftfreq(n_fft, dt)
    lo = max(1, int(np.searchsorted(freqs, 1.5 / (uniform[-1] - uniform[0]))))
    k = lo + int(np.argmax(spec[lo:-1]))
    if 0 < k < spec.size - 1:
        y0, y1, y2 = spec[k - 1], spec[k], spec[k + 1]
        den = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    else:
        shift = 0.0
    omega0 = 2.0 * math.pi * (freqs[k] + shift * (freqs[1] - freqs[0]))

    env = np.abs(hilbert(yu))
    edge = max(1, yu.size // 10)
    core = slice(edge, yu.size - edge)
    mask = env[core] > 1e-3 * env[core].max()
    t2_0 = 10.0 * (tau[-1] - tau[0])
    if mask.sum() > 3:
        slope, _ = np.polyfit(uniform[core][mask], np.log(env[core][mask]), 1)
        if slope < 0:
            t2_0 = min(-1.0 / slope, t2_0)

    envelope = np.exp(-tau / t2_0)
    basis = np.column_stack([np.ones_like(tau), envelope * np.cos(omega0 * tau),
                             envelope * np.sin(omega0 * tau)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    amp = math.hypot(coef[1], coef[2])
    phase = math.atan2(coef[2], -coef[1])
    return np.array([coef[0], amp, math.log(t2_0), 0.0, omega0, phase]), float(np.max(np.abs(yc)))


def _levenberg_marquardt(theta, tau, y, free_p, max_iter=_MAX_ITER):
    lam = 1e-3
    m, jac = _model_and_jacobian(theta, tau, free_p)
    r = y - m
    cost = float(r @ r)
    for it in range(1, max_iter + 1):
        jtj = jac.T @ jac
        g = jac.T @ r
        diag = np.diag(jtj).copy()
        diag[diag == 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                step = np.zeros_like(theta)
            trial = theta + step
            m_t, jac_t = _model_and_jacobian(trial, tau, free_p)
            r_t = y - m_t
            cost_t = float(r_t @ r_t)
            if np.isfinite(cost_t) and cost_t <= cost:
                break
            lam *= 4.0
            if lam > 1e16:
                return theta, cost, it, True
        rel = (cost - cost_t) / max(cost, 1e-300)
        theta, m, jac, r, cost = trial, m_t, jac_t, r_t, cost_t
        lam = max(lam / 4.0, 1e-12)
        small_step = np.all(np.abs(step) <= 1e-12 * (np.abs(theta) + 1e-12))
        if rel < 1e-14 or small_step or cost == 0.0:
            return theta, cost, it, True
    return theta, cost, max_iter, False


def fit_rabi_decay(trace, fix_stretch: Optional[float] = None, max_iter: int = _MAX_ITER) -> FitResult:
    """Fit a decaying sinusoid to a Rabi trace.

    Parameters
    ----------
    trace : RabiTrace
    fix_stretch : float, optional
        Pin the stretch exponent (e.g. 1.0) instead of fitting it.

    Returns
    -------
    FitResult
        ``contrast`` is twice the fitted oscillation amplitude. ``ok`` is False
        and ``message`` explains why when the fit did not converge or the
        trace carries no oscillation; values are then not to be trusted.
    """
    tau = np.asarray(trace.tau_grid, dtype=float)
    y = np.asarray(trace.signal, dtype=float)
    span = tau[-1] - tau[0]
    if trace.omega and trace.omega * span / (2 * math.pi) < 3.0:
        return FitResult(0.0, math.nan, math.nan, math.nan, math.nan, math.nan, ok=False,
                         message="trace spans fewer than 3 oscillation periods")

    scale = float(np.max(np.abs(y))) or 1.0
    if float(np.ptp(y)) <= 1e-12 * scale:
        return FitResult(0.0, math.nan, math.nan, 0.0, 0.0, float(np.std(y)), offset=float(np.mean(y)),
                         ok=False, degenerate=True, message="no oscillation: flat trace")

    theta0, ac_scale = _initial_guess(tau, y)
    if fix_stretch is not None:
        theta0[3] = math.log(fix_stretch)
    theta, cost, iters, converged = _levenberg_marquardt(theta0, tau, y, free_p=False)
    if fix_stretch is None:
        theta, cost, more, converged = _levenberg_marquardt(theta, tau, y, free_p=True)
        iters += more

    b, a, ln_t, ln_p, w, ph = theta
    if a < 0:
        a, ph = -a, ph + math.pi
    ph = (ph + math.pi) % (2 * math.pi) - math.pi
    t2, p = math.exp(ln_t), math.exp(ln_p)
    rms = math.sqrt(cost / tau.size)
    result = FitResult(2.0 * a, t2, p, w, ph, rms, offset=b, iterations=iters)
    if not all(np.isfinite(theta)):
        result.ok, result.message = False, "non-finite parameters"
    elif not converged:
        result.ok, result.message = False, f"no convergence in {iters} iterations"
    elif a < 1e-9 * ac_scale:
        result.ok, result.degenerate, result.message = False, True, "degenerate envelope"
    else:
        result.message = "converged"
    return result

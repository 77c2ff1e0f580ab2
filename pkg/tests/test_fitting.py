import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rabimag.ensemble import RabiTrace
from rabimag.fitting import decay_model, fit_rabi_decay

TWO_PI = 2 * math.pi


def synthetic(amp, t2, p, f, phase=0.3, offset=1.0, n=801, span=100e-6):
    tau = np.linspace(0, span, n)
    y = decay_model(tau, offset, amp, t2, p, TWO_PI * f, phase)
    return RabiTrace(tau, y, TWO_PI * f)


@pytest.mark.parametrize("amp,t2,p,f", [
    (0.01, 40e-6, 1.0, 220e3), (0.008, 90e-6, 1.6, 60e3), (0.02, 25e-6, 0.7, 120e3), (0.005, 200e-6, 2.0, 45e3),
])
def test_noiseless_round_trip(amp, t2, p, f):
    fit = fit_rabi_decay(synthetic(amp, t2, p, f))
    assert fit.ok, fit.message
    assert fit.contrast == pytest.approx(2 * amp, rel=1e-3)
    assert fit.t2_rho == pytest.approx(t2, rel=1e-3)
    assert fit.stretch == pytest.approx(p, rel=1e-3)
    assert fit.omega_fit == pytest.approx(TWO_PI * f, rel=1e-3)
    assert fit.residual_rms < 1e-9


@settings(max_examples=25, deadline=None)
@given(st.floats(0.002, 0.03), st.floats(20e-6, 150e-6), st.floats(1.0, 2.0), st.floats(50e3, 250e3),
       st.floats(-3.0, 3.0))
def test_round_trip_property(amp, t2, p, f, phase):
    fit = fit_rabi_decay(synthetic(amp, t2, p, f, phase))
    assert fit.ok
    assert fit.contrast == pytest.approx(2 * amp, rel=1e-3)
    assert fit.t2_rho == pytest.approx(t2, rel=1e-3)
    assert fit.stretch == pytest.approx(p, rel=1e-3)


def test_pinned_stretch():
    fit = fit_rabi_decay(synthetic(0.01, 50e-6, 1.0, 100e3), fix_stretch=1.0)
    assert fit.ok and fit.stretch == 1.0
    assert fit.t2_rho == pytest.approx(50e-6, rel=1e-6)


def test_constant_trace_is_flagged_degenerate():
    tau = np.linspace(0, 100e-6, 401)
    fit = fit_rabi_decay(RabiTrace(tau, np.full(tau.size, 0.98)))
    assert not fit.ok and fit.degenerate


def test_short_trace_rejected():
    fit = fit_rabi_decay(synthetic(0.01, 50e-6, 1.0, 20e3, span=100e-6))
    assert not fit.ok and "periods" in fit.message


def test_noisy_fit_stays_close():
    tr = synthetic(0.01, 60e-6, 1.2, 150e3)
    rng = np.random.default_rng(0)
    noisy = RabiTrace(tr.tau_grid, tr.signal + 2e-4 * rng.standard_normal(tr.signal.size), tr.omega)
    fit = fit_rabi_decay(noisy)
    assert fit.ok
    assert fit.contrast == pytest.approx(0.02, rel=0.05)
    assert fit.t2_rho == pytest.approx(60e-6, rel=0.1)
    assert fit.residual_rms == pytest.approx(2e-4, rel=0.15)


def test_invariants_on_result():
    fit = fit_rabi_decay(synthetic(0.01, 60e-6, 1.0, 80e3, phase=2.9))
    assert fit.contrast >= 0 and fit.t2_rho > 0 and fit.residual_rms >= 0
    assert -math.pi <= fit.phase <= math.pi

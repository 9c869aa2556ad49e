import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numba import njit

from cardiocal.integrator import IntegrationError, IntegratorConfig, integrate

NOARGS = np.zeros(1)


def decay(t, x, p):
    return -x


@njit
def oscillator(t, x, p):
    return np.array([x[1], -x[0]])


@njit
def blowup(t, x, p):
    return x * x


def test_linear_decay_closed_form():
    cfg = IntegratorConfig(rtol=1e-7, atol=1e-7)
    sol = integrate(decay, np.array([1.0]), 0.0, 1.0, cfg, args=NOARGS)
    assert abs(sol.x_final[0] - math.exp(-1)) <= 10 * cfg.rtol


def test_harmonic_energy_drift():
    cfg = IntegratorConfig(rtol=1e-8, atol=1e-8)
    T = 10 * 2 * math.pi
    t = np.linspace(0, T, 2001)
    sol = integrate(oscillator, np.array([1.0, 0.0]), 0.0, T, cfg, args=NOARGS, t_eval=t)
    energy = 0.5 * (sol.y_eval ** 2).sum(axis=1)
    assert np.max(np.abs(energy - 0.5)) / 0.5 < 1e-6
    assert np.allclose(sol.y_eval[:, 0], np.cos(t), atol=1e-6)


def test_fifth_order_convergence():
    # loose tolerances make the step size equal to h_max everywhere
    errs = []
    hs = (0.1, 0.05, 0.025)
    for h in hs:
        cfg = IntegratorConfig(rtol=1.0, atol=1.0, h_init=h, h_max=h, h_min=1e-12)
        sol = integrate(oscillator, np.array([1.0, 0.0]), 0.0, 2.0, cfg, args=NOARGS)
        errs.append(abs(sol.x_final[0] - math.cos(2.0)))
    orders = [math.log2(errs[k] / errs[k + 1]) for k in range(2)]
    for q in orders:
        assert 4.6 < q < 5.4


def test_dense_output_and_sampling_agree():
    cfg = IntegratorConfig(rtol=1e-9, atol=1e-9)
    t = np.linspace(0, 5, 101)
    sol = integrate(oscillator, np.array([1.0, 0.0]), 0.0, 5.0, cfg, args=NOARGS,
                    t_eval=t, dense=True)
    assert np.allclose(sol(t), sol.y_eval, atol=1e-12)
    tt = np.random.default_rng(0).uniform(0, 5, 50)
    assert np.allclose(sol(tt)[:, 0], np.cos(tt), atol=1e-7)
    with pytest.raises(ValueError):
        sol(6.0)


def test_no_dense_output_requested():
    sol = integrate(decay, np.array([1.0]), 0.0, 1.0, args=NOARGS)
    with pytest.raises(ValueError):
        sol(0.5)


@given(rtol=st.sampled_from([1e-4, 1e-6, 1e-8]), y0=st.floats(0.1, 10.0))
def test_accepted_error_within_tolerance(rtol, y0):
    cfg = IntegratorConfig(rtol=rtol, atol=rtol)
    t = np.linspace(0, 2, 21)
    sol = integrate(decay, np.array([y0, -y0]), 0.0, 2.0, cfg, args=NOARGS, t_eval=t)
    assert sol.max_error <= 1.0
    assert np.all(np.isfinite(sol.y_eval))
    assert np.allclose(sol.y_eval[:, 0], y0 * np.exp(-t), rtol=50 * rtol, atol=50 * rtol)


def test_python_and_compiled_paths_agree():
    def py_osc(t, x, p):
        return np.array([x[1], -x[0]])

    cfg = IntegratorConfig(rtol=1e-6, atol=1e-6)
    a = integrate(py_osc, np.array([1.0, 0.0]), 0.0, 3.0, cfg, args=NOARGS)
    b = integrate(oscillator, np.array([1.0, 0.0]), 0.0, 3.0, cfg, args=NOARGS)
    assert a.n_steps == b.n_steps
    assert np.allclose(a.x_final, b.x_final, rtol=1e-13, atol=1e-15)


def test_blowup_reports_failure():
    with pytest.raises(IntegrationError) as info:
        integrate(blowup, np.array([1.0]), 0.0, 2.0, args=NOARGS)
    err = info.value
    assert 0.9 < err.t <= 1.0 + 1e-6
    assert err.x.shape == (1,)


def test_step_budget_exhausted():
    cfg = IntegratorConfig(max_steps=5)
    with pytest.raises(IntegrationError, match="t="):
        integrate(oscillator, np.array([1.0, 0.0]), 0.0, 100.0, cfg, args=NOARGS)


@pytest.mark.parametrize("kw", [
    {"rtol": 0.0}, {"atol": -1.0}, {"h_min": 1.0, "h_max": 0.1}, {"beats": 1},
    {"grid_points": 1}, {"max_steps": 0}, {"h_init": 0.0},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        IntegratorConfig(**kw)


def test_reference_run_completes(reference_cycle):
    assert reference_cycle.n_steps > 0
    assert np.all(np.isfinite(reference_cycle.trajectory.states))

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import signal

from exosquat.actuation import (ActionFilter, PDConfig, frequency_response, interpolate,
                                pd_torque, substep_alphas, transfer_function)

floats = st.floats(-3.0, 3.0, allow_nan=False)


def _run(filt, xs):
    return np.array([filt(x) for x in xs])


# -- filter -----------------------------------------------------------------

def test_constant_input_converges():
    f = ActionFilter(8, initial=np.zeros(8))
    target = np.linspace(-1.0, 1.0, 8)
    for _ in range(200):
        y = f(target)
    np.testing.assert_allclose(y, target, atol=1e-6)


def test_dc_gain_is_one():
    num, den = transfer_function(4.0, 30.0)
    assert num.sum() / den.sum() == pytest.approx(1.0, abs=1e-14)


def test_nyquist_attenuation():
    # simulated response to a 15 Hz sinusoid sampled at 30 Hz
    n = np.arange(300)
    x = np.cos(np.pi * n)
    f = ActionFilter(1, initial=[0.0])
    y = _run(f, x[:, None])[:, 0]
    gain = np.abs(y[100:]).max() / np.abs(x).max()
    assert 20 * np.log10(max(gain, 1e-300)) <= -20.0
    # independent evaluation of the transfer function
    num, den = transfer_function(4.0, 30.0)
    _, h = signal.freqz(num, den, worN=[15.0], fs=30.0)
    assert 20 * np.log10(max(abs(h[0]), 1e-300)) <= -20.0
    assert abs(frequency_response(4.0, 30.0, 15.0)) <= 0.1


def test_response_matches_scipy_lfilter(rng):
    x = rng.normal(size=100)
    num, den = transfer_function(4.0, 30.0)
    ref = signal.lfilter(num, den, x)
    f = ActionFilter(1, initial=[0.0])
    np.testing.assert_allclose(_run(f, x[:, None])[:, 0], ref, atol=1e-12)


def test_step_response_has_no_overshoot():
    f = ActionFilter(1, initial=[0.0])
    y = _run(f, np.ones((120, 1)))[:, 0]
    assert y.max() <= 1.05
    assert y[-1] == pytest.approx(1.0, abs=1e-6)


def test_reset_holds_initial_pose():
    init = np.array([0.3, -0.2, 0.5])
    f = ActionFilter(3, initial=init)
    np.testing.assert_allclose(f(init), init, atol=1e-15)


@given(st.lists(st.tuples(floats, floats), min_size=1, max_size=40))
def test_filter_is_linear(pairs):
    fa, fb, fs = (ActionFilter(1, initial=[0.0]) for _ in range(3))
    for x, y in pairs:
        ya, yb, ys = fa([x]), fb([y]), fs([x + y])
        np.testing.assert_allclose(ys, ya + yb, atol=1e-12)


# -- interpolation ------------------------------------------------------------

def test_interpolate_endpoints_and_midpoint():
    prev, nxt = np.array([0.2, -1.0]), np.array([0.4, 1.0])
    np.testing.assert_array_equal(interpolate(prev, nxt, 0.0), prev)
    np.testing.assert_array_equal(interpolate(prev, nxt, 1.0), nxt)
    assert interpolate(0.2, 0.4, 0.5) == pytest.approx(0.3)


def test_interpolate_rejects_bad_alpha():
    with pytest.raises(ValueError):
        interpolate(0.0, 1.0, 1.5)


def test_substep_schedule_is_linear_ramp():
    a = substep_alphas(30)
    assert len(a) == 30 and a[-1] == 1.0
    ramp = np.array([interpolate(0.0, 3.0, x) for x in a])
    np.testing.assert_allclose(np.diff(ramp), 0.1, atol=1e-12)
    assert ramp[0] == pytest.approx(0.1)


# -- PD -----------------------------------------------------------------------

def test_pd_zero_error_zero_torque():
    assert pd_torque(PDConfig(), [0.7], [0.7], [0.0])[0] == 0.0


def test_pd_clips_at_limit():
    assert pd_torque(PDConfig(), [0.2], [0.0], [1.0])[0] == 100.0
    assert pd_torque(PDConfig(), [-0.2], [0.0], [-1.0])[0] == -100.0


def test_pd_unclipped():
    assert pd_torque(PDConfig(), [0.05], [0.0], [0.0])[0] == pytest.approx(45.0)


def test_pd_config_validates():
    with pytest.raises(ValueError):
        PDConfig(kp=0.0)
    with pytest.raises(ValueError):
        PDConfig(cutoff=20.0)


@given(floats, floats, st.floats(-100, 100), st.floats(0.5, 1.5))
def test_torque_never_exceeds_limit(a, p, pdot, strength):
    assert abs(pd_torque(PDConfig(), [a], [p], [pdot], strength)[0]) <= 100.0


@given(st.floats(-0.1, 0.1), st.floats(-0.1, 0.1), st.floats(-1, 1))
def test_torque_monotone_in_error(e1, e2, pdot):
    lo, hi = sorted((e1, e2))
    cfg = PDConfig()
    assert pd_torque(cfg, [lo], [0.0], [pdot])[0] <= pd_torque(cfg, [hi], [0.0], [pdot])[0]

import math

import numpy as np
import pytest

from idepred._jit import maybe_njit
from idepred.errors import ConfigError, RangeError
from idepred.numerics import HistoryBuffer, make_partition
from idepred.scheme import InitialConditions, SchemeConfig, run_closed_loop
from idepred.transform import TransformDefinition, compose_input, exact_predict, reset_theta, step_theta


def _v_hist(v2, h=0.0025, span=0.75):
    n = round(span / h)
    return HistoryBuffer(-span, h, np.column_stack([np.zeros(n), np.full(n, v2)]))


def test_exact_predict_zero_and_constant(ex42):
    _, tf, _, _ = ex42
    y = np.array([0.3, -0.4])
    assert exact_predict(tf, y, _v_hist(0.0), 0.0, 0.75)[0] == pytest.approx(-0.4)
    assert exact_predict(tf, y, _v_hist(0.2), 0.0, 0.75)[0] == pytest.approx(-0.4 + 0.2 * 0.75, abs=1e-12)
    assert reset_theta(tf, y, _v_hist(0.2), 0.0, 0.75)[0] == exact_predict(tf, y, _v_hist(0.2), 0.0, 0.75)[0]


def test_exact_predict_window_gap(ex42):
    _, tf, _, _ = ex42
    with pytest.raises(RangeError):
        exact_predict(tf, np.zeros(2), _v_hist(0.0, span=0.5), 0.0, 0.75)


def test_step_theta_decay(ex42):
    _, tf, _, _ = ex42
    th, h = np.array([0.8]), 0.01
    for i in range(100):
        th = step_theta(tf, th, np.zeros(2), i * h, h)
    assert th[0] == pytest.approx(0.8 * math.exp(-1.0), abs=1e-9)
    assert step_theta(tf, np.zeros(1), np.zeros(2), 0.0, h)[0] == 0.0


def test_compose_input(ex42):
    _, tf, _, _ = ex42
    np.testing.assert_array_equal(compose_input(tf, [0.5, 0.0], [0.0]), [0.5, 0.0])
    np.testing.assert_array_equal(compose_input(tf, [0.0, 0.0], [1.0]), [-1.0, -1.0])
    for th in (-2.0, 0.3, 1.7):
        assert compose_input(tf, [3.0, 0.0], [th])[1] == -th


@maybe_njit
def _a1(x):
    return np.array([x[0]])


@maybe_njit
def _ft(x, v):
    return np.array([x[0] + v[0]])


@maybe_njit
def _a2(th):
    return np.array([0.0 * th[0]])


@maybe_njit
def _bad_g(th, v):
    return np.array([2.0 * v[0]])


@maybe_njit
def _phi(y, vw, h):
    return y.copy()


def test_consistency_check_detects_mismatch():
    tf = TransformDefinition(1, _ft, _a1, _a2, _bad_g, _phi, 1, 1)
    with pytest.raises(ConfigError, match="consistency"):
        tf.check_consistency()


def test_theta_tracks_future_state(ex42):
    sys, tf, cert, sh = ex42
    cfg = SchemeConfig(horizon=20.0)
    part = make_partition(0.05, 0.02, 20.0, seed=2, h=cfg.h)
    res = run_closed_loop(sys, cert, sh, cfg, part, InitialConditions(x0=np.array([1.0, -1.0, 0.5]), xi0=0.0), tf)
    first = res.sample_t[res.sample_t >= sys.r][0]
    idx, x_fut = res.x_shift(sys.tau)
    sel = res.t[idx] >= first
    err = np.abs(res.theta[idx[sel], 0] - x_fut[sel, 2])
    assert err.max() <= 10 * cfg.h


def test_decoupled_extension_reduces_to_planar(ex41, ex42_decoupled):
    sys2, tf, cert2, sh2 = ex42_decoupled
    sys1, cert1, sh1 = ex41
    cfg = SchemeConfig(horizon=20.0)
    part = make_partition(0.05, 0.05, 20.0, h=cfg.h)
    a = run_closed_loop(sys1, cert1, sh1, cfg, part, InitialConditions(x0=np.array([2.0, -1.5]), xi0=0.0))
    b = run_closed_loop(sys2, cert2, sh2, cfg, part,
                        InitialConditions(x0=np.array([2.0, -1.5, 0.0]), xi0=0.0, theta0=np.zeros(1)), tf)
    np.testing.assert_allclose(a.x, b.x[:, :2], rtol=0, atol=1e-9)
    assert np.all(b.x[:, 2] == 0.0) and np.all(b.theta == 0.0)

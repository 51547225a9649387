import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idepred.errors import ConfigError, NumericError, RangeError, ShapeError
from idepred.numerics import (HistoryBuffer, SamplingPartition, TimeGrid, grid_steps, history_lookup,
                              make_partition, quad_halfopen, rk4_step)


def test_grid_steps_accepts_multiples_and_rejects_others():
    assert grid_steps(0.5, 0.0025) == 200
    assert grid_steps(0.25, 0.0025) == 100
    with pytest.raises(ConfigError, match="tau"):
        grid_steps(0.501, 0.0025, "tau")


def test_time_grid():
    g = TimeGrid(0.01, 0.0, 1.0)
    assert g.n_steps == 100
    assert g.times()[-1] == pytest.approx(1.0)
    assert g.index(0.5) == 50


def test_constant_buffer_returns_constant():
    buf = HistoryBuffer.constant([2.5, -1.0], start=-1.0, length=1.0, h=0.1)
    for t in (-1.0, -0.55, -0.1, -0.0001):
        np.testing.assert_array_equal(history_lookup(buf, t), [2.5, -1.0])


def test_linear_mode_interpolates():
    h = 0.1
    buf = HistoryBuffer(0.0, h, [k * h for k in range(5)], mode="linear")
    assert history_lookup(buf, 1.5 * h)[0] == pytest.approx(1.5 * h, abs=1e-15)


def test_boundary_lookup_uses_left_cell():
    h = 0.5
    buf = HistoryBuffer(0.0, h, [[10.0], [20.0], [30.0]])
    # t = 2h lies on the boundary between cells [h, 2h) and [2h, 3h)
    assert buf.lookup(2 * h)[0] == 20.0
    assert buf.cell(2 * h)[0] == 30.0


def test_out_of_span_names_time_and_span():
    buf = HistoryBuffer(0.0, 0.1, [[1.0], [2.0]])
    with pytest.raises(RangeError, match="span"):
        buf.lookup(5.0)
    with pytest.raises(RangeError):
        buf.lookup(-0.5)


def test_window_covers_half_open_interval():
    buf = HistoryBuffer(0.0, 0.1, np.arange(10.0))
    np.testing.assert_array_equal(buf.window(0.2, 0.5)[:, 0], [2.0, 3.0, 4.0])


def test_push_and_capacity_trim():
    buf = HistoryBuffer(0.0, 1.0, [[0.0]], capacity=3)
    for v in range(1, 6):
        buf.push(v)
    assert len(buf) == 3 and buf.start == 3.0
    with pytest.raises(ShapeError):
        buf.push([1.0, 2.0])


def test_rk4_zero_field_keeps_state():
    s = np.array([1.0, -2.0])
    np.testing.assert_array_equal(rk4_step(lambda t, x: np.zeros(2), s, 0.0, 0.1), s)


def test_rk4_exponential_decay():
    x, h = np.array([1.0]), 0.01
    for i in range(100):
        x = rk4_step(lambda t, y: -y, x, i * h, h)
    assert abs(x[0] - math.exp(-1.0)) < 1e-9


def test_rk4_constant_field_exact():
    assert rk4_step(lambda t, x: np.ones(1), np.zeros(1), 0.0, 0.37)[0] == 0.37


def test_rk4_nonfinite_raises_with_time():
    with pytest.raises(NumericError, match="t=1.5"):
        rk4_step(lambda t, x: np.array([np.inf]), np.zeros(1), 1.5, 0.1)


def test_quadrature_examples():
    assert quad_halfopen(np.ones((50, 1)), 0.01)[0] == pytest.approx(0.5, abs=1e-14)
    s = np.arange(100) * 0.01
    assert quad_halfopen(s[:, None], 0.01)[0] == pytest.approx(0.495, abs=1e-14)
    assert quad_halfopen(np.array([[3.0]]), 0.2, m=1)[0] == pytest.approx(0.6)
    with pytest.raises(ShapeError):
        quad_halfopen(np.ones((4, 1)), 0.1, m=5)


def test_uniform_partition():
    p = make_partition(0.05, 0.05, 1.0, seed=3)
    np.testing.assert_allclose(p.times[:4], [0.0, 0.05, 0.10, 0.15])
    np.testing.assert_allclose(p.gaps, 0.05)


def test_partition_deterministic_and_bounded():
    a = make_partition(0.05, 0.02, 10.0, seed=7)
    b = make_partition(0.05, 0.02, 10.0, seed=7)
    np.testing.assert_array_equal(a.times, b.times)
    assert a.times[0] == 0.0 and a.times[-1] >= 10.0
    assert np.all(a.gaps <= 0.05 + 1e-12) and np.all(a.gaps >= 0.02 - 1e-12)


def test_partition_rejects_tmin_above_ts():
    with pytest.raises(ConfigError):
        make_partition(0.02, 0.05, 1.0)


def test_partition_validation():
    with pytest.raises(ConfigError):
        SamplingPartition(np.array([0.0, 0.1, 0.1]), 0.2, 0.05, np.array([0, 2, 2]))
    with pytest.raises(ConfigError):
        SamplingPartition(np.array([0.0, 0.5]), 0.2, 0.05, np.array([0, 10]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), tmin_steps=st.integers(1, 20))
def test_partition_gaps_property(seed, tmin_steps):
    h = 0.0025
    p = make_partition(0.05, tmin_steps * h, 2.0, seed=seed, h=h)
    assert np.all(p.gaps >= tmin_steps * h - 1e-12)
    assert np.all(p.gaps <= 0.05 + 1e-12)
    np.testing.assert_allclose(p.times / h, np.round(p.times / h), atol=1e-9)

import math

import numpy as np
import pytest

from idepred.errors import ConfigError
from idepred.examples import (U_MAX, Example41Params, Example42Params, build_example41, g_bound,
                              observer_gain, p_bound)
from idepred.scheme import control_law


def test_observer_gain_values():
    L1, L2 = observer_gain(0.005, 4e-4)
    assert L1 == pytest.approx(-0.21793048, abs=1e-8)
    assert L2 == pytest.approx(-1.00008517, abs=1e-8)


def test_parameter_bounds():
    assert g_bound() == 1.0 / 167.0
    assert p_bound(0.005) == pytest.approx(4.627e-4, rel=1e-3)
    Example41Params(g=1.0 / 167.0)
    with pytest.raises(ConfigError, match="1/167"):
        Example41Params(g=0.01)
    with pytest.raises(ConfigError, match="597"):
        Example41Params(p=0.01)
    with pytest.raises(ConfigError):
        Example41Params(c=1.5)


def test_equilibrium_and_level(ex41):
    sys, cert, sh = ex41
    z = np.zeros(2)
    assert np.all(sys.f(z, np.zeros(1)) == 0) and sys.h(z)[0] == 0 and cert.k(z)[0] == 0
    assert cert.V(np.array([2.0, 2.0])) == 4.0 == cert.R


def test_observer_gain_shared_with_builder(ex41):
    _, cert, _ = ex41
    L1, L2 = observer_gain(0.005, 4e-4)
    assert cert.L[0, 0] == L1 and cert.L[1, 0] == L2


def test_control_law_examples(ex41):
    sys, cert, _ = ex41
    assert control_law(cert, sys.U, np.zeros(2))[0] == 0.0
    assert control_law(cert, sys.U, np.array([3.0, 1.5]))[0] == 0.0  # V >= 5
    g = 0.005
    expected = -(4 * g * g + 1 + 2 * g * (4 * g * g - 1))
    assert control_law(cert, sys.U, np.array([1.0, 0.0]))[0] == pytest.approx(expected, abs=1e-14)
    assert expected == pytest.approx(-0.99010, abs=1e-5)


def test_controller_stays_in_U(ex41):
    sys, cert, _ = ex41
    rng = np.random.default_rng(0)
    for x in rng.uniform(-5, 5, size=(500, 2)):
        assert abs(cert.k(x)[0]) <= U_MAX + 1e-12


def test_example42_output_and_input_set(ex42):
    sys, tf, cert, sh = ex42
    np.testing.assert_array_equal(sys.h(np.array([1.0, 2.0, 3.0])), [1.0, 3.0])
    assert sys.U.lo[1] == sys.U.hi[1] == 0.0
    assert tf.check_consistency() <= 1e-8


def test_example42_params_validation():
    with pytest.raises(ConfigError):
        Example42Params(l3=2.0)
    with pytest.raises(ConfigError, match="p_fn"):
        Example42Params(p_fn=lambda th: th + 1.0)


def test_example42_model_field(ex42):
    sys, tf, _, _ = ex42
    x = np.array([0.3, -0.2, 0.7])
    u = np.array([0.4, 0.0])
    np.testing.assert_allclose(sys.f(x, u), tf.model_field(x, u))
    # with the preliminary feedback the x3 channel is a stable filter
    assert sys.f(x, u)[2] == pytest.approx(-0.7)

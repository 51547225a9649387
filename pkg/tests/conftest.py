import numpy as np
import pytest

from idepred._jit import maybe_njit
from idepred.examples import Example42Params, build_example41, build_example42
from idepred.system import BoxSet, CertificateData, ShapingFunctions, SystemDefinition


@pytest.fixture(scope="session")
def ex41():
    return build_example41()


@pytest.fixture(scope="session")
def ex42():
    return build_example42()


@maybe_njit
def _zero_p(th):
    return 0.0 * th


@pytest.fixture(scope="session")
def ex42_decoupled():
    return build_example42(Example42Params(p_fn=_zero_p))


@maybe_njit
def _int_f(x, u):
    return np.array([u[0]])


@maybe_njit
def _id_h(x):
    return np.array([x[0]])


@maybe_njit
def _id_jac(x):
    return np.array([[1.0]])


@maybe_njit
def _half_sq(x):
    return 0.5 * x[0] * x[0]


@maybe_njit
def _grad(x):
    return x.copy()


@maybe_njit
def _quarter_sq(x):
    return 0.25 * x[0] * x[0]


@maybe_njit
def _neg_k(x):
    return np.array([-x[0]])


@maybe_njit
def _psi_big(z):
    return 1e6 + z[0] * z[0]


def scalar_cert(**over):
    kw = dict(V=_half_sq, grad_V=_grad, W=_quarter_sq, P=_half_sq, grad_P=_grad, Q=np.eye(1) * 0.5,
              L=np.array([[-1.0]]), k=_neg_k, R=1.0, a=1.5, b=2.0, c=0.5, mu=0.1, omega=0.1, K1=0.1, K2=0.5)
    kw.update(over)
    return CertificateData(**kw)


@pytest.fixture(scope="session")
def integrator():
    """Scalar plant x' = u(t - tau) with output x(t - r); psi large so saturation never acts."""
    sys = SystemDefinition(1, 1, 1, _int_f, _id_h, _id_jac, tau=0.5, r=0.25, U=BoxSet.symmetric(10.0))
    shaping = ShapingFunctions.default(1.5, 2.0, _psi_big)
    return sys, scalar_cert(), shaping


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS, key=lambda k: (k[:2], k)):
        terminalreporter.write_line(mod.RESULTS[key])

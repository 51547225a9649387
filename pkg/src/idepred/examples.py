"""Built-in plants: the planar cubic system and its three-state extension with an exact predictor."""
from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from ._jit import maybe_njit
from .errors import ConfigError
from .system import BoxSet, CertificateData, ShapingFunctions, SystemDefinition, validate_instance
from .transform import TransformDefinition

U_MAX = 4.0 * math.sqrt(2.0)
SQRT7 = math.sqrt(7.0)
_C7 = (11.0 + 2.0 * SQRT7) ** 2
PSI_OFFSET = (1.0 + 2.0 * math.sqrt(14.0)) / 2.0


def observer_gain(g: float, p: float) -> tuple[float, float]:
    """Injection gains (L1, L2) of the planar observer for drift ``g`` and observer parameter ``p``."""
    den = 2.0 * (1.0 - p * p)
    L1 = -(2.0 * g + 2.0 * p * (1.0 - p * g) + 4.0 * p * _C7 + p) / den
    L2 = -(2.0 * g * p + 4.0 * p * p * _C7 + p * p + 2.0 * (1.0 - p * g)) / den
    return L1, L2


def g_bound() -> float:
    return 1.0 / 167.0


def p_bound(g: float) -> float:
    """Largest observer parameter admitted by the second H4 condition."""
    rhs = 123.0 / (4.0 * SQRT7 * (SQRT7 + 2.0)) - 2.0 - 2.0 * g
    return rhs / (597.0 + 176.0 * SQRT7)


@dataclass(frozen=True)
class Example41Params:
    g: float = 0.005
    p: float = 4e-4
    c: float = 0.5
    tau: float = 0.5
    r: float = 0.25

    R: float = field(default=4.0, init=False)
    a: float = field(default=6.0, init=False)
    b: float = field(default=7.0, init=False)
    K1: float = field(default=0.25, init=False)
    K: float = field(default=2.0, init=False)

    def __post_init__(self):
        if not self.g > 0:
            raise ConfigError(f"g must be positive, got {self.g}")
        if not self.g <= g_bound():
            raise ConfigError(f"g={self.g} violates g <= 1/167")
        if not (0 < self.p < 1):
            raise ConfigError(f"observer parameter p={self.p} must lie in (0, 1)")
        if not self.p <= 0.25:
            raise ConfigError(f"p={self.p} violates p <= 1/4")
        lhs = self.p * (597.0 + 176.0 * SQRT7)
        rhs = 123.0 / (4.0 * SQRT7 * (SQRT7 + 2.0)) - 2.0 - 2.0 * self.g
        if not lhs <= rhs:
            raise ConfigError(f"p(597+176 sqrt7) = {lhs} exceeds 123/(4 sqrt7 (sqrt7+2)) - 2 - 2g = {rhs}")
        if not (0 < self.c < 1):
            raise ConfigError(f"c={self.c} must lie in (0, 1)")

    @property
    def L(self) -> np.ndarray:
        return np.array(observer_gain(self.g, self.p)).reshape(2, 1)

    @property
    def Q(self) -> np.ndarray:
        return 0.5 * np.array([[1.0, -self.p], [-self.p, 1.0]])

    @property
    def omega(self) -> float:
        return self.p / 4.0

    @property
    def mu(self) -> float:
        return self.g / 4.0


@maybe_njit
def _square(th):
    return th * th


@dataclass(frozen=True)
class Example42Params(Example41Params):
    """Adds the smooth coupling ``p_fn(x3)`` (``p_fn(0) = 0``) and the x3 observer gain."""

    p_fn: Callable = _square
    l3: float = -1.0

    def __post_init__(self):
        super().__post_init__()
        if abs(float(self.p_fn(0.0))) > 1e-12:
            raise ConfigError("p_fn(0) must be 0")
        if not self.l3 < 1.0:
            raise ConfigError("x3 observer gain must satisfy l3 < 1")


def _planar_functions(g: float):
    g2 = g * g

    @maybe_njit
    def raw_control(x1, x2):
        return ((4.0 * g2 + 1.0) * x1 + 3.0 * g * x2 + 2.0 * g * (4.0 * g2 - 1.0) * x1 ** 3
                + 12.0 * g2 * x2 * x1 * x1 + 6.0 * g * x2 * x2 * x1)

    @maybe_njit
    def k_planar(x1, x2):
        vv = 0.5 * x1 * x1 + 0.5 * x2 * x2
        gate = 5.0 - min(5.0, max(4.0, vv))
        return -gate * min(U_MAX, max(-U_MAX, raw_control(x1, x2)))

    return raw_control, k_planar


@maybe_njit
def half_sq_norm(x):
    s = 0.0
    for i in range(x.shape[0]):
        s += x[i] * x[i]
    return 0.5 * s


@maybe_njit
def identity_grad(x):
    return x.copy()


@maybe_njit
def psi_ball(z):
    return PSI_OFFSET + half_sq_norm(z)


def _level_radius(level):
    return math.sqrt(2.0 * max(level, 0.0))


def build_example41(params: Example41Params | None = None):
    """Planar plant ``x1' = g x1 - x1^3 + x2``, ``x2' = -x2^3 + u(t - tau)``, output ``x1``."""
    params = params or Example41Params()
    g = float(params.g)
    L1, L2 = observer_gain(g, params.p)
    _, k_planar = _planar_functions(g)

    @maybe_njit
    def f(x, u):
        return np.array([g * x[0] - x[0] ** 3 + x[1], -x[1] ** 3 + u[0]])

    @maybe_njit
    def h(x):
        return np.array([x[0]])

    @maybe_njit
    def jac_h(x):
        return np.array([[1.0, 0.0]])

    @maybe_njit
    def W(x):
        return 0.5 * half_sq_norm(x)

    @maybe_njit
    def P(x):
        s = x[1] + 2.0 * g * x[0]
        return 0.5 * x[0] * x[0] + 0.5 * s * s

    @maybe_njit
    def grad_P(x):
        s = x[1] + 2.0 * g * x[0]
        return np.array([x[0] + 2.0 * g * s, s])

    hess = np.array([[1.0 + 4.0 * g * g, 2.0 * g], [2.0 * g, 1.0]])

    def hess_P(x):
        return hess

    @maybe_njit
    def k(x):
        return np.array([k_planar(x[0], x[1])])

    sys = SystemDefinition(n=2, m=1, k=1, f=f, h=h, jac_h=jac_h, tau=params.tau, r=params.r,
                           U=BoxSet.symmetric(U_MAX), name="example-4.1")
    cert = CertificateData(
        V=half_sq_norm, grad_V=identity_grad, W=W, P=P, grad_P=grad_P,
        Q=params.Q, L=np.array([[L1], [L2]]), k=k,
        R=params.R, a=params.a, b=params.b, c=params.c, mu=params.mu, omega=params.omega,
        K1=params.K1, K2=0.5 * (1.0 - params.p), hess_P=hess_P, level_radius=_level_radius,
    )
    shaping = ShapingFunctions.default(params.a, params.b, psi_ball, K=params.K)
    validate_instance(sys, cert, shaping)
    return sys, cert, shaping


def phi_closed_form(params: Example41Params, z, y, u) -> float:
    """Correction magnitude written out for the planar plant (independent of the generic path)."""
    g = params.g
    L1, L2 = observer_gain(g, params.p)
    z1, z2 = float(z[0]), float(z[1])
    u = float(np.atleast_1d(u)[0])
    y = float(np.atleast_1d(y)[0])
    s = 0.5 * (z1 * z1 + z2 * z2)
    ramp = min(1.0, max(0.0, (s - params.a) / (params.b - params.a)))
    val = ((g + 0.25) * z1 ** 2 - z1 ** 4 + z1 * z2 - z2 ** 4 + z2 * u + 0.25 * z2 ** 2
           + ramp * (L1 * z1 + L2 * z2) * (z1 - y))
    return max(0.0, val)


def build_example42(params: Example42Params | None = None):
    """Three-state plant with ``x3' = v2(t - tau)`` and coupling ``p_fn(x3)``; output ``(x1, x3)``.

    Returns ``(sys, transform, cert, shaping)`` where ``sys`` is the transformed
    plant ``f(x, u) = f_tilde(x, a2(a1(x)) + u)`` used by observer and predictor.
    """
    params = params or Example42Params()
    g = float(params.g)
    L1, L2 = observer_gain(g, params.p)
    l3 = float(params.l3)
    pf = params.p_fn
    if not hasattr(pf, "py_func"):
        pf = maybe_njit(pf)
    _, k_planar = _planar_functions(g)

    @maybe_njit
    def f_tilde(x, v):
        return np.array([g * x[0] - x[0] ** 3 + x[1], -x[1] ** 3 + pf(x[2]) + v[0], v[1]])

    @maybe_njit
    def a1(x):
        return np.array([x[2]])

    @maybe_njit
    def a2(th):
        return np.array([-pf(th[0]), -th[0]])

    @maybe_njit
    def g_red(th, v):
        return np.array([v[1]])

    @maybe_njit
    def phi(y, vwin, hh):
        s = 0.0
        for i in range(vwin.shape[0]):
            s += vwin[i, 1]
        return np.array([y[1] + hh * s])

    @maybe_njit
    def f(x, u):
        return f_tilde(x, a2(a1(x)) + u)

    @maybe_njit
    def h(x):
        return np.array([x[0], x[2]])

    @maybe_njit
    def jac_h(x):
        return np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])

    @maybe_njit
    def W(x):
        # the x3 channel lets the planar drift grow on part of {V >= R}; half the planar rate is kept
        return 0.25 * half_sq_norm(x)

    @maybe_njit
    def P(x):
        s = x[1] + 2.0 * g * x[0]
        return 0.5 * x[0] * x[0] + 0.5 * s * s + 0.5 * x[2] * x[2]

    @maybe_njit
    def grad_P(x):
        s = x[1] + 2.0 * g * x[0]
        return np.array([x[0] + 2.0 * g * s, s, x[2]])

    hess = np.array([[1.0 + 4.0 * g * g, 2.0 * g, 0.0], [2.0 * g, 1.0, 0.0], [0.0, 0.0, 1.0]])

    def hess_P(x):
        return hess

    @maybe_njit
    def k(x):
        return np.array([k_planar(x[0], x[1]), 0.0])

    Q = np.zeros((3, 3))
    Q[:2, :2] = params.Q
    Q[2, 2] = 0.5
    L = np.array([[L1, 0.0], [L2, 0.0], [0.0, l3]])
    sys = SystemDefinition(n=3, m=2, k=2, f=f, h=h, jac_h=jac_h, tau=params.tau, r=params.r,
                           U=BoxSet(np.array([-U_MAX, 0.0]), np.array([U_MAX, 0.0])), name="example-4.2")
    transform = TransformDefinition(l=1, f_tilde=f_tilde, a1=a1, a2=a2, g=g_red, phi=phi, n=3, m=2)
    cert = CertificateData(
        V=half_sq_norm, grad_V=identity_grad, W=W, P=P, grad_P=grad_P, Q=Q, L=L, k=k,
        R=params.R, a=params.a, b=params.b, c=params.c, mu=params.mu,
        omega=min(params.omega, 0.5 * (1.0 - l3)), K1=params.K1,
        K2=min(0.5 * (1.0 - params.p), 0.5), hess_P=hess_P, level_radius=_level_radius,
    )
    shaping = ShapingFunctions.default(params.a, params.b, psi_ball, K=params.K)
    validate_instance(sys, cert, shaping)
    return sys, transform, cert, shaping


BUILTINS = {
    "example-4.1": build_example41,
    "example-4.2": build_example42,
}

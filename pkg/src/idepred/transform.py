"""Preliminary exact-predictor feedback for systems that become absorbing after a transformation.

The physical plant ``x' = f_tilde(x, v(t - tau))`` is driven by
``v = u + a2(theta)`` where ``theta`` tracks ``a1(x(t + tau))``: it flows by
``theta' = g(theta, a2(theta) + u)`` and is reset at every sample from the
delayed output and the stored ``v`` window through the exact map ``phi``.
"""
from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .numerics import HistoryBuffer, rk4_step
from .system import fd_gradient

_ZERO_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TransformDefinition:
    """``phi(y, v_window, h)`` receives the ``v`` samples of the cells covering
    ``[t_i - r - tau, t_i)`` as an array of shape ``(M, m)``."""

    l: int
    f_tilde: Callable
    a1: Callable
    a2: Callable
    g: Callable
    phi: Callable
    n: int
    m: int

    def __post_init__(self):
        zl, zm, zn = np.zeros(self.l), np.zeros(self.m), np.zeros(self.n)
        for name, val in (("a1(0)", self.a1(zn)), ("a2(0)", self.a2(zl)),
                          ("g(0, 0)", self.g(zl, zm)), ("f_tilde(0, 0)", self.f_tilde(zn, zm))):
            if np.max(np.abs(np.asarray(val))) > _ZERO_TOL:
                raise ConfigError(f"{name} = {val} is not zero")

    def model_field(self, x, u):
        """``f(x, u) = f_tilde(x, a2(a1(x)) + u)``."""
        return self.f_tilde(x, self.a2(self.a1(x)) + u)

    def check_consistency(self, n_points: int = 200, radius: float = 3.0, seed: int = 0,
                          tol: float = 1e-8) -> float:
        """Max sampled residual of ``D a1(x) f_tilde(x, v) = g(a1(x), v)``; raises above ``tol``."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_points):
            x = rng.uniform(-radius, radius, self.n)
            v = rng.uniform(-radius, radius, self.m)
            J = np.array([fd_gradient(lambda s, c=c: self.a1(s)[c], x) for c in range(self.l)])
            lhs = J @ np.asarray(self.f_tilde(x, v))
            rhs = np.asarray(self.g(self.a1(x), v))
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
        if worst > tol:
            raise ConfigError(f"transform consistency residual {worst} exceeds {tol}")
        return worst


def exact_predict(transform: TransformDefinition, y_sample, v_history: HistoryBuffer,
                  t_i: float, span: float) -> np.ndarray:
    """Evaluate ``phi`` on the ``v`` window ``[t_i - span, t_i)`` with ``span = r + tau``."""
    win = v_history.window(t_i - span, t_i)
    return np.asarray(transform.phi(np.atleast_1d(np.asarray(y_sample, dtype=float)),
                                    np.ascontiguousarray(win), v_history.h))


def reset_theta(transform: TransformDefinition, y_sample, v_history: HistoryBuffer,
                t_i: float, span: float) -> np.ndarray:
    return exact_predict(transform, y_sample, v_history, t_i, span)


def step_theta(transform: TransformDefinition, theta, u, t: float, h: float) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    try:
        return rk4_step(lambda _t, th: transform.g(th, transform.a2(th) + u),
                        np.atleast_1d(np.asarray(theta, dtype=float)), t, h)
    except NumericError as exc:
        raise NumericError(f"theta: {exc}") from None


def compose_input(transform: TransformDefinition, u, theta) -> np.ndarray:
    return np.asarray(u, dtype=float) + np.asarray(transform.a2(np.atleast_1d(theta)))

"""Plant, certificate objects, shaping functions and the observer correction term."""
from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from ._jit import maybe_njit
from .errors import ConfigError, SingularityError

GRAD_EPS = 1e-10
_ZERO_TOL = 1e-12
_FD_RTOL = 1e-5


@dataclass(frozen=True, eq=False)
class BoxSet:
    """Axis-aligned box; a component with ``lo == hi`` is a fixed point."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape:
            raise ConfigError("box bounds differ in shape")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ConfigError("input set must be compact (finite bounds)")
        if np.any(lo > hi):
            raise ConfigError("box lower bound exceeds upper bound")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ConfigError("input set must contain 0")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, *half_widths):
        w = np.asarray(half_widths, dtype=float)
        return cls(-w, w)

    @property
    def dim(self) -> int:
        return self.lo.size

    def contains(self, u, tol: float = 0.0) -> bool:
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lo - tol) and np.all(u <= self.hi + tol))

    def project(self, u) -> np.ndarray:
        return np.clip(np.asarray(u, dtype=float), self.lo, self.hi)


def project_U(U: BoxSet, u_raw) -> np.ndarray:
    return U.project(u_raw)


@dataclass(frozen=True, eq=False)
class SystemDefinition:
    """``x' = f(x, u(t - tau))`` measured through ``y = h(x(t - r))``.

    ``jac_h(x)`` returns the ``k x n`` Jacobian of ``h``.  Callables must be
    numba-compilable (plain numpy on 1-D arrays) to be usable in the fused kernels.
    """

    n: int
    m: int
    k: int
    f: Callable
    h: Callable
    jac_h: Callable
    tau: float
    r: float
    U: BoxSet
    name: str = "custom"

    def __post_init__(self):
        if self.tau < 0 or self.r < 0:
            raise ConfigError("delays must be non-negative")
        if self.U.dim != self.m:
            raise ConfigError(f"input set has dimension {self.U.dim}, expected m={self.m}")
        f0 = np.asarray(self.f(np.zeros(self.n), np.zeros(self.m)))
        h0 = np.asarray(self.h(np.zeros(self.n)))
        if f0.shape != (self.n,) or h0.shape != (self.k,):
            raise ConfigError("f or h returns an array of the wrong shape")
        if np.max(np.abs(f0)) > _ZERO_TOL:
            raise ConfigError(f"f(0, 0) = {f0} is not zero")
        if np.max(np.abs(h0)) > _ZERO_TOL:
            raise ConfigError(f"h(0) = {h0} is not zero")


@dataclass(frozen=True, eq=False)
class CertificateData:
    V: Callable
    grad_V: Callable
    W: Callable
    P: Callable
    grad_P: Callable
    Q: np.ndarray
    L: np.ndarray
    k: Callable
    R: float
    a: float
    b: float
    c: float
    mu: float
    omega: float
    K1: float
    K2: float
    hess_P: Callable | None = None
    # radius of a ball containing {V <= level}; used to bound rejection sampling
    level_radius: Callable | None = None

    def __post_init__(self):
        Q = np.ascontiguousarray(np.asarray(self.Q, dtype=float))
        L = np.ascontiguousarray(np.atleast_2d(np.asarray(self.L, dtype=float)))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "L", L)
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-14):
            raise ConfigError("Q must be symmetric")
        eig = np.linalg.eigvalsh(Q)
        if eig[0] <= 0:
            raise ConfigError("Q must be positive definite")
        if not (0 < self.K2 <= eig[-1] + 1e-15):
            raise ConfigError(f"K2={self.K2} must lie in (0, |Q|={eig[-1]}]")
        if eig[0] < self.K2 - 1e-15:
            raise ConfigError(f"smallest eigenvalue of Q {eig[0]} is below K2={self.K2}")
        if not (self.R <= self.a < self.b):
            raise ConfigError(f"need R <= a < b, got R={self.R}, a={self.a}, b={self.b}")
        if not (0 < self.c < 1):
            raise ConfigError(f"c must lie in (0, 1), got {self.c}")
        for name in ("mu", "omega", "K1"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        n = Q.shape[0]
        k0 = np.asarray(self.k(np.zeros(n)))
        if np.max(np.abs(k0)) > _ZERO_TOL:
            raise ConfigError(f"controller k(0) = {k0} is not zero")

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def Q_norm(self) -> float:
        return float(np.linalg.eigvalsh(self.Q)[-1])


@maybe_njit
def linear_ramp(s, a, b):
    if s <= a:
        return 0.0
    if s >= b:
        return 1.0
    return (s - a) / (b - a)


@maybe_njit
def remark_q(s):
    """``q(s) = 2/s - 1/s**2`` for ``s > 1`` and 1 otherwise; ``s q(s) <= 2``."""
    if s <= 1.0:
        return 1.0
    return 2.0 / s - 1.0 / (s * s)


@dataclass(frozen=True, eq=False)
class ShapingFunctions:
    """Ramp ``p`` on the levels (a, b), saturation ``q`` with bound ``K`` and envelope ``psi``."""

    ramp: Callable
    q: Callable
    K: float
    psi: Callable
    a: float = field(default=float("nan"))
    b: float = field(default=float("nan"))

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"saturation bound K must be >= 1, got {self.K}")

    @classmethod
    def default(cls, a: float, b: float, psi: Callable, K: float = 2.0):
        a_, b_ = float(a), float(b)

        @maybe_njit
        def ramp(s):
            return linear_ramp(s, a_, b_)

        return cls(ramp=ramp, q=remark_q, K=K, psi=psi, a=a_, b=b_)


def sat_q(shaping: ShapingFunctions, s: float) -> float:
    return float(shaping.q(float(s)))


def ramp_p(shaping: ShapingFunctions, s: float) -> float:
    return float(shaping.ramp(float(s)))


def _phi_value(sys, cert, shaping, z, y, u):
    z = np.asarray(z, dtype=float)
    gv = np.asarray(cert.grad_V(z), dtype=float)
    inj = cert.L @ (np.asarray(sys.h(z)) - np.atleast_1d(np.asarray(y, dtype=float)))
    Vz = float(cert.V(z))
    fz = np.asarray(sys.f(z, np.atleast_1d(np.asarray(u, dtype=float))))
    return gv @ fz + float(cert.W(z)) + float(shaping.ramp(Vz)) * (gv @ inj), gv, inj, Vz


def correction_phi(sys: SystemDefinition, cert: CertificateData, shaping: ShapingFunctions,
                   z, y, u) -> float:
    """``max(0, dV f(z,u) + W(z) + p(V(z)) dV L (h(z) - y))``."""
    val, *_ = _phi_value(sys, cert, shaping, z, y, u)
    return max(0.0, float(val))


def khat(sys: SystemDefinition, cert: CertificateData, shaping: ShapingFunctions,
         z, y, u) -> np.ndarray:
    """Output injection plus the correction pushing ``V(z)`` down outside ``{V <= R}``."""
    val, gv, inj, Vz = _phi_value(sys, cert, shaping, z, y, u)
    if Vz <= cert.R:
        return inj
    n2 = float(gv @ gv)
    if math.sqrt(n2) <= GRAD_EPS:
        raise SingularityError(f"|grad V(z)| <= {GRAD_EPS} with V(z)={Vz} > R at z={np.asarray(z)}")
    return inj - (max(0.0, float(val)) / n2) * gv


def fd_gradient(fn: Callable, x, eps: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        g[i] = (float(fn(x + e)) - float(fn(x - e))) / (2 * eps)
    return g


def fd_hessian(fn: Callable, x, eps: float = 1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    H = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = eps
            ej[j] = eps
            H[i, j] = (float(fn(x + ei + ej)) - float(fn(x + ei - ej))
                       - float(fn(x - ei + ej)) + float(fn(x - ei - ej))) / (4 * eps * eps)
    return 0.5 * (H + H.T)


def validate_instance(sys: SystemDefinition, cert: CertificateData, shaping: ShapingFunctions,
                      n_points: int = 64, seed: int = 0) -> None:
    """Sampled construction checks tying plant, certificate and shaping together."""
    if cert.n != sys.n or cert.L.shape != (sys.n, sys.k):
        raise ConfigError("certificate dimensions do not match the system")
    rng = np.random.default_rng(seed)
    radius = cert.level_radius(cert.b) if cert.level_radius else 3.0
    pts = rng.uniform(-radius, radius, size=(n_points, sys.n))
    for x in pts:
        for name, fn, grad in (("V", cert.V, cert.grad_V), ("P", cert.P, cert.grad_P)):
            g_fd = fd_gradient(fn, x)
            g = np.asarray(grad(x), dtype=float)
            scale = max(1.0, float(np.max(np.abs(g_fd))))
            if np.max(np.abs(g - g_fd)) > _FD_RTOL * scale:
                raise ConfigError(f"grad_{name} disagrees with finite differences at x={x}")
        if not sys.U.contains(cert.k(x), tol=1e-12):
            raise ConfigError(f"controller leaves U at x={x}")
    # shaping: ramp levels, q bound, psi implication
    for s in np.linspace(0.0, 2 * cert.b, 41):
        p = float(shaping.ramp(s))
        if not (0.0 <= p <= 1.0) or (s <= cert.a and p != 0.0) or (s >= cert.b and p != 1.0):
            raise ConfigError(f"ramp p({s}) = {p} violates the level constraints")
    for s in np.linspace(0.0, 100.0, 1001):
        qs = float(shaping.q(s))
        if (s <= 1.0 and qs != 1.0) or (s >= 1.0 and s * qs > shaping.K + 1e-12):
            raise ConfigError(f"saturation q({s}) = {qs} violates its constraints")
    for z in pts:
        pz = float(shaping.psi(z))
        if pz < 1.0:
            raise ConfigError(f"psi(z) = {pz} < 1 at z={z}")
        lvl = max(float(cert.V(z)), cert.b)
        rad = cert.level_radius(lvl) if cert.level_radius else None
        if rad is not None:
            # points on the boundary direction of the enclosing ball are the worst case
            for d in rng.normal(size=(8, sys.n)):
                x = d / np.linalg.norm(d) * rad * rng.uniform(0.0, 1.0)
                if float(cert.V(x)) <= lvl and np.linalg.norm(x) > pz + 1e-12:
                    raise ConfigError(f"psi implication fails at z={z}, x={x}")

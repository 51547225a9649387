"""Sampling-based certification: assumption checks, sampled constants and rate inequalities.

Suprema are estimated from seeded scrambled Halton sequences.  Every estimate
is evaluated on a prefix of a fixed sequence, so doubling the sample count can
only raise it, and the reported ``refinement`` is the change over the last
doubling.  All sampled constants are lower estimates of the true suprema; a
passing rate check therefore means "certified under the sampled estimates".
"""
from __future__ import annotations

import json
import math
from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from . import kernels as K
from ._jit import maybe_njit
from .errors import ConfigError, DomainError
from .examples import observer_gain
from .system import BoxSet, CertificateData, ShapingFunctions, SystemDefinition, fd_hessian

PAIR_EPS = 1e-8
_CHUNK = 1 << 16
_RAW_CAP = 1 << 22
_TOL_REL = 1e-9


@dataclass(frozen=True)
class SamplerConfig:
    n_samples: int = 4096
    seed: int = 0
    local_fraction: float = 0.5   # share of pairs drawn close together
    local_scale: float = 1e-3     # relative radius of the local pairs
    y_box: float = 10.0           # half-width of the output box used for G2

    def __post_init__(self):
        if self.n_samples < 2:
            raise ConfigError("n_samples must be at least 2")
        if not 0.0 <= self.local_fraction <= 1.0:
            raise ConfigError("local_fraction must lie in [0, 1]")


def _halton(dim: int, n: int, seed: int) -> np.ndarray:
    """First ``n`` points of a scrambled Halton sequence (prefix-stable)."""
    eng = qmc.Halton(d=dim, scramble=True, seed=seed)
    return eng.random(n)


# ---------------------------------------------------------------------------
# sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RealizedSet:
    """A sampleable compact set: a proposal (ball or box) plus an optional membership filter."""

    dim: int
    radius: float = 0.0
    box: BoxSet | None = None
    member: Callable | None = None   # (n, dim) array -> bool mask
    inner: float = 0.0               # proposal shell inner radius

    @property
    def n_coords(self) -> int:
        return self.dim if self.box is not None else self.dim + 1

    def map(self, u: np.ndarray) -> np.ndarray:
        """Map unit-cube coordinates ``(n, n_coords)`` into the proposal region."""
        if self.box is not None:
            return self.box.lo + (self.box.hi - self.box.lo) * u
        d = self.dim
        g = ndtri(np.clip(u[:, :d], 1e-12, 1 - 1e-12))
        nrm = np.linalg.norm(g, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        lo, hi = self.inner ** d, self.radius ** d
        rad = (lo + (hi - lo) * u[:, d:d + 1]) ** (1.0 / d)
        return g / nrm * rad

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        if self.box is not None:
            ok = np.all((pts >= self.box.lo - 1e-15) & (pts <= self.box.hi + 1e-15), axis=1)
        else:
            ok = np.linalg.norm(pts, axis=1) <= self.radius * (1 + 1e-12)
        if self.member is not None:
            ok &= self.member(pts)
        return ok


def box_set(box: BoxSet) -> RealizedSet:
    return RealizedSet(dim=box.dim, box=box)


def ball_set(dim: int, radius: float) -> RealizedSet:
    if radius < 0:
        raise DomainError("ball radius must be non-negative")
    return RealizedSet(dim=dim, radius=float(radius))


_BATCH: dict = {}


def batch_scalar(fn: Callable) -> Callable:
    """Vectorize a scalar function of a 1-D state over the rows of a 2-D array."""
    if fn in _BATCH:
        return _BATCH[fn]
    f = K.as_jit(fn)

    @maybe_njit
    def run(X):
        out = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            out[i] = f(X[i])
        return out

    def call(X):
        return run(np.ascontiguousarray(X, dtype=np.float64))

    _BATCH[fn] = call
    return call


def sublevel_set(cert: CertificateData, level: float, lower: float | None = None,
                 default_radius: float = 10.0) -> RealizedSet:
    """``{x : lower <= V(x) <= level}`` (``lower=None``: no lower bound)."""
    Vb = batch_scalar(cert.V)
    radius = cert.level_radius(level) if cert.level_radius else default_radius
    inner = cert.level_radius(lower) if (cert.level_radius and lower is not None) else 0.0
    lvl, low = float(level), lower

    def member(pts):
        v = Vb(pts)
        ok = v <= lvl
        if low is not None:
            ok &= v >= low
        return ok

    return RealizedSet(dim=cert.n, radius=radius, member=member, inner=min(inner, radius))


@dataclass(frozen=True)
class CompactSetSpec:
    """``kind`` is ``sublevel`` (``level``), ``ball`` (``radius``), ``derived-S3`` or ``derived-S4``."""

    kind: str
    level: float | None = None
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in ("sublevel", "ball", "derived-S3", "derived-S4"):
            raise ConfigError(f"unknown set kind {self.kind!r}")
        if self.kind == "sublevel" and self.level is None:
            raise ConfigError("sublevel set needs a level")
        if self.kind == "ball" and self.radius is None:
            raise ConfigError("ball set needs a radius")

    def realize(self, sys: SystemDefinition, cert: CertificateData, shaping: ShapingFunctions | None = None,
                delta: float | None = None, sampler: SamplerConfig = SamplerConfig()) -> RealizedSet:
        if self.kind == "sublevel":
            return sublevel_set(cert, self.level)
        if self.kind == "ball":
            return ball_set(sys.n, self.radius)
        if shaping is None:
            raise ConfigError("derived sets need the shaping functions")
        r4 = shaping.K * sup_psi(cert, shaping, sampler)
        if self.kind == "derived-S4":
            return ball_set(sys.n, r4)
        if delta is None:
            raise ConfigError("derived-S3 needs delta")
        return ball_set(sys.n, r4 + delta * RhoEstimator(sys, sampler).value(r4))


def _sample(sets: list[RealizedSet], n: int, seed: int, extra: int = 0,
            accept: Callable | None = None, max_raw: int | None = None,
            allow_empty: bool = False) -> tuple[list[np.ndarray], np.ndarray]:
    """First ``n`` accepted joint samples from one prefix-stable sequence.

    The sequence is drawn in chunks until ``n`` points are accepted or
    ``max_raw`` raw points were spent.  Returns per-set point arrays and the
    matching ``extra`` trailing coordinates.  ``accept`` may add a joint filter
    over the mapped blocks.
    """
    dims = [s.n_coords for s in sets]
    total = sum(dims) + extra
    if max_raw is None:
        max_raw = int(min(max(64 * n, 1 << 16), _RAW_CAP))
    eng = qmc.Halton(d=total, scramble=True, seed=seed)
    kept: list[list[np.ndarray]] = [[] for _ in range(len(sets) + 1)]
    got = drawn = 0
    while got < n and drawn < max_raw:
        m = min(_CHUNK, max_raw - drawn)
        raw = eng.random(m)
        drawn += m
        blocks, ok, col = [], np.ones(m, dtype=bool), 0
        for s, d in zip(sets, dims):
            pts = s.map(raw[:, col:col + d])
            ok &= s.contains(pts)
            blocks.append(pts)
            col += d
        if accept is not None:
            ok &= accept(*blocks)
        idx = np.flatnonzero(ok)[: n - got]
        for store, blk in zip(kept, [*blocks, raw[:, col:]]):
            store.append(blk[idx])
        got += idx.size
    if got == 0 and not allow_empty:
        raise DomainError("rejection sampling produced no points in the requested set")
    out = [np.concatenate(st) if st else np.empty((0, d)) for st, d in zip(kept, [*[s.dim for s in sets], extra])]
    return out[:-1], out[-1]


# ---------------------------------------------------------------------------
# suprema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Estimate:
    value: float
    n_samples: int
    refinement: float

    def as_dict(self) -> dict:
        return asdict(self)


def _prefix_estimate(q: np.ndarray) -> Estimate:
    q = np.asarray(q, dtype=float)
    n = q.size
    if n == 0:
        raise DomainError("no admissible sample pairs")
    full = float(np.max(q))
    half = float(np.max(q[: max(1, n // 2)]))
    return Estimate(full, n, full - half)


def pair_sup(numerator: Callable, A: RealizedSet, B: RealizedSet, aux: tuple = (),
             sampler: SamplerConfig = SamplerConfig(), local: bool = True) -> Estimate:
    """Sampled ``sup numerator(a, b, *aux) / |a - b|`` over ``a in A``, ``b in B``.

    A share of the pairs places ``b`` within ``local_scale * radius(B)`` of ``a``
    (directions taken from the ``B`` block), so difference quotients near the
    diagonal are probed; pairs closer than ``1e-8`` are skipped.
    """
    if A.dim != B.dim:
        raise ConfigError("paired sets differ in dimension")
    n = sampler.n_samples
    sets = [A, B, *aux]
    (a, b, *ax), _ = _sample(sets, n, sampler.seed)
    if local and sampler.local_fraction > 0:
        # local partner for a deterministic subset: indices where (i mod k) == 1
        step = max(1, round(1.0 / sampler.local_fraction))
        sel = np.arange(n) % step == (1 % step)
        span = max(B.radius, float(np.max(np.abs(B.box.hi - B.box.lo))) if B.box is not None else 0.0)
        d = b[sel] - a[sel]
        nd = np.linalg.norm(d, axis=1, keepdims=True)
        nd[nd == 0] = 1.0
        cand = a[sel] + sampler.local_scale * span * d / nd
        ok = B.contains(cand)
        rows = np.flatnonzero(sel)[ok]
        b = b.copy()
        b[rows] = cand[ok]
    dist = np.linalg.norm(a - b, axis=1)
    keep = dist >= PAIR_EPS
    vals = np.zeros(n)
    for i in np.flatnonzero(keep):
        vals[i] = float(numerator(a[i], b[i], *(x[i] for x in ax))) / dist[i]
    return _prefix_estimate(vals[keep])


def estimate_lipschitz_sup(fn: Callable, domain_A: RealizedSet, domain_B: RealizedSet,
                           aux: tuple = (), sampler: SamplerConfig = SamplerConfig()) -> Estimate:
    """Sampled ``sup |fn(a, *aux) - fn(b, *aux)| / |a - b|``; a lower estimate of the supremum."""

    def num(x, y, *extra):
        return np.linalg.norm(np.atleast_1d(fn(x, *extra)) - np.atleast_1d(fn(y, *extra)))

    return pair_sup(num, domain_A, domain_B, aux, sampler)


class RhoEstimator:
    """``rho(s) = max |f(z, u)|`` over ``|z| <= s``, ``u in U``.

    Evaluated on a fixed unit-ball pattern scaled to ``s`` (U vertices included);
    results are cached and combined so that ``rho`` is non-decreasing in ``s``.
    """

    def __init__(self, sys: SystemDefinition, sampler: SamplerConfig = SamplerConfig()):
        self.sys = sys
        n = min(sampler.n_samples, 2048)
        unit = ball_set(sys.n, 1.0)
        (z,), _ = _sample([unit], n, sampler.seed)
        raw = _halton(sys.m, n, sampler.seed + 1)
        u = box_set(sys.U).map(raw)
        corners = np.array(np.meshgrid(*[(lo, hi) for lo, hi in zip(sys.U.lo, sys.U.hi)])).reshape(sys.m, -1).T
        zeros = np.zeros((corners.shape[0], sys.n))
        self._z = np.vstack([zeros, np.zeros((1, sys.n)), z])
        self._u = np.vstack([corners, np.zeros((1, sys.m)), u])
        self._cache: dict[float, float] = {}

    def _raw(self, s: float) -> float:
        f = self.sys.f
        return max(float(np.linalg.norm(f(s * zz, uu))) for zz, uu in zip(self._z, self._u))

    def value(self, s: float) -> float:
        if s < 0:
            raise DomainError("rho needs s >= 0")
        s = float(s)
        if s not in self._cache:
            self._cache[s] = self._raw(s)
        return max(v for t, v in self._cache.items() if t <= s)


def estimate_rho(sys: SystemDefinition, s: float, sampler: SamplerConfig = SamplerConfig()) -> float:
    return RhoEstimator(sys, sampler).value(s)


def _boundary_radius(V: Callable, d: np.ndarray, level: float, r_max: float) -> float:
    lo, hi = 0.0, r_max
    while float(V(hi * d)) < level and hi < 1e6:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if float(V(mid * d)) <= level:
            lo = mid
        else:
            hi = mid
    return lo


def sup_psi(cert: CertificateData, shaping: ShapingFunctions, sampler: SamplerConfig = SamplerConfig(),
            n_rays: int = 256) -> float:
    """``sup psi`` over ``{V <= b}``, read on the boundary along sampled rays.

    Requires ``psi`` to be non-decreasing along rays; otherwise the scalar radius
    realization of the derived sets is not valid and a :class:`DomainError` is raised.
    """
    n = cert.n
    raw = _halton(n, n_rays, sampler.seed + 7)
    dirs = ndtri(np.clip(raw, 1e-12, 1 - 1e-12))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r0 = cert.level_radius(cert.b) if cert.level_radius else 1.0
    best = float(shaping.psi(np.zeros(n)))
    ts = np.linspace(0.0, 1.0, 17)
    for d in dirs:
        rb = _boundary_radius(cert.V, d, cert.b, r0)
        vals = np.array([float(shaping.psi(t * rb * d)) for t in ts])
        if np.any(np.diff(vals) < -1e-12 * np.maximum(1.0, np.abs(vals[1:]))):
            raise DomainError("psi is not monotone along rays; derived sets unsupported")
        best = max(best, float(vals[-1]))
    return best


# ---------------------------------------------------------------------------
# constants and rate inequalities
# ---------------------------------------------------------------------------

def _matrix_norm(A) -> float:
    return float(np.linalg.norm(np.asarray(A, dtype=float), 2))


def estimate_P_tilde(cert: CertificateData, sampler: SamplerConfig = SamplerConfig()) -> Estimate:
    """``max |hess P|`` (spectral norm) over samples of ``{V <= R}``."""
    S1 = sublevel_set(cert, cert.R)
    n = min(sampler.n_samples, 1024)
    (X,), _ = _sample([S1], n, sampler.seed + 3)
    X = np.vstack([np.zeros((1, cert.n)), X])
    hess = cert.hess_P or (lambda x: fd_hessian(cert.P, x))
    return _prefix_estimate([_matrix_norm(hess(x)) for x in X])


@dataclass(frozen=True)
class RateVerdict:
    passed: tuple[bool, bool, bool]
    lhs: tuple[float, float, float]
    bound: tuple[float, float, float]

    @property
    def margins(self) -> tuple[float, float, float]:
        return tuple(l / b if b != 0 else math.inf for l, b in zip(self.lhs, self.bound))

    @property
    def all_passed(self) -> bool:
        return all(self.passed)

    def as_dict(self) -> dict:
        return {"passed": list(self.passed), "lhs": list(self.lhs), "bound": list(self.bound),
                "margin": list(self.margins)}


def check_rate_inequalities(*, M1q: float, M1f: float, G1: float, G2: float, sigma: float,
                            delta: float, Ts: float, mu: float, P_tilde: float, n: int, c: float,
                            omega: float, Q_norm: float, K2: float) -> RateVerdict:
    """The three small-gain side conditions on ``(sigma, delta, Ts)``.

    ``sigma <= min(mu / (sqrt(n) P_tilde), c omega / (4|Q|))`` (non-strict),
    ``delta M1q M1f exp(sigma delta) < 1`` and
    ``Ts G1 exp(sigma Ts) sqrt(2|Q|/K2) G2 |Q| / (c omega) < 1``.
    Margins are ``lhs / bound``.
    """
    b1 = min(mu / (math.sqrt(n) * P_tilde), c * omega / (4.0 * Q_norm))
    l2 = delta * M1q * M1f * math.exp(sigma * delta)
    l3 = Ts * G1 * math.exp(sigma * Ts) * math.sqrt(2.0 * Q_norm / K2) * G2 * Q_norm / (c * omega)
    return RateVerdict((sigma <= b1, l2 < 1.0, l3 < 1.0), (sigma, l2, l3), (b1, 1.0, 1.0))


@dataclass
class RateCertificate:
    constants: dict[str, Estimate]
    verdict: RateVerdict
    sigma: float
    delta: float
    Ts: float
    method: str = "sampled"
    diagnostics: dict[str, Estimate] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "semantics": "certified under sampled (lower) estimates" if self.method == "sampled" else "closed form",
            "sigma": self.sigma, "delta": self.delta, "Ts": self.Ts,
            "constants": {k: v.as_dict() for k, v in self.constants.items()},
            "diagnostics": {k: v.as_dict() for k, v in self.diagnostics.items()},
            "verdict": self.verdict.as_dict(),
        }


def estimate_constants(sys: SystemDefinition, cert: CertificateData, shaping: ShapingFunctions,
                       delta: float, sampler: SamplerConfig = SamplerConfig(),
                       diagnostics: bool = False) -> tuple[dict[str, Estimate], dict[str, Estimate]]:
    """Sampled ``M1q, M1f, G1, G2, P_tilde`` plus exact ``|Q|, K2, K1`` (and optional ``M2q, M2f``)."""
    S1 = sublevel_set(cert, cert.R)
    S2 = sublevel_set(cert, cert.b)
    r4 = shaping.K * sup_psi(cert, shaping, sampler)
    rho = RhoEstimator(sys, sampler)
    S4 = ball_set(sys.n, r4)
    S3 = ball_set(sys.n, r4 + delta * rho.value(r4))
    U = box_set(sys.U)
    q, psi, f = shaping.q, shaping.psi, sys.f
    jac_h = sys.jac_h
    kh = K.build_kernels(sys, cert, shaping).khat

    def sat(x, z):
        return q(float(np.linalg.norm(x)) / float(psi(z))) * x

    def dh_f(x, u):
        return np.asarray(jac_h(x)) @ np.asarray(f(x, u))

    def khat_y(y, z, u):
        return kh(np.ascontiguousarray(z), np.ascontiguousarray(y), np.ascontiguousarray(u))[0]

    Ybox = box_set(BoxSet.symmetric(*([sampler.y_box] * sys.k)))
    out = {
        "M1q": estimate_lipschitz_sup(sat, S1, S3, (S2,), sampler),
        "M1f": estimate_lipschitz_sup(f, S1, S4, (U,), sampler),
        "G1": estimate_lipschitz_sup(dh_f, S1, S2, (U,), sampler),
        "G2": estimate_lipschitz_sup(khat_y, Ybox, Ybox, (S2, U), sampler),
        "P_tilde": estimate_P_tilde(cert, sampler),
        "Q_norm": Estimate(cert.Q_norm, 0, 0.0),
        "lambda_min_Q": Estimate(float(np.linalg.eigvalsh(cert.Q)[0]), 0, 0.0),
        "K2": Estimate(float(cert.K2), 0, 0.0),
        "K1": Estimate(float(cert.K1), 0, 0.0),
        "rho_S4": Estimate(rho.value(r4), 0, 0.0),
        "radius_S4": Estimate(r4, 0, 0.0),
        "radius_S3": Estimate(S3.radius, 0, 0.0),
    }
    diag = {}
    if diagnostics:
        def q_num(z, w, x):
            nx = float(np.linalg.norm(x))
            return abs(q(nx / float(psi(z))) - q(nx / float(psi(w)))) * nx

        kf = cert.k

        def f2_num(x, xi):
            return np.linalg.norm(np.asarray(f(x, kf(x))) - np.asarray(f(x, kf(xi))))

        diag["M2q"] = pair_sup(q_num, S2, S1, (S1,), sampler)
        diag["M2f"] = pair_sup(f2_num, S1, S3, (), sampler)
    return out, diag


def certify_rates(sys: SystemDefinition, cert: CertificateData, shaping: ShapingFunctions,
                  sigma: float, N: int, Ts: float, sampler: SamplerConfig = SamplerConfig(),
                  diagnostics: bool = False) -> RateCertificate:
    delta = (sys.r + sys.tau) / N
    consts, diag = estimate_constants(sys, cert, shaping, delta, sampler, diagnostics)
    verdict = check_rate_inequalities(
        M1q=consts["M1q"].value, M1f=consts["M1f"].value, G1=consts["G1"].value,
        G2=consts["G2"].value, sigma=sigma, delta=delta, Ts=Ts, mu=cert.mu,
        P_tilde=consts["P_tilde"].value, n=sys.n, c=cert.c, omega=cert.omega,
        Q_norm=cert.Q_norm, K2=cert.K2)
    return RateCertificate(consts, verdict, sigma, delta, Ts, "sampled", diag)


# ---------------------------------------------------------------------------
# assumption checks
# ---------------------------------------------------------------------------

_RES_CACHE: dict = {}


def _residual_kernels(sys: SystemDefinition, cert: CertificateData, shaping: ShapingFunctions):
    key = (sys, cert, shaping)
    if key in _RES_CACHE:
        return _RES_CACHE[key]
    kern = K.build_kernels(sys, cert, shaping)
    f, h, W, grad_V = kern.f, kern.h, kern.W, kern.grad_V
    grad_P = K.as_jit(cert.grad_P)
    kfun = K.as_jit(cert.k)
    Q = np.ascontiguousarray(cert.Q)
    L = np.ascontiguousarray(cert.L)
    mu, omega, c = float(cert.mu), float(cert.omega), float(cert.c)
    dot, matvec = K.dot, K.matvec

    @maybe_njit
    def h1(X, Uu):
        res = np.empty(X.shape[0])
        mag = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            a = dot(grad_V(X[i]), f(X[i], Uu[i]))
            b = W(X[i])
            res[i] = a + b
            mag[i] = abs(a) + abs(b)
        return res, mag

    @maybe_njit
    def h2(X):
        res = np.empty(X.shape[0])
        mag = np.empty(X.shape[0])
        for i in range(X.shape[0]):
            x = X[i]
            a = dot(grad_P(x), f(x, kfun(x)))
            b = 2.0 * mu * dot(x, x)
            res[i] = a + b
            mag[i] = abs(a) + abs(b)
        return res, mag

    @maybe_njit
    def h3(Z, X, Uu):
        res = np.empty(Z.shape[0])
        mag = np.empty(Z.shape[0])
        for i in range(Z.shape[0]):
            z, x, u = Z[i], X[i], Uu[i]
            e = z - x
            drift = f(z, u) + matvec(L, h(z) - h(x)) - f(x, u)
            a = dot(e, matvec(Q, drift))
            b = omega * dot(e, e)
            res[i] = a + b
            mag[i] = abs(a) + abs(b)
        return res, mag

    @maybe_njit
    def h4(Z, X, Uu):
        res = np.empty(Z.shape[0])
        mag = np.empty(Z.shape[0])
        for i in range(Z.shape[0]):
            z, x, u = Z[i], X[i], Uu[i]
            gv = grad_V(z)
            e = z - x
            den = dot(gv, matvec(Q, e))
            fz = f(z, u)
            inj = matvec(L, h(z) - h(x))
            lhs = dot(gv, fz + inj)
            num = dot(e, matvec(Q, fz + inj - f(x, u)))
            rhs = -W(z) + (1.0 - c) * dot(gv, gv) * num / den
            res[i] = lhs - rhs
            mag[i] = abs(lhs) + abs(rhs)
        return res, mag

    @maybe_njit
    def h4_den(Z, X):
        out = np.empty(Z.shape[0])
        for i in range(Z.shape[0]):
            out[i] = dot(grad_V(Z[i]), matvec(Q, Z[i] - X[i]))
        return out

    ns = dict(h1=h1, h2=h2, h3=h3, h4=h4, h4_den=h4_den)
    _RES_CACHE[key] = ns
    return ns


@dataclass
class AssumptionResult:
    name: str
    n_samples: int
    violations: int
    worst_residual: float
    witness: dict | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0

    @property
    def note(self) -> str:
        if self.n_samples == 0:
            return "no admissible point found: the sampled domain is empty (condition vacuous)"
        if self.passed:
            return "no counterexample found at this sample count"
        return "violation found"

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        d["note"] = self.note
        return d


@dataclass
class AssumptionReport:
    results: dict[str, AssumptionResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def as_dict(self) -> dict:
        return {"passed": self.passed, "assumptions": {k: v.as_dict() for k, v in self.results.items()}}


def _summarize(name, res, mag, points: dict) -> AssumptionResult:
    viol = res > _TOL_REL * (1.0 + mag)
    worst = int(np.argmax(res)) if res.size else 0
    witness = None
    if np.any(viol):
        i = int(np.flatnonzero(viol)[np.argmax(res[viol])])
        witness = {k: v[i].tolist() for k, v in points.items()}
        witness["residual"] = float(res[i])
    return AssumptionResult(name, int(res.size), int(np.sum(viol)),
                            float(res[worst]) if res.size else -math.inf, witness)


def check_assumptions(sys: SystemDefinition, cert: CertificateData, shaping: ShapingFunctions,
                      n_samples: int = 100_000, seed: int = 0, outer_factor: float = 4.0,
                      which: tuple[str, ...] = ("H1", "H2", "H3", "H4")) -> AssumptionReport:
    """Sample the domains of H1-H4 and report violations with witnesses.

    Domains: H1 ``R <= V(x) <= outer_factor R``, ``u in U``; H2 ``V(x) <= R``;
    H3 ``V(z) <= b``, ``V(x) <= R``, ``u in U``; H4 ``a < V(z) <= b``,
    ``grad V(z) Q (z - x) < 0``, ``V(x) <= R``, ``u in U``.  A residual counts as
    a violation when it exceeds ``1e-9 (1 + |terms|)``.
    """
    kern = _residual_kernels(sys, cert, shaping)
    U = box_set(sys.U)
    S1 = sublevel_set(cert, cert.R)
    S2 = sublevel_set(cert, cert.b)
    out = {}
    if "H1" in which:
        shell = sublevel_set(cert, outer_factor * cert.R, lower=cert.R)
        (X, Uu), _ = _sample([shell, U], n_samples, seed + 11)
        out["H1"] = _summarize("H1", *kern["h1"](X, Uu), {"x": X, "u": Uu})
    if "H2" in which:
        (X,), _ = _sample([S1], n_samples, seed + 12)
        out["H2"] = _summarize("H2", *kern["h2"](X), {"x": X})
    if "H3" in which:
        (Z, X, Uu), _ = _sample([S2, S1, U], n_samples, seed + 13)
        out["H3"] = _summarize("H3", *kern["h3"](Z, X, Uu), {"z": Z, "x": X, "u": Uu})
    if "H4" in which:
        annulus = sublevel_set(cert, cert.b, lower=cert.a)
        Vb = batch_scalar(cert.V)
        a_lvl = float(cert.a)

        def accept(Z, X, Uu):
            return (Vb(Z) > a_lvl) & (kern["h4_den"](Z, X) < 0.0)

        (Z, X, Uu), _ = _sample([annulus, S1, U], n_samples, seed + 14, accept=accept,
                                 allow_empty=True)
        out["H4"] = _summarize("H4", *kern["h4"](Z, X, Uu), {"z": Z, "x": X, "u": Uu})
    return AssumptionReport(out)


# ---------------------------------------------------------------------------
# closed-form conditions of the planar example
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    lhs: float
    rhs: float
    strict: bool

    @property
    def passed(self) -> bool:
        return self.lhs < self.rhs if self.strict else self.lhs <= self.rhs

    @property
    def margin(self) -> float:
        return self.lhs / self.rhs if self.rhs != 0 else math.inf

    def as_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "strict": self.strict,
                "passed": self.passed, "margin": self.margin}


@dataclass
class ClosedFormReport:
    checks: list[Check]
    L: tuple[float, float]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> Check:
        return next(c for c in self.checks if c.name == name)

    def as_dict(self) -> dict:
        return {"method": "closed-form-example-4.1", "passed": self.passed, "L": list(self.L),
                "checks": [c.as_dict() for c in self.checks]}


def example41_closed_form(g: float, p: float, sigma: float, delta: float, Ts: float) -> ClosedFormReport:
    """Literal evaluation of the planar example's parameter conditions.

    ``L`` in the sampling-period bound is read as the Euclidean norm of the gain.
    """
    if not (g > 0 and p > 0):
        raise ConfigError("g and p must be positive")
    s7, s14, s2 = math.sqrt(7.0), math.sqrt(14.0), math.sqrt(2.0)
    L1, L2 = observer_gain(g, p)
    Lnorm = math.hypot(L1, L2)
    checks = [
        Check("g", g, 1.0 / 167.0, strict=False),
        Check("p", p, 0.25, strict=False),
        Check("p-bound", p * (597.0 + 176.0 * s7), 123.0 / (4.0 * s7 * (s7 + 2.0)) - 2.0 - 2.0 * g, strict=False),
        Check("gain-sum", abs(L1) + abs(L2), 41.0 / (2.0 * s7 * (s7 + 2.0)), strict=False),
        Check("sigma", sigma, min(g / (8.0 * (1.0 + 2.0 * g * g) * s2), p / (8.0 * (1.0 + p))), strict=True),
        Check("delta", delta * math.exp(sigma * delta),
              27.0 * (1.0 + 2.0 * s14) / ((27.0 + 54.0 * s14 + 32.0 * s2) * (3034.0 + g)), strict=True),
        Check("Ts", Ts * math.exp(sigma * Ts),
              s2 * p * math.sqrt(1.0 - p) / (12.0 * (43.0 + g) * Lnorm * (1.0 + p) ** 1.5), strict=True),
    ]
    return ClosedFormReport(checks, (L1, L2))


def to_json(obj) -> str:
    """Serialize any report object (``as_dict``) or plain dict."""
    data = obj.as_dict() if hasattr(obj, "as_dict") else obj
    return json.dumps(data, indent=2, sort_keys=True, default=float)

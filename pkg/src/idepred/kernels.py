"""Fused closed-loop kernels.

:func:`build_kernels` closes over the system callables and compiles the hot
loops once per instance (numba), or returns them as plain Python when JIT is
disabled.  Array layouts used by :func:`run` (``nt`` steps, ``nr = r/h``,
``nd = tau/h``, ``off = nr + nd``, ``mc = delta/h``):

* ``Xh[nr + i]``      plant state at ``t_i`` for ``i >= -nr``
* ``Uh[off + i]``     control on the cell ``[t_i, t_{i+1})`` for ``i >= -off``
* ``Vh[off + i]``     physical input (``u`` plus ``a2(theta)`` when a transform is active)
* ``XIh[j, mc + i]``  stage ``j+1`` of the predictor at ``t_i`` for ``i >= -mc``
* ``FC[j, mc + i]``   integrand cache for the same sample
"""
from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np

from ._jit import JIT_ENABLED, maybe_njit

if JIT_ENABLED:
    from numba.core.registry import CPUDispatcher

# run() status codes
OK = 0
PLANT_NONFINITE = 1
OBSERVER_SINGULAR = 2
OBSERVER_NONFINITE = 3
PREDICTOR_NONFINITE = 4
THETA_NONFINITE = 5

STATUS_TEXT = {
    PLANT_NONFINITE: ("plant", "non-finite plant state"),
    OBSERVER_SINGULAR: ("observer", "|grad V(z)| vanished in the correction branch"),
    OBSERVER_NONFINITE: ("observer", "non-finite observer/ISP state"),
    PREDICTOR_NONFINITE: ("predictor", "non-finite predictor stage"),
    THETA_NONFINITE: ("transform", "non-finite theta state"),
}


def as_jit(fn):
    """Compile ``fn`` unless JIT is off or it already is a numba dispatcher."""
    if fn is None or not JIT_ENABLED or isinstance(fn, CPUDispatcher):
        return fn
    return maybe_njit(fn)


@maybe_njit
def dot(a, b):
    s = 0.0
    for i in range(a.shape[0]):
        s += a[i] * b[i]
    return s


@maybe_njit
def matvec(A, x):
    out = np.zeros(A.shape[0])
    for i in range(A.shape[0]):
        s = 0.0
        for j in range(A.shape[1]):
            s += A[i, j] * x[j]
        out[i] = s
    return out


@maybe_njit
def all_finite(x):
    for i in range(x.shape[0]):
        if not math.isfinite(x[i]):
            return False
    return True


_CACHE: dict = {}


def build_kernels(sys, cert, shaping, transform=None) -> SimpleNamespace:
    key = (sys, cert, shaping, transform)
    if key not in _CACHE:
        _CACHE[key] = _build(sys, cert, shaping, transform)
    return _CACHE[key]


def _build(sys, cert, shaping, transform):
    n, m, k = sys.n, sys.m, sys.k
    f = as_jit(sys.f)
    hfun = as_jit(sys.h)
    jac_h = as_jit(sys.jac_h)
    V = as_jit(cert.V)
    grad_V = as_jit(cert.grad_V)
    W = as_jit(cert.W)
    kfun = as_jit(cert.k)
    psi = as_jit(shaping.psi)
    q = as_jit(shaping.q)
    ramp = as_jit(shaping.ramp)
    L = np.ascontiguousarray(cert.L, dtype=np.float64)
    R = float(cert.R)
    eps2 = 1e-20  # |grad V|^2 guard, i.e. |grad V| <= 1e-10
    lo = sys.U.lo.copy()
    hi = sys.U.hi.copy()

    has_tf = transform is not None
    if has_tf:
        f_plant = as_jit(transform.f_tilde)
        a2 = as_jit(transform.a2)
        g_red = as_jit(transform.g)
        phi_exact = as_jit(transform.phi)
        l_dim = transform.l
    else:
        l_dim = 1
        f_plant = f

        @maybe_njit
        def a2(th):
            return np.zeros(m)

        @maybe_njit
        def g_red(th, v):
            return np.zeros(th.shape[0])

        @maybe_njit
        def phi_exact(y, vwin, hh):
            return np.zeros(1)

    @maybe_njit
    def project(u):
        out = u.copy()
        for i in range(out.shape[0]):
            if out[i] < lo[i]:
                out[i] = lo[i]
            elif out[i] > hi[i]:
                out[i] = hi[i]
        return out

    @maybe_njit
    def control(xi):
        return project(kfun(xi))

    @maybe_njit
    def phi(z, y, u):
        gv = grad_V(z)
        inj = matvec(L, hfun(z) - y)
        val = dot(gv, f(z, u)) + W(z) + ramp(V(z)) * dot(gv, inj)
        return max(0.0, val)

    @maybe_njit
    def khat(z, y, u):
        inj = matvec(L, hfun(z) - y)
        if V(z) <= R:
            return inj, False
        gv = grad_V(z)
        n2 = dot(gv, gv)
        if n2 <= eps2:
            return np.full(z.shape[0], np.nan), True
        return inj - (phi(z, y, u) / n2) * gv, False

    @maybe_njit
    def zw_rhs(z, w, u):
        fz = f(z, u)
        kh, sing = khat(z, w, u)
        return fz + kh, matvec(jac_h(z), fz), sing

    @maybe_njit
    def observer_step(z, w, u, hh):
        a1, b1, s1 = zw_rhs(z, w, u)
        a2_, b2, s2 = zw_rhs(z + 0.5 * hh * a1, w + 0.5 * hh * b1, u)
        a3, b3, s3 = zw_rhs(z + 0.5 * hh * a2_, w + 0.5 * hh * b2, u)
        a4, b4, s4 = zw_rhs(z + hh * a3, w + hh * b3, u)
        zn = z + (hh / 6.0) * (a1 + 2.0 * a2_ + 2.0 * a3 + a4)
        wn = w + (hh / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        return zn, wn, s1 or s2 or s3 or s4

    @maybe_njit
    def plant_step(x, v, hh):
        k1 = f_plant(x, v)
        k2 = f_plant(x + 0.5 * hh * k1, v)
        k3 = f_plant(x + 0.5 * hh * k2, v)
        k4 = f_plant(x + hh * k3, v)
        return x + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    @maybe_njit
    def theta_rhs(th, u):
        return g_red(th, a2(th) + u)

    @maybe_njit
    def theta_step(th, u, hh):
        k1 = theta_rhs(th, u)
        k2 = theta_rhs(th + 0.5 * hh * k1, u)
        k3 = theta_rhs(th + 0.5 * hh * k2, u)
        k4 = theta_rhs(th + hh * k3, u)
        return th + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    @maybe_njit
    def chain(z, XIh, FC, i_now, mc, Uh, uoff, N, hh):
        """Evaluate all stages at t_{i_now}; writes XIh[:, mc + i_now]. Returns (xi_N, bad stage or 0).

        ``FC[j, mc + i]`` caches ``f(xi_{j+1}(t_i), u(...))``; it is exact whenever the
        saturation is inactive (q = 1), which is checked per sample.
        """
        ps = psi(z)
        prev = z.copy()
        for j in range(1, N + 1):
            s = q(math.sqrt(dot(prev, prev)) / ps)
            acc = np.zeros(prev.shape[0])
            shift = (N - j) * mc
            for i in range(i_now - mc, i_now):
                xi = XIh[j - 1, mc + i]
                ratio = math.sqrt(dot(xi, xi)) / ps
                if ratio <= 1.0:
                    acc += FC[j - 1, mc + i]
                else:
                    acc += f(q(ratio) * xi, Uh[uoff + i - shift])
            val = s * prev + hh * acc
            if not all_finite(val):
                return val, j
            XIh[j - 1, mc + i_now] = val
            if j < N and mc > 0:
                FC[j - 1, mc + i_now] = f(val, Uh[uoff + i_now - shift])
            prev = val
        return prev, 0

    @maybe_njit
    def fill_cache(XIh, FC, i_lo, i_hi, mc, Uh, uoff, N):
        for j in range(1, N + 1):
            shift = (N - j) * mc
            for i in range(i_lo, i_hi):
                FC[j - 1, mc + i] = f(XIh[j - 1, mc + i], Uh[uoff + i - shift])

    @maybe_njit
    def run(Xh, Uh, Vh, XIh, FC, Z, Wv, TH, Y, smask, E, z0, w0, th0, nt, nr, nd, mc, N, hh):
        off = nr + nd
        z = z0.copy()
        w = w0.copy()
        th = th0.copy()
        fill_cache(XIh, FC, -mc, 0, mc, Uh, off, N)
        for i in range(nt + 1):
            if smask[i]:
                y = hfun(Xh[i]) + E[i]  # Xh[i] = x(t_i - r)
                Y[i] = y
                w = y.copy()
                if has_tf:
                    th = phi_exact(y, Vh[off + i - nr - nd:off + i], hh)
            Z[i] = z
            Wv[i] = w
            TH[i] = th
            xiN, bad = chain(z, XIh, FC, i, mc, Uh, off, N, hh)
            if bad != 0:
                return PREDICTOR_NONFINITE, i, bad
            u = control(xiN)
            Uh[off + i] = u
            if mc > 0:
                FC[N - 1, mc + i] = f(xiN, u)
            if has_tf:
                Vh[off + i] = u + a2(th)
            else:
                Vh[off + i] = u
            if i == nt:
                break
            xn = plant_step(Xh[nr + i], Vh[off + i - nd], hh)
            if not all_finite(xn):
                return PLANT_NONFINITE, i, 0
            Xh[nr + i + 1] = xn
            z, w, sing = observer_step(z, w, Uh[off + i - nr - nd], hh)
            if sing:
                return OBSERVER_SINGULAR, i, 0
            if not (all_finite(z) and all_finite(w)):
                return OBSERVER_NONFINITE, i, 0
            if has_tf:
                th = theta_step(th, u, hh)
                if not all_finite(th):
                    return THETA_NONFINITE, i, 0
        return OK, -1, 0

    return SimpleNamespace(
        n=n, m=m, k=k, l=l_dim, has_transform=has_tf,
        f=f, h=hfun, jac_h=jac_h, V=V, grad_V=grad_V, W=W, psi=psi, q=q, ramp=ramp,
        project=project, control=control, phi=phi, khat=khat, zw_rhs=zw_rhs,
        observer_step=observer_step, plant_step=plant_step, theta_step=theta_step,
        chain=chain, fill_cache=fill_cache, run=run, a2=a2, g_red=g_red, phi_exact=phi_exact, f_plant=f_plant,
    )

"""Closed loop: plant, inter-sample predictor, observer, IDE predictor chain and delay-free control.

Within each grid step the order is fixed: at a sample instant (index >= 1)
reset ``w`` (and ``theta``), then evaluate the predictor chain, then the
control law, then advance plant, observer/ISP pair and ``theta`` by one RK4 step.

Two routes are provided.  :func:`run_closed_loop` drives the fused kernel of
:mod:`idepred.kernels`; :func:`simulate_stepwise` composes the per-step
operations below on :class:`~idepred.numerics.HistoryBuffer` objects and serves
as the readable reference the kernel is tested against.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels as K
from .errors import ConfigError, NumericError, SingularityError
from .numerics import HistoryBuffer, SamplingPartition, grid_steps, quad_halfopen, rk4_step
from .system import CertificateData, ShapingFunctions, SystemDefinition, khat
from .transform import TransformDefinition, compose_input, reset_theta, step_theta


@dataclass(frozen=True)
class ErrorSource:
    """Measurement error added at sample instants.

    ``kind`` is ``"none"``, ``"uniform"`` (i.i.d. in ``[-amplitude, amplitude]``,
    seeded) or ``"sequence"`` (``values[i]`` is used at the i-th sample, i >= 1).
    """

    kind: str = "none"
    amplitude: float = 0.0
    seed: int = 0
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("none", "uniform", "sequence"):
            raise ConfigError(f"unknown error source {self.kind!r}")
        if self.amplitude < 0:
            raise ConfigError("error amplitude must be non-negative")

    def draws(self, n_samples: int, k: int) -> np.ndarray:
        """Errors for samples ``0..n_samples-1`` (row 0 unused: no reset at time 0)."""
        if self.kind == "none":
            return np.zeros((n_samples, k))
        if self.kind == "uniform":
            rng = np.random.default_rng(self.seed)
            return self.amplitude * rng.uniform(-1.0, 1.0, size=(n_samples, k))
        vals = np.asarray(self.values, dtype=float).reshape(-1, k)
        if vals.shape[0] < n_samples:
            raise ConfigError(f"error sequence has {vals.shape[0]} entries, need {n_samples}")
        return vals[:n_samples]


@dataclass(frozen=True)
class SchemeConfig:
    N: int = 3
    Ts: float = 0.05
    sigma: float = 0.001
    h: float = 0.0025
    horizon: float = 200.0
    error: ErrorSource = field(default_factory=ErrorSource)

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"stage count N must be a positive integer, got {self.N}")
        if not (self.sigma > 0 and self.Ts > 0):
            raise ConfigError("sigma and Ts must be positive")
        grid_steps(self.horizon, self.h, "horizon")
        grid_steps(self.Ts, self.h, "Ts")

    def delta(self, sys: SystemDefinition) -> float:
        return (sys.r + sys.tau) / self.N

    def grid(self, sys: SystemDefinition) -> tuple[int, int, int, int]:
        """(nt, nr, nd, mc) step counts; raises unless every delay is a grid multiple."""
        nt = grid_steps(self.horizon, self.h, "horizon")
        nr = grid_steps(sys.r, self.h, "r")
        nd = grid_steps(sys.tau, self.h, "tau")
        mc = grid_steps(self.delta(sys), self.h, "delta = (r + tau)/N")
        if mc * self.N != nr + nd:
            raise ConfigError("N * delta != r + tau on the grid")
        return nt, nr, nd, mc


@dataclass(frozen=True)
class InitialConditions:
    """``xi0=None`` means constant ``z0`` stage histories; ``x_hist`` optionally gives
    ``x`` on the grid of ``[-r, 0]`` (``nr + 1`` rows), otherwise ``x0`` is held."""

    x0: np.ndarray
    z0: np.ndarray | None = None
    w0: np.ndarray | None = None
    theta0: np.ndarray | None = None
    xi0: np.ndarray | float | None = None
    u0: np.ndarray | float = 0.0
    v0: np.ndarray | float = 0.0
    x_hist: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SimulationResult:
    t: np.ndarray
    x: np.ndarray          # x(t_i), i = 0..nt
    x_pre: np.ndarray      # x on [-r, 0)
    z: np.ndarray
    w: np.ndarray
    xi: np.ndarray         # (N, nt + 1, n)
    u: np.ndarray
    u_pre: np.ndarray      # u on [-r - tau, 0)
    v: np.ndarray
    theta: np.ndarray | None
    sample_t: np.ndarray
    y: np.ndarray
    e: np.ndarray
    h: float
    r: float
    tau: float
    delta: float

    @property
    def xi_N(self) -> np.ndarray:
        return self.xi[-1]

    @property
    def n_steps(self) -> int:
        return self.t.size - 1

    def x_shift(self, offset: float) -> tuple[np.ndarray, np.ndarray]:
        """Indices ``i`` where ``x(t_i + offset)`` is stored, and those values."""
        s = grid_steps(offset, self.h, "offset")
        full = np.vstack([self.x_pre, self.x])
        pre = self.x_pre.shape[0]
        idx = np.arange(self.t.size)
        ok = (idx + s + pre >= 0) & (idx + s < self.t.size)
        return idx[ok], full[idx[ok] + s + pre]

    def columns(self) -> list[str]:
        n, m = self.x.shape[1], self.u.shape[1]
        cols = ["t"] + [f"x{i+1}" for i in range(n)] + [f"z{i+1}" for i in range(n)]
        cols += [f"w{i+1}" for i in range(self.w.shape[1])]
        cols += [f"xiN{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
        if self.theta is not None:
            cols += [f"theta{i+1}" for i in range(self.theta.shape[1])]
            cols += [f"v{i+1}" for i in range(self.v.shape[1])]
        return cols

    def table(self) -> np.ndarray:
        parts = [self.t[:, None], self.x, self.z, self.w, self.xi_N, self.u]
        if self.theta is not None:
            parts += [self.theta, self.v]
        return np.hstack(parts)

    def to_csv(self, path) -> None:
        _write_csv(path, self.columns(), self.table())

    def samples_to_csv(self, path) -> None:
        k = self.y.shape[1]
        cols = ["t"] + [f"y{i+1}" for i in range(k)] + [f"e{i+1}" for i in range(k)]
        _write_csv(path, cols, np.hstack([self.sample_t[:, None], self.y, self.e]))


def _write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# per-step operations
# ---------------------------------------------------------------------------

def step_plant(sys: SystemDefinition, x, u_history: HistoryBuffer, t: float, h: float,
               field=None) -> np.ndarray:
    """One RK4 step of ``x' = f(x, u(t - tau))`` with the delayed input held on the cell."""
    fn = sys.f if field is None else field
    u = u_history.cell(t - sys.tau)
    try:
        return rk4_step(lambda _s, xx: fn(xx, u), x, t, h)
    except NumericError as exc:
        raise NumericError(f"plant: {exc}") from None


def sample_output(sys: SystemDefinition, x_history: HistoryBuffer, e_value, t_i: float) -> np.ndarray:
    return np.asarray(sys.h(x_history.lookup(t_i - sys.r))) + np.asarray(e_value, dtype=float)


def reset_isp(w, y_sample) -> np.ndarray:
    return np.array(y_sample, dtype=float, copy=True)


def _delayed_input(sys, u_history, t):
    return u_history.cell(t - sys.r - sys.tau)


def step_isp(sys: SystemDefinition, z, w, u_history: HistoryBuffer, t: float, h: float) -> np.ndarray:
    """ISP flow ``w' = Dh(z) f(z, u(t - r - tau))`` with ``z`` frozen over the step."""
    u = _delayed_input(sys, u_history, t)
    z = np.asarray(z, dtype=float)
    rate = np.asarray(sys.jac_h(z)) @ np.asarray(sys.f(z, u))
    return rk4_step(lambda _s, ww: rate, w, t, h)


def step_observer(sys, cert, shaping, z, w, u_history: HistoryBuffer, t: float, h: float) -> np.ndarray:
    """Observer flow ``z' = f(z, u(t - r - tau)) + khat(z, w, .)`` with ``w`` held over the step."""
    u = _delayed_input(sys, u_history, t)
    w = np.asarray(w, dtype=float)
    return rk4_step(lambda _s, zz: np.asarray(sys.f(zz, u)) + khat(sys, cert, shaping, zz, w, u), z, t, h)


def step_observer_isp(sys, cert, shaping, z, w, u_history: HistoryBuffer, t: float, h: float):
    """Joint RK4 step of the coupled observer/ISP pair (the form used in closed loop)."""
    u = _delayed_input(sys, u_history, t)
    n = sys.n

    def rhs(_s, s):
        zz, ww = s[:n], s[n:]
        fz = np.asarray(sys.f(zz, u))
        return np.concatenate([fz + khat(sys, cert, shaping, zz, ww, u), np.asarray(sys.jac_h(zz)) @ fz])

    try:
        out = rk4_step(rhs, np.concatenate([np.asarray(z, float), np.asarray(w, float)]), t, h)
    except NumericError as exc:
        raise NumericError(f"observer: {exc}") from None
    return out[:n], out[n:]


def update_predictor_chain(sys: SystemDefinition, shaping: ShapingFunctions, z_now,
                           xi_histories: list[HistoryBuffer], u_history: HistoryBuffer,
                           t: float, delta: float, h: float) -> list[np.ndarray]:
    """Evaluate every stage at ``t`` from histories strictly before ``t``; appends the new values."""
    N = len(xi_histories)
    mc = grid_steps(delta, h, "delta")
    z_now = np.asarray(z_now, dtype=float)
    ps = float(shaping.psi(z_now))
    prev = z_now
    out = []
    for j in range(1, N + 1):
        hist = xi_histories[j - 1]
        first = float(shaping.q(np.linalg.norm(prev) / ps)) * prev
        if mc > 0:
            window = hist.window(t - delta, t)
            lag = t - sys.tau - sys.r + j * delta - delta  # input time at the window start
            vals = np.empty_like(window)
            for i, xi in enumerate(window):
                qi = float(shaping.q(np.linalg.norm(xi) / ps))
                vals[i] = sys.f(qi * xi, u_history.cell(lag + i * h))
            val = first + quad_halfopen(vals, h, mc)
        else:
            val = first
        if not np.all(np.isfinite(val)):
            raise NumericError(f"predictor stage {j} non-finite at t={t}")
        hist.push(val)
        out.append(val)
        prev = val
    return out


def control_law(cert: CertificateData, U, xi_N) -> np.ndarray:
    return U.project(cert.k(np.asarray(xi_N, dtype=float)))


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

def _prepare(sys, cfg, partition, ic, transform):
    nt, nr, nd, mc = cfg.grid(sys)
    if abs(partition.h - cfg.h) > 1e-15:
        raise ConfigError(f"partition grid h={partition.h} differs from scheme h={cfg.h}")
    n, m, k = sys.n, sys.m, sys.k
    off = nr + nd
    x0 = np.asarray(ic.x0, dtype=float).reshape(n)
    if ic.x_hist is not None:
        xpre = np.asarray(ic.x_hist, dtype=float).reshape(nr + 1, n)
        if not np.allclose(xpre[-1], x0):
            raise ConfigError("x_hist must end at x0")
    else:
        xpre = np.tile(x0, (nr + 1, 1))
    z0 = np.zeros(n) if ic.z0 is None else np.asarray(ic.z0, dtype=float).reshape(n)
    w0 = np.zeros(k) if ic.w0 is None else np.asarray(ic.w0, dtype=float).reshape(k)
    l_dim = transform.l if transform is not None else 1
    th0 = np.zeros(l_dim) if ic.theta0 is None else np.asarray(ic.theta0, dtype=float).reshape(l_dim)
    u0 = np.broadcast_to(np.asarray(ic.u0, dtype=float), (m,))
    if not sys.U.contains(u0):
        raise ConfigError(f"initial input {u0} is not in U")
    v0 = np.broadcast_to(np.asarray(ic.v0, dtype=float), (m,))
    if ic.xi0 is None:
        xi0 = np.broadcast_to(z0, (cfg.N, mc, n))
    else:
        xi0 = np.broadcast_to(np.asarray(ic.xi0, dtype=float), (cfg.N, mc, n))

    Xh = np.zeros((nr + nt + 1, n))
    Xh[: nr + 1] = xpre
    Uh = np.zeros((off + nt + 1, m))
    Uh[:off] = u0
    Vh = np.zeros((off + nt + 1, m))
    Vh[:off] = u0 if transform is None else v0
    XIh = np.zeros((cfg.N, mc + nt + 1, n))
    XIh[:, :mc] = xi0

    smask = np.zeros(nt + 1, dtype=np.bool_)
    idx = partition.indices
    if idx[-1] < nt:
        raise ConfigError(f"partition ends at {partition.times[-1]}, before the horizon {cfg.horizon}")
    sample_idx = idx[(idx >= 1) & (idx <= nt)]
    smask[sample_idx] = True
    E = np.zeros((nt + 1, k))
    draws = cfg.error.draws(int(np.count_nonzero(idx <= nt)), k)
    E[sample_idx] = draws[1:1 + sample_idx.size]
    return dict(nt=nt, nr=nr, nd=nd, mc=mc, Xh=Xh, Uh=Uh, Vh=Vh, XIh=XIh, smask=smask, E=E,
                z0=z0, w0=w0, th0=th0, l=l_dim, sample_idx=sample_idx)


def run_closed_loop(sys: SystemDefinition, cert: CertificateData, shaping: ShapingFunctions,
                    cfg: SchemeConfig, partition: SamplingPartition, ic: InitialConditions,
                    transform: TransformDefinition | None = None) -> SimulationResult:
    p = _prepare(sys, cfg, partition, ic, transform)
    kern = K.build_kernels(sys, cert, shaping, transform)
    nt, nr, nd, mc = p["nt"], p["nr"], p["nd"], p["mc"]
    Z = np.zeros((nt + 1, sys.n))
    Wv = np.zeros((nt + 1, sys.k))
    TH = np.zeros((nt + 1, p["l"]))
    Y = np.zeros((nt + 1, sys.k))
    FC = np.zeros_like(p["XIh"])
    status, at, stage = kern.run(p["Xh"], p["Uh"], p["Vh"], p["XIh"], FC, Z, Wv, TH, Y, p["smask"], p["E"],
                                 p["z0"], p["w0"], p["th0"], nt, nr, nd, mc, cfg.N, cfg.h)
    if status != K.OK:
        where, what = K.STATUS_TEXT[status]
        t_fail = at * cfg.h
        msg = f"{where} failed at t={t_fail}: {what}" + (f" (stage {stage})" if stage else "")
        if status == K.OBSERVER_SINGULAR:
            raise SingularityError(msg + f"; z={Z[at]}")
        raise NumericError(msg)
    return _result(sys, cfg, p, Z, Wv, TH, Y, transform)


def _result(sys, cfg, p, Z, Wv, TH, Y, transform):
    nr, nd = p["nr"], p["nd"]
    off = nr + nd
    si = p["sample_idx"]
    return SimulationResult(
        t=cfg.h * np.arange(p["nt"] + 1), x=p["Xh"][nr:], x_pre=p["Xh"][:nr], z=Z, w=Wv,
        xi=p["XIh"][:, p["mc"]:], u=p["Uh"][off:], u_pre=p["Uh"][:off], v=p["Vh"][off:],
        theta=TH if transform is not None else None,
        sample_t=si * cfg.h, y=Y[si], e=p["E"][si], h=cfg.h, r=sys.r, tau=sys.tau, delta=cfg.delta(sys),
    )


@dataclass
class ClosedLoopState:
    """Instantaneous state plus the histories the scheme reads from."""

    t: float
    x: np.ndarray
    z: np.ndarray
    w: np.ndarray
    xi: list[HistoryBuffer]
    u_hist: HistoryBuffer
    x_hist: HistoryBuffer
    v_hist: HistoryBuffer
    theta: np.ndarray | None = None
    next_sample: int = 1


def initial_state(sys, cfg: SchemeConfig, ic: InitialConditions, transform=None) -> ClosedLoopState:
    nt, nr, nd, mc = cfg.grid(sys)
    h = cfg.h
    x0 = np.asarray(ic.x0, dtype=float).reshape(sys.n)
    z0 = np.zeros(sys.n) if ic.z0 is None else np.asarray(ic.z0, dtype=float).reshape(sys.n)
    w0 = np.zeros(sys.k) if ic.w0 is None else np.asarray(ic.w0, dtype=float).reshape(sys.k)
    xpre = (np.tile(x0, (nr + 1, 1)) if ic.x_hist is None
            else np.asarray(ic.x_hist, dtype=float).reshape(nr + 1, sys.n))
    x_hist = HistoryBuffer(-sys.r, h, xpre, mode="linear")
    u0 = np.broadcast_to(np.asarray(ic.u0, dtype=float), (sys.m,))
    u_hist = HistoryBuffer(-sys.r - sys.tau, h, np.tile(u0, (nr + nd, 1)), dim=sys.m)
    v0 = u0 if transform is None else np.broadcast_to(np.asarray(ic.v0, dtype=float), (sys.m,))
    v_hist = HistoryBuffer(-sys.r - sys.tau, h, np.tile(v0, (nr + nd, 1)), dim=sys.m)
    xi_init = z0 if ic.xi0 is None else ic.xi0
    xi = [HistoryBuffer(-mc * h, h, np.broadcast_to(np.asarray(xi_init, dtype=float), (mc, sys.n)), dim=sys.n)
          for _ in range(cfg.N)]
    theta = None
    if transform is not None:
        theta = np.zeros(transform.l) if ic.theta0 is None else np.asarray(ic.theta0, float).reshape(transform.l)
    return ClosedLoopState(0.0, x0, z0, w0, xi, u_hist, x_hist, v_hist, theta)


def simulate_stepwise(sys, cert, shaping, cfg: SchemeConfig, partition: SamplingPartition,
                      ic: InitialConditions, transform=None) -> SimulationResult:
    """Reference route built from the per-step operations (slow; meant for short horizons)."""
    nt, nr, nd, mc = cfg.grid(sys)
    h = cfg.h
    st = initial_state(sys, cfg, ic, transform)
    sample_set = set(int(i) for i in partition.indices if 1 <= i <= nt)
    draws = cfg.error.draws(int(np.count_nonzero(partition.indices <= nt)), sys.k)
    sample_no = {int(i): c for c, i in enumerate(partition.indices)}
    delta = cfg.delta(sys)
    rows = {"z": [], "w": [], "xiN": [], "th": []}
    ts, ys, es = [], [], []
    for i in range(nt + 1):
        t = i * h
        if i in sample_set:
            e_i = draws[sample_no[i]]
            y = sample_output(sys, st.x_hist, e_i, t)
            st.w = reset_isp(st.w, y)
            if transform is not None:
                st.theta = reset_theta(transform, y, st.v_hist, t, sys.r + sys.tau)
            ts.append(t)
            ys.append(y)
            es.append(e_i)
        rows["z"].append(st.z.copy())
        rows["w"].append(st.w.copy())
        if transform is not None:
            rows["th"].append(st.theta.copy())
        update_predictor_chain(sys, shaping, st.z, st.xi, st.u_hist, t, delta, h)
        u = control_law(cert, sys.U, st.xi[-1].samples[-1])
        st.u_hist.push(u)
        st.v_hist.push(u if transform is None else compose_input(transform, u, st.theta))
        if i == nt:
            break
        field = None if transform is None else transform.f_tilde
        st.x = step_plant(sys, st.x, st.v_hist, t, h, field=field)
        st.x_hist.push(st.x)
        z_new, w_new = step_observer_isp(sys, cert, shaping, st.z, st.w, st.u_hist, t, h)
        if transform is not None:
            st.theta = step_theta(transform, st.theta, u, t, h)
        st.z, st.w = z_new, w_new
        st.t = t + h
    off = nr + nd
    k = sys.k
    return SimulationResult(
        t=h * np.arange(nt + 1), x=st.x_hist.samples[nr:], x_pre=st.x_hist.samples[:nr],
        z=np.array(rows["z"]), w=np.array(rows["w"]),
        xi=np.stack([b.samples[mc:] for b in st.xi]), u=st.u_hist.samples[off:],
        u_pre=st.u_hist.samples[:off], v=st.v_hist.samples[off:],
        theta=np.array(rows["th"]) if transform is not None else None,
        sample_t=np.array(ts), y=np.array(ys).reshape(-1, k), e=np.array(es).reshape(-1, k),
        h=h, r=sys.r, tau=sys.tau, delta=delta,
    )

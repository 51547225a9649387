"""Scenario configuration, run metrics, decay/gain fitting and sweeps."""
from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .certify import RhoEstimator, SamplerConfig, batch_scalar
from .errors import ConfigError, NumericError, SingularityError
from .examples import BUILTINS, Example41Params, Example42Params
from .numerics import grid_steps, make_partition
from .scheme import ErrorSource, InitialConditions, SchemeConfig, SimulationResult, run_closed_loop

CONVERGENCE_TOL = 1e-3
TAIL_FRACTION = 0.25
ENVELOPE_TOL = 1e-6

DEFAULTS: dict = {
    "system": {"name": "example-4.1", "params": {}},
    "scheme": {"N": 3, "Ts": 0.05, "T_min": 0.05, "sigma": 0.001, "h": 0.0025, "horizon": 200.0},
    "initial": {"x0": None, "random_radius": 3.0, "seed": 0, "z0": None, "w0": None,
                "theta0": None, "xi_mode": "zero"},
    "error": {"kind": "none", "amplitude": 0.0, "seed": 0, "values": []},
    "partition_seed": None,
    "tail_fraction": TAIL_FRACTION,
    "certify": {"n_samples": 100000, "constant_samples": 4096, "seed": 0, "outer_factor": 4.0},
    "outputs": {"dir": ".", "trajectory": "trajectory.csv", "samples": "samples.csv",
                "report": "report.json", "sweep": "sweep.csv"},
}


_INSTANCES: dict = {}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in out:
            raise ConfigError(f"unknown configuration key {k!r}")
        if isinstance(out[k], dict) and k != "params" and isinstance(v, dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ScenarioConfig:
    """Resolved scenario: the built-in defaults overlaid with a user document."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __post_init__(self):
        self.data = _merge(DEFAULTS, self.data)
        sys = self.build()[0]
        cfg = self.scheme_config()
        cfg.grid(sys)
        s = self.data["scheme"]
        grid_steps(s["T_min"], s["h"], "T_min")
        if s["horizon"] < 10.0 * (sys.r + sys.tau):
            raise ConfigError(f"horizon {s['horizon']} is shorter than 10 (r + tau) = {10 * (sys.r + sys.tau)}")
        if self.data["initial"]["xi_mode"] not in ("zero", "z0"):
            raise ConfigError("xi_mode must be 'zero' or 'z0'")
        if not 0 < self.data["tail_fraction"] <= 1:
            raise ConfigError("tail_fraction must lie in (0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        return cls(doc or {})

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        text = path.read_text()
        doc = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError("configuration must be a mapping")
        return cls(doc or {})

    def replace(self, **sections) -> "ScenarioConfig":
        return ScenarioConfig(_merge(self.data, sections))

    # -- builders -----------------------------------------------------------

    def params(self):
        sysd = self.data["system"]
        name, p = sysd["name"], dict(sysd["params"])
        if name not in BUILTINS:
            raise ConfigError(f"unknown system {name!r}; built-ins: {sorted(BUILTINS)}")
        if name == "example-4.2":
            if "p_fn" in p:
                raise ConfigError("p_fn cannot be set from a configuration file")
            return Example42Params(**p)
        return Example41Params(**p)

    def build(self):
        """``(sys, cert, shaping, transform)``; instances are shared per parameter set so the
        compiled kernels are reused across runs."""
        name = self.data["system"]["name"]
        params = self.params()
        key = (name, params)
        if key not in _INSTANCES:
            out = BUILTINS[name](params)
            if len(out) == 4:
                sys, transform, cert, shaping = out
                _INSTANCES[key] = (sys, cert, shaping, transform)
            else:
                _INSTANCES[key] = (*out, None)
        return _INSTANCES[key]

    def error_source(self) -> ErrorSource:
        e = self.data["error"]
        return ErrorSource(kind=e["kind"], amplitude=float(e["amplitude"]), seed=int(e["seed"]),
                           values=tuple(np.ravel(e["values"]).tolist()))

    def scheme_config(self) -> SchemeConfig:
        s = self.data["scheme"]
        return SchemeConfig(N=int(s["N"]), Ts=float(s["Ts"]), sigma=float(s["sigma"]), h=float(s["h"]),
                            horizon=float(s["horizon"]), error=self.error_source())

    def partition(self, seed=None):
        s = self.data["scheme"]
        seed = self.data["partition_seed"] if seed is None else seed
        if seed is None:
            return make_partition(s["Ts"], s["Ts"], s["horizon"], seed=0, h=s["h"])
        return make_partition(s["Ts"], s["T_min"], s["horizon"], seed=int(seed), h=s["h"])

    def initial_conditions(self, sys) -> InitialConditions:
        ini = self.data["initial"]
        if ini["x0"] is not None:
            x0 = np.asarray(ini["x0"], dtype=float)
            if x0.shape != (sys.n,):
                raise ConfigError(f"x0 must have {sys.n} entries")
        else:
            x0 = random_ball_point(sys.n, float(ini["random_radius"]), int(ini["seed"]))
        z0 = np.zeros(sys.n) if ini["z0"] is None else np.asarray(ini["z0"], dtype=float)
        w0 = None if ini["w0"] is None else np.asarray(ini["w0"], dtype=float)
        th0 = None if ini["theta0"] is None else np.asarray(ini["theta0"], dtype=float)
        xi0 = 0.0 if ini["xi_mode"] == "zero" else None
        return InitialConditions(x0=x0, z0=z0, w0=w0, theta0=th0, xi0=xi0)


def random_ball_point(n: int, radius: float, seed: int) -> np.ndarray:
    """Uniform point in the closed ball of the given radius."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=n)
    d /= np.linalg.norm(d)
    return radius * rng.uniform() ** (1.0 / n) * d


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def fit_decay_rate(norms, t=None, window: tuple[float, float] | None = None, h: float = 1.0) -> float:
    """Negated least-squares slope of ``log(norm)`` over the window.

    ``t`` defaults to ``h * arange``; ``window=None`` uses the last quarter.
    Norms are floored at ``1e-300``.
    """
    y = np.asarray(norms, dtype=float)
    t = h * np.arange(y.size) if t is None else np.asarray(t, dtype=float)
    if window is None:
        window = (t[-1] - TAIL_FRACTION * (t[-1] - t[0]), t[-1])
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if np.count_nonzero(sel) < 10:
        raise ConfigError("decay-rate window holds fewer than 10 points")
    ly = np.log(np.maximum(y[sel], 1e-300))
    slope = np.polyfit(t[sel], ly, 1)[0]
    return float(-slope)


def _trailing_max(a: np.ndarray, k: int) -> np.ndarray:
    """``out[i] = max(a[max(0, i-k) : i+1])``."""
    if k <= 0:
        return a.copy()
    pad = np.concatenate([np.full(k, a[0]), a])
    return np.lib.stride_tricks.sliding_window_view(pad, k + 1).max(axis=1)


def composite_norm(res: SimulationResult) -> np.ndarray:
    """The ISS-style state measure at every grid time: delayed-window sups of ``|x|``, ``|xi_j|``,
    ``|u|`` plus ``|w|``, ``|z|`` and ``|theta|`` when a transform is active."""
    h = res.h
    nr = grid_steps(res.r, h, "r")
    nd = grid_steps(res.tau, h, "tau")
    mc = grid_steps(res.delta, h, "delta")
    xn = np.linalg.norm(np.vstack([res.x_pre, res.x]), axis=1)
    out = _trailing_max(xn, nr)[nr:]
    out = out + np.linalg.norm(res.w, axis=1) + np.linalg.norm(res.z, axis=1)
    if res.theta is not None:
        out += np.linalg.norm(res.theta, axis=1)
    for j in range(res.xi.shape[0]):
        xi = np.linalg.norm(res.xi[j], axis=1)
        # window [t - delta, t): exclude the current value
        prev = np.concatenate([[xi[0]], xi[:-1]])
        out += _trailing_max(prev, max(mc - 1, 0))
    un = np.linalg.norm(np.vstack([res.u_pre, res.u]), axis=1)
    uwin = _trailing_max(un, nr + nd)  # ends at t (conservative by one cell)
    out += uwin[nr + nd:]
    return out


@dataclass
class RunMetrics:
    sigma_hat: float
    entry_time: float
    tail_sup_x: float
    tail_sup_observer: float
    tail_sup_predictor: float
    tail_sup_composite: float
    converged: bool
    invariants: dict = field(default_factory=dict)
    gain: float | None = None
    status: str = "ok"
    message: str = ""

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def diverged(cls, message: str) -> "RunMetrics":
        inf = math.inf
        return cls(math.nan, inf, inf, inf, inf, inf, False, {}, None, "diverged", message)


def _tail_start(res: SimulationResult, fraction: float) -> int:
    return int(round((1.0 - fraction) * res.n_steps))


def tail_errors(res: SimulationResult, fraction: float = TAIL_FRACTION) -> tuple[float, float]:
    """Tail sups of ``|z(t) - x(t - r)|`` and ``|xi_N(t) - x(t + tau)|`` (where stored)."""
    i0 = _tail_start(res, fraction)
    idx, xr = res.x_shift(-res.r)
    sel = idx >= i0
    obs = float(np.max(np.linalg.norm(res.z[idx[sel]] - xr[sel], axis=1)))
    idx, xt = res.x_shift(res.tau)
    sel = idx >= i0
    pred = float(np.max(np.linalg.norm(res.xi_N[idx[sel]] - xt[sel], axis=1))) if np.any(sel) else math.nan
    return obs, pred


def check_invariants(res: SimulationResult, sys, cert, shaping, ic: InitialConditions,
                     rho: RhoEstimator | None = None, tol: float = ENVELOPE_TOL) -> dict:
    """Absorbing-set envelopes, observer level bound, ``u in U`` and the predictor stage bound."""
    Vb = batch_scalar(cert.V)
    V = Vb(res.x)
    Vz = Vb(res.z)
    V0 = float(cert.V(np.asarray(ic.x0, dtype=float)))
    Vz0 = float(Vz[0])
    inside = np.flatnonzero(V <= cert.R)
    entry = int(inside[0]) if inside.size else -1
    after = V[entry:] if entry >= 0 else np.array([])
    psi = batch_scalar(shaping.psi)(res.z)
    rho = rho or RhoEstimator(sys, SamplerConfig(n_samples=512))
    Kp = shaping.K * psi
    stage_bound = Kp + res.delta * rho.value(float(np.max(Kp)))
    stage_norm = np.max(np.linalg.norm(res.xi, axis=2), axis=0)
    out = {
        "x_envelope": bool(np.all(V <= max(V0, cert.R) + tol)),
        "x_after_entry": bool(np.all(after <= cert.R + tol)) if entry >= 0 else False,
        "z_envelope": bool(np.all(Vz <= max(Vz0, cert.b) + tol)),
        "u_in_U": bool(np.all((res.u >= sys.U.lo - 1e-12) & (res.u <= sys.U.hi + 1e-12))),
        "stage_bound": bool(np.all(stage_norm <= stage_bound * (1 + 1e-12))),
        "entry_time": float(res.t[entry]) if entry >= 0 else math.inf,
        "max_V_x": float(V.max()),
        "max_V_z": float(Vz.max()),
    }
    out["all"] = all(out[k] for k in ("x_envelope", "x_after_entry", "z_envelope", "u_in_U", "stage_bound"))
    return out


def compute_metrics(res: SimulationResult, sys, cert, shaping, ic: InitialConditions,
                    fraction: float = TAIL_FRACTION) -> RunMetrics:
    xn = np.linalg.norm(res.x, axis=1)
    i0 = _tail_start(res, fraction)
    sigma_hat = fit_decay_rate(xn[i0:], res.t[i0:], window=(res.t[i0], res.t[-1]))
    obs, pred = tail_errors(res, fraction)
    inv = check_invariants(res, sys, cert, shaping, ic)
    tail_x = float(np.max(xn[i0:]))
    comp = composite_norm(res)
    converged = bool(tail_x < CONVERGENCE_TOL and sigma_hat > 0)
    return RunMetrics(sigma_hat, inv["entry_time"], tail_x, obs, pred, float(np.max(comp[i0:])),
                      converged, inv)


def run_scenario(cfg: ScenarioConfig, partition_seed=None, error: ErrorSource | None = None,
                 x0=None) -> tuple[SimulationResult | None, RunMetrics]:
    """One closed-loop run; numerical breakdown is reported as a diverged metric, not raised."""
    sys, cert, shaping, transform = cfg.build()
    scheme = cfg.scheme_config()
    if error is not None:
        scheme = SchemeConfig(N=scheme.N, Ts=scheme.Ts, sigma=scheme.sigma, h=scheme.h,
                              horizon=scheme.horizon, error=error)
    ic = cfg.initial_conditions(sys)
    if x0 is not None:
        ic = InitialConditions(x0=np.asarray(x0, float), z0=ic.z0, w0=ic.w0, theta0=ic.theta0, xi0=ic.xi0)
    part = cfg.partition(partition_seed)
    try:
        res = run_closed_loop(sys, cert, shaping, scheme, part, ic, transform)
    except (NumericError, SingularityError) as exc:
        return None, RunMetrics.diverged(str(exc))
    return res, compute_metrics(res, sys, cert, shaping, ic, cfg.data["tail_fraction"])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def robustness_sweep(cfg: ScenarioConfig, n: int, seeds=None) -> tuple[list[RunMetrics], bool]:
    """``n`` runs differing only in the partition seed (default seeds ``1..n``); records keep seed order."""
    if n < 1:
        raise ConfigError("sweep needs at least one partition")
    seeds = list(range(1, n + 1)) if seeds is None else list(seeds)
    if len(seeds) != n:
        raise ConfigError("need one seed per partition")
    records = [run_scenario(cfg, partition_seed=s)[1] for s in seeds]
    return records, all(r.converged for r in records)


@dataclass
class GainReport:
    gamma: float
    eps: list
    tails: list
    verdicts: list

    def as_dict(self) -> dict:
        return asdict(self)


def estimate_asymptotic_gain(cfg: ScenarioConfig, eps_list, kind: str = "uniform") -> GainReport:
    """Tail sup of the composite state measure per error amplitude and the through-origin slope."""
    eps = [float(e) for e in eps_list]
    if len(eps) < 3 or any(e <= 0 for e in eps):
        raise ConfigError("need at least three positive error amplitudes")
    seed = int(cfg.data["error"]["seed"])
    tails, verdicts = [], []
    for e in eps:
        src = ErrorSource(kind="none") if kind == "none" else ErrorSource(kind="uniform", amplitude=e, seed=seed)
        res, m = run_scenario(cfg, error=src)
        if res is None:
            tails.append(math.inf)
            verdicts.append("diverged")
        else:
            tails.append(m.tail_sup_composite)
            verdicts.append("bounded")
    ok = [(e, t) for e, t, v in zip(eps, tails, verdicts) if v == "bounded"]
    num = sum(e * t for e, t in ok)
    den = sum(e * e for e, _ in ok)
    gamma = num / den if den > 0 else math.nan
    return GainReport(gamma, eps, tails, verdicts)


def write_sweep_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    keys = list(rows[0].keys())
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

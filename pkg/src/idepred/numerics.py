"""Fixed-step substrate: time grid, signal histories, quadrature, RK4, sampling partitions."""
from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from ._jit import maybe_njit
from .errors import ConfigError, NumericError, RangeError, ShapeError

_GRID_TOL = 1e-9


def grid_steps(duration: float, h: float, name: str = "duration") -> int:
    """Number of steps of size ``h`` in ``duration``; raises if not an integer multiple."""
    if h <= 0:
        raise ConfigError(f"step h must be positive, got {h}")
    k = duration / h
    kr = round(k)
    if abs(k - kr) > _GRID_TOL * max(1.0, abs(k)):
        raise ConfigError(f"{name}={duration} is not an integer multiple of h={h}")
    return int(kr)


@dataclass(frozen=True)
class TimeGrid:
    h: float
    t0: float = 0.0
    horizon: float = 1.0

    def __post_init__(self):
        if self.h <= 0:
            raise ConfigError(f"step h must be positive, got {self.h}")
        grid_steps(self.horizon, self.h, "horizon")

    @property
    def n_steps(self) -> int:
        return grid_steps(self.horizon, self.h, "horizon")

    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_steps + 1)

    def steps(self, duration: float, name: str = "duration") -> int:
        return grid_steps(duration, self.h, name)

    def index(self, t: float) -> int:
        return grid_steps(t - self.t0, self.h, f"time {t}")


class HistoryBuffer:
    """Time-indexed signal history on a uniform grid.

    In ``"constant"`` mode sample ``i`` holds the value on the half-open cell
    ``[start + i*h, start + (i+1)*h)`` and point lookups use the left limit, so a
    query exactly on a boundary ``start + k*h`` returns sample ``k-1``.
    In ``"linear"`` mode sample ``i`` is the value at the node ``start + i*h``.
    """

    MODES = ("constant", "linear")

    def __init__(self, start: float, h: float, samples=None, mode: str = "constant",
                 dim: int | None = None, capacity: int | None = None):
        if mode not in self.MODES:
            raise ConfigError(f"unknown interpolation mode {mode!r}")
        if h <= 0:
            raise ConfigError(f"step h must be positive, got {h}")
        self.start = float(start)
        self.h = float(h)
        self.mode = mode
        self.capacity = capacity
        if samples is None:
            if dim is None:
                raise ShapeError("need samples or dim")
            samples = np.empty((0, dim))
        arr = np.array(samples, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        self._data = arr
        self._trim()

    @classmethod
    def constant(cls, value, start: float, length: float, h: float, mode: str = "constant"):
        """Buffer holding ``value`` over ``[start, start + length)``."""
        count = grid_steps(length, h, "history length") + (1 if mode == "linear" else 0)
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(start, h, np.tile(value, (count, 1)), mode=mode)

    @property
    def samples(self) -> np.ndarray:
        return self._data

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    def __len__(self) -> int:
        return self._data.shape[0]

    @property
    def end(self) -> float:
        """Right end of the covered span."""
        n = len(self)
        return self.start + (n if self.mode == "constant" else n - 1) * self.h

    def push(self, value) -> None:
        value = np.atleast_1d(np.asarray(value, dtype=float))
        if value.shape != (self.dim,):
            raise ShapeError(f"sample of shape {value.shape}, buffer dim {self.dim}")
        self._data = np.vstack([self._data, value[None, :]])
        self._trim()

    def _trim(self) -> None:
        if self.capacity is not None and len(self) > self.capacity:
            drop = len(self) - self.capacity
            self._data = self._data[drop:]
            self.start += drop * self.h

    def _span_error(self, t):
        return RangeError(f"lookup at t={t} outside covered span [{self.start}, {self.end}]")

    def cell(self, t: float) -> np.ndarray:
        """Value of the cell ``[t, t+h)`` for grid-aligned ``t`` (right-continuous read)."""
        k = (t - self.start) / self.h
        i = int(math.floor(k + _GRID_TOL))
        if i < 0 or i >= len(self):
            raise self._span_error(t)
        return self._data[i]

    def lookup(self, t: float) -> np.ndarray:
        k = (t - self.start) / self.h
        n = len(self)
        if self.mode == "constant":
            kr = round(k)
            i = kr - 1 if abs(k - kr) <= _GRID_TOL * max(1.0, abs(k)) else int(math.floor(k))
            if i == -1 and kr == 0:
                i = 0  # no cell to the left of the span start
            if i < 0 or i >= n:
                raise self._span_error(t)
            return self._data[i]
        if k < -_GRID_TOL or k > n - 1 + _GRID_TOL:
            raise self._span_error(t)
        i = min(max(int(math.floor(k)), 0), n - 2) if n > 1 else 0
        if n == 1:
            return self._data[0]
        frac = k - i
        return (1.0 - frac) * self._data[i] + frac * self._data[i + 1]

    def window(self, t0: float, t1: float) -> np.ndarray:
        """Samples of the cells covering ``[t0, t1)`` (both grid-aligned)."""
        i0 = grid_steps(t0 - self.start, self.h, "window start")
        i1 = grid_steps(t1 - self.start, self.h, "window end")
        if i0 < 0 or i1 > len(self) or i1 < i0:
            raise RangeError(f"window [{t0}, {t1}) outside covered span [{self.start}, {self.end}]")
        return self._data[i0:i1]


def history_lookup(buf: HistoryBuffer, t: float) -> np.ndarray:
    return buf.lookup(t)


def rk4_step(vector_field: Callable, state, t: float, h: float) -> np.ndarray:
    """Classical fourth-order Runge-Kutta step for ``x' = vector_field(t, x)``."""
    x = np.asarray(state, dtype=float)
    k1 = np.asarray(vector_field(t, x), dtype=float)
    k2 = np.asarray(vector_field(t + 0.5 * h, x + 0.5 * h * k1), dtype=float)
    k3 = np.asarray(vector_field(t + 0.5 * h, x + 0.5 * h * k2), dtype=float)
    k4 = np.asarray(vector_field(t + h, x + h * k3), dtype=float)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k)):
            raise NumericError(f"non-finite vector field value in step starting at t={t}")
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@maybe_njit
def left_sum(samples, h):
    """h times the column sums of ``samples`` (shape (m, d))."""
    m, d = samples.shape
    out = np.zeros(d)
    for i in range(m):
        for c in range(d):
            out[c] += samples[i, c]
    for c in range(d):
        out[c] *= h
    return out


def quad_halfopen(samples, h: float, m: int | None = None) -> np.ndarray:
    """Left-rectangle rule over ``[t - m*h, t)``: ``h * sum(samples)``.

    ``samples`` are the integrand values at the left endpoint of each cell; the
    right endpoint ``t`` is never used.
    """
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if m is not None and arr.shape[0] != m:
        raise ShapeError(f"expected {m} samples over the window, got {arr.shape[0]}")
    if arr.shape[0] < 1:
        raise ShapeError("need at least one sample")
    return left_sum(np.ascontiguousarray(arr), float(h))


@dataclass(frozen=True)
class SamplingPartition:
    times: np.ndarray
    max_gap: float
    h: float
    indices: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size == 0 or t[0] != 0.0:
            raise ConfigError("partition must start at 0")
        gaps = np.diff(t)
        if np.any(gaps <= 0):
            raise ConfigError("partition must be strictly increasing")
        if gaps.size and gaps.max() > self.max_gap * (1 + 1e-12):
            raise ConfigError(f"partition gap {gaps.max()} exceeds bound {self.max_gap}")
        if self.indices is None:
            object.__setattr__(self, "indices", np.rint(t / self.h).astype(np.int64))

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times)


def make_partition(Ts: float, T_min: float, horizon: float, seed: int | None = 0,
                   h: float = 0.0025) -> SamplingPartition:
    """Random admissible partition: gaps uniform in ``[T_min, Ts]`` rounded to the grid."""
    if not (0 < T_min <= Ts):
        raise ConfigError(f"need 0 < T_min <= Ts, got T_min={T_min}, Ts={Ts}")
    lo = math.ceil(T_min / h - _GRID_TOL)
    hi = math.floor(Ts / h + _GRID_TOL)
    if lo < 1 or lo > hi:
        raise ConfigError(f"no grid multiple of h={h} lies in [{T_min}, {Ts}]")
    end = grid_steps(horizon, h, "horizon") if horizon > 0 else 0
    rng = np.random.default_rng(seed)
    idx = [0]
    while idx[-1] < end:
        gap = rng.uniform(lo * h, hi * h)
        step = min(max(int(round(gap / h)), lo), hi)
        idx.append(idx[-1] + step)
    indices = np.asarray(idx, dtype=np.int64)
    return SamplingPartition(indices * h, float(Ts), h, indices)

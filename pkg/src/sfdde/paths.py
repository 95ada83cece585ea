"""Discretized cadlag paths on [-r, T], segment windows and their norms.

A path lives on a uniform grid covering both the history interval [-r, 0]
and the simulation horizon [0, T].  Between nodes the path is the value at
the left node (cadlag step interpolation), so jumps recorded inside a cell
become visible at the cell's right node.  Segment views expose the recent
window [t-r, t]; norms come in two flavours:

* ``sup_norm`` - uniform norm over the window (the cadlag-space norm),
* ``mp_norm`` - left-Riemann L^p integral over [-r, 0) plus the present
  value (the product-space norm), which ignores single-node modifications
  of the past up to O(dt^{1/p}) while the sup norm does not.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, OffsetOutOfRangeError, PointEvaluationError

_ALIGN_TOL = 1e-9


def _as_steps(value: float, dt: float, what: str) -> int:
    k = value / dt
    rounded = round(k)
    if abs(k - rounded) > _ALIGN_TOL * max(1.0, abs(k)):
        raise GridError(f"{what}={value!r} is not an integer multiple of dt={dt!r}")
    return int(rounded)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = -r + i*dt, i = 0..(r+T)/dt.

    Both the delay r and the horizon T must be integer multiples of dt so
    segment windows align with nodes.
    """

    delay: float
    horizon: float
    dt: float
    window: int = field(init=False)      # nodes spanned by the delay
    steps: int = field(init=False)       # steps on [0, T]

    def __post_init__(self):
        if self.dt <= 0.0:
            raise GridError("dt must be positive")
        if self.delay < 0.0:
            raise GridError("delay must be non-negative")
        if self.horizon <= 0.0:
            raise GridError("horizon must be positive")
        object.__setattr__(self, "window", _as_steps(self.delay, self.dt, "delay"))
        object.__setattr__(self, "steps", _as_steps(self.horizon, self.dt, "horizon"))

    @property
    def n_nodes(self) -> int:
        return self.window + self.steps + 1

    def times(self) -> np.ndarray:
        return -self.delay + self.dt * np.arange(self.n_nodes)

    def time_of(self, index: int) -> float:
        return -self.delay + self.dt * index

    def index_of(self, t: float) -> int:
        """Node index of a grid-aligned time; raises GridError if off-grid."""
        idx = _as_steps(t + self.delay, self.dt, f"time {t!r}")
        if not 0 <= idx < self.n_nodes:
            raise GridError(f"time {t!r} outside [-r, T]")
        return idx

    def zero_index(self) -> int:
        return self.window


@dataclass(frozen=True)
class PathJump:
    """One applied jump: pre-jump present value and the increment added."""

    step: int                 # cell index: jump occurred in (t_step, t_step+1]
    time: float
    component: int
    mark: float
    pre_value: np.ndarray     # shape (d,)
    increment: np.ndarray     # shape (d,)


class CadlagPath:
    """Grid-sampled cadlag path with exact jump bookkeeping.

    ``values[i]`` is the right-continuous value at node i.  ``jump_log``
    records every applied jump with its pre-jump present value so Ito-type
    sums stay exact even with several jumps per cell.
    """

    __slots__ = ("grid", "values", "jump_log")

    def __init__(self, grid: TimeGrid, values: np.ndarray,
                 jump_log: list[PathJump] | None = None):
        """``jump_log=None`` marks a path without jump bookkeeping; pass an
        (empty) list for tracked paths."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != grid.n_nodes:
            raise GridError(
                f"need {grid.n_nodes} node values, got {values.shape[0]}")
        self.grid = grid
        self.values = values
        self.jump_log = jump_log

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def value(self, t: float) -> np.ndarray:
        """Cadlag evaluation: value at the largest node <= t."""
        g = self.grid
        if t < -g.delay - _ALIGN_TOL or t > g.horizon + _ALIGN_TOL:
            raise GridError(f"time {t!r} outside [-r, T]")
        idx = int(np.floor((t + g.delay) / g.dt + _ALIGN_TOL))
        return self.values[min(max(idx, 0), g.n_nodes - 1)]

    def segment(self, t: float) -> "Segment":
        return Segment(self, self.grid.index_of(t))

    def to_csv(self, fileobj) -> None:
        """Dump as ``t,x1..xd,is_jump`` rows at grid resolution."""
        g = self.grid
        jump_nodes = {j.step + 1 for j in (self.jump_log or ())}
        cols = ",".join(f"x{i+1}" for i in range(self.d))
        fileobj.write(f"t,{cols},is_jump\n")
        times = g.times()
        for i in range(g.n_nodes):
            xs = ",".join(f"{v:.16e}" for v in self.values[i])
            fileobj.write(f"{times[i]:.16e},{xs},{1 if i in jump_nodes else 0}\n")


class Segment:
    """Windowed view theta in [-r, 0] -> X(t + theta), anchored at a node."""

    __slots__ = ("path", "anchor")

    def __init__(self, path: CadlagPath, anchor: int):
        g = path.grid
        if not g.window <= anchor < g.n_nodes:
            raise GridError("segment anchor must lie in [0, T]")
        self.path = path
        self.anchor = anchor

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    @property
    def time(self) -> float:
        return self.grid.time_of(self.anchor)

    def window_values(self) -> np.ndarray:
        """Values at the window nodes -r, -r+dt, ..., 0; shape (window+1, d)."""
        return self.path.values[self.anchor - self.grid.window:self.anchor + 1]

    def present(self) -> np.ndarray:
        return self.path.values[self.anchor]

    def value_at_offset(self, theta: float) -> np.ndarray:
        """Cadlag value at offset theta in [-r, 0] (grid-aligned)."""
        g = self.grid
        if theta < -g.delay - _ALIGN_TOL or theta > _ALIGN_TOL:
            raise OffsetOutOfRangeError(f"offset {theta!r} outside [-{g.delay}, 0]")
        k = _as_steps(theta + g.delay, g.dt, f"offset {theta!r}")
        return self.path.values[self.anchor - g.window + k]

    def materialize(self) -> "FrozenSegment":
        """Copy the window out of the backing path (for restarts)."""
        return FrozenSegment(self.grid.dt, self.window_values().copy())


class FrozenSegment:
    """Stand-alone segment: window values on [-r, 0] detached from any path."""

    __slots__ = ("dt", "values")

    def __init__(self, dt: float, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        self.dt = dt
        self.values = values

    @classmethod
    def from_function(cls, fn, delay: float, dt: float, d: int = 1) -> "FrozenSegment":
        w = _as_steps(delay, dt, "delay")
        thetas = -delay + dt * np.arange(w + 1)
        vals = np.array([np.broadcast_to(np.asarray(fn(th), dtype=float), (d,))
                         for th in thetas])
        return cls(dt, vals)

    @classmethod
    def constant(cls, value, delay: float, dt: float) -> "FrozenSegment":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        w = _as_steps(delay, dt, "delay")
        return cls(dt, np.tile(v, (w + 1, 1)))

    @property
    def window(self) -> int:
        return self.values.shape[0] - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def window_values(self) -> np.ndarray:
        return self.values

    def present(self) -> np.ndarray:
        return self.values[-1]

    def value_at_offset(self, theta: float) -> np.ndarray:
        r = self.window * self.dt
        if theta < -r - _ALIGN_TOL or theta > _ALIGN_TOL:
            raise OffsetOutOfRangeError(f"offset {theta!r} outside [-{r}, 0]")
        k = _as_steps(theta + r, self.dt, f"offset {theta!r}")
        return self.values[k]


class MpSegment:
    """Product-space view of a segment: (L^p class of the past, present value).

    Point evaluation of the past is deliberately unavailable: only the
    present coordinate and integral functionals of the window make sense in
    this representation.
    """

    __slots__ = ("_segment", "p")

    def __init__(self, segment, p: float):
        if p < 2.0:
            raise ValueError("p must be >= 2")
        self._segment = segment
        self.p = p

    @property
    def dt(self) -> float:
        seg = self._segment
        return seg.dt if isinstance(seg, FrozenSegment) else seg.grid.dt

    def present(self) -> np.ndarray:
        return self._segment.present()

    def lp_window(self) -> np.ndarray:
        """Window values at the left-Riemann nodes of [-r, 0); shape (window, d)."""
        return self._segment.window_values()[:-1]

    def value_at_offset(self, theta: float) -> np.ndarray:
        if theta == 0.0:
            return self.present()
        raise PointEvaluationError(
            "point evaluation of the L^p part is not defined; "
            "use integral functionals or the present coordinate")


def sup_norm(segment) -> float:
    """Uniform norm of the window: max Euclidean node value over [-r, 0]."""
    vals = segment.window_values()
    return float(np.max(np.linalg.norm(vals, axis=1)))


def mp_norm(mpseg: MpSegment) -> float:
    """Product norm: (left-Riemann int_{-r}^0 |eta|^p + |present|^p)^{1/p}."""
    p = mpseg.p
    past = mpseg.lp_window()
    lp_part = float(np.sum(np.linalg.norm(past, axis=1) ** p)) * mpseg.dt
    return (lp_part + float(np.linalg.norm(mpseg.present())) ** p) ** (1.0 / p)


def embedding_gap(segment, p: float) -> tuple[float, float]:
    """Both sides of ``|(eta 1_{[-r,0)}, eta(0))|^p_{M^p} <= (r+1) |eta|^p_sup``.

    Returns (lhs, rhs); the inequality holds exactly on the discrete norms.
    """
    mp = MpSegment(segment, p)
    r = mp.dt * mp.lp_window().shape[0]
    return mp_norm(mp) ** p, (r + 1.0) * sup_norm(segment) ** p


def segment_continuity_profile(path: CadlagPath, p: float,
                               t_max: float | None = None) -> np.ndarray:
    """Per-step product-norm increment of the segment process.

    Rows are ``(t_i, |(X_{t_{i+1}}, X(t_{i+1})) - (X_{t_i}, X(t_i))|_{M^p})``
    for every step with both anchors in [0, T].  Refining dt drives the
    increments to zero except at jumps, where the present-value coordinate
    keeps an O(1) contribution.
    """
    g = path.grid
    last = g.n_nodes - 1 if t_max is None else g.index_of(t_max)
    rows = []
    w = g.window
    for i in range(g.zero_index(), last):
        cur = path.values[i - w:i + 1]
        nxt = path.values[i + 1 - w:i + 2]
        diff = nxt - cur
        lp = float(np.sum(np.linalg.norm(diff[:-1], axis=1) ** p)) * g.dt
        present = float(np.linalg.norm(diff[-1])) ** p
        rows.append((g.time_of(i), (lp + present) ** (1.0 / p)))
    return np.array(rows)

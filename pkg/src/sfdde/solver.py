"""Strong-solution construction on the grid.

The scheme is Euler-Maruyama with left-node (predictable) coefficient
evaluation and exact per-cell jump aggregation: jumps keep their sampled
times and marks, are applied in time order on top of the left-node value,
and the compensator of the large-jump part is subtracted as a drift.  The
same stepping core serves three purposes:

* ``euler_solve``   -- the fixed-point scheme (coefficients on the path
  being built),
* ``picard_solve``  -- the iteration X^{k+1} = Phi(X^k) with integrands
  frozen on the previous iterate; on a fixed grid it reaches the
  ``euler_solve`` path exactly after at most ``steps`` iterations,
* the robustness variants (jump filtering plus scaled extra diffusion),
  built in :mod:`sfdde.robustness` on top of the same core.

Everything is a deterministic function of ``(model, eta, grid,
NoiseRecord)``; identical inputs give bit-identical paths.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
import time
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from .errors import (InsufficientIteratesError, NonFiniteError,
                     StateNotMaintainedError)
from .functionals import (AuxiliaryState, DelayMeasure, PathContext, SfddeModel,
                          bind_coefficients, eval_distributed)
from .levy import JumpEvent, compensator_integral, lp_nu_norm, sample_large_jumps
from .paths import CadlagPath, FrozenSegment, PathJump, Segment, TimeGrid


class NoiseRecord:
    """All randomness of one path: W/B increments and the realized jumps.

    Jump events are sampled once at the reference truncation ``eps_ref``;
    coarser truncations reuse the same realization by filtering on |z|.
    """

    __slots__ = ("grid", "dW", "dB", "events", "eps_ref", "seed", "path_index",
                 "_cells")

    def __init__(self, grid: TimeGrid, dW: np.ndarray, dB: np.ndarray,
                 events: list[JumpEvent], eps_ref: float,
                 seed: int = 0, path_index: int = 0):
        self.grid = grid
        self.dW = dW
        self.dB = dB
        self.events = sorted(events, key=lambda e: (e.time, e.component))
        self.eps_ref = eps_ref
        self.seed = seed
        self.path_index = path_index
        self._cells = None

    @classmethod
    def generate(cls, grid: TimeGrid, model: SfddeModel, eps_ref: float,
                 master_seed: int, path_index: int = 0) -> "NoiseRecord":
        sqdt = math.sqrt(grid.dt)
        gw = _rng.substream(master_seed, path_index, _rng.BROWNIAN_W, 0)
        dW = gw.normal(0.0, sqdt, size=(grid.steps, model.m))
        if model.n > 0:
            gb = _rng.substream(master_seed, path_index, _rng.BROWNIAN_B, 0)
            dB = gb.normal(0.0, sqdt, size=(grid.steps, model.n))
        else:
            dB = np.empty((grid.steps, 0))
        events: list[JumpEvent] = []
        if model.has_jumps and model.nu:
            events = sample_large_jumps(model.nu, eps_ref, grid.horizon,
                                        master_seed, path_index)
        return cls(grid, dW, dB, events, eps_ref, master_seed, path_index)

    def events_by_cell(self) -> list[list[JumpEvent]]:
        """Events bucketed per step: cell i holds times in (t_i, t_{i+1}]."""
        if self._cells is None:
            cells: list[list[JumpEvent]] = [[] for _ in range(self.grid.steps)]
            dt = self.grid.dt
            for ev in self.events:
                cell = int(math.ceil(ev.time / dt - 1e-12)) - 1
                cells[min(max(cell, 0), self.grid.steps - 1)].append(ev)
            self._cells = cells
        return self._cells


@dataclass
class SolveReport:
    """Solved path plus the per-step coefficient cache for calculus checks."""

    path: CadlagPath
    f_vals: np.ndarray                 # (steps, d)
    g_vals: np.ndarray                 # (steps, d, m)
    h0_vals: np.ndarray | None         # (steps, d, k)
    compensator: np.ndarray | None     # (k, n) used for the drift correction
    eps_used: float
    start_index: int
    wall_time: float


_comp_cache: dict = {}


def model_compensator(model: SfddeModel, eps: float) -> np.ndarray | None:
    """Compensator matrix of the model's scaling at truncation eps, cached."""
    if model.scaling is None:
        return None
    key = (id(model.scaling), tuple(id(m) for m in model.nu), eps)
    if key not in _comp_cache:
        _comp_cache[key] = compensator_integral(model.scaling, model.nu, eps)
    return _comp_cache[key]


def _raw_jump_compensator(model, h_of_z, eps: float) -> np.ndarray:
    # per-step quadrature for the non-factorized escape hatch; slow, test-scale only
    out = np.zeros(model.d)
    for j, measure in enumerate(model.nu):
        for i in range(model.d):
            out[i] += measure.integrate(
                lambda z, i=i, j=j: float(np.atleast_2d(h_of_z(z))[i, j]), eps)
    return out


def _solve_core(model: SfddeModel, eta, grid: TimeGrid, noise: NoiseRecord,
                *, start_index: int = 0, jump_min: float | None = None,
                gauss_scale: np.ndarray | None = None,
                source: CadlagPath | None = None) -> SolveReport:
    t0 = time.perf_counter()
    d, dt = model.d, grid.dt
    zero = grid.zero_index()
    eps_used = noise.eps_ref if jump_min is None else max(jump_min, noise.eps_ref)

    eta_vals = np.asarray(eta.window_values(), dtype=float)
    if eta_vals.ndim == 1:
        eta_vals = eta_vals[:, None]
    if eta_vals.shape != (grid.window + 1, d):
        raise ValueError(
            f"initial segment must have shape {(grid.window + 1, d)}")

    values = np.zeros((grid.n_nodes, d))
    first = zero + start_index - grid.window
    values[first:zero + start_index + 1] = eta_vals
    jump_log: list[PathJump] = []
    path = CadlagPath(grid, values, jump_log)

    if model.is_mean_field:
        raise StateNotMaintainedError(
            "mean-field models must be solved with euler_solve_ensemble")
    if model.needs_aux is not None and start_index != 0:
        raise StateNotMaintainedError(
            "noisy-delay models cannot be restarted mid-horizon: the "
            "auxiliary integral is state beyond the segment")

    ctx = PathContext()
    aux_kind = model.needs_aux
    if aux_kind:
        ctx.aux = AuxiliaryState.zeros(grid.n_nodes, grid.window, dt)
    f, g, h0 = bind_coefficients(model, ctx)

    use_jumps = model.has_jumps
    raw = model.raw_jump
    comp = None
    comp_cols = None
    if use_jumps and raw is None:
        comp = model_compensator(model, eps_used)
        comp_cols = comp.sum(axis=1)                       # (k,)
    scaling = model.scaling
    col_fns = [scaling.column(j) for j in range(model.n)] if scaling else []
    cells = noise.events_by_cell() if use_jumps else None

    steps = grid.steps
    f_vals = np.zeros((steps, d))
    g_vals = np.zeros((steps, d, model.m))
    h_vals = np.zeros((steps, d, model.k)) if use_jumps and raw is None else None
    aux = ctx.aux
    view = model.view
    eval_path = source if source is not None else path
    dW = noise.dW
    zero_d = np.zeros(d)
    isfinite = math.isfinite

    for i in range(start_index, steps):
        a = zero + i
        t = i * dt
        ctx.anchor = a
        seg = view(Segment(eval_path, a))
        fv = np.asarray(f(t, seg), dtype=float).reshape(d)
        gv = np.asarray(g(t, seg), dtype=float).reshape(d, model.m)
        f_vals[i] = fv
        g_vals[i] = gv
        x = values[a]
        jump_sum = zero_d
        hv = None
        if (use_jumps and raw is None) or gauss_scale is not None:
            hv = np.asarray(h0(t, seg), dtype=float).reshape(d, model.k)
        if use_jumps:
            if raw is not None:
                h_of_z = raw(t, seg)
                running = x.copy()
                for ev in cells[i]:
                    if jump_min is not None and abs(ev.mark) < jump_min:
                        continue
                    incr = np.atleast_2d(np.asarray(h_of_z(ev.mark),
                                                    dtype=float))[:, ev.component]
                    jump_log.append(PathJump(i, ev.time, ev.component, ev.mark,
                                             running.copy(), incr.copy()))
                    running = running + incr
                    jump_sum = jump_sum + incr
                drift_corr = _raw_jump_compensator(model, h_of_z, eps_used)
            else:
                h_vals[i] = hv
                running = x.copy()
                for ev in cells[i]:
                    if jump_min is not None and abs(ev.mark) < jump_min:
                        continue
                    incr = hv @ col_fns[ev.component](ev.mark)
                    jump_log.append(PathJump(i, ev.time, ev.component, ev.mark,
                                             running.copy(), incr.copy()))
                    running = running + incr
                    jump_sum = jump_sum + incr
                drift_corr = hv @ comp_cols
        else:
            drift_corr = 0.0

        x_next = x + jump_sum + fv * dt + gv @ dW[i] - drift_corr * dt
        if gauss_scale is not None:
            x_next = x_next + hv @ (gauss_scale @ noise.dB[i])
        if not isfinite(float(x_next.sum())):
            culprit = ("drift" if not np.all(np.isfinite(fv)) else
                       "diffusion" if not np.all(np.isfinite(gv)) else "state")
            raise NonFiniteError(i, t, f"{culprit} produced non-finite values")
        values[a + 1] = x_next
        if aux is not None:
            src_vals = eval_path.values
            if aux_kind == "brownian":
                aux.values[a + 1] = aux.values[a] + float(src_vals[a, 0]
                                                          * noise.dW[i, 0])
            else:
                dL = -dt * float(model_compensator(model, eps_used)[0, :].sum())
                for ev in (cells[i] if cells else []):
                    if jump_min is not None and abs(ev.mark) < jump_min:
                        continue
                    dL += col_fns[ev.component](ev.mark)[0]
                aux.values[a + 1] = aux.values[a] + float(src_vals[a, 0]) * dL

    return SolveReport(path, f_vals, g_vals, h_vals,
                       comp, eps_used, start_index,
                       time.perf_counter() - t0)


def euler_solve(model: SfddeModel, eta, grid: TimeGrid, noise: NoiseRecord,
                *, t_start: float = 0.0) -> SolveReport:
    """Run the Euler scheme from the initial segment ``eta`` anchored at
    ``t_start`` (a grid time), consuming the given noise record.

    The returned path equals ``eta`` on ``[t_start - r, t_start]`` and is
    filled to the horizon; nodes before the initial window (only present
    for restarts) are zero and must not be read.
    """
    start_index = grid.index_of(t_start) - grid.zero_index()
    if start_index < 0:
        raise ValueError("t_start must be in [0, T]")
    return _solve_core(model, eta, grid, noise, start_index=start_index)


def picard_solve(model: SfddeModel, eta, grid: TimeGrid, noise: NoiseRecord,
                 kmax: int) -> list[CadlagPath]:
    """Picard iterates X^1, ..., X^kmax under one noise realization.

    X^1 is frozen at eta(0) on [0, T]; each next iterate applies the Euler
    quadrature of the three integrals with integrands evaluated on the
    previous iterate.  Step i+1 of an iterate depends on the previous
    iterate only through steps <= i, so iterate k agrees with the
    ``euler_solve`` fixed point on the first k steps and exactly once
    ``k > steps``.
    """
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    eta_vals = np.asarray(eta.window_values(), dtype=float)
    if eta_vals.ndim == 1:
        eta_vals = eta_vals[:, None]
    zero = grid.zero_index()
    values = np.zeros((grid.n_nodes, model.d))
    values[:zero + 1] = eta_vals
    values[zero + 1:] = eta_vals[-1]
    iterates = [CadlagPath(grid, values, [])]
    for _ in range(kmax - 1):
        rep = _solve_core(model, eta, grid, noise, source=iterates[-1])
        iterates.append(rep.path)
    return iterates


def picard_gap(ensemble_iterates: Sequence[Sequence[CadlagPath]],
               p: float) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo gaps ``e_k = E[sup_{[-r,T]} |X^{k+1} - X^k|^p]``.

    ``ensemble_iterates`` holds one iterate list per noise draw; returns
    ``(e, stderr)`` with ``e[k-1]`` the estimate for the (k+1, k) pair.
    """
    ensemble = list(ensemble_iterates)
    if not ensemble or len(ensemble[0]) < 3:
        raise InsufficientIteratesError("need at least 3 Picard iterates")
    kmax = len(ensemble[0])
    sups = np.empty((len(ensemble), kmax - 1))
    for w, iterates in enumerate(ensemble):
        for k in range(kmax - 1):
            diff = iterates[k + 1].values - iterates[k].values
            sups[w, k] = np.max(np.linalg.norm(diff, axis=1)) ** p
    e = sups.mean(axis=0)
    stderr = sups.std(axis=0, ddof=1) / math.sqrt(len(ensemble)) \
        if len(ensemble) > 1 else np.zeros(kmax - 1)
    return e, stderr


def picard_gap_experiment(model: SfddeModel, eta, grid: TimeGrid, kmax: int,
                          n_paths: int, master_seed: int,
                          eps_ref: float = 1e-3) -> dict:
    """Run the gap analysis with factorial-decay regression diagnostics.

    Regresses ``log e_k`` against ``log((k-1)!)`` over k >= 2; factorial
    decay of the iteration error shows as a slope near -1.
    """
    ensemble = []
    for w in range(n_paths):
        noise = NoiseRecord.generate(grid, model, eps_ref, master_seed, w)
        ensemble.append(picard_solve(model, eta, grid, noise, kmax))
    e, stderr = picard_gap(ensemble, model.p)
    ks = np.arange(2, len(e) + 1)          # pairs (X^{k+1}, X^k) for k >= 2
    log_fact = np.array([math.lgamma(k) for k in ks])     # log((k-1)!)
    log_e = np.log(np.maximum(e[1:], 1e-300))
    slope, intercept = np.polyfit(log_fact, log_e, 1)
    return {"e": e, "stderr": stderr, "k": np.arange(1, len(e) + 1),
            "slope_vs_log_factorial": float(slope),
            "intercept": float(intercept)}


def euler_solve_ensemble(model: SfddeModel, etas: Sequence, grid: TimeGrid,
                         noises: Sequence[NoiseRecord]) -> list[SolveReport]:
    """Advance an ensemble in lockstep so mean-field terms see step-i segments.

    Works for any model; required for mean-field ones.  The interaction
    term is computed once per step per delay measure and shared.
    """
    n_paths = len(noises)
    if n_paths == 0 or len(etas) != n_paths:
        raise ValueError("need one initial segment per noise record")
    d, dt, zero, steps = model.d, grid.dt, grid.zero_index(), grid.steps

    if model.needs_aux:
        raise StateNotMaintainedError(
            "noisy-delay kernels are not supported in the ensemble driver")
    paths, ctxs, bound = [], [], []
    for w in range(n_paths):
        eta_vals = np.asarray(etas[w].window_values(), dtype=float)
        if eta_vals.ndim == 1:
            eta_vals = eta_vals[:, None]
        values = np.zeros((grid.n_nodes, d))
        values[:zero + 1] = eta_vals
        paths.append(CadlagPath(grid, values, []))
        ctx = PathContext()
        ctxs.append(ctx)
        bound.append(bind_coefficients(model, ctx))

    use_jumps = model.has_jumps
    comp_cols = None
    if use_jumps:
        comp_cols = model_compensator(model, noises[0].eps_ref).sum(axis=1)
    scaling = model.scaling
    col_fns = [scaling.column(j) for j in range(model.n)] if scaling else []
    cell_lists = [nz.events_by_cell() if use_jumps else None for nz in noises]

    for i in range(steps):
        a = zero + i
        t = i * dt
        segs = [Segment(paths[w], a) for w in range(n_paths)]
        step_cache: dict = {}

        def meanfield(alpha: DelayMeasure, _segs=segs, _cache=step_cache):
            key = id(alpha)
            if key not in _cache:
                acc = eval_distributed(model.view(_segs[0]), alpha)
                for s in _segs[1:]:
                    acc = acc + eval_distributed(model.view(s), alpha)
                _cache[key] = acc / len(_segs)
            return _cache[key]

        for w in range(n_paths):
            ctxs[w].anchor = a
            ctxs[w].meanfield = meanfield
            f, g, h0 = bound[w]
            seg = model.view(segs[w])
            fv = np.asarray(f(t, seg), dtype=float).reshape(d)
            gv = np.asarray(g(t, seg), dtype=float).reshape(d, model.m)
            x = paths[w].values[a]
            jump_sum = np.zeros(d)
            drift_corr = 0.0
            if use_jumps:
                hv = np.asarray(h0(t, seg), dtype=float).reshape(d, model.k)
                running = x.copy()
                for ev in cell_lists[w][i]:
                    incr = hv @ col_fns[ev.component](ev.mark)
                    paths[w].jump_log.append(
                        PathJump(i, ev.time, ev.component, ev.mark,
                                 running.copy(), incr.copy()))
                    running = running + incr
                    jump_sum = jump_sum + incr
                drift_corr = hv @ comp_cols
            x_next = x + jump_sum + fv * dt + gv @ noises[w].dW[i] \
                - drift_corr * dt
            if not np.all(np.isfinite(x_next)):
                raise NonFiniteError(i, t, f"ensemble member {w} diverged")
            paths[w].values[a + 1] = x_next

    empty = np.zeros((steps, d))
    return [SolveReport(paths[w], empty, np.zeros((steps, d, model.m)), None,
                        None, noises[w].eps_ref, 0, 0.0)
            for w in range(n_paths)]


def moment_estimate(model: SfddeModel, eta, grid: TimeGrid, p: float,
                    t: float, n_paths: int, master_seed: int,
                    eps_ref: float = 1e-3) -> tuple[float, float]:
    """Plain MC estimate of ``E[sup_{[-r,t]} |X|^p]`` with its standard error."""
    idx = grid.index_of(t)
    sups = np.empty(n_paths)
    for w in range(n_paths):
        noise = NoiseRecord.generate(grid, model, eps_ref, master_seed, w)
        rep = euler_solve(model, eta, grid, noise)
        sups[w] = np.max(np.linalg.norm(rep.path.values[:idx + 1], axis=1)) ** p
    est = float(sups.mean())
    se = float(sups.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return est, se


def fit_growth_constant(ts: Sequence[float], estimates: Sequence[float],
                        eta_norm_p: float) -> float:
    """Smallest D with ``estimate(t) <= exp(D t) (D t + eta_norm_p)`` for all t.

    The bound is monotone in D for t > 0, so bisection applies; returns
    ``inf`` only if some estimate at t = 0 already exceeds the norm term.
    """
    ts = np.asarray(ts, dtype=float)
    ests = np.asarray(estimates, dtype=float)
    if np.any((ts <= 0.0) & (ests > eta_norm_p)):
        return math.inf

    def ok(D: float) -> bool:
        return bool(np.all(ests <= np.exp(D * ts) * (D * ts + eta_norm_p)))

    lo, hi = 0.0, 1.0
    for _ in range(200):
        if ok(hi):
            break
        hi *= 2.0
    else:
        return math.inf
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def kunita_ratio(model: SfddeModel, eta, grid: TimeGrid, q: float, t: float,
                 n_paths: int, master_seed: int,
                 eps_ref: float = 1e-3) -> float:
    """Empirical moment-bound ratio for factorized models.

    Ratio of ``E[sup_{[0,t]} |X|^q]`` to the initial value plus the time
    integral of the q-th coefficient norms, with the jump norms formed from
    the cached ``h0`` values times the scaling norms (exact for k = 1).
    The bound constant of the underlying inequality shows up as a uniform
    cap on this ratio across horizons and model instances.
    """
    idx = grid.index_of(t)
    zero = grid.zero_index()
    steps_used = idx - zero
    jump_weight = 0.0
    if model.scaling is not None:
        jump_weight = (lp_nu_norm(model.scaling, model.nu, q) ** q
                       + lp_nu_norm(model.scaling, model.nu, 2.0) ** q)
    sup_acc = 0.0
    den_acc = 0.0
    for w in range(n_paths):
        noise = NoiseRecord.generate(grid, model, eps_ref, master_seed, w)
        rep = euler_solve(model, eta, grid, noise)
        sup_acc += np.max(np.linalg.norm(
            rep.path.values[zero:idx + 1], axis=1)) ** q
        coeff = (np.linalg.norm(rep.f_vals[:steps_used], axis=1) ** q
                 + np.linalg.norm(rep.g_vals[:steps_used].reshape(steps_used, -1),
                                  axis=1) ** q)
        if rep.h0_vals is not None:
            coeff = coeff + jump_weight * np.linalg.norm(
                rep.h0_vals[:steps_used].reshape(steps_used, -1), axis=1) ** q
        den_acc += float(np.linalg.norm(eta.present())) ** q \
            + grid.dt * float(coeff.sum())
    return sup_acc / den_acc

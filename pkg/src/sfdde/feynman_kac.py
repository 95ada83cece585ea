"""Conditional-expectation estimation and its consistency checks.

``F(t, eta, x) = E[Phi(X_T, X(T)) | X_t = eta, X(t) = x]`` is estimated by
plain Monte Carlo over restarted solves: conditioning is implemented by
restart-from-segment (the enlarged state is the (past window, present)
pair), never by reweighting.  Two verification companions:

* the stationarity equation residual: for a candidate F from the analytic
  catalog, the time derivative plus transport, drift, diffusion and jump
  terms must cancel at every interior point when F is the true conditional
  expectation;
* the flow property: restarting the scheme from the segment it reached at
  an intermediate time and feeding it the identical noise suffix must
  reproduce the original path bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable

import numpy as np

from .calculus import TestFunctional, WeightFn
from .errors import NonFiniteError
from .functionals import SfddeModel, bind_coefficients, PathContext
from .paths import FrozenSegment, Segment, TimeGrid
from .solver import NoiseRecord, euler_solve


@dataclass(frozen=True)
class TerminalPayoff:
    """Terminal functional Phi(segment, present) from a closed catalog.

    ``growth_degree`` declares the polynomial-growth bound (metadata used
    for variance sanity in reports).
    """

    fn: Callable[[np.ndarray, float, np.ndarray], float]  # (window, dt, x)
    label: str
    growth_degree: int

    def value(self, window: np.ndarray, dt: float, x: np.ndarray) -> float:
        return self.fn(window, dt, x)

    @classmethod
    def linear(cls, v=1.0) -> "TerminalPayoff":
        vv = np.atleast_1d(np.asarray(v, dtype=float))
        return cls(lambda win, dt, x: float(x @ vv), "linear", 1)

    @classmethod
    def square(cls) -> "TerminalPayoff":
        return cls(lambda win, dt, x: float(x @ x), "square", 2)

    @classmethod
    def segment_integral(cls, weight: WeightFn) -> "TerminalPayoff":
        def fn(win, dt, x):
            w = win.shape[0]
            thetas = -w * dt + dt * np.arange(w)
            return float(np.sum(weight.table(thetas) * win)) * dt
        return cls(fn, "segment-integral", 1)

    @classmethod
    def call(cls, strike: float, component: int = 0) -> "TerminalPayoff":
        return cls(lambda win, dt, x: max(float(x[component]) - strike, 0.0),
                   "call", 1)


@dataclass(frozen=True)
class FkEstimate:
    value: float
    stderr: float
    n_paths: int
    t_start: float
    seed: int

    def record(self, model_hash: str = "") -> str:
        return (f"value {self.value:.16e}\nstderr {self.stderr:.16e}\n"
                f"n_paths {self.n_paths}\nt_start {self.t_start:.16e}\n"
                f"seed {self.seed}\nmodel_hash {model_hash}\n")


def fk_estimate(model: SfddeModel, payoff: TerminalPayoff, t: float,
                eta, grid: TimeGrid, n_paths: int, master_seed: int,
                eps_ref: float = 1e-3) -> FkEstimate:
    """Monte Carlo mean of the terminal payoff over solves started from the
    segment ``eta`` anchored at time ``t``.

    Fails if more than 0.1% of the paths turn non-finite; otherwise those
    paths are excluded from the average.
    """
    w = grid.window
    last = grid.n_nodes - 1
    samples = np.empty(n_paths)
    kept = 0
    failed = 0
    for i in range(n_paths):
        noise = NoiseRecord.generate(grid, model, eps_ref, master_seed, i)
        try:
            rep = euler_solve(model, eta, grid, noise, t_start=t)
        except NonFiniteError:
            failed += 1
            continue
        vals = rep.path.values
        samples[kept] = payoff.value(vals[last - w:last], grid.dt, vals[last])
        kept += 1
    if failed > 0.001 * n_paths:
        raise NonFiniteError(0, t, f"{failed}/{n_paths} paths diverged")
    samples = samples[:kept]
    se = float(samples.std(ddof=1) / math.sqrt(kept)) if kept > 1 else 0.0
    return FkEstimate(float(samples.mean()), se, kept, t, master_seed)


def ppide_residual(F: TestFunctional, model: SfddeModel, t: float,
                   eta_window: np.ndarray, x, dt: float) -> float:
    """Stationarity residual of a candidate value functional at one point.

    Sums the time derivative, the transport pairing ``<DF, grad_theta^+
    eta>`` (the window must be smooth for the one-sided derivative to make
    sense), the drift and trace terms, and the jump integral

        sum_j int (F(t,eta,x + h^{.,j}(z)) - F - grad F . h^{.,j}(z)) nu_j(dz)

    evaluated by the measure quadrature.  Zero (up to quadrature and
    discretization error) characterizes conditional-expectation
    functionals of the model.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    window = np.asarray(eta_window, dtype=float)
    if window.ndim == 1:
        window = window[:, None]
    seg = FrozenSegment(dt, np.vstack([window, x[None, :]]))
    view = model.view(seg)
    ctx = PathContext()
    f, g, h0 = bind_coefficients(model, ctx)

    u = F.pairing(window, dt)
    res = F.partial_t(t, window, dt, x, u)
    full = seg.values
    fwd = (full[1:] - full[:-1]) / dt
    K = F.frechet_kernel(t, window, dt, x, u)
    res += float(np.sum(K * fwd)) * dt

    grad = F.grad_x(t, window, dt, x, u)
    fv = np.asarray(f(t, view), dtype=float).reshape(model.d)
    res += float(grad @ fv)
    gv = np.asarray(g(t, view), dtype=float).reshape(model.d, model.m)
    res += 0.5 * float(np.trace(gv @ gv.T @ F.hess_x(t, window, dt, x, u)))

    if model.has_jumps:
        hv = np.asarray(h0(t, view), dtype=float).reshape(model.d, model.k)
        f0 = F.value(t, window, dt, x, u)
        for j, measure in enumerate(model.nu):
            col = model.scaling.column(j)

            def integrand(z):
                jump = hv @ col(z)
                return (F.value(t, window, dt, x + jump, u) - f0
                        - float(grad @ jump))
            res += measure.integrate(integrand)
    return res


def flow_check(model: SfddeModel, eta, grid: TimeGrid, t1: float, t2: float,
               master_seed: int, eps_ref: float = 1e-3) -> float:
    """Restart-versus-continue deviation of the discrete flow.

    Solves once over the whole horizon, then restarts from the segment
    reached at t1 with the same noise record, and returns the maximum
    node-wise deviation on [t1 - r, t2].  The scheme is a deterministic
    flow of the noise, so the deviation must be exactly zero.
    """
    if not 0.0 <= t1 <= t2 <= grid.horizon:
        raise ValueError("need 0 <= t1 <= t2 <= T")
    i1 = grid.index_of(t1)
    i2 = grid.index_of(t2)
    noise = NoiseRecord.generate(grid, model, eps_ref, master_seed, 0)
    full = euler_solve(model, eta, grid, noise)
    seg = Segment(full.path, i1).materialize()
    restarted = euler_solve(model, seg, grid, noise, t_start=t1)
    lo = i1 - grid.window
    diff = full.path.values[lo:i2 + 1] - restarted.path.values[lo:i2 + 1]
    return float(np.max(np.abs(diff))) if diff.size else 0.0

"""Regularization calculus on discretized paths.

The forward integral of a kernel against the segment process is the
left-Riemann discretization of the shifted difference quotient

    sum_s dt * < Y_s , (X_{s+eps} - X_s) / eps >,    eps = m * dt,

reported for a whole sequence of shifts m so callers can watch the values
stabilize instead of trusting a single one.  For jump-free paths with a
one-sided derivative the same pairing against the forward difference
``grad_theta^+ X_s`` gives an independent evaluation; with m = 1 the two
discretizations coincide, which is exactly why the change-of-variable
(Ito) residual uses shift one: its telescoping identity is then exact for
functionals linear in the present value.

Test functionals live in a closed product catalog
``F(t, eta, x) = a(t) * phi(x) * psi(<w, eta>)`` with every derivative
supplied analytically, so residuals isolate scheme error rather than
differentiation error.  The path-operator kit (restriction, backward
extension, vertical and horizontal derivatives) connects the product-space
derivatives to their path-dependent counterparts.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import Callable, Sequence

import numpy as np

from .errors import (HorizonExceedsDelayError, JumpDetectedError,
                     MissingJumpLogError, ShiftBeyondHorizonError)
from .functionals import SfddeModel
from .paths import CadlagPath, FrozenSegment
from .solver import SolveReport


@dataclass(frozen=True)
class SmoothFn:
    """Scalar C^2 function with its first two derivatives."""

    f: Callable[[float], float]
    df: Callable[[float], float]
    d2f: Callable[[float], float] | None = None

    @classmethod
    def const(cls, c: float = 1.0) -> "SmoothFn":
        return cls(lambda u: c, lambda u: 0.0, lambda u: 0.0)

    @classmethod
    def identity(cls) -> "SmoothFn":
        return cls(lambda u: u, lambda u: 1.0, lambda u: 0.0)

    @classmethod
    def affine(cls, a: float, b: float) -> "SmoothFn":
        return cls(lambda u: a * u + b, lambda u: a, lambda u: 0.0)

    @classmethod
    def square(cls) -> "SmoothFn":
        return cls(lambda u: u * u, lambda u: 2.0 * u, lambda u: 2.0)

    @classmethod
    def sin(cls, omega: float = 1.0) -> "SmoothFn":
        return cls(lambda u: math.sin(omega * u),
                   lambda u: omega * math.cos(omega * u),
                   lambda u: -omega * omega * math.sin(omega * u))

    @classmethod
    def exp(cls, rate: float = 1.0) -> "SmoothFn":
        return cls(lambda u: math.exp(rate * u),
                   lambda u: rate * math.exp(rate * u),
                   lambda u: rate * rate * math.exp(rate * u))


@dataclass(frozen=True)
class PresentFn:
    """Function of the present value x in R^d with gradient and Hessian."""

    f: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def one(cls, d: int = 1) -> "PresentFn":
        z = np.zeros(d)
        zz = np.zeros((d, d))
        return cls(lambda x: 1.0, lambda x: z, lambda x: zz)

    @classmethod
    def linear(cls, v) -> "PresentFn":
        v = np.atleast_1d(np.asarray(v, dtype=float))
        zz = np.zeros((v.size, v.size))
        return cls(lambda x: float(x @ v), lambda x: v, lambda x: zz)

    @classmethod
    def square_norm(cls, d: int = 1) -> "PresentFn":
        eye2 = 2.0 * np.eye(d)
        return cls(lambda x: float(x @ x), lambda x: 2.0 * x, lambda x: eye2)

    @classmethod
    def scalar(cls, fn: SmoothFn) -> "PresentFn":
        return cls(lambda x: fn.f(float(x[0])),
                   lambda x: np.array([fn.df(float(x[0]))]),
                   lambda x: np.array([[fn.d2f(float(x[0]))]]))


@dataclass(frozen=True)
class WeightFn:
    """W^{1,q} weight on [-r, 0], R^d-valued, with its theta-derivative."""

    f: Callable[[float], np.ndarray]
    df: Callable[[float], np.ndarray]

    @classmethod
    def const(cls, v) -> "WeightFn":
        v = np.atleast_1d(np.asarray(v, dtype=float))
        z = np.zeros_like(v)
        return cls(lambda th: v, lambda th: z)

    @classmethod
    def scalar(cls, fn: SmoothFn) -> "WeightFn":
        return cls(lambda th: np.array([fn.f(th)]),
                   lambda th: np.array([fn.df(th)]))

    def table(self, thetas: np.ndarray) -> np.ndarray:
        return np.array([self.f(th) for th in thetas])

    def dtable(self, thetas: np.ndarray) -> np.ndarray:
        return np.array([self.df(th) for th in thetas])


@dataclass(frozen=True)
class TestFunctional:
    """Catalog functional ``F(t, eta, x) = a(t) phi(x) psi(<w, eta>)``.

    The pairing is the left-Riemann sum of ``w(theta) . eta(theta)`` over
    [-r, 0); with ``weight=None`` the functional ignores the segment and
    the kernel vanishes.  All derivatives are exact:

    * time derivative        a'(t) phi(x) psi(u)
    * Frechet kernel         a(t) phi(x) psi'(u) w(theta)
    * kernel theta-gradient  a(t) phi(x) psi'(u) w'(theta)
    * present gradient       a(t) grad phi(x) psi(u)
    * present Hessian        a(t) hess phi(x) psi(u)
    """

    a: SmoothFn
    phi: PresentFn
    psi: SmoothFn
    weight: WeightFn | None = None
    label: str = "catalog"

    @property
    def has_kernel(self) -> bool:
        return self.weight is not None

    def pairing(self, window: np.ndarray, dt: float,
                wtab: np.ndarray | None = None) -> float:
        if self.weight is None or window.shape[0] == 0:
            return 0.0
        if wtab is None:
            w = window.shape[0]
            thetas = -w * dt + dt * np.arange(w)
            wtab = self.weight.table(thetas)
        return float(np.sum(wtab * window)) * dt

    def value(self, t, window, dt, x, u=None) -> float:
        u = self.pairing(window, dt) if u is None else u
        return self.a.f(t) * self.phi.f(x) * self.psi.f(u)

    def partial_t(self, t, window, dt, x, u=None) -> float:
        u = self.pairing(window, dt) if u is None else u
        return self.a.df(t) * self.phi.f(x) * self.psi.f(u)

    def frechet_kernel(self, t, window, dt, x, u=None,
                       wtab: np.ndarray | None = None) -> np.ndarray:
        """Kernel of the segment derivative at the window nodes, shape (w, d)."""
        if self.weight is None:
            return np.zeros_like(window)
        u = self.pairing(window, dt, wtab) if u is None else u
        if wtab is None:
            w = window.shape[0]
            thetas = -w * dt + dt * np.arange(w)
            wtab = self.weight.table(thetas)
        return self.a.f(t) * self.phi.f(x) * self.psi.df(u) * wtab

    def kernel_theta_grad(self, t, window, dt, x, u=None) -> np.ndarray:
        if self.weight is None:
            return np.zeros_like(window)
        u = self.pairing(window, dt) if u is None else u
        w = window.shape[0]
        thetas = -w * dt + dt * np.arange(w)
        return self.a.f(t) * self.phi.f(x) * self.psi.df(u) \
            * self.weight.dtable(thetas)

    def grad_x(self, t, window, dt, x, u=None) -> np.ndarray:
        u = self.pairing(window, dt) if u is None else u
        return self.a.f(t) * self.psi.f(u) * self.phi.grad(x)

    def hess_x(self, t, window, dt, x, u=None) -> np.ndarray:
        u = self.pairing(window, dt) if u is None else u
        return self.a.f(t) * self.psi.f(u) * self.phi.hess(x)


@dataclass(frozen=True)
class SumFunctional:
    """Sum of catalog functionals; every derivative is the sum of parts.

    Implements the same evaluation interface as :class:`TestFunctional`.
    The ``u``/``wtab`` caching arguments are accepted for interface
    compatibility but ignored: each part owns its own pairing.
    """

    parts: tuple[TestFunctional, ...]
    label: str = "sum"

    def __init__(self, parts, label="sum"):
        object.__setattr__(self, "parts", tuple(parts))
        object.__setattr__(self, "label", label)

    @property
    def has_kernel(self) -> bool:
        return any(p.has_kernel for p in self.parts)

    def pairing(self, window, dt, wtab=None) -> float:
        return 0.0

    def value(self, t, window, dt, x, u=None) -> float:
        return sum(p.value(t, window, dt, x) for p in self.parts)

    def partial_t(self, t, window, dt, x, u=None) -> float:
        return sum(p.partial_t(t, window, dt, x) for p in self.parts)

    def frechet_kernel(self, t, window, dt, x, u=None, wtab=None) -> np.ndarray:
        acc = np.zeros_like(np.asarray(window, dtype=float))
        for p in self.parts:
            acc = acc + p.frechet_kernel(t, window, dt, x)
        return acc

    def kernel_theta_grad(self, t, window, dt, x, u=None) -> np.ndarray:
        acc = np.zeros_like(np.asarray(window, dtype=float))
        for p in self.parts:
            acc = acc + p.kernel_theta_grad(t, window, dt, x)
        return acc

    def grad_x(self, t, window, dt, x, u=None) -> np.ndarray:
        return sum(p.grad_x(t, window, dt, x) for p in self.parts)

    def hess_x(self, t, window, dt, x, u=None) -> np.ndarray:
        return sum(p.hess_x(t, window, dt, x) for p in self.parts)


def linear_present(v=1.0) -> TestFunctional:
    return TestFunctional(SmoothFn.const(), PresentFn.linear(v),
                          SmoothFn.const(), None, label="linear-present")


def square_present(d: int = 1) -> TestFunctional:
    return TestFunctional(SmoothFn.const(), PresentFn.square_norm(d),
                          SmoothFn.const(), None, label="square-present")


def segment_average(weight: WeightFn) -> TestFunctional:
    return TestFunctional(SmoothFn.const(), PresentFn.one(),
                          SmoothFn.identity(), weight, label="segment-average")


@dataclass(frozen=True)
class RegularizationParams:
    """Shift sequence for the forward integral: eps = m * dt per entry."""

    shifts: tuple[int, ...] = (1,)

    def __post_init__(self):
        if not self.shifts or any(m < 1 for m in self.shifts):
            raise ValueError("shifts must be positive integers")


def _lp_window(path: CadlagPath, anchor: int) -> np.ndarray:
    w = path.grid.window
    return path.values[anchor - w:anchor]


def forward_integral(kernel, path: CadlagPath, reg: RegularizationParams,
                     t: float) -> dict[int, float]:
    """Shifted difference-quotient integral, one value per configured shift.

    ``kernel(s)`` must return the (window, d) table of the dual-side
    function at the window nodes of time s.  Raises
    :class:`ShiftBeyondHorizonError` when ``t + m*dt`` leaves the grid.
    """
    g = path.grid
    last = g.index_of(t)
    zero = g.zero_index()
    w = g.window
    vals = path.values
    out: dict[int, float] = {}
    for m in reg.shifts:
        if last + m >= g.n_nodes:
            raise ShiftBeyondHorizonError(
                f"shift {m}*dt needs the path beyond t={t}")
        acc = 0.0
        inv_eps = 1.0 / (m * g.dt)
        for l in range(zero, last):
            K = np.asarray(kernel(g.time_of(l)))
            diff = vals[l + m - w:l + m] - vals[l - w:l]
            acc += float(np.sum(K * diff)) * inv_eps * g.dt
        out[m] = acc * g.dt
    return out


def functional_kernel(F: TestFunctional, path: CadlagPath):
    """Adapter: the Frechet kernel of F along the path, as s -> (w, d) table."""
    g = path.grid

    def kernel(s: float) -> np.ndarray:
        a = g.index_of(s)
        window = _lp_window(path, a)
        return F.frechet_kernel(s, window, g.dt, path.values[a])
    return kernel


def weak_forward_integral(F: TestFunctional, path: CadlagPath,
                          t: float) -> float:
    """Pairing of the kernel with the forward difference
    ``grad_theta^+ X_s``; valid only for jump-free (W^{1,p}) paths."""
    if path.jump_log is None:
        raise MissingJumpLogError(
            "path has no jump bookkeeping; cannot certify a jump-free window")
    g = path.grid
    last = g.index_of(t)
    if any(j.time <= t for j in path.jump_log):
        raise JumpDetectedError(
            "weak forward integral needs a jump-free path on [-r, t]")
    w = g.window
    vals = path.values
    acc = 0.0
    for l in range(g.zero_index(), last):
        window = vals[l - w:l]
        K = F.frechet_kernel(g.time_of(l), window, g.dt, vals[l])
        fwd_diff = (vals[l - w + 1:l + 1] - vals[l - w:l]) / g.dt
        acc += float(np.sum(K * fwd_diff)) * g.dt
    return acc * g.dt


def _residual_pieces(F: TestFunctional, report: SolveReport,
                     model: SfddeModel, t: float):
    path = report.path
    if path.jump_log is None:
        raise MissingJumpLogError("solve report carries no jump log")
    g = path.grid
    last = g.index_of(t)
    zero = g.zero_index()
    w = g.window
    dt = g.dt
    vals = path.values
    steps = last - zero

    ds_terms = np.zeros(steps)      # dt-integrands + forward-integral increments
    dx_terms = np.zeros(steps)
    f_values = np.zeros(steps + 1)
    thetas = -w * dt + dt * np.arange(w)
    wtab = F.weight.table(thetas) \
        if isinstance(F, TestFunctional) and F.has_kernel else None
    for i in range(steps + 1):
        a = zero + i
        ti = i * dt
        window = vals[a - w:a]
        x = vals[a]
        u = F.pairing(window, dt, wtab)
        f_values[i] = F.value(ti, window, dt, x, u)
        if i == steps:
            break
        gv = report.g_vals[report.start_index + i]
        term = (F.partial_t(ti, window, dt, x, u)
                + 0.5 * float(np.trace(gv.T @ F.hess_x(ti, window, dt, x, u)
                                       @ gv))) * dt
        if F.has_kernel:
            K = F.frechet_kernel(ti, window, dt, x, u, wtab)
            diff = vals[a + 1 - w:a + 1] - vals[a - w:a]
            # shift-one quotient: outer dt cancels against 1/eps, inner dt stays
            term += float(np.sum(K * diff)) * dt
        ds_terms[i] = term
        dx_terms[i] = float(F.grad_x(ti, window, dt, x, u) @ (vals[a + 1] - x))

    jump_fdiff = np.zeros(steps)    # per-cell sums of F(pre+D) - F(pre)
    jump_grad = np.zeros(steps)     # per-cell sums of grad F(pre) . D
    jump_combined = np.zeros(steps)
    for pj in path.jump_log:
        i = pj.step - report.start_index
        if not 0 <= i < steps:
            continue
        a = zero + i
        ti = i * dt
        window = vals[a - w:a]
        u = F.pairing(window, dt, wtab)
        f_pre = F.value(ti, window, dt, pj.pre_value, u)
        f_post = F.value(ti, window, dt, pj.pre_value + pj.increment, u)
        gdot = float(F.grad_x(ti, window, dt, pj.pre_value, u) @ pj.increment)
        jump_fdiff[i] += f_post - f_pre
        jump_grad[i] += gdot
        jump_combined[i] += (f_post - f_pre) - gdot
    times = np.arange(steps + 1) * dt
    return times, f_values, ds_terms, dx_terms, jump_fdiff, jump_grad, \
        jump_combined


def ito_residual(F: TestFunctional, report: SolveReport, model: SfddeModel,
                 t: float) -> tuple[np.ndarray, np.ndarray]:
    """Change-of-variable residual profile along the solved path.

    At every grid node s <= t the residual is ``F(s, X_s, X(s))`` minus the
    initial value and the accumulated time-derivative, forward-integral
    (shift one), present-gradient, trace and jump terms, with the two jump
    sums (F-differences against the compensating gradient terms)
    accumulated separately.  For exact-derivative catalog functionals the
    profile is pure scheme error.
    """
    times, f_values, ds, dx, jf, jg, _ = _residual_pieces(F, report, model, t)
    cum = np.concatenate(([0.0], np.cumsum(ds + dx + jf - jg)))
    residual = f_values - f_values[0] - cum
    return times, residual


def ito_residual_jumpform(F: TestFunctional, report: SolveReport,
                          model: SfddeModel, t: float
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Residual with the jump contribution grouped as a single sum over
    jumps ``F(post) - F(pre) - grad F(pre) . dX``; agrees with
    :func:`ito_residual` up to floating-point regrouping."""
    times, f_values, ds, dx, _, _, jc = _residual_pieces(F, report, model, t)
    cum = np.concatenate(([0.0], np.cumsum(ds + dx + jc)))
    residual = f_values - f_values[0] - cum
    return times, residual


def restriction(segment_values: np.ndarray, t: float, dt: float) -> np.ndarray:
    """Restriction operator: window on [-r, 0] to the path s -> eta(s - t)
    on the grid of [0, t)."""
    vals = np.asarray(segment_values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    w = vals.shape[0] - 1
    nt = round(t / dt)
    if not 0 <= nt <= w:
        raise HorizonExceedsDelayError("restriction horizon exceeds the window")
    return vals[w - nt:w]


def backward_extension(phi_values: np.ndarray, delay: float,
                       dt: float) -> FrozenSegment:
    """Backward extension: a path on [0, t] becomes a window on [-r, 0] by
    shifting it to [-t, 0) and extending with its initial value on
    [-r, -t); the present slot carries phi(t)."""
    phi = np.asarray(phi_values, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    nt = phi.shape[0] - 1
    w = round(delay / dt)
    if nt > w:
        raise HorizonExceedsDelayError(
            f"path horizon {nt * dt:g} exceeds the delay {delay:g}")
    window = np.empty((w + 1, phi.shape[1]))
    window[:w - nt] = phi[0]
    window[w - nt:w] = phi[:nt]
    window[w] = phi[nt]
    return FrozenSegment(dt, window)


def vertical_derivative(F: TestFunctional, phi_values: np.ndarray,
                        delay: float, dt: float,
                        h: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Central finite difference of ``u_t = F(t, L_t phi, phi(t))`` in an
    endpoint bump, next to the analytic present gradient it must match."""
    phi = np.asarray(phi_values, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    t = (phi.shape[0] - 1) * dt
    seg = backward_extension(phi, delay, dt)
    window = seg.values[:-1]
    x = seg.values[-1]
    d = x.size
    fd = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        up = F.value(t, window, dt, x + e)
        dn = F.value(t, window, dt, x - e)
        fd[i] = (up - dn) / (2.0 * h)
    return fd, F.grad_x(t, window, dt, x)


def horizontal_derivative(F: TestFunctional, phi_values: np.ndarray,
                          delay: float, dt: float,
                          h_steps: int = 1) -> tuple[float, float]:
    """One-sided difference of ``u_t`` under flat path extension, next to
    the analytic value ``dF/dt + <DF, grad_theta^+ L_t phi>``."""
    phi = np.asarray(phi_values, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    nt = phi.shape[0] - 1
    t = nt * dt
    h = h_steps * dt
    if t + h > delay + 1e-12:
        raise HorizonExceedsDelayError(
            "horizontal step would push the horizon past the delay")
    seg = backward_extension(phi, delay, dt)
    window = seg.values[:-1]
    x = seg.values[-1]
    u_t = F.value(t, window, dt, x)
    ext = np.vstack([phi, np.tile(phi[-1], (h_steps, 1))])
    seg_h = backward_extension(ext, delay, dt)
    u_th = F.value(t + h, seg_h.values[:-1], dt, seg_h.values[-1])
    fd = (u_th - u_t) / h

    fwd = (seg.values[1:] - seg.values[:-1]) / dt
    K = F.frechet_kernel(t, window, dt, x)
    check = F.partial_t(t, window, dt, x) + float(np.sum(K * fwd)) * dt
    return fd, check

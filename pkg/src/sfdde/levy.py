"""Levy measures, jump scalings, truncated norms and large-jump sampling.

A model's jump driver is described by a vector of one-dimensional Levy
measures ``nu = (nu_1, ..., nu_n)`` together with a matrix-valued scaling
``lambda(z)`` in R^{k x n}.  This module computes the weighted-norm and
truncation quantities the solver and the robustness experiments consume:

* column-wise L^p(nu) norms ``(sum_j int |H^{.,j}(z)|^p nu_j(dz))^{1/p}``,
* the Gaussian substitution scale ``Lambda(eps)`` with entries
  ``(int_{0<|z|<eps} lambda_ij(z)^2 nu_j(dz))^{1/2}``,
* compensator integrals ``int_{|z|>=eps} lambda_ij(z) nu_j(dz)``,
* Poisson sampling of the jumps with magnitude at least ``eps``.

Quadrature is adaptive Gauss-Kronrod on geometric panels anchored at the
origin singularity and at the tail, with relative tolerance ``QUAD_RTOL``.
Divergent integrands (origin or tail) raise :class:`NonIntegrableError`
instead of returning garbage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as _sci_integrate
from scipy.interpolate import PchipInterpolator

from . import rng as _rng
from .errors import DimensionMismatchError, InfiniteRateError, NonIntegrableError

QUAD_RTOL = 1e-9

# Geometric panel controls for the singular/tail sweeps.
_PANEL_CAP = 2000
_DIVERGENCE_WINDOW = 12
_DIVERGENCE_RATIO = 0.999

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _panel_quad(fn, a: float, b: float) -> float:
    val, _ = _sci_integrate.quad(fn, a, b, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
    return val


def _origin_sweep(fn, b: float, context: str) -> float:
    """Integrate fn on (0, b], panels shrinking geometrically into the origin."""
    acc = 0.0
    prev = math.inf
    flat = 0
    hi = b
    for k in range(_PANEL_CAP):
        lo = hi / 2.0
        s = _panel_quad(fn, lo, hi)
        acc += s
        mag = abs(s)
        if mag <= QUAD_RTOL * max(abs(acc), 1e-300):
            # one confirmation panel against accidental zeros
            s2 = _panel_quad(fn, lo / 2.0, lo)
            acc += s2
            if abs(s2) <= QUAD_RTOL * max(abs(acc), 1e-300):
                return acc
            hi = lo / 2.0
            prev = abs(s2)
            continue
        if k >= _DIVERGENCE_WINDOW and prev > 0 and mag >= _DIVERGENCE_RATIO * prev:
            flat += 1
            if flat >= _DIVERGENCE_WINDOW:
                raise NonIntegrableError(
                    f"{context}: integrand not integrable at the origin "
                    f"(panel mass ratio {mag / prev:.6f} near |z|={hi:.3e})")
        else:
            flat = 0
        prev = mag
        hi = lo
    raise NonIntegrableError(f"{context}: origin panels did not converge")


def _tail_sweep(fn, a: float, context: str) -> float:
    """Integrate fn on [a, inf), panels growing geometrically."""
    acc = 0.0
    prev = math.inf
    flat = 0
    lo = a
    for k in range(_PANEL_CAP):
        hi = lo * 2.0
        s = _panel_quad(fn, lo, hi)
        acc += s
        mag = abs(s)
        if mag <= QUAD_RTOL * max(abs(acc), 1e-300):
            s2 = _panel_quad(fn, hi, hi * 2.0)
            acc += s2
            if abs(s2) <= QUAD_RTOL * max(abs(acc), 1e-300):
                return acc
            lo = hi * 2.0
            prev = abs(s2)
            continue
        if k >= _DIVERGENCE_WINDOW and prev > 0 and mag >= _DIVERGENCE_RATIO * prev:
            flat += 1
            if flat >= _DIVERGENCE_WINDOW:
                raise NonIntegrableError(
                    f"{context}: integrand not integrable in the tail "
                    f"(panel mass ratio {mag / prev:.6f} near |z|={lo:.3e})")
        else:
            flat = 0
        prev = mag
        lo = hi
    raise NonIntegrableError(f"{context}: tail panels did not converge")


def _interval_integral(fn, a: float, b: float, context: str) -> float:
    """Integral of fn over the interval [a, b] subset of (0, inf)."""
    if b <= a:
        return 0.0
    if a <= 0.0:
        if math.isinf(b):
            return _origin_sweep(fn, 1.0, context) + _tail_sweep(fn, 1.0, context)
        return _origin_sweep(fn, b, context)
    if math.isinf(b):
        return _tail_sweep(fn, a, context)
    return _panel_quad(fn, a, b)


class LevyMeasure:
    """Interface of a one-dimensional Levy measure on R\\{0}.

    ``integrate(fn, lo, hi)`` integrates the scalar function ``fn`` over the
    shell ``{lo <= |z| < hi}``; ``shell_mass`` is the measure of that shell.
    """

    infinite_activity: bool = False

    def integrate(self, fn, lo: float = 0.0, hi: float = math.inf) -> float:
        raise NotImplementedError

    def shell_mass(self, lo: float, hi: float = math.inf) -> float:
        if lo <= 0.0 and self.infinite_activity:
            raise InfiniteRateError("shell mass at zero truncation is infinite")
        return self.integrate(lambda z: 1.0, lo, hi)

    def sampler(self, lo: float, hi: float = math.inf) -> "MarkSampler":
        raise NotImplementedError

    def validate(self) -> None:
        """Check int min(1, z^2) d nu < infinity; raises NonIntegrableError."""
        self.integrate(lambda z: min(1.0, z * z))


@dataclass(frozen=True)
class AtomMeasure(LevyMeasure):
    """Finite sum of point masses ``sum_i w_i * delta_{z_i}`` with z_i != 0."""

    atoms: tuple[tuple[float, float], ...]

    def __init__(self, atoms: Sequence[tuple[float, float]]):
        pairs = tuple((float(z), float(w)) for z, w in atoms)
        for z, w in pairs:
            if z == 0.0:
                raise ValueError("atom at z=0 is not allowed")
            if w <= 0.0:
                raise ValueError("atom masses must be positive")
        object.__setattr__(self, "atoms", pairs)

    infinite_activity = False

    def integrate(self, fn, lo: float = 0.0, hi: float = math.inf) -> float:
        return sum(w * fn(z) for z, w in self.atoms if lo <= abs(z) < hi)

    def shell_mass(self, lo: float, hi: float = math.inf) -> float:
        return sum(w for z, w in self.atoms if lo <= abs(z) < hi)

    def sampler(self, lo: float, hi: float = math.inf) -> "MarkSampler":
        kept = [(z, w) for z, w in self.atoms if lo <= abs(z) < hi]
        if not kept:
            return _EmptySampler()
        zs = np.array([z for z, _ in kept])
        ws = np.array([w for _, w in kept])
        return _AtomSampler(zs, ws / ws.sum())


@dataclass(frozen=True)
class DensityMeasure(LevyMeasure):
    """Levy measure with density ``rho(z)`` supported on [lower, upper]\\{0}.

    The density may have an integrable singularity at the origin.  Whether
    the measure has infinite activity is probed at construction.
    """

    density: Callable[[float], float]
    lower: float
    upper: float
    infinite_activity: bool = field(init=False)

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("empty support")
        object.__setattr__(self, "infinite_activity", self._probe_activity())
        self.validate()

    def _probe_activity(self) -> bool:
        if self.lower > 0.0 or self.upper < 0.0:
            return False
        try:
            self.integrate(lambda z: 1.0, 0.0, min(1.0, self._abs_upper()))
        except NonIntegrableError:
            return True
        return False

    def _abs_upper(self) -> float:
        return max(abs(self.lower), abs(self.upper))

    def _sides(self, lo, hi):
        """|z|-shell intersected with the support, per sign, in |z| coords."""
        out = []
        if self.upper > 0.0:
            a, b = max(lo, 0.0), min(hi, self.upper)
            if b > a:
                out.append((+1, a, b))
        if self.lower < 0.0:
            a, b = max(lo, 0.0), min(hi, -self.lower)
            if b > a:
                out.append((-1, a, b))
        return out

    def integrate(self, fn, lo: float = 0.0, hi: float = math.inf) -> float:
        total = 0.0
        for sign, a, b in self._sides(lo, hi):
            g = (lambda u, s=sign: fn(s * u) * self.density(s * u))
            total += _interval_integral(g, a, b, "density measure")
        return total

    def sampler(self, lo: float, hi: float = math.inf) -> "MarkSampler":
        return _build_table_sampler(self, lo, hi)


@dataclass(frozen=True)
class TemperedStableMeasure(LevyMeasure):
    """Symmetric tempered-stable measure, density c*exp(-beta|z|)/|z|^{1+alpha}."""

    alpha: float
    c: float
    beta: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must be in (0, 2)")
        if self.c <= 0.0 or self.beta <= 0.0:
            raise ValueError("c and beta must be positive")

    infinite_activity = True

    def density(self, z: float) -> float:
        az = abs(z)
        return self.c * math.exp(-self.beta * az) / az ** (1.0 + self.alpha)

    def tail_cut(self) -> float:
        # contributions beyond this point are below 1e-16 relative
        return (40.0 + math.log1p(self.c)) / self.beta

    def integrate(self, fn, lo: float = 0.0, hi: float = math.inf) -> float:
        hi = min(hi, self.tail_cut()) if math.isinf(hi) else hi
        if hi <= lo:
            return 0.0
        even = (lambda u: (fn(u) + fn(-u)) * self.density(u))
        return _interval_integral(even, lo, hi, "tempered stable measure")

    def sampler(self, lo: float, hi: float = math.inf) -> "MarkSampler":
        return _build_table_sampler(self, lo, hi)


class MarkSampler:
    """Draws jump marks from a truncated, normalized Levy measure."""

    total_mass: float

    def draw(self, gen: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def cdf(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class _EmptySampler(MarkSampler):
    total_mass = 0.0

    def draw(self, gen, size):
        if size:
            raise ValueError("no mass in the requested shell")
        return np.empty(0)


class _AtomSampler(MarkSampler):
    def __init__(self, zs: np.ndarray, probs: np.ndarray):
        self.zs = zs
        self.probs = probs
        self.total_mass = 1.0

    def draw(self, gen, size):
        idx = gen.choice(len(self.zs), size=size, p=self.probs)
        return self.zs[idx]

    def cdf(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        order = np.argsort(self.zs)
        zs, ps = self.zs[order], self.probs[order]
        cum = np.cumsum(ps)
        idx = np.searchsorted(zs, z, side="right")
        return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)


_TABLE_NODES = 2048


def _panel_masses(density, edges: np.ndarray) -> np.ndarray:
    """Fixed 16-point Gauss-Legendre mass of each [edges[i], edges[i+1]] panel."""
    a = edges[:-1][:, None]
    b = edges[1:][:, None]
    x = 0.5 * (b - a) * _GL_NODES[None, :] + 0.5 * (a + b)
    w = 0.5 * (b - a) * _GL_WEIGHTS[None, :]
    vals = np.vectorize(density)(x)
    return np.sum(vals * w, axis=1)


class _TableSampler(MarkSampler):
    """Inverse-CDF sampler on a monotone-cubic table, one branch per sign."""

    def __init__(self, branches):
        # branches: list of (sign, z_grid(|z|), cdf_grid, mass)
        self.branches = branches
        self.total_mass = sum(m for *_r, m in branches)
        self._inverses = []
        self._forwards = []
        probs = []
        for sign, zg, cg, mass in branches:
            self._inverses.append((sign, PchipInterpolator(cg, zg)))
            self._forwards.append((sign, PchipInterpolator(zg, cg), mass))
            probs.append(mass / self.total_mass)
        self._probs = np.array(probs)

    def draw(self, gen, size):
        if self.total_mass <= 0.0:
            raise ValueError("no mass in the requested shell")
        sides = gen.choice(len(self.branches), size=size, p=self._probs)
        u = gen.uniform(0.0, 1.0, size=size)
        out = np.empty(size)
        for b, (sign, inv) in enumerate(self._inverses):
            sel = sides == b
            if np.any(sel):
                out[sel] = sign * inv(u[sel])
        return out

    def cdf(self, z):
        """CDF of the normalized truncated measure, for goodness-of-fit tests."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        out = np.zeros_like(z)
        neg = next(((fwd, m) for s, fwd, m in self._forwards if s < 0), None)
        pos = next(((fwd, m) for s, fwd, m in self._forwards if s > 0), None)
        neg_mass = neg[1] if neg else 0.0
        if neg:
            fwd, m = neg
            zg = fwd.x
            a = np.clip(-z, zg[0], zg[-1])
            # mass of {marks <= z} on the negative side = m*(1 - F(|z|))
            out += np.where(z < 0, m * (1.0 - fwd(a)), m)
            out = np.where(-z > zg[-1], 0.0, out)
        if pos:
            fwd, m = pos
            zg = fwd.x
            a = np.clip(z, zg[0], zg[-1])
            out += np.where(z >= zg[0], m * fwd(a), 0.0)
        return out / self.total_mass


def _effective_hi(measure, lo: float, hi: float) -> float:
    if not math.isinf(hi):
        return hi
    if isinstance(measure, TemperedStableMeasure):
        return max(measure.tail_cut(), 2.0 * lo)
    return max(abs(measure.lower), abs(measure.upper))


def _build_table_sampler(measure, lo: float, hi: float) -> MarkSampler:
    if lo <= 0.0 and measure.infinite_activity:
        raise InfiniteRateError("cannot sample an infinite-activity measure at eps=0")
    hi_eff = _effective_hi(measure, lo, hi)
    if hi_eff <= lo:
        return _EmptySampler()
    branches = []
    for sign in (+1, -1):
        if isinstance(measure, TemperedStableMeasure):
            dens = (lambda u, s=sign: measure.density(s * u))
            a, b = lo, hi_eff
        else:
            if sign > 0 and measure.upper <= 0.0:
                continue
            if sign < 0 and measure.lower >= 0.0:
                continue
            bound = measure.upper if sign > 0 else -measure.lower
            a, b = max(lo, 0.0), min(hi_eff, bound)
            if b <= a:
                continue
            dens = (lambda u, s=sign: measure.density(s * u))
        edges = np.geomspace(max(a, 1e-300), b, _TABLE_NODES + 1) if a > 0 \
            else np.linspace(a, b, _TABLE_NODES + 1)
        masses = _panel_masses(dens, edges)
        mass = float(masses.sum())
        if mass <= 0.0:
            continue
        cdf = np.concatenate(([0.0], np.cumsum(masses))) / mass
        keep = np.concatenate(([True], np.diff(cdf) > 0.0))
        branches.append((sign, edges[keep], cdf[keep], mass))
    if not branches:
        return _EmptySampler()
    return _TableSampler(branches)


@dataclass(frozen=True)
class JumpScaling:
    """Matrix of scalar scalings ``lambda_ij: R\\{0} -> R``, shape (k, n)."""

    entries: tuple[tuple[Callable[[float], float], ...], ...]

    def __init__(self, entries):
        rows = tuple(tuple(row) for row in entries)
        if not rows or not rows[0]:
            raise ValueError("scaling matrix must be non-empty")
        if any(len(r) != len(rows[0]) for r in rows):
            raise ValueError("ragged scaling matrix")
        object.__setattr__(self, "entries", rows)

    @property
    def k(self) -> int:
        return len(self.entries)

    @property
    def n(self) -> int:
        return len(self.entries[0])

    @classmethod
    def scalar(cls, fn: Callable[[float], float]) -> "JumpScaling":
        return cls(((fn,),))

    @classmethod
    def diagonal(cls, fns: Sequence[Callable[[float], float]]) -> "JumpScaling":
        n = len(fns)
        zero = lambda z: 0.0
        return cls(tuple(tuple(fns[i] if i == j else zero for j in range(n))
                         for i in range(n)))

    def column(self, j: int) -> Callable[[float], np.ndarray]:
        col = tuple(row[j] for row in self.entries)
        return lambda z: np.array([fn(z) for fn in col])

    def column_values(self, j: int, marks: np.ndarray) -> np.ndarray:
        """Columns stacked over an array of marks, shape (len(marks), k)."""
        marks = np.asarray(marks, dtype=float)
        return np.stack([np.asarray([fn(z) for z in marks], dtype=float)
                         for fn in (row[j] for row in self.entries)], axis=1)


@dataclass(frozen=True)
class JumpEvent:
    """One realized jump: time in (0, T], 0-based component, mark z != 0."""

    time: float
    component: int
    mark: float


def _columns_of(H, n_cols: int, j: int):
    if isinstance(H, JumpScaling):
        if H.n != n_cols:
            raise DimensionMismatchError(
                f"scaling has {H.n} columns, measure vector has {n_cols}")
        return H.column(j)

    def col(z):
        M = np.atleast_2d(np.asarray(H(z), dtype=float))
        if M.shape[1] != n_cols:
            raise DimensionMismatchError(
                f"H(z) has {M.shape[1]} columns, measure vector has {n_cols}")
        return M[:, j]
    return col


def lp_nu_norm(H, nu: Sequence[LevyMeasure], p: float,
               lo: float = 0.0, hi: float = math.inf) -> float:
    """Column-wise weighted norm ``(sum_j int |H^{.,j}|^p nu_j)^{1/p}``.

    ``H`` is a :class:`JumpScaling` or a callable ``z -> (d, n) array``; the
    optional ``lo``/``hi`` restrict integration to the shell {lo <= |z| < hi}.
    """
    if p < 1.0:
        raise ValueError("p must be >= 1")
    nu = list(nu)
    total = 0.0
    for j, measure in enumerate(nu):
        col = _columns_of(H, len(nu), j)
        integrand = (lambda z, c=col: float(np.linalg.norm(c(z))) ** p)
        total += measure.integrate(integrand, lo, hi)
    if total < 0.0:
        raise NonIntegrableError("negative norm integral (quadrature failure)")
    return total ** (1.0 / p)


def substitution_scale(scaling: JumpScaling, nu: Sequence[LevyMeasure],
                       eps: float) -> np.ndarray:
    """Gaussian substitution scale: the (k, n) matrix with entries
    ``(int_{0<|z|<eps} lambda_ij(z)^2 nu_j(dz))^{1/2}``.

    Scaling the substituting Brownian motion by this matrix preserves the
    variance of the replaced small-jump integrals.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    return np.sqrt(shell_scale_sq(scaling, nu, 0.0, eps))


def shell_scale_sq(scaling: JumpScaling, nu: Sequence[LevyMeasure],
                   lo: float, hi: float) -> np.ndarray:
    """Entrywise ``int_{lo<=|z|<hi} lambda_ij(z)^2 nu_j(dz)``, shape (k, n)."""
    if isinstance(scaling, JumpScaling) and scaling.n != len(nu):
        raise DimensionMismatchError(
            f"scaling has {scaling.n} columns, measure vector has {len(nu)}")
    out = np.empty((scaling.k, scaling.n))
    for j, measure in enumerate(nu):
        for i in range(scaling.k):
            fn = scaling.entries[i][j]
            out[i, j] = measure.integrate(lambda z: fn(z) ** 2, lo, hi)
    return out


def compensator_integral(scaling: JumpScaling, nu: Sequence[LevyMeasure],
                         eps: float) -> np.ndarray:
    """Signed drift correction ``int_{|z|>=eps} lambda_ij(z) nu_j(dz)``."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if scaling.n != len(nu):
        raise DimensionMismatchError(
            f"scaling has {scaling.n} columns, measure vector has {len(nu)}")
    out = np.empty((scaling.k, scaling.n))
    for j, measure in enumerate(nu):
        for i in range(scaling.k):
            fn = scaling.entries[i][j]
            out[i, j] = measure.integrate(fn, eps, math.inf)
    return out


def shell_rates(nu: Sequence[LevyMeasure], eps: float) -> np.ndarray:
    """Per-component Poisson rates ``nu_j({|z| >= eps})``."""
    if eps <= 0.0:
        for m in nu:
            if m.infinite_activity:
                raise InfiniteRateError(
                    "eps=0 with an infinite-activity measure gives infinite rate")
    return np.array([m.shell_mass(eps) for m in nu])


def sample_large_jumps(nu: Sequence[LevyMeasure], eps: float, horizon: float,
                       master_seed: int, path: int = 0,
                       hi: float = math.inf) -> list[JumpEvent]:
    """Sample all jumps with ``eps <= |z| < hi`` on (0, horizon].

    Per component, event times follow a homogeneous Poisson process with the
    shell rate and marks are i.i.d. from the normalized restricted measure.
    The result is sorted by time and fully determined by
    ``(master_seed, path)`` regardless of threading.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    if eps <= 0.0:
        for m in nu:
            if m.infinite_activity:
                raise InfiniteRateError(
                    "eps=0 with an infinite-activity measure gives infinite rate")
    events: list[JumpEvent] = []
    for j, measure in enumerate(nu):
        rate = measure.shell_mass(eps, hi)
        if rate <= 0.0:
            continue
        tgen = _rng.substream(master_seed, path, _rng.JUMP_TIMES, j)
        mgen = _rng.substream(master_seed, path, _rng.JUMP_MARKS, j)
        count = int(tgen.poisson(rate * horizon))
        if count == 0:
            continue
        times = np.sort(tgen.uniform(0.0, horizon, size=count))
        marks = measure.sampler(eps, hi).draw(mgen, count)
        events.extend(JumpEvent(float(t), j, float(z))
                      for t, z in zip(times, marks))
    events.sort(key=lambda e: (e.time, e.component))
    return events

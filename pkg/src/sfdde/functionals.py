"""Delay functionals and the coefficient interface of an SFDDE model.

The drift, diffusion and jump-factor coefficients map ``(t, segment)`` to
vectors/matrices.  Delay enters through a small kit of kernels:

* distributed delay  -- integral of the window against a finite measure
  (atoms at grid offsets plus an optional density),
* discrete delay     -- point evaluation of the window (cadlag mode only),
* noisy delay        -- a running stochastic integral maintained by the
  solver alongside the path,
* mean-field delay   -- ensemble average of a distributed delay, evaluated
  in lockstep over all paths.

Models carry an evaluation mode: in ``"cadlag"`` mode coefficients receive
the raw segment (point evaluation allowed); in ``"lp"`` mode they receive
the product-space view, where point evaluation of the past raises and only
integral functionals plus the present coordinate are available.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
from typing import Callable, Sequence

import numpy as np

from .errors import (AtomOffGridError, EmptyEnsembleError, GridError,
                     PointEvaluationError, StateNotMaintainedError)
from .levy import JumpScaling, LevyMeasure, lp_nu_norm
from .paths import FrozenSegment, MpSegment, Segment, sup_norm


@dataclass(frozen=True)
class DelayMeasure:
    """Finite measure on [-r, 0]: atoms at grid offsets plus a density."""

    atoms: tuple[tuple[float, float], ...] = ()
    density: Callable[[float], float] | None = None

    @classmethod
    def point(cls, offset: float, weight: float = 1.0) -> "DelayMeasure":
        return cls(atoms=((offset, weight),))

    @classmethod
    def lebesgue(cls, weight: float = 1.0) -> "DelayMeasure":
        return cls(density=lambda theta: weight)

    def has_past_atoms(self) -> bool:
        return any(theta != 0.0 for theta, _ in self.atoms)


def _window_and_dt(seg):
    if isinstance(seg, MpSegment):
        return seg.lp_window(), seg.dt
    return seg.window_values()[:-1], (seg.dt if isinstance(seg, FrozenSegment)
                                      else seg.grid.dt)


def eval_distributed(seg, alpha: DelayMeasure) -> np.ndarray:
    """``int_{-r}^0 S(t+theta) alpha(d theta)`` on the discrete window.

    Atom offsets must be grid multiples; the density part is a left-Riemann
    sum over [-r, 0).  On an L^p view only the density part and an atom at
    zero (the present coordinate) are admissible.
    """
    past, dt = _window_and_dt(seg)
    out = np.zeros(past.shape[1] if past.size else len(np.atleast_1d(seg.present())))
    for theta, weight in alpha.atoms:
        try:
            out = out + weight * seg.value_at_offset(theta)
        except GridError as exc:
            raise AtomOffGridError(str(exc)) from None
    if alpha.density is not None and past.shape[0] > 0:
        r = past.shape[0] * dt
        thetas = -r + dt * np.arange(past.shape[0])
        kappa = np.array([alpha.density(th) for th in thetas])
        out = out + dt * kappa @ past
    return out


def eval_discrete(seg, tau: float) -> np.ndarray:
    """Point evaluation S(t + tau), tau in [-r, 0], cadlag representative."""
    return seg.value_at_offset(tau)


@dataclass
class AuxiliaryState:
    """Running stochastic integral I(t) = int_0^t S(u) dNoise(u) on the grid.

    ``values[i]`` holds I(t_i); history nodes (t <= 0) stay at zero.  The
    solver owning the path updates it with the very increments it consumes.
    """

    values: np.ndarray         # shape (n_nodes,)
    window: int
    dt: float

    @classmethod
    def zeros(cls, n_nodes: int, window: int, dt: float) -> "AuxiliaryState":
        return cls(np.zeros(n_nodes), window, dt)

    def windowed_increment(self, index: int) -> float:
        """I(t) - I(t - r) at node ``index`` (I vanishes at and before 0)."""
        back = self.values[index - self.window] if index - self.window >= 0 else 0.0
        return float(self.values[index] - back)


def eval_noisy_delay(state: AuxiliaryState | None, index: int) -> float:
    """Noisy-delay kernel ``int_{t-r}^t S(u) dNoise(u)`` via the running integral."""
    if state is None:
        raise StateNotMaintainedError(
            "model was built without the auxiliary noise channel")
    return state.windowed_increment(index)


def eval_meanfield(segments: Sequence, alpha: DelayMeasure) -> np.ndarray:
    """Ensemble average of the distributed delay over same-grid segments."""
    segments = list(segments)
    if not segments:
        raise EmptyEnsembleError("mean-field functional needs a non-empty ensemble")
    acc = eval_distributed(segments[0], alpha)
    for seg in segments[1:]:
        acc = acc + eval_distributed(seg, alpha)
    return acc / len(segments)


class PathContext:
    """Per-path evaluation state handed to stateful coefficient kernels."""

    __slots__ = ("aux", "anchor", "meanfield")

    def __init__(self):
        self.aux: AuxiliaryState | None = None
        self.anchor: int = 0
        self.meanfield: Callable[[DelayMeasure], np.ndarray] | None = None


class BoundCoefficient:
    """Marker protocol: a coefficient that needs per-path state.

    ``bind(ctx)`` is called once per path and returns the plain
    ``(t, segment) -> array`` callable used in the stepping loop.
    """

    needs_aux: str | None = None
    needs_ensemble: bool = False

    def bind(self, ctx: PathContext) -> Callable:
        raise NotImplementedError


class NoisyDelayCoefficient(BoundCoefficient):
    """gain * (I(t) - I(t-r)) with I the running noise integral, as a (d,) value."""

    def __init__(self, gain: float = 1.0, channel: str = "brownian"):
        if channel not in ("brownian", "levy"):
            raise ValueError("channel must be 'brownian' or 'levy'")
        self.gain = gain
        self.needs_aux = channel

    def bind(self, ctx: PathContext) -> Callable:
        gain = self.gain

        def coeff(t, seg):
            return np.array([gain * eval_noisy_delay(ctx.aux, ctx.anchor)])
        return coeff


class MeanFieldCoefficient(BoundCoefficient):
    """gain * E[distributed delay] over the lockstep ensemble, as a (d,) value."""

    needs_ensemble = True

    def __init__(self, alpha: DelayMeasure, gain: float = 1.0):
        self.alpha = alpha
        self.gain = gain

    def bind(self, ctx: PathContext) -> Callable:
        alpha, gain = self.alpha, self.gain

        def coeff(t, seg):
            if ctx.meanfield is None:
                raise EmptyEnsembleError(
                    "mean-field coefficient outside an ensemble solve")
            return gain * ctx.meanfield(alpha)
        return coeff


@dataclass(frozen=True)
class SfddeModel:
    """Coefficients and noise description of one SFDDE.

    The jump coefficient is factorized as ``h(t, eta)(z) = h0(t, eta) @
    lambda(z)`` with ``h0`` valued in R^{d x k} and the scaling in
    R^{k x n}; ``raw_jump``, when set, overrides the factorized form with a
    general ``h(t, eta) -> (z -> R^{d x n})`` (robustness experiments reject
    such models).  Lipschitz/growth constants are caller-declared metadata
    used only by diagnostics.
    """

    d: int
    m: int
    n: int
    k: int
    delay: float
    drift: Callable | BoundCoefficient
    diffusion: Callable | BoundCoefficient
    jump_factor: Callable | BoundCoefficient | None
    scaling: JumpScaling | None
    nu: tuple[LevyMeasure, ...]
    p: float = 2.0
    mode: str = "cadlag"               # "cadlag" or "lp"
    lipschitz: float | None = None
    growth: float | None = None
    raw_jump: Callable | None = None
    validate_scaling: bool = True

    def __post_init__(self):
        if self.mode not in ("cadlag", "lp"):
            raise ValueError("mode must be 'cadlag' or 'lp'")
        object.__setattr__(self, "nu", tuple(self.nu))
        if self.scaling is not None:
            if self.scaling.k != self.k or self.scaling.n != self.n:
                raise ValueError("scaling shape does not match (k, n)")
            if len(self.nu) != self.n:
                raise ValueError("need one Levy measure per jump component")
            if self.validate_scaling:
                lp_nu_norm(self.scaling, self.nu, 2.0)
                lp_nu_norm(self.scaling, self.nu, self.p)

    @property
    def has_jumps(self) -> bool:
        return (self.jump_factor is not None and self.scaling is not None) \
            or self.raw_jump is not None

    def coefficients(self):
        return (self.drift, self.diffusion, self.jump_factor)

    @property
    def needs_aux(self) -> str | None:
        for c in self.coefficients():
            if isinstance(c, BoundCoefficient) and c.needs_aux:
                return c.needs_aux
        return None

    @property
    def is_mean_field(self) -> bool:
        return any(isinstance(c, BoundCoefficient) and c.needs_ensemble
                   for c in self.coefficients())

    def view(self, seg):
        """Segment view coefficients receive: raw in cadlag mode, L^p view in lp mode."""
        return MpSegment(seg, self.p) if self.mode == "lp" else seg


def bind_coefficients(model: SfddeModel, ctx: PathContext):
    """Resolve stateful coefficients against a per-path context."""
    out = []
    for c in model.coefficients():
        if c is None:
            out.append(None)
        elif isinstance(c, BoundCoefficient):
            out.append(c.bind(ctx))
        else:
            out.append(c)
    return tuple(out)


def random_window(gen: np.random.Generator, window: int, d: int,
                  dt: float, scale: float = 1.0) -> FrozenSegment:
    """Random piecewise-constant segment for probe/property tests."""
    vals = gen.normal(0.0, scale, size=(window + 1, d))
    return FrozenSegment(dt, vals)


def lipschitz_probe(model: SfddeModel, n_probes: int, seed: int,
                    scale: float = 1.0) -> float:
    """Largest observed ratio of the summed coefficient p-increments to
    ``sup_norm(eta1 - eta2)^p`` over random segment pairs.

    For a model honestly declaring a Lipschitz constant L the returned
    ratio stays at or below L.
    """
    gen = np.random.default_rng(seed)
    window = max(1, round(model.delay / 0.1))
    dt = model.delay / window if model.delay > 0 else 0.1
    p = model.p
    jump_weight = 0.0
    if model.scaling is not None:
        jump_weight = (lp_nu_norm(model.scaling, model.nu, 2.0) ** p
                       + lp_nu_norm(model.scaling, model.nu, p) ** p)
    ctx = PathContext()
    f, g, h0 = bind_coefficients(model, ctx)
    worst = 0.0
    for _ in range(n_probes):
        s1 = random_window(gen, window, model.d, dt, scale)
        s2 = random_window(gen, window, model.d, dt, scale)
        diff = FrozenSegment(dt, s1.values - s2.values)
        gap = sup_norm(diff)
        if gap == 0.0:
            continue
        t = 0.0
        v1, v2 = model.view(s1), model.view(s2)
        num = float(np.linalg.norm(f(t, v1) - f(t, v2))) ** p
        num += float(np.linalg.norm(g(t, v1) - g(t, v2))) ** p
        if h0 is not None:
            num += float(np.linalg.norm(h0(t, v1) - h0(t, v2))) ** p * jump_weight
        worst = max(worst, num / gap ** p)
    return worst


def validate_mode(model: SfddeModel, alpha: DelayMeasure | None = None,
                  tau: float | None = None) -> None:
    """Reject delay specifications ill-defined in the model's mode."""
    if model.mode != "lp":
        return
    if tau is not None and tau != 0.0:
        raise PointEvaluationError(
            "discrete delay at tau<0 is not well-defined in lp mode")
    if alpha is not None and alpha.has_past_atoms():
        raise PointEvaluationError(
            "delay-measure atoms in the past are not well-defined in lp mode")

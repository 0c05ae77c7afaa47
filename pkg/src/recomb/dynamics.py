"""Recombinator vector field and trajectory integration on the simplex."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ZeroMarginal
from .game import (
    GameSpec,
    PopulationState,
    _as_state,
    _check_r,
    _fitness,
    _inflows,
    _marginal,
)
from .numerics import rk4_simplex


@dataclass(frozen=True)
class IntegratorOptions:
    dt: float = 0.01
    t_max: float = 2000.0
    convergence_eps: float = 1e-9
    record_every: int = 10
    negativity_floor: float = -1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max!r}")
        if not self.convergence_eps > 0:
            raise ValueError(f"convergence_eps must be positive, got {self.convergence_eps!r}")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be at least 1")
        if self.negativity_floor > 0:
            raise ValueError("negativity_floor must not be positive")


@dataclass(frozen=True, eq=False)
class Trajectory:
    samples: list
    terminal: PopulationState
    converged: bool
    terminal_field_norm: float

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.samples])

    @property
    def weights(self) -> np.ndarray:
        return np.array([x.weights for _, x in self.samples])


def _field(U: np.ndarray, shape: tuple, x: np.ndarray, r: float) -> np.ndarray:
    ua, ux, comb = _inflows(U, shape, x)
    return (1 - r) * x * ua / ux[..., None] + r * comb - x


def _single_field(game: GameSpec, r: float):
    """Field closure for one weight vector; cheaper than the batched kernel
    on the small arrays a single trajectory uses."""
    U, shape = game.payoff, game.space.shape
    idx = [np.array([t[d] for t in game.space.types]) for d in range(len(shape))]
    D = len(shape)

    def field(x):
        xu = x * (U @ x)
        ux = xu.sum()
        comb = np.ones_like(x)
        for d, n in enumerate(shape):
            comb *= np.bincount(idx[d], weights=xu, minlength=n)[idx[d]]
        return (1 - r) * xu / ux + r * comb / ux**D - x

    return field


def recombinator_field(game: GameSpec, x, r: float) -> np.ndarray:
    """Velocity of every type under the recombinator dynamics.

    The combinator inflow is formed from per-dimension products
    ``sum_{a_-d} x(a_d, a_-d) u_x(a_d, a_-d)``, which vanish with the trait
    marginal, so boundary states need no special casing.
    """
    _check_r(r)
    x = _as_state(game, x)
    return _field(game.payoff, game.space.shape, x.weights, r)


def combinator_field(game: GameSpec, x) -> np.ndarray:
    return recombinator_field(game, x, 1.0)


def replicator_field(game: GameSpec, x) -> np.ndarray:
    """Payoff-normalised replicator field ``x(a)(u_x(a) - u_x)/u_x``."""
    x = _as_state(game, x)
    ua = _fitness(game.payoff, x.weights)
    ux = float(x.weights @ ua)
    return x.weights * (ua - ux) / ux


def trait_growth(game: GameSpec, x, r: float, d: int, a_d) -> float:
    """Per-capita growth rate of trait ``a_d`` from the trait-centric form."""
    _check_r(r)
    x = _as_state(game, x)
    space = game.space
    i = space.trait_index(d, a_d)
    if x.trait_marginals[d][i] <= 0:
        raise ZeroMarginal(f"trait {space.dims[d][i]!r} is absent")
    w = x.weights
    ua = _fitness(game.payoff, w)
    ux = float(w @ ua)
    xu = w * ua
    tpay = _marginal(space.shape, xu, d)[i] / x.trait_marginals[d][i]
    # sum over partner profiles of prod_{d' != d} x(a_d') u_x(a_d')
    others = [_marginal(space.shape, xu, k) for k in range(space.n_dims) if k != d]
    partner_sum = 1.0
    for f in others:
        partner_sum *= f.sum()
    n = space.n_dims
    return float((1 - r) * tpay / ux + r * tpay * partner_sum / ux**n - 1.0)


def integrate(game: GameSpec, x0, r: float, opts: IntegratorOptions | None = None) -> Trajectory:
    """Fixed-step RK4 integration until the field vanishes or ``t_max``."""
    _check_r(r)
    opts = opts or IntegratorOptions()
    x0 = _as_state(game, x0)
    run = rk4_simplex(
        _single_field(game, r),
        x0.weights,
        opts.dt,
        opts.t_max,
        opts.convergence_eps,
        int(opts.record_every),
        opts.negativity_floor,
    )
    samples = [(float(t), PopulationState(game.space, y)) for t, y in zip(run.times, run.states)]
    return Trajectory(samples, samples[-1][1], run.converged, run.field_norm)


def support_closure(x: PopulationState) -> tuple:
    return x.supports().closure


def expand_support(game: GameSpec, x, r: float, dt: float = 0.01) -> PopulationState:
    """State one RK4 step after ``x``, whose support is the rectangular closure.

    The jump to the closure is instantaneous in continuous time; numerically it
    takes one step of size ``dt``.  Rectangular states, and any state when
    ``r == 0``, are returned unchanged.
    """
    _check_r(r)
    x = _as_state(game, x)
    if r == 0 or x.supports().is_rectangular:
        return x
    opts = IntegratorOptions(dt=dt, t_max=dt, convergence_eps=1e-300, record_every=1)
    return integrate(game, x, r, opts).terminal

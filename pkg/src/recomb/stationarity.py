"""Stationarity residuals, certificates and Newton refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import _field
from .errors import NoConvergence, NotStationary, SupportCollapse
from .game import GameSpec, PopulationState, _as_state, _check_r, _fitness, _marginal, _r_payoffs
from .numerics import fd_jacobian

SUPPORT_CUTOFF = 1e-6


@dataclass(frozen=True)
class StationarityCertificate:
    residual_z: float
    trait_residual: float
    mix_residual: float
    mean_payoff: float
    tol: float

    @property
    def verdict(self) -> bool:
        return max(self.residual_z, self.trait_residual, self.mix_residual) <= self.tol

    def to_dict(self) -> dict:
        return {
            "residual_z": self.residual_z,
            "trait_residual": self.trait_residual,
            "mix_residual": self.mix_residual,
            "mean_payoff": self.mean_payoff,
            "tol": self.tol,
            "stationary": self.verdict,
        }


def stationarity_residual(game: GameSpec, x, r: float) -> float:
    """Largest deviation of the r-payoff from 1 over the support."""
    _check_r(r)
    x = _as_state(game, x)
    z = _r_payoffs(game.payoff, game.space.shape, x.weights, r)
    return float(np.max(np.abs(z[x.weights > 0] - 1.0)))


def certify(game: GameSpec, x, r: float, tol: float = 1e-8) -> StationarityCertificate:
    """Check both characterisations of stationarity: equal trait payoffs and the
    type-level mixing condition, alongside the r-payoff residual."""
    _check_r(r)
    x = _as_state(game, x)
    space, w = game.space, x.weights
    ua = _fitness(game.payoff, w)
    ux = float(w @ ua)
    trait_res = 0.0
    for d in range(space.n_dims):
        m = x.trait_marginals[d]
        num = _marginal(space.shape, w * ua, d)
        on = m > 0
        trait_res = max(trait_res, float(np.max(np.abs(num[on] / m[on] - ux))))
    supp = np.flatnonzero(w > 0)
    ratio = np.ones(supp.size)
    for d in range(space.n_dims):
        idx = np.array([space.types[i][d] for i in supp])
        ratio *= x.trait_marginals[d][idx]
    ratio /= w[supp]
    mix = (1 - r) * ua[supp] / ux + r * ratio - 1.0
    return StationarityCertificate(
        residual_z=stationarity_residual(game, x, r),
        trait_residual=trait_res,
        mix_residual=float(np.max(np.abs(mix))),
        mean_payoff=ux,
        tol=tol,
    )


def refine_stationary(game: GameSpec, x_guess, r: float, tol: float = 1e-10,
                      max_iter: int = 100) -> PopulationState:
    """Polish a near-stationary state by damped Newton on its support.

    Weights below 1e-6 are dropped, fixing the support.  The unknowns are the
    supported weights; the equations are the field on the support plus the
    unit-sum constraint, solved in the least-squares sense since the field is
    tangent and one equation is redundant.
    """
    _check_r(r)
    x = _as_state(game, x_guess)
    space, U, shape = game.space, game.payoff, game.space.shape
    S = np.flatnonzero(x.weights > SUPPORT_CUTOFF)
    pruned = x.weights.size > S.size and np.any(x.weights[x.weights <= SUPPORT_CUTOFF] > 0)
    if not pruned and stationarity_residual(game, x, r) <= tol:
        return x
    xs = x.weights[S] / x.weights[S].sum()
    seed = PopulationState(space, _embed(space.size, S, xs))
    if r > 0 and not seed.supports().is_rectangular:
        raise NotStationary("support is not rectangular, so no stationary state has it for r > 0")

    def F(v):
        full = _embed(space.size, S, v)
        return np.append(_field(U, shape, full, r)[S], v.sum() - 1.0)

    def residual(v):
        full = _embed(space.size, S, v / v.sum())
        z = _r_payoffs(U, shape, full, r)
        return float(np.max(np.abs(z[S] - 1.0)))

    res = residual(xs)
    for _ in range(max_iter):
        if res <= tol:
            return PopulationState(space, _embed(space.size, S, xs / xs.sum()))
        J = fd_jacobian(F, xs)
        Fx = F(xs)
        step = np.linalg.lstsq(J, -Fx, rcond=None)[0]
        norm0 = np.abs(Fx).max()
        alpha = 1.0
        while True:
            trial = xs + alpha * step
            if np.all(trial > 0) and np.abs(F(trial)).max() < norm0:
                break
            alpha *= 0.5
            if alpha < 1e-6:
                if np.any(xs + step <= 0):
                    raise SupportCollapse("a supported weight crossed zero during refinement")
                trial = xs + step
                break
        xs = trial
        res = residual(xs)
    if res <= tol:
        return PopulationState(space, _embed(space.size, S, xs / xs.sum()))
    raise NoConvergence(f"Newton refinement stalled at residual {res:.3e} after {max_iter} iterations")


def _embed(k: int, S: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.zeros(k)
    out[S] = v
    return out

"""Generalised recombinator dynamics built from a pair of regular functions.

A pair ``(f1, f2)`` drives ``x' = (1-r) f1(x) + r f2(x) - x``, where ``f1`` is
type imitation and ``f2`` trait imitation.  Both are vector callables
``f(game, w) -> array over types`` that must accept weight vectors slightly
off the simplex (finite-difference probes) and be re-entrant.

Structural assumptions on plug-ins cannot be proven here, only falsified:
:func:`audit_pair` probes them on sampled states and records the outcome.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import stability as stab
from .dynamics import IntegratorOptions
from .errors import (
    AssumptionUnverified,
    NotRegular,
    NotStationary,
    RequiresPositiveR,
    UnknownTrait,
    ZeroMarginal,
    ZeroWeight,
)
from .game import (
    GameSpec,
    PopulationState,
    _as_state,
    _check_r,
    _fitness,
    _inflows,
    _marginal,
    _outer,
    _profile_marginal,
)
from .numerics import fd_jacobian, rk4_simplex

REGULARITY_TOL = 1e-9
VectorFn = Callable[[GameSpec, np.ndarray], np.ndarray]


@dataclass(eq=False)
class RegularPair:
    """Type-imitation ``f1`` and trait-imitation ``f2`` plus optional closed forms.

    ``g1`` is the per-capita type-imitation rate (``f1 = g1 * x``) and ``v`` the
    trait-imitation rate of absent traits at a stationary state; both default
    to finite differences of ``f1`` and ``f2``.  ``flags`` records audit
    outcomes: True (passed), False (failed) or None (not yet audited).
    """

    name: str
    f1: VectorFn
    f2: VectorFn
    g1: Optional[VectorFn] = None
    v: Optional[VectorFn] = None
    flags: dict = field(default_factory=lambda: dict.fromkeys(AUDIT_CHECKS))


AUDIT_CHECKS = (
    "regularity",
    "trait_payoff_increasing",
    "trait_combination",
    "trait_growth_inertia",
)


@dataclass(frozen=True)
class GFamilyParams:
    b: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.b) and self.b >= 0):
            raise ValueError(f"b must be a finite non-negative real, got {self.b!r}")


# ---------------------------------------------------------------------------
# built-in pairs


def _rel_payoffs(game, w):
    ua, ux, comb = _inflows(game.payoff, game.space.shape, w)
    return ua / ux[..., None], ux, comb


def _recomb_f1(game, w):
    rel, _, _ = _rel_payoffs(game, w)
    return w * rel


def _recomb_f2(game, w):
    return _rel_payoffs(game, w)[2]


def _recomb_g1(game, w):
    return _rel_payoffs(game, w)[0]


def recombinator_pair() -> RegularPair:
    return RegularPair("recombinator", _recomb_f1, _recomb_f2, g1=_recomb_g1, v=_recomb_g1)


def g_family_pair(b: float) -> RegularPair:
    """Pair generated by ``G(u) = prod_d (u_d + b) - (1+b)^D + 1``.

    The trait term is evaluated as ``prod_d (x(a_d) u(a_d)/u_x + b x(a_d))``
    minus ``((1+b)^D - 1) prod_d x(a_d)``, which is finite when a trait is
    absent.
    """
    b = GFamilyParams(b).b

    def g1(game, w):
        D = game.space.n_dims
        rel, _, _ = _rel_payoffs(game, w)
        return (1 + b) ** (D - 1) * (rel + b) - (1 + b) ** D + 1

    def f1(game, w):
        return w * g1(game, w)

    def f2(game, w):
        shape = game.space.shape
        D = len(shape)
        ua = _fitness(game.payoff, w)
        xu = w * ua
        ux = xu.sum(axis=-1)[..., None]
        marg = [_marginal(shape, w, d) for d in range(D)]
        lifted = _outer([_marginal(shape, xu, d) / ux + b * marg[d] for d in range(D)])
        return lifted - ((1 + b) ** D - 1) * _outer(marg)

    return RegularPair(f"g-family:b={b!r}", f1, f2, g1=g1, v=g1)


def _single_dim_f2(game, w):
    # one randomly chosen dimension is copied from a fitness-weighted mentor
    shape = game.space.shape
    D = len(shape)
    ua = _fitness(game.payoff, w)
    xu = w * ua
    ux = xu.sum(axis=-1)[..., None]
    out = np.zeros_like(w)
    sub = "abcdefghijklmnopqrstuvwxyz"[:D]
    for d in range(D):
        trait = _marginal(shape, xu, d) / ux
        partner = _profile_marginal(shape, w, d).reshape(w.shape[:-1] + shape[:d] + shape[d + 1:])
        keep = sub[:d] + sub[d + 1:]
        t = np.einsum(f"...{sub[d]},...{keep}->...{sub}", trait, partner)
        out = out + t.reshape(w.shape)
    return out / D


def single_dim_imitation_pair() -> RegularPair:
    return RegularPair("single-dim-imitation", _recomb_f1, _single_dim_f2, g1=_recomb_g1)


_REGISTRY: dict = {
    "recombinator": lambda: recombinator_pair(),
    "single-dim-imitation": lambda: single_dim_imitation_pair(),
}

_G_FAMILY = re.compile(r"^g-family:b=(.+)$")


def register_pair(name: str, factory: Callable[[], RegularPair]):
    """Add a plug-in pair; ``factory`` builds a fresh :class:`RegularPair`."""
    if name in _REGISTRY or _G_FAMILY.match(name):
        raise ValueError(f"dynamics name {name!r} is already taken")
    _REGISTRY[name] = factory


def get_pair(name: str) -> RegularPair:
    m = _G_FAMILY.match(name)
    if m:
        try:
            b = float(m.group(1))
        except ValueError:
            raise UnknownTrait(f"cannot read b in dynamics {name!r}") from None
        return g_family_pair(b)
    try:
        return _REGISTRY[name]()
    except KeyError:
        known = ", ".join(sorted(_REGISTRY) + ["g-family:b=<real>"])
        raise UnknownTrait(f"unknown dynamics {name!r}; known: {known}") from None


def available_pairs() -> list:
    return sorted(_REGISTRY) + ["g-family:b=<real>"]


# ---------------------------------------------------------------------------
# field and payoffs


def _mix(pair: RegularPair, game: GameSpec, w: np.ndarray, r: float) -> np.ndarray:
    return (1 - r) * pair.f1(game, w) + r * pair.f2(game, w)


def general_field(pair: RegularPair, game: GameSpec, x, r: float) -> np.ndarray:
    _check_r(r)
    x = _as_state(game, x)
    inflow = _mix(pair, game, x.weights, r)
    excess = abs(float(inflow.sum()) - 1.0)
    if excess > REGULARITY_TOL:
        raise NotRegular(f"{pair.name}: inflow sum deviates from 1 by {excess:.3e} at this state")
    return inflow - x.weights


def g_family_field(params: GFamilyParams, game: GameSpec, x, r: float) -> np.ndarray:
    return general_field(g_family_pair(params.b), game, x, r)


def zeta_vector(pair: RegularPair, game: GameSpec, x, r: float) -> np.ndarray:
    """Generalised r-payoffs over types; NaN off the support."""
    _check_r(r)
    x = _as_state(game, x)
    w = x.weights
    inflow = _mix(pair, game, w, r)
    out = np.full(w.shape, np.nan)
    np.divide(inflow, w, out=out, where=w > 0)
    return out


def zeta_r(pair: RegularPair, game: GameSpec, x, a, r: float) -> float:
    x = _as_state(game, x)
    i = game.space.type_index(a)
    if x.weights[i] <= 0:
        raise ZeroWeight(f"type {game.space.type_label(i)!r} is not in the support")
    return float(zeta_vector(pair, game, x, r)[i])


def marginal_function(f: VectorFn, game: GameSpec, x, d: int, a_d) -> float:
    """``(1/x(a_d)) * sum over partner profiles of f(a_d, a_-d | x)``."""
    x = _as_state(game, x)
    i = game.space.trait_index(d, a_d)
    m = x.trait_marginals[d][i]
    if m <= 0:
        raise ZeroMarginal(f"trait {game.space.dims[d][i]!r} is absent")
    vals = np.asarray(f(game, x.weights), dtype=float)
    return float(_marginal(game.space.shape, vals, d)[i] / m)


def general_trait_growth(pair: RegularPair, game: GameSpec, x, d: int, a_d, r: float) -> float:
    return (1 - r) * marginal_function(pair.f1, game, x, d, a_d) \
        + r * marginal_function(pair.f2, game, x, d, a_d) - 1.0


# ---------------------------------------------------------------------------
# audits


@dataclass
class AuditReport:
    pair: str
    checks: dict
    details: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _audit_states(game: GameSpec, n: int, seed: int, near: PopulationState | None,
                  radius: float) -> list:
    rng = np.random.default_rng(seed)
    k = game.space.size
    out = []
    for _ in range(n):
        y = rng.dirichlet(np.ones(k))
        if near is not None:
            y = (1 - radius) * near.weights + radius * y
        out.append(y)
    return out


def _boundary_states(game: GameSpec, seed: int, near: PopulationState | None) -> list:
    """States with at least one absent trait: the anchor itself, or random
    states with one trait removed."""
    space = game.space
    if near is not None:
        return [near.weights] if any(np.any(m == 0) for m in near.trait_marginals) else []
    rng = np.random.default_rng(seed + 1)
    out = []
    for d in range(space.n_dims):
        if space.shape[d] < 2:
            continue
        y = rng.dirichlet(np.ones(space.size))
        drop = [i for i, t in enumerate(space.types) if t[d] == 0]
        y[drop] = 0.0
        out.append(y / y.sum())
    return out


def _fd_partial(f, game, w, col: int, s: float):
    """Forward-difference column of ``f`` in coordinate ``col`` with one Richardson step."""
    base = np.asarray(f(game, w), dtype=float)

    def q(h):
        wp = w.copy()
        wp[col] += h
        return (np.asarray(f(game, wp), dtype=float) - base) / h

    return 2 * q(s / 2) - q(s)


def audit_pair(pair: RegularPair, game: GameSpec, n_states: int = 20, seed: int = 0,
               near=None, radius: float = 0.05, tol: float = 1e-7) -> AuditReport:
    """Randomised falsification checks of the structural assumptions.

    With ``near`` set, states are sampled within ``radius`` (mixture weight)
    of that state, which is what local stability claims rely on; otherwise
    from the whole simplex.  Results are stored in ``pair.flags``.
    """
    near = _as_state(game, near) if near is not None else None
    space = game.space
    states = _audit_states(game, n_states, seed, near, radius)
    if near is not None:
        states.append(near.weights)
    details: dict = {}

    worst = 0.0
    for w in states:
        for f in (pair.f1, pair.f2):
            worst = max(worst, abs(float(np.sum(f(game, w))) - 1.0))
    details["regularity_max_excess"] = worst
    regular = worst <= REGULARITY_TOL

    violations = 0
    for w in states:
        x = PopulationState.from_weights(space, w)
        ua = _fitness(game.payoff, x.weights)
        for d in range(space.n_dims):
            m = x.trait_marginals[d]
            tp = _marginal(space.shape, x.weights * ua, d)
            on = np.flatnonzero(m > 0)
            for f in (pair.f1, pair.f2):
                phi = _marginal(space.shape, np.asarray(f(game, x.weights)), d)
                for i in on:
                    for j in on:
                        if tp[i] / m[i] > tp[j] / m[j] * (1 + 1e-12) and not phi[i] / m[i] > phi[j] / m[j]:
                            violations += 1
    details["trait_payoff_violations"] = violations

    neg = 0
    for w in states:
        x = PopulationState.from_weights(space, w)
        f2 = np.asarray(pair.f2(game, x.weights))
        prod = _outer(list(x.trait_marginals))
        neg += int(np.sum((prod > 0) & (f2 <= 0)))
    details["trait_combination_violations"] = neg

    worst_inertia = 0.0
    for w in _boundary_states(game, seed, near):
        x = PopulationState(space, w)
        prod_others = [
            np.array([math.prod(x.trait_marginals[k][t[k]] for k in range(space.n_dims) if k != d)
                      for t in space.types])
            for d in range(space.n_dims)
        ]
        cols = [fd for fd in range(space.size)]
        partials = np.column_stack([_fd_partial(pair.f2, game, x.weights, c, 1e-5) for c in cols])
        for d in range(space.n_dims):
            absent = np.flatnonzero(x.trait_marginals[d] == 0)
            for i_trait in absent:
                rows = [a for a, t in enumerate(space.types) if t[d] == i_trait]
                for a in rows:
                    for c in cols:
                        allowed = space.types[c][d] == i_trait and prod_others[d][a] > 0
                        if not allowed:
                            worst_inertia = max(worst_inertia, float(partials[a, c]))
    details["trait_growth_inertia_max_partial"] = worst_inertia

    checks = {
        "regularity": regular,
        "trait_payoff_increasing": violations == 0,
        "trait_combination": neg == 0,
        "trait_growth_inertia": worst_inertia <= tol,
    }
    pair.flags.update(checks)
    return AuditReport(pair.name, checks, details)


# ---------------------------------------------------------------------------
# stability


@dataclass(frozen=True, eq=False)
class PartnerRates:
    """Per-profile rates for an absent trait at a stationary state."""

    dimension: int
    trait: int
    profile_labels: tuple
    g1: np.ndarray
    v: np.ndarray
    products: np.ndarray


def _partner_types(game: GameSpec, x: PopulationState, d: int, i: int):
    prof = np.flatnonzero(x.profile_marginals[d] > 0)
    types = [game.space.compose(d, i, int(p)) for p in prof]
    other = [k for k in range(game.space.n_dims) if k != d]
    pi = np.ones(prof.size)
    if other:
        idx = np.unravel_index(prof, game.space.profile_shape(d))
        for pos, k in enumerate(other):
            pi *= x.trait_marginals[k][idx[pos]]
    labels = tuple(game.space.profile_labels(d)[p] for p in prof)
    return prof, types, pi, labels


def partner_rates(pair: RegularPair, game: GameSpec, x, d: int, a_d, s: float = 1e-5) -> PartnerRates:
    """Type- and trait-imitation rates ``g1`` and ``v`` of the absent trait
    ``a_d`` with each supported partner profile.

    Without closed forms, ``g1(a) = df1(a)/dx(a)`` and
    ``v(a) = df2(a)/dx(a) / prod_{d' != d} x(a_d')``, both by forward
    differences with one Richardson step from ``s``.
    """
    x = _as_state(game, x)
    i = game.space.trait_index(d, a_d)
    if x.trait_marginals[d][i] > 0:
        raise stab.InvalidTrait(f"trait {game.space.dims[d][i]!r} is present in the state")
    _, types, pi, labels = _partner_types(game, x, d, i)
    w = x.weights
    if pair.g1 is not None:
        g1 = np.asarray(pair.g1(game, w))[types]
    else:
        g1 = np.array([_fd_partial(pair.f1, game, w, a, s)[a] for a in types])
    if pair.v is not None:
        v = np.asarray(pair.v(game, w))[types]
    else:
        v = fd_trait_rates(pair, game, x, d, i, s)
    return PartnerRates(d, i, labels, g1, v, pi)


def fd_trait_rates(pair: RegularPair, game: GameSpec, x, d: int, i: int, s: float = 1e-5) -> np.ndarray:
    """Finite-difference trait-imitation rates, ignoring any closed form."""
    x = _as_state(game, x)
    _, types, pi, _ = _partner_types(game, x, d, i)
    return np.array([_fd_partial(pair.f2, game, x.weights, a, s)[a] for a in types]) / pi


def _require_audit(pair: RegularPair, game: GameSpec, x: PopulationState):
    if any(v is None for v in pair.flags.values()):
        audit_pair(pair, game, near=x)
    failed = [k for k, v in pair.flags.items() if v is False]
    if failed:
        raise AssumptionUnverified(f"{pair.name}: audit failed for {', '.join(failed)}")


def generalized_partner_field(pair: RegularPair, game: GameSpec, x, d: int, a_d, r: float, y) -> np.ndarray:
    """Partner-distribution velocity of an invading trait under ``pair``."""
    _check_r(r)
    x = _as_state(game, x)
    _require_audit(pair, game, x)
    rates = partner_rates(pair, game, x, d, a_d)
    return stab.partner_field(rates.g1, rates.v, rates.products, r, np.asarray(y, dtype=float))


def generalized_partner_integrate(pair: RegularPair, game: GameSpec, x, d: int, a_d, r: float,
                                  y0=None, opts: IntegratorOptions | None = None) -> stab.PartnerRun:
    _check_r(r)
    x = _as_state(game, x)
    _require_audit(pair, game, x)
    opts = opts or IntegratorOptions()
    rates = partner_rates(pair, game, x, d, a_d)
    n = rates.g1.size
    y0 = np.full(n, 1.0 / n) if y0 is None else np.asarray(y0, dtype=float)
    run = rk4_simplex(
        lambda y: stab.partner_field(rates.g1, rates.v, rates.products, r, y), y0 / y0.sum(),
        opts.dt, opts.t_max, opts.convergence_eps, int(opts.record_every), opts.negativity_floor,
    )
    return stab.PartnerRun(rates.profile_labels, run.times, run.states, run.states[-1],
                           run.converged, run.field_norm)


def generalized_partner_distribution(pair: RegularPair, game: GameSpec, x, d: int, a_d, r: float):
    """Equilibrium of the generalised partner dynamics and its marginal payoff ``U^r``.

    When trait and type imitation rates coincide the equilibrium is the unique
    root of a monotone scalar equation (solved by bisection); otherwise the
    partner dynamics is integrated from the uniform distribution and the
    terminal state is returned with its convergence flag.
    """
    _check_r(r)
    if r == 0:
        raise RequiresPositiveR("the partner distribution is defined for r > 0 only")
    x = _as_state(game, x)
    rates = partner_rates(pair, game, x, d, a_d)
    g1, v, pi = rates.g1, rates.v, rates.products
    converged = True
    if r == 1:
        eta = pi / pi.sum()
    elif np.allclose(g1, v, rtol=1e-8, atol=1e-10):
        z0 = stab._solve_z0(g1, pi, r)
        eta = z0 * r * pi / (z0 - (1 - r) * g1)
        eta = eta / eta.sum()
    else:
        run = generalized_partner_integrate(pair, game, x, d, a_d, r)
        eta, converged = run.terminal, run.converged
    Ur = (1 - r) * float(eta @ g1) + r * float(eta @ v)
    return dict(zip(rates.profile_labels, map(float, eta))), Ur, converged


def classify_general(pair: RegularPair, game: GameSpec, x, r: float,
                     tol: float = stab.DEFAULT_TOL, stationary_tol: float = 1e-8) -> stab.StabilityReport:
    """Stability verdict for a stationary state of generalised dynamics.

    Internal: the Jacobian of the field over the support.  Traits: ``1`` against
    ``U^r`` at the partner equilibrium.  Types: ``1`` against ``(1-r) g1(a)``.
    Payoffs and margins in the report are in these relative units.
    """
    _check_r(r)
    x = _as_state(game, x)
    space, w = game.space, x.weights
    S = np.flatnonzero(w > 0)
    inflow = _mix(pair, game, w, r)
    res = float(np.max(np.abs(inflow[S] / w[S] - 1.0)))
    norm = float(np.abs(inflow - w).max())
    if res > stationary_tol or norm > stationary_tol:
        raise NotStationary(f"state is not stationary under {pair.name} at r={r:g} "
                            f"(residual {res:.3e}, field norm {norm:.3e})")
    _require_audit(pair, game, x)

    def field_on_support(v):
        full = np.zeros(space.size)
        full[S] = v
        return (_mix(pair, game, full, r) - full)[S]

    J = fd_jacobian(field_on_support, w[S], rel_step=stab.JACOBIAN_STEP)
    internal = stab.internal_stability(
        stab.RJacobian(J, tuple(int(i) for i in S), tuple(space.type_labels[i] for i in S)), tol)

    traits = []
    for d in range(space.n_dims):
        for i in np.flatnonzero(x.trait_marginals[d] == 0):
            if r > 0:
                partners, Ur, _ = generalized_partner_distribution(pair, game, x, d, int(i), r)
            else:
                partners, Ur = None, float(partner_rates(pair, game, x, d, int(i)).g1.max())
            traits.append(stab.TraitMargin(d, space.dims[d][i], Ur, 1.0 - Ur, 1.0 - Ur, partners))

    g1_all = np.asarray(pair.g1(game, w)) if pair.g1 is not None else None
    types = []
    for a in np.flatnonzero(w == 0):
        t = space.types[a]
        outside = sum(1 for k in range(space.n_dims) if x.trait_marginals[k][t[k]] == 0)
        g = float(g1_all[a]) if g1_all is not None else float(_fd_partial(pair.f1, game, w, a, 1e-5)[a])
        margin = 1.0 - (1 - r) * g
        types.append(stab.TypeMargin(space.type_labels[a], g, margin, margin, outside))

    verdict, witnesses = stab._decide(internal, traits, types, tol)
    return stab.StabilityReport(r, 1.0, internal, traits, types, verdict, tol, witnesses,
                                stab._state_dict(x))


def integrate_general(pair: RegularPair, game: GameSpec, x0, r: float,
                      opts: IntegratorOptions | None = None):
    """RK4 trajectory of the generalised dynamics, same contract as ``integrate``."""
    from .dynamics import Trajectory

    _check_r(r)
    opts = opts or IntegratorOptions()
    x0 = _as_state(game, x0)
    general_field(pair, game, x0, r)  # regularity check at the start
    run = rk4_simplex(
        lambda y: _mix(pair, game, y, r) - y, x0.weights,
        opts.dt, opts.t_max, opts.convergence_eps, int(opts.record_every), opts.negativity_floor,
    )
    samples = [(float(t), PopulationState(game.space, y)) for t, y in zip(run.times, run.states)]
    return Trajectory(samples, samples[-1][1], run.converged, run.field_norm)

"""Local stability of stationary states.

Internal stability comes from the tangent-space definiteness of the
r-Jacobian.  External stability compares the mean payoff against the payoff
of invading traits (weighted by their stable partner distribution) and of
invading types.  Margins are tested in relative units (divided by the mean
payoff), which makes every verdict invariant to rescaling the payoff table.
"""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import IntegratorOptions, _field
from .errors import (
    InvalidTrait,
    NotStationary,
    RequiresPositiveR,
    SingularState,
)
from .game import (
    GameSpec,
    PopulationState,
    TypeRef,
    _as_state,
    _check_r,
    _fitness,
    _r_payoffs,
)
from .numerics import fd_jacobian, helmert_basis, jacobi_eigh, rk4_simplex, rk4_simplex_batch

DEFAULT_TOL = 1e-7
JACOBIAN_STEP = 1e-6


class Definiteness(str, enum.Enum):
    NegativeDefinite = "NegativeDefinite"
    SemiBoundary = "SemiBoundary"
    Indefinite = "Indefinite"


class Verdict(str, enum.Enum):
    AsymptoticallyStable = "AsymptoticallyStable"
    Unstable = "Unstable"
    Inconclusive = "Inconclusive"


# ---------------------------------------------------------------------------
# internal stability


@dataclass(frozen=True, eq=False)
class RJacobian:
    """Partial derivatives of the r-payoffs over the support, ``[i, j] = dz(a_i)/dx(a_j)``."""

    matrix: np.ndarray
    support: tuple
    labels: tuple


def _require_stationary(game: GameSpec, x: PopulationState, r: float, tol: float):
    w = x.weights
    z = _r_payoffs(game.payoff, game.space.shape, w, r)
    res = float(np.max(np.abs(z[w > 0] - 1.0)))
    full = float(np.abs(_field(game.payoff, game.space.shape, w, r)).max())
    if res > tol or full > tol:
        raise NotStationary(
            f"state is not stationary at r={r:g}: r-payoff residual {res:.3e}, "
            f"field norm {full:.3e} (tolerance {tol:.0e}); refine it first"
        )


def r_jacobian(game: GameSpec, x, r: float, h: float = JACOBIAN_STEP,
               stationary_tol: float = 1e-6) -> RJacobian:
    """Central-difference r-Jacobian restricted to ``supp(x)``.

    Each column perturbs one supported weight by a relative step ``h`` with the
    other weights fixed, so the probe points leave the simplex.
    """
    _check_r(r)
    x = _as_state(game, x)
    _require_stationary(game, x, r, stationary_tol)
    S = np.flatnonzero(x.weights > 0)
    if x.weights[S].min() < 10 * h:
        raise SingularState(
            f"supported weight {x.weights[S].min():.3e} is below {10 * h:.0e}; "
            "the finite-difference step would cross the boundary"
        )
    U, shape, k = game.payoff, game.space.shape, game.space.size

    def z_on_support(v):
        full = np.zeros(k)
        full[S] = v
        return _r_payoffs(U, shape, full, r)[S]

    J = fd_jacobian(z_on_support, x.weights[S], rel_step=h)
    labels = tuple(game.space.type_labels[i] for i in S)
    return RJacobian(J, tuple(int(i) for i in S), labels)


def tangent_spectrum(matrix):
    """Eigenvalues and eigenvectors (in the original coordinates) of the
    symmetric part of ``matrix`` restricted to zero-sum vectors."""
    M = np.asarray(matrix, dtype=float)
    k = M.shape[0]
    if k < 2:
        return np.zeros(0), np.zeros((k, 0))
    P = helmert_basis(k)
    S = 0.5 * (M + M.T)
    lam, V = jacobi_eigh(P.T @ S @ P)
    return lam, P @ V


def tangent_definiteness(matrix, tol: float = 1e-8) -> Definiteness:
    """Classify ``w^T M w`` on the zero-sum subspace by its largest eigenvalue.

    A 1x1 matrix has an empty tangent space and counts as negative definite.
    """
    lam, _ = tangent_spectrum(matrix)
    return _classify_eigs(lam, tol)


def _classify_eigs(lam: np.ndarray, tol: float) -> Definiteness:
    if lam.size == 0 or lam[-1] < -tol:
        return Definiteness.NegativeDefinite
    if lam[-1] > tol:
        return Definiteness.Indefinite
    return Definiteness.SemiBoundary


def _tangent_witness(M: np.ndarray, vecs: np.ndarray, lam: np.ndarray):
    """A zero-sum vector with positive quadratic form, preferring the simplest
    pairwise move ``e_j - e_i``."""
    S = 0.5 * (M + M.T)
    k = M.shape[0]
    best, best_q = None, 0.0
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            q = S[i, i] + S[j, j] - 2 * S[i, j]
            if q > best_q:
                w = np.zeros(k)
                w[i], w[j] = -1.0, 1.0
                best, best_q = w, q
    if best is None:
        best = vecs[:, -1]
        best_q = float(lam[-1])
    return best, float(best_q)


@dataclass(eq=False)
class InternalStability:
    definiteness: Definiteness
    eigenvalues: np.ndarray
    support: tuple
    witness: np.ndarray | None = None
    quadratic_form: float | None = None

    @property
    def max_eigenvalue(self) -> float:
        return float(self.eigenvalues[-1]) if self.eigenvalues.size else -math.inf

    @property
    def min_eigenvalue(self) -> float:
        return float(self.eigenvalues[0]) if self.eigenvalues.size else -math.inf

    def to_dict(self) -> dict:
        out = {
            "definiteness": self.definiteness.value,
            "support": list(self.support),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "min_eigenvalue": _finite_or_none(self.min_eigenvalue),
            "max_eigenvalue": _finite_or_none(self.max_eigenvalue),
        }
        if self.witness is not None:
            out["witness"] = {
                "vector": {lab: float(v) for lab, v in zip(self.support, self.witness)},
                "quadratic_form": self.quadratic_form,
            }
        return out


def internal_stability(J: RJacobian, tol: float = DEFAULT_TOL) -> InternalStability:
    lam, vecs = tangent_spectrum(J.matrix)
    cls = _classify_eigs(lam, tol)
    witness = q = None
    if cls is Definiteness.Indefinite:
        witness, q = _tangent_witness(J.matrix, vecs, lam)
    return InternalStability(cls, lam, J.labels, witness, q)


# ---------------------------------------------------------------------------
# invading traits


@dataclass(frozen=True, eq=False)
class PartnerDistribution:
    """Stable partner distribution of an absent trait over supported partner profiles."""

    dimension: int
    trait: int
    trait_label: str
    profiles: tuple
    profile_labels: tuple
    weights: np.ndarray
    z0: float
    payoffs: np.ndarray     # u_x(a_d, a_-d) for each partner profile
    products: np.ndarray    # product of the partner trait frequencies
    r: float

    def as_dict(self) -> dict:
        return dict(zip(self.profile_labels, (float(v) for v in self.weights)))

    def fixed_point_residual(self) -> float:
        eta, u, pi, r = self.weights, self.payoffs, self.products, self.r
        rhs = (1 - r) * eta * u / float(eta @ u) + r * pi
        return float(np.abs(rhs - eta).max())


def _partner_setup(game: GameSpec, x: PopulationState, d: int, a_d):
    space = game.space
    i = space.trait_index(d, a_d)
    if x.trait_marginals[d][i] > 0:
        raise InvalidTrait(
            f"trait {space.dims[d][i]!r} is present in the state; partner distributions "
            "are defined for absent traits only"
        )
    prof = np.flatnonzero(x.profile_marginals[d] > 0)
    ua = _fitness(game.payoff, x.weights)
    types = [space.compose(d, i, int(p)) for p in prof]
    u = ua[types]
    other = [k for k in range(space.n_dims) if k != d]
    pi = np.ones(prof.size)
    if other:
        idx = np.unravel_index(prof, space.profile_shape(d))
        for pos, k in enumerate(other):
            pi *= x.trait_marginals[k][idx[pos]]
    labels = tuple(space.profile_labels(d)[p] for p in prof)
    return i, prof, u, pi, labels, ua


def _solve_z0(u: np.ndarray, pi: np.ndarray, r: float) -> float:
    zbar = float(np.max((1 - r) * u))

    def h(z):
        return float(np.sum(z * r * pi / (z - (1 - r) * u)))

    gap = 1e-9
    lo = zbar * (1 + gap)
    while h(lo) < 1 and gap > 1e-15:
        gap *= 0.1
        lo = zbar * (1 + gap)
    hi = 2 * lo
    while h(hi) >= 1:
        lo, hi = hi, 2 * hi
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if h(mid) >= 1:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def stable_partner_distribution(game: GameSpec, x, d: int, a_d, r: float) -> PartnerDistribution:
    """Unique fixed point of the partner map for the absent trait ``a_d``.

    For ``r < 1`` it is ``eta_z = z r pi / (z - (1-r) u)`` at the unique ``z``
    where the weights sum to one, found by doubling then bisection.
    """
    _check_r(r)
    x = _as_state(game, x)
    i, prof, u, pi, labels, _ = _partner_setup(game, x, d, a_d)
    if r == 0:
        raise RequiresPositiveR("the partner distribution is defined for r > 0 only")
    if r == 1:
        eta = pi / pi.sum()
        z0 = float(eta @ u)
    else:
        z0 = _solve_z0(u, pi, r)
        eta = z0 * r * pi / (z0 - (1 - r) * u)
        eta = eta / eta.sum()
    eta.setflags(write=False)
    return PartnerDistribution(
        d, i, game.space.dims[d][i], tuple(int(p) for p in prof), labels, eta, z0, u, pi, r
    )


def invading_trait_payoff(game: GameSpec, x, d: int, a_d, r: float) -> float:
    eta = stable_partner_distribution(game, x, d, a_d, r)
    return float(eta.weights @ eta.payoffs)


def partner_field(g1: np.ndarray, v: np.ndarray, pi: np.ndarray, r: float, y: np.ndarray) -> np.ndarray:
    """Partner-distribution velocity ``(1-r) g1 y + r pi v.y - y U^r(y)``.

    ``g1`` and ``v`` are per-profile rates of type and trait imitation; for the
    recombinator both equal ``u_x(a_d, a_-d) / u_x``.
    """
    uy = y @ g1
    vy = y @ v
    total = (1 - r) * uy + r * vy
    return (1 - r) * g1 * y + r * pi * vy[..., None] - y * total[..., None]


@dataclass(frozen=True, eq=False)
class PartnerRun:
    profile_labels: tuple
    times: np.ndarray
    states: np.ndarray
    terminal: np.ndarray
    converged: bool
    field_norm: float


def partner_dynamics_integrate(game: GameSpec, x, d: int, a_d, r: float, y0=None,
                               opts: IntegratorOptions | None = None) -> PartnerRun:
    """Integrate the linearised partner dynamics of an invading trait."""
    _check_r(r)
    x = _as_state(game, x)
    opts = opts or IntegratorOptions()
    _, prof, u, pi, labels, ua = _partner_setup(game, x, d, a_d)
    uhat = u / float(x.weights @ ua)
    if y0 is None:
        y0 = np.full(prof.size, 1.0 / prof.size)
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (prof.size,):
        raise ValueError(f"y0 must have {prof.size} entries, one per partner profile {labels}")
    run = rk4_simplex(
        lambda y: partner_field(uhat, uhat, pi, r, y), y0 / y0.sum(),
        opts.dt, opts.t_max, opts.convergence_eps, int(opts.record_every), opts.negativity_floor,
    )
    return PartnerRun(labels, run.times, run.states, run.states[-1], run.converged, run.field_norm)


def lambda_matrix(game: GameSpec, x, d: int, a_d, r: float) -> np.ndarray:
    """Linearised growth matrix of the invading trait block over partner profiles."""
    _check_r(r)
    x = _as_state(game, x)
    _, _, u, pi, _, ua = _partner_setup(game, x, d, a_d)
    uhat = u / float(x.weights @ ua)
    return np.diag((1 - r) * uhat - 1.0) + r * np.outer(pi, uhat)


@dataclass(frozen=True)
class LambdaDiagnostics:
    symmetric_max_eigenvalue: float
    spectral_abscissa: float


def lambda_diagnostics(game: GameSpec, x, d: int, a_d, r: float) -> LambdaDiagnostics:
    L = lambda_matrix(game, x, d, a_d, r)
    sym = jacobi_eigh(0.5 * (L + L.T))[0]
    return LambdaDiagnostics(float(sym[-1]), float(np.max(np.linalg.eigvals(L).real)))


# ---------------------------------------------------------------------------
# classification


@dataclass(frozen=True)
class TraitMargin:
    dimension: int
    trait: str
    invading_payoff: float
    margin: float
    relative_margin: float
    partners: dict | None = None

    def to_dict(self) -> dict:
        out = {
            "dimension": self.dimension,
            "trait": self.trait,
            "invading_payoff": self.invading_payoff,
            "margin": self.margin,
            "relative_margin": self.relative_margin,
        }
        if self.partners is not None:
            out["partners"] = dict(self.partners)
        return out


@dataclass(frozen=True)
class TypeMargin:
    type: str
    payoff: float
    margin: float
    relative_margin: float
    traits_outside: int

    def to_dict(self) -> dict:
        return {
            "type": self.type,
            "payoff": self.payoff,
            "margin": self.margin,
            "relative_margin": self.relative_margin,
            "traits_outside": self.traits_outside,
        }


@dataclass(eq=False)
class StabilityReport:
    r: float
    mean_payoff: float
    internal: InternalStability
    traits_external: list
    types_external: list
    verdict: Verdict
    tol: float
    witnesses: list = field(default_factory=list)
    state: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "r": self.r,
            "mean_payoff": self.mean_payoff,
            "state": dict(self.state),
            "verdict": self.verdict.value,
            "tol": self.tol,
            "internal": self.internal.to_dict(),
            "traits_external": [m.to_dict() for m in self.traits_external],
            "types_external": [m.to_dict() for m in self.types_external],
            "witnesses": list(self.witnesses),
        }


def _decide(internal: InternalStability, traits: list, types: list, tol: float):
    margins = [m.relative_margin for m in traits] + [m.relative_margin for m in types]
    witnesses = []
    if internal.definiteness is Definiteness.Indefinite:
        witnesses.append({
            "kind": "tangent",
            "vector": {lab: float(v) for lab, v in zip(internal.support, internal.witness)},
            "quadratic_form": internal.quadratic_form,
        })
    for m in traits:
        if m.relative_margin < -tol:
            witnesses.append({"kind": "trait", "dimension": m.dimension, "trait": m.trait,
                              "margin": m.margin})
    for m in types:
        if m.relative_margin < -tol:
            witnesses.append({"kind": "type", "type": m.type, "margin": m.margin})
    if witnesses:
        return Verdict.Unstable, witnesses
    strict = internal.definiteness is Definiteness.NegativeDefinite and all(v > tol for v in margins)
    return (Verdict.AsymptoticallyStable if strict else Verdict.Inconclusive), witnesses


def _state_dict(x: PopulationState) -> dict:
    return {lab: float(v) for lab, v in zip(x.space.type_labels, x.weights) if v > 0}


def classify_stability(game: GameSpec, x, r: float, tol: float = DEFAULT_TOL,
                       stationary_tol: float = 1e-8) -> StabilityReport:
    """Stable when the r-Jacobian is negative definite on the tangent space and
    every absent trait and type earns strictly less than the mean payoff;
    unstable when any of these fails strictly; inconclusive in between.

    At ``r = 0`` the invading-trait payoff is its ``r -> 0`` limit, the best
    payoff over supported partner profiles.
    """
    _check_r(r)
    x = _as_state(game, x)
    _require_stationary(game, x, r, stationary_tol)
    space = game.space
    internal = internal_stability(r_jacobian(game, x, r, stationary_tol=max(stationary_tol, 1e-6)), tol)
    ua = _fitness(game.payoff, x.weights)
    ux = float(x.weights @ ua)

    traits = []
    for d in range(space.n_dims):
        for i in np.flatnonzero(x.trait_marginals[d] == 0):
            if r > 0:
                eta = stable_partner_distribution(game, x, d, int(i), r)
                ur = float(eta.weights @ eta.payoffs)
                partners = eta.as_dict()
            else:
                _, _, u, _, labels, _ = _partner_setup(game, x, d, int(i))
                ur = float(u.max())
                partners = None
            traits.append(TraitMargin(d, space.dims[d][i], ur, ux - ur, 1.0 - ur / ux, partners))

    types = []
    for a in np.flatnonzero(x.weights == 0):
        t = space.types[a]
        outside = sum(1 for k in range(space.n_dims) if x.trait_marginals[k][t[k]] == 0)
        pay = float(ua[a])
        types.append(TypeMargin(space.type_labels[a], pay, ux - (1 - r) * pay,
                                1.0 - (1 - r) * pay / ux, outside))

    verdict, witnesses = _decide(internal, traits, types, tol)
    return StabilityReport(r, ux, internal, traits, types, verdict, tol, witnesses, _state_dict(x))


def pure_state_classify(game: GameSpec, a: TypeRef, r: float, tol: float = DEFAULT_TOL) -> StabilityReport:
    """Closed-form test for a pure state from the payoff table alone: the
    incumbent payoff against single-trait deviants and against every other
    type discounted by ``1 - r``."""
    _check_r(r)
    space = game.space
    ia = space.type_index(a)
    U = game.payoff
    uaa = float(U[ia, ia])
    t = space.types[ia]
    traits = []
    for d in range(space.n_dims):
        for j in range(space.shape[d]):
            if j == t[d]:
                continue
            dev = list(t)
            dev[d] = j
            ib = int(np.ravel_multi_index(tuple(dev), space.shape))
            pay = float(U[ib, ia])
            traits.append(TraitMargin(d, space.dims[d][j], pay, uaa - pay, 1.0 - pay / uaa,
                                      {_profile_label(space, d, t): 1.0}))
    types = []
    for b in range(space.size):
        if b == ia:
            continue
        outside = sum(1 for k in range(space.n_dims) if space.types[b][k] != t[k])
        pay = float(U[b, ia])
        types.append(TypeMargin(space.type_labels[b], pay, uaa - (1 - r) * pay,
                                1.0 - (1 - r) * pay / uaa, outside))
    internal = InternalStability(Definiteness.NegativeDefinite, np.zeros(0), (space.type_labels[ia],))
    verdict, witnesses = _decide(internal, traits, types, tol)
    return StabilityReport(r, uaa, internal, traits, types, verdict, tol, witnesses,
                           {space.type_labels[ia]: 1.0})


def _profile_label(space, d: int, t: tuple) -> str:
    prof = tuple(t[k] for k in range(space.n_dims) if k != d)
    if not prof:
        return ""
    return space.profile_labels(d)[int(np.ravel_multi_index(prof, space.profile_shape(d)))]


def _finite_or_none(v: float):
    return float(v) if math.isfinite(v) else None


# ---------------------------------------------------------------------------
# basins of attraction


@dataclass(frozen=True, eq=False)
class BasinResult:
    samples: np.ndarray
    terminals: np.ndarray
    labels: list
    converged: np.ndarray

    def shares(self) -> dict:
        n = len(self.labels)
        out = {}
        for lab in self.labels:
            out[lab] = out.get(lab, 0) + 1
        return {k: v / n for k, v in sorted(out.items())}


def draw_interior_states(k: int, n: int, seed: int) -> np.ndarray:
    """``n`` uniform draws from the open simplex, one child generator per sample."""
    children = np.random.SeedSequence(seed).spawn(n)
    return np.array([np.random.default_rng(c).dirichlet(np.ones(k)) for c in children])


def _basin_chunk(game, dynamics, r, Y0, dt, t_max, eps, floor):
    if dynamics is None:
        U, shape = game.payoff, game.space.shape

        def field(y):
            return _field(U, shape, y, r)
    else:
        from .general import _mix, get_pair

        pair = get_pair(dynamics)

        def field(y):
            return _mix(pair, game, y, r) - y
    Y, conv, _ = rk4_simplex_batch(field, Y0, dt, t_max, eps, floor)
    return Y, conv


def basin_sample(game: GameSpec, r: float, stationary_list, n: int, seed: int = 0,
                 opts: IntegratorOptions | None = None, jobs: int = 1,
                 radius: float = 1e-4, chunk: int | None = None,
                 dynamics: str | None = None) -> BasinResult:
    """Label uniformly drawn interior states by the stationary state their
    trajectory ends within ``radius`` (sup norm) of, else ``"unresolved"``.

    ``stationary_list`` maps labels to states, or is a sequence of
    ``(label, state)`` pairs.  Results do not depend on ``jobs`` or ``chunk``.
    ``dynamics`` names a registered generalised pair; ``None`` is the
    recombinator.
    """
    _check_r(r)
    if n < 1:
        raise ValueError("n must be at least 1")
    opts = opts or IntegratorOptions()
    items = list(stationary_list.items()) if isinstance(stationary_list, dict) else list(stationary_list)
    targets = np.array([_as_state(game, s).weights for _, s in items]).reshape(len(items), -1)
    names = [str(lab) for lab, _ in items]
    X0 = draw_interior_states(game.space.size, n, seed)
    args = (game, dynamics, r)
    rest = (opts.dt, opts.t_max, opts.convergence_eps, opts.negativity_floor)
    jobs = max(1, int(jobs or os.cpu_count() or 1))
    chunk = chunk or -(-n // jobs)
    pieces = [X0[i:i + chunk] for i in range(0, n, chunk)]
    if jobs == 1 or len(pieces) == 1:
        out = [_basin_chunk(*args, P, *rest) for P in pieces]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(pieces))) as ex:
            futs = [ex.submit(_basin_chunk, *args, P, *rest) for P in pieces]
            out = [f.result() for f in futs]
    Y = np.concatenate([o[0] for o in out])
    conv = np.concatenate([o[1] for o in out])
    labels = []
    for y in Y:
        if targets.size:
            dist = np.abs(targets - y).max(axis=1)
            j = int(np.argmin(dist))
            labels.append(names[j] if dist[j] <= radius else "unresolved")
        else:
            labels.append("unresolved")
    return BasinResult(X0, Y, labels, conv)

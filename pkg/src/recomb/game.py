"""Multi-dimensional games, population states and static payoff quantities.

Types are tuples of traits, one per dimension, enumerated lexicographically
over per-dimension trait indices (C order).  Every vector over types in the
package uses that order.

The array kernels at the bottom (``_fitness``, ``_marginal`` ...) accept a
leading batch axis and work on unnormalised weight vectors; finite-difference
derivatives and the batched integrator rely on both properties.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import (
    InvalidState,
    NonPositivePayoff,
    ShapeMismatch,
    UnknownTrait,
    ZeroMarginal,
    ZeroWeight,
)

TypeRef = Union[int, str, Sequence]
TraitRef = Union[int, str]

STATE_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TraitSpace:
    """Ordered dimensions, each an ordered tuple of trait labels."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(tuple(str(t) for t in d) for d in self.dims)
        if not dims:
            raise ShapeMismatch("a trait space needs at least one dimension")
        for k, labels in enumerate(dims):
            if not labels:
                raise ShapeMismatch(f"dimension {k} has no traits")
            if len(set(labels)) != len(labels):
                raise ShapeMismatch(f"duplicate trait labels in dimension {k}: {labels}")
        object.__setattr__(self, "dims", dims)

    @property
    def shape(self) -> tuple:
        return tuple(len(d) for d in self.dims)

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @cached_property
    def types(self) -> tuple:
        """Trait-index tuples in enumeration order."""
        return tuple(itertools.product(*(range(n) for n in self.shape)))

    @cached_property
    def _sep(self) -> str:
        return "" if all(len(t) == 1 for d in self.dims for t in d) else "-"

    @cached_property
    def type_labels(self) -> tuple:
        return tuple(self._sep.join(self.dims[k][i] for k, i in enumerate(t)) for t in self.types)

    def type_label(self, index: int) -> str:
        return self.type_labels[index]

    def trait_index(self, d: int, trait: TraitRef) -> int:
        if not 0 <= d < self.n_dims:
            raise UnknownTrait(f"no dimension {d}")
        labels = self.dims[d]
        if isinstance(trait, (int, np.integer)) and not isinstance(trait, bool):
            if 0 <= trait < len(labels):
                return int(trait)
            raise UnknownTrait(f"trait index {trait} out of range in dimension {d}")
        try:
            return labels.index(str(trait))
        except ValueError:
            raise UnknownTrait(f"unknown trait {trait!r} in dimension {d}") from None

    def find_trait(self, trait: str) -> tuple:
        """Locate a trait label as ``(dimension, index)``; it must be unambiguous."""
        hits = [(k, labels.index(trait)) for k, labels in enumerate(self.dims) if trait in labels]
        if len(hits) != 1:
            what = "unknown" if not hits else "ambiguous"
            raise UnknownTrait(f"{what} trait {trait!r}")
        return hits[0]

    def type_index(self, a: TypeRef) -> int:
        if isinstance(a, (int, np.integer)) and not isinstance(a, bool):
            if 0 <= a < self.size:
                return int(a)
            raise UnknownTrait(f"type index {a} out of range")
        if isinstance(a, str):
            try:
                return self.type_labels.index(a)
            except ValueError:
                raise UnknownTrait(f"unknown type {a!r}") from None
        parts = tuple(a)
        if len(parts) != self.n_dims:
            raise UnknownTrait(f"type {a!r} does not have one trait per dimension")
        idx = tuple(self.trait_index(k, t) for k, t in enumerate(parts))
        return int(np.ravel_multi_index(idx, self.shape))

    def profile_shape(self, d: int) -> tuple:
        return tuple(n for k, n in enumerate(self.shape) if k != d)

    def profile_labels(self, d: int) -> tuple:
        """Labels of the trait profiles over every dimension except ``d``."""
        others = [self.dims[k] for k in range(self.n_dims) if k != d]
        return tuple(self._sep.join(p) for p in itertools.product(*others))

    def profile_index(self, d: int, profile) -> int:
        n = math.prod(self.profile_shape(d))
        if isinstance(profile, (int, np.integer)) and not isinstance(profile, bool):
            if 0 <= profile < n:
                return int(profile)
            raise UnknownTrait(f"profile index {profile} out of range")
        if isinstance(profile, str):
            try:
                return self.profile_labels(d).index(profile)
            except ValueError:
                raise UnknownTrait(f"unknown trait profile {profile!r}") from None
        other = [k for k in range(self.n_dims) if k != d]
        parts = tuple(profile)
        if len(parts) != len(other):
            raise UnknownTrait(f"profile {profile!r} has the wrong length")
        idx = tuple(self.trait_index(k, t) for k, t in zip(other, parts))
        return int(np.ravel_multi_index(idx, self.profile_shape(d))) if idx else 0

    def compose(self, d: int, trait: int, profile: int) -> int:
        """Type index of ``(a_d, a_-d)`` from a trait index and a profile index."""
        prof = np.unravel_index(profile, self.profile_shape(d)) if self.n_dims > 1 else ()
        idx = list(int(i) for i in prof)
        idx.insert(d, trait)
        return int(np.ravel_multi_index(tuple(idx), self.shape))


@dataclass(frozen=True, eq=False)
class GameSpec:
    space: TraitSpace
    payoff: np.ndarray
    name: str | None = None

    @property
    def size(self) -> int:
        return self.space.size


def build_game(space: TraitSpace, payoffs, name: str | None = None) -> GameSpec:
    """Validate a payoff table over types (row = own type, column = opponent)."""
    if not isinstance(space, TraitSpace):
        space = TraitSpace(space)
    U = np.array(payoffs, dtype=float)
    k = space.size
    if U.shape != (k, k):
        raise ShapeMismatch(f"payoff table has shape {U.shape}, expected {(k, k)}")
    if not np.all(np.isfinite(U)):
        raise NonPositivePayoff("payoff table contains non-finite entries")
    if np.any(U <= 0):
        i, j = np.argwhere(U <= 0)[0]
        raise NonPositivePayoff(
            f"payoff u({space.type_label(i)}, {space.type_label(j)}) = {U[i, j]} is not positive"
        )
    U.setflags(write=False)
    return GameSpec(space, U, name)


class SupportInfo(NamedTuple):
    support: tuple
    trait_supports: tuple
    closure: tuple
    is_rectangular: bool


class PopulationState:
    """An immutable distribution over types with precomputed marginals."""

    __slots__ = ("space", "weights", "trait_marginals", "profile_marginals", "_support")

    def __init__(self, space: TraitSpace, weights):
        w = np.array(weights, dtype=float).reshape(-1)
        if w.shape != (space.size,):
            raise ShapeMismatch(f"state has {w.size} weights, expected {space.size}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidState("state weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > STATE_SUM_TOL:
            raise InvalidState(f"state weights sum to {w.sum()!r}, not 1")
        w.setflags(write=False)
        object.__setattr__(self, "space", space)
        object.__setattr__(self, "weights", w)
        tm = tuple(_marginal(space.shape, w, d) for d in range(space.n_dims))
        pm = tuple(_profile_marginal(space.shape, w, d) for d in range(space.n_dims))
        object.__setattr__(self, "trait_marginals", tm)
        object.__setattr__(self, "profile_marginals", pm)
        object.__setattr__(self, "_support", None)

    def __setattr__(self, name, value):
        raise AttributeError("PopulationState is immutable")

    def __repr__(self):
        body = ", ".join(
            f"{lab}={v:.6g}" for lab, v in zip(self.space.type_labels, self.weights) if v > 0
        )
        return f"PopulationState({body})"

    def __len__(self):
        return self.weights.size

    @classmethod
    def from_weights(cls, space: TraitSpace, weights, normalize: bool = True) -> "PopulationState":
        w = np.array(weights, dtype=float).reshape(-1)
        if normalize:
            total = w.sum()
            if not np.isfinite(total) or total <= 0:
                raise InvalidState("weights must have a positive finite sum")
            w = w / total
        return cls(space, w)

    @classmethod
    def pure(cls, space: TraitSpace, a: TypeRef) -> "PopulationState":
        w = np.zeros(space.size)
        w[space.type_index(a)] = 1.0
        return cls(space, w)

    @classmethod
    def uniform(cls, space: TraitSpace) -> "PopulationState":
        return cls(space, np.full(space.size, 1.0 / space.size))

    @classmethod
    def mixture(cls, space: TraitSpace, parts: dict) -> "PopulationState":
        """State from ``{type: weight}``; unnamed types get weight 0."""
        w = np.zeros(space.size)
        for a, v in parts.items():
            w[space.type_index(a)] += v
        return cls.from_weights(space, w)

    def supports(self) -> SupportInfo:
        if self._support is None:
            object.__setattr__(self, "_support", _supports(self))
        return self._support


def _as_state(game: GameSpec, x) -> PopulationState:
    if isinstance(x, PopulationState):
        if x.space != game.space:
            raise ShapeMismatch("state and game use different trait spaces")
        return x
    return PopulationState(game.space, x)


def _supports(x: PopulationState) -> SupportInfo:
    space = x.space
    supp = tuple(int(i) for i in np.flatnonzero(x.weights > 0))
    trait_supp = tuple(tuple(int(i) for i in np.flatnonzero(m > 0)) for m in x.trait_marginals)
    closure = tuple(
        i for i, t in enumerate(space.types)
        if all(x.trait_marginals[k][t[k]] > 0 for k in range(space.n_dims))
    )
    return SupportInfo(supp, trait_supp, closure, supp == closure)


def supports(x: PopulationState) -> SupportInfo:
    """Support, per-dimension trait supports, rectangular closure, rectangularity."""
    return x.supports()


def fitness_vector(game: GameSpec, x) -> np.ndarray:
    x = _as_state(game, x)
    return _fitness(game.payoff, x.weights)


def fitness(game: GameSpec, x, a: TypeRef) -> float:
    """Expected payoff of type ``a`` against the population (``a`` may be absent)."""
    return float(fitness_vector(game, x)[game.space.type_index(a)])


def mean_payoff(game: GameSpec, x) -> float:
    x = _as_state(game, x)
    return float(x.weights @ _fitness(game.payoff, x.weights))


def trait_marginal(x: PopulationState, d: int, a_d: TraitRef) -> float:
    return float(x.trait_marginals[d][x.space.trait_index(d, a_d)])


def profile_marginal(x: PopulationState, d: int, a_minus_d) -> float:
    return float(x.profile_marginals[d][x.space.profile_index(d, a_minus_d)])


def trait_payoffs(game: GameSpec, x, d: int) -> np.ndarray:
    """Mean payoff of carriers of each trait in dimension ``d``; NaN where absent."""
    x = _as_state(game, x)
    num = _marginal(game.space.shape, x.weights * _fitness(game.payoff, x.weights), d)
    den = x.trait_marginals[d]
    out = np.full(den.shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


def trait_payoff(game: GameSpec, x, d: int, a_d: TraitRef) -> float:
    x = _as_state(game, x)
    i = game.space.trait_index(d, a_d)
    if x.trait_marginals[d][i] <= 0:
        raise ZeroMarginal(
            f"trait {game.space.dims[d][i]!r} is absent; use the invading-trait payoff instead"
        )
    return float(trait_payoffs(game, x, d)[i])


def trait_to_type_ratio(x: PopulationState, a: TypeRef) -> float:
    """Product of the trait frequencies of ``a`` divided by the frequency of ``a``."""
    space = x.space
    i = space.type_index(a)
    if x.weights[i] <= 0:
        raise ZeroWeight(f"type {space.type_label(i)!r} is not in the support")
    t = space.types[i]
    prod = math.prod(float(x.trait_marginals[k][t[k]]) for k in range(space.n_dims))
    return prod / float(x.weights[i])


def r_payoff_vector(game: GameSpec, x, r: float) -> np.ndarray:
    """r-payoffs of all types; NaN off the support."""
    _check_r(r)
    x = _as_state(game, x)
    return _r_payoffs(game.payoff, game.space.shape, x.weights, r)


def r_payoff(game: GameSpec, x, a: TypeRef, r: float) -> float:
    x = _as_state(game, x)
    i = game.space.type_index(a)
    if x.weights[i] <= 0:
        raise ZeroWeight(f"type {game.space.type_label(i)!r} is not in the support")
    return float(r_payoff_vector(game, x, r)[i])


def _check_r(r: float):
    if not (0.0 <= r <= 1.0):
        raise ValueError(f"recombination rate must lie in [0, 1], got {r!r}")


# ---------------------------------------------------------------------------
# array kernels: trailing axis indexes types, leading axes are batch axes


_AXES = "abcdefghijklmnopqrstuvwxyz"

# The kernels use einsum rather than matmul: einsum never calls BLAS, so the
# result for a row does not depend on how many rows share the call.


def _fitness(U: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("...j,ij->...i", x, U)


def _marginal(shape: tuple, v: np.ndarray, d: int) -> np.ndarray:
    sub = _AXES[:len(shape)]
    return np.einsum(f"...{sub}->...{sub[d]}", v.reshape(v.shape[:-1] + shape))


def _profile_marginal(shape: tuple, v: np.ndarray, d: int) -> np.ndarray:
    sub = _AXES[:len(shape)]
    keep = sub[:d] + sub[d + 1:]
    t = np.einsum(f"...{sub}->...{keep}", v.reshape(v.shape[:-1] + shape))
    return t.reshape(v.shape[:-1] + (-1,))


def _outer(factors: list) -> np.ndarray:
    sub = _AXES[:len(factors)]
    p = np.einsum(",".join("..." + c for c in sub) + "->..." + sub, *factors)
    return p.reshape(p.shape[:-len(factors)] + (-1,))


def _inflows(U: np.ndarray, shape: tuple, x: np.ndarray):
    """Fitness, mean payoff and the combinator inflow prod_d x(a_d)u_x(a_d)/u_x."""
    ua = _fitness(U, x)
    xu = x * ua
    ux = np.einsum("...i->...", xu)
    comb = _outer([_marginal(shape, xu, d) for d in range(len(shape))])
    comb /= (ux ** len(shape))[..., None]
    return ua, ux, comb


def _r_payoffs(U: np.ndarray, shape: tuple, x: np.ndarray, r: float) -> np.ndarray:
    ua, ux, comb = _inflows(U, shape, x)
    out = np.full(x.shape, np.nan)
    pos = x > 0
    rel = ua / ux[..., None]
    out[pos] = (1 - r) * rel[pos] + r * comb[pos] / x[pos]
    return out

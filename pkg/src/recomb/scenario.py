"""Scenario files: a game, optional defaults and named initial states, in YAML.

Example::

    name: pd-contracts
    dimensions:
    - [s, a]
    - [c, d]
    payoffs:          # rows: own type, columns: opponent, types in C order
    - [15, 15, 15, 6]
    ...
    r: 0.5            # optional
    dynamics: recombinator   # optional
    states:           # optional, weights in type order; rescaled to unit sum
      table2: [0.384, 0.188, 0.188, 0.239]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import InvalidState, ScenarioError, ShapeMismatch, UnknownTrait
from .game import GameSpec, PopulationState, TraitSpace, build_game

_KEYS = ("name", "description", "dimensions", "payoffs", "r", "dynamics", "states")


@dataclass(eq=False)
class Scenario:
    name: str
    game: GameSpec
    r: float | None = None
    dynamics: str | None = None
    states: dict = field(default_factory=dict)
    description: str | None = None

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.name == other.name
            and self.description == other.description
            and self.r == other.r
            and self.dynamics == other.dynamics
            and self.game.space == other.game.space
            and np.array_equal(self.game.payoff, other.game.payoff)
            and self.states.keys() == other.states.keys()
            and all(list(self.states[k]) == list(other.states[k]) for k in self.states)
        )

    def state(self, spec: str) -> PopulationState:
        return resolve_state(self, spec)


def _labels(raw, where: str) -> list:
    if not isinstance(raw, list) or not raw:
        raise ScenarioError(f"{where} must be a non-empty list of trait labels")
    out = []
    for t in raw:
        if isinstance(t, bool) or not isinstance(t, (str, int)):
            raise ScenarioError(f"{where}: label {t!r} must be a string (quote labels such as 'on' or 'no')")
        out.append(str(t))
    return out


def _number(v, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: {v!r} is not a number")
    return v


def scenario_from_dict(doc) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("a scenario must be a mapping")
    unknown = set(doc) - set(_KEYS)
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {', '.join(sorted(map(str, unknown)))}")
    for key in ("name", "dimensions", "payoffs"):
        if key not in doc:
            raise ScenarioError(f"scenario is missing '{key}'")
    dims = doc["dimensions"]
    if not isinstance(dims, list) or not dims:
        raise ScenarioError("'dimensions' must be a non-empty list of lists")
    space = TraitSpace(tuple(tuple(_labels(d, f"dimension {k}")) for k, d in enumerate(dims)))
    rows = doc["payoffs"]
    if not isinstance(rows, list) or not all(isinstance(row, list) for row in rows):
        raise ScenarioError("'payoffs' must be a list of rows")
    table = [[_number(v, f"payoffs row {i}") for v in row] for i, row in enumerate(rows)]
    if any(len(row) != space.size for row in table) or len(table) != space.size:
        raise ShapeMismatch(f"payoffs must be {space.size} rows of {space.size} numbers")
    game = build_game(space, table, name=str(doc["name"]))
    r = doc.get("r")
    if r is not None:
        r = _number(r, "r")
        if not 0 <= r <= 1:
            raise ScenarioError(f"r = {r} is outside [0, 1]")
    dyn = doc.get("dynamics")
    if dyn is not None and not isinstance(dyn, str):
        raise ScenarioError("'dynamics' must be a string")
    states = doc.get("states") or {}
    if not isinstance(states, dict):
        raise ScenarioError("'states' must map names to weight lists")
    clean = {}
    for k, w in states.items():
        if not isinstance(w, list) or len(w) != space.size:
            raise ScenarioError(f"state {k!r} needs {space.size} weights")
        clean[str(k)] = [_number(v, f"state {k!r}") for v in w]
        PopulationState.from_weights(space, clean[str(k)])
    desc = doc.get("description")
    return Scenario(str(doc["name"]), game, r, dyn, clean, None if desc is None else str(desc))


def loads_scenario(text: str) -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError(f"cannot parse scenario: {e}") from None
    return scenario_from_dict(doc)


def _plain(v):
    f = float(v)
    return int(f) if f.is_integer() and abs(f) < 2**53 else f


def scenario_to_dict(sc: Scenario) -> dict:
    doc = {"name": sc.name}
    if sc.description is not None:
        doc["description"] = sc.description
    doc["dimensions"] = [list(d) for d in sc.game.space.dims]
    doc["payoffs"] = [[_plain(v) for v in row] for row in sc.game.payoff]
    if sc.r is not None:
        doc["r"] = sc.r
    if sc.dynamics is not None:
        doc["dynamics"] = sc.dynamics
    if sc.states:
        doc["states"] = {k: list(v) for k, v in sc.states.items()}
    return doc


def dumps_scenario(sc: Scenario) -> str:
    """Canonical YAML text; ``loads_scenario(dumps_scenario(s)) == s``."""
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None, width=100)


def builtin_names() -> list:
    files = resources.files("recomb").joinpath("data")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".yaml"))


def builtin_text(name: str) -> str:
    if name not in builtin_names():
        raise ScenarioError(f"no built-in scenario {name!r}; available: {', '.join(builtin_names())}")
    return resources.files("recomb").joinpath("data", f"{name}.yaml").read_text(encoding="utf-8")


def load_scenario(ref) -> Scenario:
    """Load from a file path, or by built-in name when no such file exists."""
    path = Path(ref)
    if path.is_file():
        return loads_scenario(path.read_text(encoding="utf-8"))
    if str(ref) in builtin_names():
        return loads_scenario(builtin_text(str(ref)))
    raise ScenarioError(f"{ref!r} is neither a scenario file nor a built-in ({', '.join(builtin_names())})")


def resolve_state(sc: Scenario, spec: str) -> PopulationState:
    """A named state, ``uniform``, a type label (pure state) or comma-separated weights."""
    space = sc.game.space
    spec = str(spec).strip()
    if spec in sc.states:
        return PopulationState.from_weights(space, sc.states[spec])
    if spec == "uniform":
        return PopulationState.uniform(space)
    if spec in space.type_labels:
        return PopulationState.pure(space, spec)
    if "," in spec or _is_float(spec):
        try:
            w = [float(v) for v in spec.split(",")]
        except ValueError:
            raise InvalidState(f"cannot read weights from {spec!r}") from None
        if not all(math.isfinite(v) for v in w):
            raise InvalidState("weights must be finite")
        return PopulationState.from_weights(space, w)
    names = ", ".join(list(sc.states) + ["uniform", "<type label>", "<w1,w2,...>"])
    raise UnknownTrait(f"unknown state {spec!r}; use one of: {names}")


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False

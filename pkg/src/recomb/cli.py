"""Command-line interface: ``recomb simulate | classify | sweep | basins | partner | examples``.

Exit codes: 0 success, 2 bad input, 3 integration failure, 4 violated
precondition (state not stationary, trait present, ...).
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import IntegratorOptions, integrate
from .errors import InputError, RecombError
from .scenario import builtin_names, builtin_text, load_scenario, resolve_state
from .stability import (
    Verdict,
    basin_sample,
    classify_stability,
    stable_partner_distribution,
)
from .stationarity import refine_stationary

log = logging.getLogger("recomb")

SCHEMA_VERSION = "1.0"


# ---------------------------------------------------------------------------
# argument types


def _unit_interval(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"recombination rate must lie in [0, 1], got {text}")
    return v


def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (v > 0 and np.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _count(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def parse_grid(text: str) -> list:
    """``start:stop:step`` (inclusive of stop) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, s = (float(p) for p in text.split(":"))
            if s <= 0 or b < a:
                raise ValueError
            n = int(np.floor((b - a) / s + 1e-9))
            vals = [round(a + i * s, 12) for i in range(n + 1)]
        else:
            vals = [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot read grid {text!r}; use start:stop:step or r1,r2,...") from None
    if not vals or any(not 0 <= v <= 1 for v in vals):
        raise argparse.ArgumentTypeError("grid values must lie in [0, 1]")
    return sorted(set(vals))


# ---------------------------------------------------------------------------
# output helpers


def _num(v) -> str:
    return format(float(v), ".17g")


def _emit(text: str, out: str | None):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _sidecar_path(out: str) -> Path:
    p = Path(out)
    return p.with_name(p.name + ".json") if p.suffix == ".json" else p.with_suffix(".json")


def _report(command: str, args, scenario, options: dict, result: dict, seed=None) -> str:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool": {"name": "recomb", "version": __version__},
        "command": command,
        "scenario": scenario.name,
        "seed": seed,
        "options": options,
        "result": result,
    }
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("RECOMB_SEED")
    if env:
        try:
            return _seed(env)
        except argparse.ArgumentTypeError as e:
            raise InputError(f"RECOMB_SEED: {e}") from None
    return 0


def _rate(args, scenario) -> float:
    if args.r is not None:
        return args.r
    if scenario.r is not None:
        return scenario.r
    raise InputError("--r is required (the scenario has no default r)")


def _dynamics(args, scenario) -> str:
    return args.dynamics or scenario.dynamics or "recombinator"


def _options(args) -> IntegratorOptions:
    return IntegratorOptions(dt=args.dt, t_max=args.tmax, convergence_eps=args.eps,
                             record_every=getattr(args, "record_every", 10))


def _prepare(game, x, r: float, dyn: str, refine: bool):
    if refine and dyn == "recombinator":
        return refine_stationary(game, x, r)
    return x


def _classify(game, x, r: float, dyn: str, tol: float):
    if dyn == "recombinator":
        return classify_stability(game, x, r, tol)
    from .general import classify_general, get_pair

    return classify_general(get_pair(dyn), game, x, r, tol)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    r = _rate(args, sc)
    dyn = _dynamics(args, sc)
    x0 = resolve_state(sc, args.x0)
    opts = _options(args)
    if dyn == "recombinator":
        traj = integrate(sc.game, x0, r, opts)
    else:
        from .general import get_pair, integrate_general

        traj = integrate_general(get_pair(dyn), sc.game, x0, r, opts)
    labels = sc.game.space.type_labels
    buf = io.StringIO()
    buf.write(",".join(["t"] + [f"x({lab})" for lab in labels]) + "\n")
    for t, x in traj.samples:
        buf.write(",".join([_num(t)] + [_num(v) for v in x.weights]) + "\n")
    t_final = traj.samples[-1][0]
    buf.write(f"# converged={str(traj.converged).lower()} "
              f"terminal_field_norm={_num(traj.terminal_field_norm)} t_final={_num(t_final)}\n")
    _emit(buf.getvalue(), args.out)
    if args.out:
        result = {
            "converged": bool(traj.converged),
            "terminal_field_norm": float(traj.terminal_field_norm),
            "t_final": float(t_final),
            "n_samples": len(traj.samples),
            "terminal": {lab: float(v) for lab, v in zip(labels, traj.terminal.weights)},
        }
        options = {"r": r, "x0": args.x0, "dt": opts.dt, "t_max": opts.t_max,
                   "convergence_eps": opts.convergence_eps, "record_every": opts.record_every,
                   "dynamics": dyn}
        _sidecar_path(args.out).write_text(_report("simulate", args, sc, options, result), encoding="utf-8")
    log.info("simulate: converged=%s after t=%g", traj.converged, t_final)
    return 0


def cmd_classify(args) -> int:
    sc = load_scenario(args.scenario)
    r = _rate(args, sc)
    dyn = _dynamics(args, sc)
    x = _prepare(sc.game, resolve_state(sc, args.x0), r, dyn, not args.no_refine)
    rep = _classify(sc.game, x, r, dyn, args.tol)
    options = {"r": r, "state": args.x0, "tol": args.tol, "refine": not args.no_refine, "dynamics": dyn}
    _emit(_report("classify", args, sc, options, rep.to_dict()), args.out)
    return 0


def _sweep_point(game, dyn: str, weights, r: float, tol: float, refine: bool) -> dict:
    from .game import PopulationState

    x = _prepare(game, PopulationState(game.space, weights), r, dyn, refine)
    rep = _classify(game, x, r, dyn, tol)
    traits = [m.relative_margin for m in rep.traits_external]
    types = [m.relative_margin for m in rep.types_external]
    w = rep.witnesses[0] if rep.witnesses else None
    tag = ""
    if w is not None:
        tag = {"tangent": "tangent", "trait": f"trait:{w.get('trait')}", "type": f"type:{w.get('type')}"}[w["kind"]]
    return {
        "r": r,
        "verdict": rep.verdict.value,
        "definiteness": rep.internal.definiteness.value,
        "max_eigenvalue": rep.internal.max_eigenvalue if rep.internal.eigenvalues.size else None,
        "min_trait_margin": min(traits) if traits else None,
        "min_type_margin": min(types) if types else None,
        "witness": tag,
    }


def _map(fn, calls: list, jobs: int) -> list:
    if jobs <= 1 or len(calls) <= 1:
        return [fn(*c) for c in calls]
    with ProcessPoolExecutor(max_workers=min(jobs, len(calls))) as ex:
        futs = [ex.submit(fn, *c) for c in calls]
        return [f.result() for f in futs]


def find_flips(verdict_at, grid: list, verdicts: list, width: float) -> list:
    """Bracket every verdict change between neighbouring grid points and
    narrow it by bisection until the bracket is at most ``width`` wide."""
    flips = []
    for lo, hi, vlo, vhi in zip(grid, grid[1:], verdicts, verdicts[1:]):
        if vlo == vhi:
            continue
        a, b = lo, hi
        while b - a > width:
            mid = 0.5 * (a + b)
            if verdict_at(mid) == vlo:
                a = mid
            else:
                b = mid
        flips.append({"from": vlo, "to": vhi, "r_low": a, "r_high": b,
                      "grid_low": lo, "grid_high": hi})
    return flips


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    dyn = _dynamics(args, sc)
    x = resolve_state(sc, args.x0)
    grid = args.grid
    refine = not args.no_refine
    calls = [(sc.game, dyn, x.weights, r, args.tol, refine) for r in grid]
    rows = _map(_sweep_point, calls, _jobs(args))
    flips = find_flips(lambda r: _sweep_point(sc.game, dyn, x.weights, r, args.tol, refine)["verdict"],
                       grid, [row["verdict"] for row in rows], args.flip_width)
    cols = ["r", "verdict", "definiteness", "max_eigenvalue", "min_trait_margin", "min_type_margin", "witness"]
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append("" if v is None else _num(v) if isinstance(v, float) else str(v))
        buf.write(",".join(cells) + "\n")
    for f in flips:
        buf.write(f"# flip {f['from']}->{f['to']} in [{_num(f['r_low'])}, {_num(f['r_high'])}]\n")
    _emit(buf.getvalue(), args.out)
    if args.out:
        options = {"state": args.x0, "grid": grid, "tol": args.tol, "flip_width": args.flip_width,
                   "refine": refine, "dynamics": dyn}
        _sidecar_path(args.out).write_text(
            _report("sweep", args, sc, options, {"rows": rows, "flips": flips}), encoding="utf-8")
    return 0


def _jobs(args) -> int:
    return args.jobs if args.jobs else (os.cpu_count() or 1)


def cmd_basins(args) -> int:
    sc = load_scenario(args.scenario)
    r = _rate(args, sc)
    dyn = _dynamics(args, sc)
    seed = _resolve_seed(args)
    opts = _options(args)
    space = sc.game.space
    specs = args.targets.split(",") if args.targets else list(space.type_labels)
    targets = {}
    for spec in specs:
        spec = spec.strip()
        x = resolve_state(sc, spec)
        targets[spec] = _prepare(sc.game, x, r, dyn, not args.no_refine)
    res = basin_sample(sc.game, r, targets, args.n, seed, opts, jobs=_jobs(args),
                       dynamics=None if dyn == "recombinator" else dyn)
    buf = io.StringIO()
    buf.write(",".join([f"x0({lab})" for lab in space.type_labels] + ["label"]) + "\n")
    for w, lab in zip(res.samples, res.labels):
        buf.write(",".join([_num(v) for v in w] + [lab]) + "\n")
    shares = res.shares()
    buf.write("# shares " + " ".join(f"{k}={_num(v)}" for k, v in shares.items()) + "\n")
    _emit(buf.getvalue(), args.out)
    if args.out:
        result = {
            "n": args.n,
            "shares": shares,
            "targets": {k: {lab: float(v) for lab, v in zip(space.type_labels, x.weights) if v > 0}
                        for k, x in targets.items()},
            "unconverged": int(np.sum(~res.converged)),
        }
        options = {"r": r, "n": args.n, "dt": opts.dt, "t_max": opts.t_max,
                   "convergence_eps": opts.convergence_eps, "dynamics": dyn}
        _sidecar_path(args.out).write_text(_report("basins", args, sc, options, result, seed),
                                           encoding="utf-8")
    return 0


def cmd_partner(args) -> int:
    sc = load_scenario(args.scenario)
    r = _rate(args, sc)
    dyn = _dynamics(args, sc)
    game = sc.game
    x = _prepare(game, resolve_state(sc, args.x0), r, dyn, not args.no_refine)
    d, i = game.space.find_trait(args.trait)
    if dyn == "recombinator":
        eta = stable_partner_distribution(game, x, d, i, r)
        ux = float(x.weights @ (game.payoff @ x.weights))
        result = {
            "trait": args.trait,
            "dimension": d,
            "eta": eta.as_dict(),
            "z0": eta.z0,
            "invading_payoff": float(eta.weights @ eta.payoffs),
            "mean_payoff": ux,
            "fixed_point_residual": eta.fixed_point_residual(),
        }
    else:
        from .general import generalized_partner_distribution, get_pair

        partners, Ur, _ = generalized_partner_distribution(get_pair(dyn), game, x, d, i, r)
        result = {"trait": args.trait, "dimension": d, "eta": partners, "z0": None,
                  "invading_payoff": Ur, "mean_payoff": 1.0, "fixed_point_residual": None}
    options = {"r": r, "state": args.x0, "dynamics": dyn}
    _emit(_report("partner", args, sc, options, result), args.out)
    return 0


def cmd_examples(args) -> int:
    if args.name:
        _emit(builtin_text(args.name), args.out)
        return 0
    lines = []
    for name in builtin_names():
        sc = load_scenario(name)
        lines.append(f"{name}\t{sc.description or ''}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recomb", description="Multi-dimensional recombinator dynamics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, rate=True, state=True, integ=False, dyn=True):
        sp.add_argument("scenario", help="scenario file or built-in name (see 'recomb examples')")
        if rate:
            sp.add_argument("--r", type=_unit_interval, default=None,
                            help="recombination rate in [0, 1] (default: the scenario's r)")
        if state:
            sp.add_argument("--x0", "--state", dest="x0", required=True,
                            help="named state, 'uniform', a type label, or comma-separated weights")
        if integ:
            sp.add_argument("--dt", type=_positive, default=0.01, help="RK4 step (default 0.01)")
            sp.add_argument("--tmax", type=_positive, default=2000.0, help="time horizon (default 2000)")
            sp.add_argument("--eps", type=_positive, default=1e-9,
                            help="stop when the sup norm of the field drops below this (default 1e-9)")
        if dyn:
            sp.add_argument("--dynamics", default=None,
                            help="recombinator | g-family:b=<real> | single-dim-imitation")
        sp.add_argument("--out", default=None, help="output file (default stdout)")

    s = sub.add_parser("simulate", help="integrate a trajectory and write it as CSV")
    common(s, integ=True)
    s.add_argument("--record-every", type=_count, default=10, help="keep every k-th step (default 10)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("classify", help="stability verdict for a stationary state (JSON)")
    common(s)
    s.add_argument("--tol", type=_positive, default=1e-7)
    s.add_argument("--no-refine", action="store_true", help="skip Newton refinement of the state")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("sweep", help="verdicts over a grid of r values (CSV)")
    common(s, rate=False)
    s.add_argument("--grid", type=parse_grid, default=parse_grid("0:1:0.05"),
                   help="start:stop:step or r1,r2,... (default 0:1:0.05)")
    s.add_argument("--flip-width", type=_positive, default=1e-3,
                   help="bisect verdict changes down to this width (default 1e-3)")
    s.add_argument("--tol", type=_positive, default=1e-7)
    s.add_argument("--no-refine", action="store_true")
    s.add_argument("--jobs", type=_count, default=None, help="worker processes (default: CPU count)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("basins", help="label random initial states by their limit (CSV)")
    common(s, state=False, integ=True)
    s.add_argument("--n", type=_count, default=1000, help="number of samples (default 1000)")
    s.add_argument("--seed", type=_seed, default=None, help="RNG seed (default: $RECOMB_SEED, else 0)")
    s.add_argument("--targets", default=None,
                   help="comma-separated stationary states to label by (default: every pure state)")
    s.add_argument("--no-refine", action="store_true")
    s.add_argument("--jobs", type=_count, default=None, help="worker processes (default: CPU count)")
    s.set_defaults(func=cmd_basins)

    s = sub.add_parser("partner", help="stable partner distribution of an absent trait (JSON)")
    common(s)
    s.add_argument("--trait", required=True, help="label of the invading trait")
    s.add_argument("--no-refine", action="store_true")
    s.set_defaults(func=cmd_partner)

    s = sub.add_parser("examples", help="list built-in scenarios or print one")
    s.add_argument("name", nargs="?", default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_examples)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except RecombError as e:
        print(f"recomb: error: {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"recomb: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

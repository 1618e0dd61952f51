"""Batch command line: solve | simulate | game | verify | converge.

Exit codes: 0 success, 2 invalid input or failed checks, 1 internal error,
64 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .game import StoppingRule, dpp_residual, estimate_value_pair, extract_policies, \
    precommitment_sweep
from .grid import Grid, ValueField
from .problem import ConstantGain, NonConformingProblemError, validate_problem
from .qvi import Scheme, convergence_study, solve
from .sde import estimate_gain, simulate_path
from .verify import (DiscountedConstants, Verdict, bound_and_obstacle_check,
                     discount_transform_check, discrete_comparison, intervention_properties,
                     obstacle_consistency, strict_supersolution_residual)

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID, EXIT_USAGE = 0, 1, 2, 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="impulsegame", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("solve", "simulate", "game", "verify", "converge"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out", default="out")
        s.add_argument("--seed", type=int)
        s.add_argument("--q", type=int)
        s.add_argument("--rho", type=float)
        s.add_argument("--lambda", dest="lam", type=float)
        s.add_argument("--workers", type=int)
    return p


class _Run:
    def __init__(self, command: str, cfg: RunConfig, out: str):
        self.command, self.cfg, self.out = command, cfg, out
        self.files: list[str] = []
        self.extra: dict = {}
        os.makedirs(out, exist_ok=True)

    def path(self, name: str) -> str:
        p = os.path.join(self.out, name)
        self.files.append(name)
        return p

    def add(self, paths) -> None:
        for p in paths:
            self.files.append(os.path.relpath(p, self.out))

    def write_json(self, name: str, doc) -> None:
        with open(self.path(name), "w") as fh:
            fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")

    def manifest(self, elapsed: float) -> None:
        doc = {"command": self.command, "config_hash": self.cfg.hash, "seed": self.cfg.seed,
               "version": __version__, "timing": {"seconds": elapsed},
               "outputs": sorted(self.files + ["config.json"]), **self.extra}
        self.cfg.dump(os.path.join(self.out, "config.json"))
        with open(os.path.join(self.out, "manifest.json"), "w") as fh:
            fh.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def _solve(run: _Run):
    spec = run.cfg.spec()
    grid = run.cfg.grid(spec)
    zg = run.cfg.impulse_grid(spec, grid)
    scheme = run.cfg.scheme()
    if scheme.rho > 0 and spec.data_rate == 0:
        spec = spec.discounted(scheme.rho)
        zg = zg.with_spec(spec)
    sol = solve(spec, grid, zg, scheme)
    run.extra["solution_id"] = sol.id
    return sol


def _validate(run: _Run) -> bool:
    spec = run.cfg.spec()
    try:
        report = validate_problem(spec, seed=run.cfg.seed)
    except NonConformingProblemError as exc:
        run.write_json("validation.json", {"passed": False, "error": str(exc)})
        return False
    run.write_json("validation.json", report.to_dict())
    return report.passed


def cmd_solve(run: _Run) -> int:
    if not _validate(run):
        return EXIT_INVALID
    sol = _solve(run)
    run.add(sol.to_csv(run.out))
    return EXIT_OK


def _x0(cfg) -> np.ndarray:
    return np.asarray(cfg.doc["simulation"]["x0"], dtype=float)


def cmd_simulate(run: _Run) -> int:
    if not _validate(run):
        return EXIT_INVALID
    sol = _solve(run)
    pol = extract_policies(sol)
    sim = run.cfg.doc["simulation"]
    x0, q = _x0(run.cfg), int(sim["q"])
    est = estimate_gain(sol.spec, x0, 0, pol.diffusion, pol.impulse, q, sol.grid.nt,
                        int(sim["paths"]), run.cfg.seed, workers=int(sim["workers"]))
    run.write_json("estimate.json", est.to_dict())
    path = simulate_path(sol.spec, x0, 0, pol.diffusion, pol.impulse, q, sol.grid.nt,
                         run.cfg.seed)
    path.to_csv(run.path("path.csv"))
    return EXIT_OK


def cmd_game(run: _Run) -> int:
    if not _validate(run):
        return EXIT_INVALID
    sol = _solve(run)
    pol = extract_policies(sol)
    sim, game = run.cfg.doc["simulation"], run.cfg.doc["game"]
    x0, n, seed, workers = _x0(run.cfg), int(sim["paths"]), run.cfg.seed, int(sim["workers"])
    pair = estimate_value_pair(sol.spec, x0, pol, int(sim["q"]), None, n, seed,
                               workers=workers)
    u0 = float(sol.layer(0)(x0.reshape(1, -1))[0])
    run.write_json("value_pair.json", {
        "x0": x0.tolist(), "q": pair.q, "u0": u0, "v_plus": pair.v_plus,
        "se_plus": pair.se_plus, "v_minus": pair.v_minus, "se_minus": pair.se_minus,
        "worst_adversary": pair.worst, "solution_id": pol.solution_id})
    table = precommitment_sweep(sol.spec, x0, game["q_values"], sol, n, seed, workers=workers)
    table.to_csv(run.path("q_sweep.csv"))
    rule = StoppingRule(**game["rule"])
    dpp = dpp_residual(sol.spec, sol, x0, rule, n, seed, degrade=bool(game["degrade"]),
                       workers=workers)
    dpp.to_csv(run.path("dpp.csv"))
    return EXIT_OK


def cmd_verify(run: _Run) -> int:
    if not _validate(run):
        return EXIT_INVALID
    cfg = run.cfg
    spec, scheme = cfg.spec(), cfg.scheme()
    grid = cfg.grid(spec)
    zg = cfg.impulse_grid(spec, grid)
    vcfg = cfg.doc["verify"]
    verdicts = []
    base = solve(spec, grid, zg, scheme)
    verdicts += bound_and_obstacle_check(base)
    verdicts.append(obstacle_consistency(base))
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    op_fail = []
    for trial in range(int(vcfg["trials"])):
        u = ValueField(grid, rng.uniform(-1, 1, grid.size))
        w = ValueField(grid, rng.uniform(-1, 1, grid.size))
        t = float(rng.choice(grid.times_float))
        op_fail += [v for v in intervention_properties(u, w, t, zg) if not v.passed]
    verdicts.append(Verdict("intervention_properties", not op_fail,
                            op_fail[0].worst_node if op_fail else None,
                            min((v.margin for v in op_fail), default=0.0)))
    rho = float(vcfg["rho"])
    dspec = spec.discounted(rho)
    dsol = solve(dspec, grid, zg.with_spec(dspec),
                 Scheme(scheme.time_stepping, scheme.eps_pi, scheme.n_obs, rho,
                        scheme.max_policy_iter))
    consts = DiscountedConstants.from_spec(spec, rho)
    for lam in vcfg["lambdas"]:
        verdicts.append(strict_supersolution_residual(dsol, float(lam), consts).verdict())
    verdicts.append(discount_transform_check(spec, grid, zg, rho, scheme)[0])
    shift = float(vcfg["shift"])
    g2 = spec.terminal
    if hasattr(g2, "offset"):
        g1 = dataclasses.replace(g2, offset=g2.offset - shift)
    else:
        g1 = ConstantGain(value=-g2.base_sup() - shift)
    verdicts += discrete_comparison(spec, grid, zg, scheme, g1, g2).verdicts()
    with open(run.path("verdicts.jsonl"), "w") as fh:
        for v in verdicts:
            fh.write(json.dumps(v.to_dict(), sort_keys=True) + "\n")
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_INVALID


def cmd_converge(run: _Run) -> int:
    if not _validate(run):
        return EXIT_INVALID
    cfg = run.cfg
    spec = cfg.spec()
    c = cfg.doc["convergence"]
    g0 = cfg.grid(spec)
    grids = [Grid(g0.xlo, g0.xhi, int(c["nx"]), int(c["nt"]), spec.T, g0.d, g0.boundary)]
    for _ in range(int(c["levels"]) - 1):
        grids.append(grids[-1].refine())
    table = convergence_study(spec, cfg.scheme(), grids)
    table.to_csv(run.path("convergence.csv"))
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "game": cmd_game,
            "verify": cmd_verify, "converge": cmd_converge}


def run_command(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help exits 0, usage errors 64
        return int(exc.code or 0)
    if not os.path.isfile(args.config):
        print(f"impulsegame: config file not found: {args.config}", file=sys.stderr)
        return EXIT_INVALID
    try:
        cfg = RunConfig.load(args.config)
        cfg.override("simulation", "q", args.q)
        cfg.override("scheme", "rho", args.rho)
        cfg.override("simulation", "workers", args.workers)
        if args.seed is not None:
            cfg.doc["seed"] = args.seed
        if args.lam is not None:
            cfg.doc["verify"]["lambdas"] = [args.lam]
        if args.command == "verify" and args.rho is not None:
            cfg.doc["verify"]["rho"] = args.rho
            cfg.doc["scheme"]["rho"] = 0.0
        cfg.scheme()
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"impulsegame: invalid config {args.config}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    run = _Run(args.command, cfg, args.out)
    start = time.perf_counter()
    try:
        code = COMMANDS[args.command](run)
    except (ConfigError, NonConformingProblemError, ValueError) as exc:
        print(f"impulsegame: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - reported as internal error
        print(f"impulsegame: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    run.manifest(time.perf_counter() - start)
    return code


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()

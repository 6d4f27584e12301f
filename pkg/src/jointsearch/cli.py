"""Command-line entry point.

    jointsearch run CONFIG [--output PATH]
    jointsearch worker --connect HOST:PORT --command CMD [--capacity N]
    jointsearch analyze HISTORY (--correlations | --fanova BUDGET | --incumbent
                                 | --marginal P [P ...] --budget B) [--format csv|json]
    jointsearch space NAME

Exit status: 0 on success, 2 on usage errors, 1 on runtime failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Any

from . import __version__
from .analysis import budget_correlation_table, fanova_importance, fit_surrogate, marginal_curve
from .analysis.export import (correlations_csv, correlations_json, importance_csv, importance_json,
                              marginal_csv, trajectory_csv)
from .analysis.forest import ForestParams
from .bench import make_benchmark
from .engine import StoppingCondition, VirtualClock, WallClock, run
from .exec import (MasterServer, RemoteExecutor, SubprocessExecutor, evaluator_timeout,
                   run_subprocess_evaluator, run_worker)
from .exec.net import parse_address, wait_for_workers
from .history import incumbent_trajectory, read_history
from .sampler import SamplerParams
from .scheduler import geometric_budgets
from .space import SearchSpace, builtin_space, load_space

log = logging.getLogger("jointsearch")

BACKENDS = ("benchmark", "evaluator", "workers")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    space: SearchSpace
    backend: str
    backend_spec: Any
    b_min: float
    b_max: float
    eta: float = 3
    sampler: SamplerParams = field(default_factory=SamplerParams)
    stop: StoppingCondition | None = None
    max_brackets: int | None = None
    seed: int = 0
    output: str = "history.ndjson"
    budget_unit: str = "s"
    clock: str = "virtual"


def _resolve_space(spec, base_dir: str) -> SearchSpace:
    if isinstance(spec, dict):
        return SearchSpace.from_dict(spec)
    if not isinstance(spec, str):
        raise ConfigError("space must be a built-in name, a path or an inline document")
    path = spec if os.path.isabs(spec) else os.path.join(base_dir, spec)
    if os.path.exists(path):
        return load_space(path)
    return builtin_space(spec)


def load_run_config(path: str) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    known = {"space", *BACKENDS, "b_min", "b_max", "eta", "sampler", "stop", "max_brackets",
             "seed", "output", "budget_unit", "clock"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    backends = [b for b in BACKENDS if b in doc]
    if len(backends) != 1:
        raise ConfigError(f"specify exactly one of {BACKENDS}, got {backends}")
    backend = backends[0]
    base_dir = os.path.dirname(os.path.abspath(path))
    try:
        b_min, b_max = float(doc["b_min"]), float(doc["b_max"])
    except KeyError as exc:
        raise ConfigError(f"missing {exc.args[0]}") from None
    seed = int(doc.get("seed", 0))
    if backend == "benchmark":
        bench = make_benchmark(doc["benchmark"], b_max, seed)
        space = _resolve_space(doc["space"], base_dir) if "space" in doc else bench.space()
        spec = bench
    else:
        if "space" not in doc:
            raise ConfigError("space is required for evaluator and worker backends")
        space = _resolve_space(doc["space"], base_dir)
        spec = doc[backend]
        if not isinstance(spec, dict):
            raise ConfigError(f"{backend} must be an object")
    stop = StoppingCondition.from_dict(doc["stop"]) if "stop" in doc else None
    max_brackets = doc.get("max_brackets")
    if stop is None and max_brackets is None:
        raise ConfigError("give a stop condition or max_brackets")
    output = doc.get("output", "history.ndjson")
    return RunConfig(
        space=space, backend=backend, backend_spec=spec, b_min=b_min, b_max=b_max,
        eta=doc.get("eta", 3), sampler=SamplerParams.from_dict(doc.get("sampler", {})),
        stop=stop, max_brackets=max_brackets, seed=seed,
        output=output if os.path.isabs(output) else os.path.join(base_dir, output),
        budget_unit=doc.get("budget_unit", "s"),
        clock=doc.get("clock", "virtual" if backend == "benchmark" else "wall"),
    )


def cmd_run(args) -> int:
    cfg = load_run_config(args.config)
    output = args.output or cfg.output
    ladder = geometric_budgets(cfg.b_min, cfg.b_max, cfg.eta)
    clock = VirtualClock() if cfg.clock == "virtual" else WallClock()
    server = None
    if cfg.backend == "benchmark":
        evaluator = cfg.backend_spec
    elif cfg.backend == "evaluator":
        spec = cfg.backend_spec
        evaluator = SubprocessExecutor(spec["command"], int(spec.get("parallelism", 1)),
                                       float(spec.get("timeout_factor", 3.0)),
                                       float(spec.get("timeout_grace", 60.0)))
    else:
        spec = cfg.backend_spec
        host, port = parse_address(spec.get("listen", "127.0.0.1:0"))
        server = MasterServer(host, port).start()
        print(f"listening on {server.address[0]}:{server.address[1]}", file=sys.stderr, flush=True)
        if not wait_for_workers(server, int(spec.get("min_workers", 1)), float(spec.get("wait", 60))):
            server.close()
            raise RuntimeError("no worker registered in time")
        evaluator = RemoteExecutor(server)
    meta = {"backend": cfg.backend, "budget_unit": cfg.budget_unit}
    try:
        history = run(cfg.space, ladder, cfg.sampler, evaluator, cfg.stop, cfg.seed,
                      history_path=output, clock=clock, max_brackets=cfg.max_brackets,
                      overlap_brackets=cfg.backend != "benchmark", budget_unit=cfg.budget_unit,
                      meta=meta)
    finally:
        if cfg.backend != "benchmark":
            evaluator.close()
    traj = incumbent_trajectory(history)
    best = f"{traj[-1].loss:.6g}" if traj else "n/a"
    print(f"wrote {len(history)} observations to {output}; incumbent loss at "
          f"budget {ladder.b_max:g}: {best}", file=sys.stderr)
    return 0


def cmd_worker(args) -> int:
    def evaluate(request):
        return run_subprocess_evaluator(args.command, request, evaluator_timeout(request.budget))

    run_worker(args.connect, evaluate, worker_id=args.worker_id, capacity=args.capacity,
               heartbeat_interval=args.heartbeat)
    return 0


def _write(text: str, output: str | None) -> None:
    if output:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _match_budget(history, value: float) -> float:
    for b in history.budgets():
        if abs(b - value) <= 1e-9 * max(1.0, abs(b)):
            return b
    raise ValueError(f"budget {value:g} not in history (have {history.budgets()})")


def cmd_analyze(args) -> int:
    history = read_history(args.history)
    fmt = args.format
    forest = ForestParams(n_trees=args.trees, seed=args.seed)
    if args.correlations:
        table = budget_correlation_table(history)
        _write(correlations_json(table) if fmt == "json" else correlations_csv(table), args.output)
    elif args.fanova is not None:
        budget = _match_budget(history, args.fanova)
        report = fanova_importance(fit_surrogate(history, budget, forest), history.space, budget=budget)
        _write(importance_csv(report) if fmt == "csv" else importance_json(report) + "\n", args.output)
    elif args.incumbent:
        _write(trajectory_csv(incumbent_trajectory(history, args.budget)), args.output)
    else:
        if args.budget is None:
            raise ValueError("--marginal needs --budget")
        budget = _match_budget(history, args.budget)
        surrogate = fit_surrogate(history, budget, forest)
        best = min(history.successful(budget), key=lambda o: o.loss).config
        curve = marginal_curve(surrogate, history.space, args.marginal, args.grid_size, best)
        _write(marginal_csv(curve), args.output)
    return 0


def cmd_space(args) -> int:
    _write(builtin_space(args.name).serialize() + "\n", args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointsearch",
                                     description="Multi-fidelity joint architecture and hyperparameter search.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an optimization from a configuration document")
    p.add_argument("config")
    p.add_argument("--output", help="history file (overrides the configuration)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("worker", help="serve evaluations for a remote master")
    p.add_argument("--connect", required=True, metavar="HOST:PORT")
    p.add_argument("--command", required=True, help="evaluator command (line protocol)")
    p.add_argument("--capacity", type=int, default=1)
    p.add_argument("--worker-id")
    p.add_argument("--heartbeat", type=float, default=5.0, help="heartbeat interval in seconds")
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("analyze", help="analysis reports from a history file")
    p.add_argument("history")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--correlations", action="store_true")
    what.add_argument("--fanova", type=float, metavar="BUDGET")
    what.add_argument("--incumbent", action="store_true")
    what.add_argument("--marginal", nargs="+", metavar="PARAM")
    p.add_argument("--budget", type=float)
    p.add_argument("--grid-size", type=int, default=20)
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--trees", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("space", help="print a built-in search space document")
    p.add_argument("name")
    p.add_argument("--output")
    p.set_defaults(func=cmd_space)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        log.debug("command failed", exc_info=True)
        print(f"jointsearch: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point (``varsel``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dot import ModelView, export_an_dot, export_ean_dot, export_model_dot
from .encapsulation import EncapsulationError, encapsulate
from .environment import EMPTY, SmrEnvironment, SpecError, bsv_names, load_spec
from .harness import ExperimentConfig, run_experiment
from .learning import StepLogger, build_model, process_environment_step
from .model import Model, ModelError
from .planning import ActionNetwork, TargetTag, plan
from .significance import nce_table_csv

log = logging.getLogger("varsel")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load_model(path: str) -> Model:
    return Model.from_dict(json.loads(Path(path).read_text()))


def _parse_goal(text: str) -> tuple[str, TargetTag]:
    sv, _, tag = text.partition(":")
    return sv, TargetTag(tag or "1")


def _model_at(model: Model, cells: list[str], extra: list[str]) -> Model:
    """Copy of ``model`` whose current step shows ``cells`` with no fresh events."""
    obs = {b.name: False for b in model.bsvs.values()}
    wanted = [f"{cell}{held}" for cell, held in zip((1, 2), cells) if held != EMPTY] + list(extra)
    unknown = sorted(set(wanted) - set(obs))
    if unknown:
        raise ModelError(f"observation names not in the model: {unknown}")
    obs.update({name: True for name in wanted})
    snap = model.copy()
    process_environment_step(snap, obs, learning_enabled=False)
    process_environment_step(snap, obs, learning_enabled=False)
    return snap


# ---------------------------------------------------------------- commands
def cmd_learn(args) -> int:
    spec = load_spec(args.env)
    if args.random_variant:
        spec = spec.with_random_variant()
    states, actions = bsv_names(spec)
    model = build_model(states, actions)
    env = SmrEnvironment(spec, args.seed)
    rng = np.random.default_rng(args.seed)
    eps = args.epsilon if args.significance else None
    logger = None
    stream = None
    if args.log:
        stream = open(args.log, "w")
        logger = StepLogger(stream)
    try:
        rep = process_environment_step(model, env.reset().observations, epsilon=eps)
        if logger:
            logger(rep)
        for _ in range(args.steps):
            res = env.step(int(rng.integers(spec.n_actions)))
            rep = process_environment_step(model, res.observations, epsilon=eps)
            if logger:
                logger(rep)
    finally:
        if stream:
            stream.close()
    _emit(json.dumps(model.to_dict(), indent=1, sort_keys=True) + "\n", args.out)
    log.info("learned %d CSVs over %d steps", len(model.csvs), args.steps)
    return 0


def _network(args) -> ActionNetwork:
    model = _load_model(args.model)
    snap = _model_at(model, args.cells, args.active or [])
    return plan(snap, None, [_parse_goal(args.goal)])


def cmd_plan(args) -> int:
    net = _network(args)
    if args.json:
        _emit(json.dumps(net.to_dict(), indent=1) + "\n", args.out)
    else:
        _emit(export_an_dot(net, include_dead_ends=not args.prune), args.out)
    if not net.goal_reachable():
        log.warning("goal not reachable from the given state")
    return 0


def cmd_encapsulate(args) -> int:
    if args.an:
        net = ActionNetwork.from_dict(json.loads(Path(args.an).read_text()))
    elif args.model:
        net = _network(args)
    else:
        raise SystemExit("encapsulate needs --an or --model")
    ean = encapsulate(net, max_alternatives=args.max_alternatives)
    _emit(export_ean_dot(ean, with_subpolicies=args.subpolicies), args.out)
    return 0


def cmd_experiment(args) -> int:
    overrides = dict(
        protocol=args.protocol,
        seed=args.seed,
        n_trials=args.trials,
        phase_lengths=tuple(args.steps) if args.steps else None,
        exploration_rate=args.exploration,
        env_spec=args.env_spec,
        random_variant=args.random_variant or None,
        significance_enabled=args.significance or None,
        epsilon=args.epsilon,
        workers=args.workers,
        output=args.out,
    )
    overrides = {k: v for k, v in overrides.items() if v is not None}
    doc = dict(args.experiment_config or {})
    doc.update(overrides)
    config = ExperimentConfig(**doc)
    report = run_experiment(config)
    if not config.output:
        sys.stdout.write(json.dumps(report["table"], indent=2, sort_keys=True) + "\n")
    return 0


def cmd_export(args) -> int:
    model = _load_model(args.model)
    _emit(export_model_dot(model, ModelView(args.mode), args.sv), args.out)
    return 0


def cmd_nce(args) -> int:
    _emit(nce_table_csv(_load_model(args.model)), args.out)
    return 0


# ------------------------------------------------------------------ parser
def _common(p: argparse.ArgumentParser, seed: int | None = 0) -> None:
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--config", help="YAML file of option defaults")
    p.add_argument("-o", "--out", help="output file (default: stdout)")


def _state_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="model checkpoint (JSON)")
    p.add_argument("--cells", nargs=2, default=[EMPTY, EMPTY], metavar=("CELL1", "CELL2"))
    p.add_argument("--active", nargs="*", help="extra BSVs active now, e.g. R1")
    p.add_argument("--goal", default="1G:1", help="goal as SV:TAG with TAG in A, D, 1, 0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varsel", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("learn", help="learn a model from random interaction")
    _common(p)
    p.add_argument("--env", default="complete")
    p.add_argument("--steps", type=int, default=4000)
    p.add_argument("--random-variant", action="store_true")
    p.add_argument("--significance", action="store_true")
    p.add_argument("--epsilon", type=float, default=0.25)
    p.add_argument("--log", help="JSONL step log")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("plan", help="action network DOT for a state")
    _common(p)
    _state_args(p)
    p.add_argument("--json", action="store_true", help="write the network as JSON")
    p.add_argument("--prune", action="store_true", help="leave out dead ends")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("encapsulate", help="encapsulated network DOT")
    _common(p)
    _state_args(p)
    p.add_argument("--an", help="action network JSON from 'plan --json'")
    p.add_argument("--subpolicies", action="store_true")
    p.add_argument("--max-alternatives", type=int, default=4096)
    p.set_defaults(func=cmd_encapsulate)

    p = sub.add_parser("experiment", help="run an experiment protocol")
    _common(p, seed=None)
    p.add_argument("protocol", choices=["base", "continual", "readapt", "random"])
    p.add_argument("--trials", type=int)
    p.add_argument("--steps", type=int, nargs="+", help="phase lengths")
    p.add_argument("--exploration", type=float)
    p.add_argument("--env-spec", help="YAML spec replacing the Complete subtype")
    p.add_argument("--random-variant", action="store_true")
    p.add_argument("--significance", action="store_true")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("export", help="export a model")
    exp = p.add_subparsers(dest="what", required=True)
    q = exp.add_parser("model", help="model DOT")
    _common(q)
    q.add_argument("--model", required=True)
    q.add_argument("--mode", choices=[m.value for m in ModelView], default="full")
    q.add_argument("--sv", help="SV name for the pathway view")
    q.set_defaults(func=cmd_export)

    p = sub.add_parser("nce", help="NCE tables")
    nce_sub = p.add_subparsers(dest="what", required=True)
    q = nce_sub.add_parser("dump", help="per (CSV, target) NCE as CSV")
    _common(q)
    q.add_argument("--model", required=True)
    q.set_defaults(func=cmd_nce)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    args.experiment_config = None
    if not getattr(args, "config", None):
        return args
    doc = yaml.safe_load(Path(args.config).read_text()) or {}
    if not isinstance(doc, dict):
        raise SystemExit("config file must hold a mapping")
    if args.command == "experiment":
        args.experiment_config = doc
        return args
    given = {a.lstrip("-").split("=")[0].replace("-", "_") for a in (argv or sys.argv[1:]) if a.startswith("--")}
    for key, value in doc.items():
        key = key.replace("-", "_")
        if not hasattr(args, key):
            raise SystemExit(f"unknown config key {key!r}")
        if key not in given:
            setattr(args, key, value)
    return args


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SpecError, ModelError, EncapsulationError, ValueError, OSError) as exc:
        print(f"varsel: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

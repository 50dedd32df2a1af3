"""Experiment protocols on the two-cell environment.

Every protocol is a schedule of phases.  A phase names an environment
subtype, a step budget, how actions are chosen (random or planned) and
whether the model keeps learning.  A phase ends at the first episode end
after its budget is spent, so episodes never straddle two phases.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from .environment import RANDOM_BSVS, FsmSpec, SmrEnvironment, bsv_names, load_spec
from .learning import StepReport, build_model, process_environment_step
from .model import Model
from .planning import OutcomeMemory, TargetTag, choose_action, plan

log = logging.getLogger(__name__)

REPORT_FORMAT = "varsel-report"
REPORT_VERSION = 1


class Protocol(Enum):
    BASE = "base"
    CONTINUAL = "continual"
    READAPT = "readapt"
    RANDOM = "random"


@dataclass
class ExperimentConfig:
    protocol: str = "base"
    seed: int = 0
    n_trials: int = 5
    phase_lengths: tuple[int, ...] = ()
    subtypes: tuple[str, ...] = ()
    exploration_rate: float = 0.1
    env_spec: str | None = None
    random_variant: bool = False
    significance_enabled: bool | None = None
    epsilon: float = 0.25
    goal: str = "1G"
    workers: int = 1
    max_wait_factor: float | None = None
    output: str | None = None

    def __post_init__(self) -> None:
        self.protocol = Protocol(self.protocol).value
        self.phase_lengths = tuple(int(x) for x in self.phase_lengths)
        self.subtypes = tuple(self.subtypes)
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if any(x <= 0 for x in self.phase_lengths):
            raise ValueError("phase lengths must be positive")
        if not 0.0 <= self.exploration_rate <= 1.0:
            raise ValueError("exploration_rate must lie in [0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.significance_enabled is None:
            self.significance_enabled = self.random_variant

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        doc = yaml.safe_load(Path(path).read_text()) or {}
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)


@dataclass(frozen=True)
class Phase:
    label: str
    subtype: str
    steps: int
    planning: bool
    learning: bool = True


@dataclass
class EpisodeLog:
    trial: int
    phase: str
    episode: int
    duration: int
    n_csvs: int


@dataclass
class TrialResult:
    trial: int
    episodes: list[EpisodeLog] = field(default_factory=list)
    phase_steps: dict[str, int] = field(default_factory=dict)
    nl_hash_constant: dict[str, bool] = field(default_factory=dict)
    random_conditioner_steps: list[int] = field(default_factory=list)
    truncated_phases: list[str] = field(default_factory=list)
    final_csvs: int = 0


# ------------------------------------------------------------- schedules
def schedule(config: ExperimentConfig) -> list[Phase]:
    proto = Protocol(config.protocol)
    if proto is Protocol.BASE:
        lengths = config.phase_lengths or (4000, 4000)
        sub = (config.subtypes or ("Complete",))[0]
        return [
            Phase("No goal", sub, lengths[0], planning=False),
            Phase("With goal", sub, lengths[-1], planning=True),
        ]
    subs = config.subtypes or ("RS", "SGS", "NEG", "RS", "SGS")
    if proto is Protocol.READAPT:
        lengths = config.phase_lengths or (500,)
        return [
            Phase(f"{s}-{i + 1}", s, lengths[min(i, len(lengths) - 1)], planning=True)
            for i, s in enumerate(subs)
        ]
    lengths = config.phase_lengths or (1000,)
    seen: set[str] = set()
    phases = []
    for i, s in enumerate(subs):
        step_n = lengths[min(i, len(lengths) - 1)]
        if proto is Protocol.RANDOM:
            phases.append(Phase(f"{s}-{i + 1}", s, step_n, planning=False, learning=False))
            continue
        learning = s not in seen
        seen.add(s)
        phases.append(Phase(f"{s}-{'L' if learning else 'NL'}", s, step_n, True, learning))
    return phases


# ----------------------------------------------------------------- agent
class Agent:
    """A model plus the planner, fed one observation per step."""

    def __init__(
        self,
        spec: FsmSpec,
        rng: np.random.Generator,
        exploration_rate: float = 0.1,
        epsilon: float | None = None,
        goal: str = "1G",
    ):
        states, actions = bsv_names(spec)
        self.model = build_model(states, actions)
        self.rng = rng
        self.exploration_rate = exploration_rate
        self.epsilon = epsilon
        self.goal = [(goal, TargetTag.ONE)]
        self.n_actions = len(actions)
        self.memory = OutcomeMemory()

    def observe(self, observations: dict, learning: bool = True) -> StepReport:
        report = process_environment_step(
            self.model, observations, learning_enabled=learning, epsilon=self.epsilon
        )
        self.memory.update(self.model)
        return report

    def random_action(self) -> int:
        return int(self.rng.integers(self.n_actions))

    def planned_action(self) -> int:
        net = plan(self.model, None, self.goal)
        a = choose_action(net, self.model, self.rng, self.exploration_rate, self.memory)
        return int(self.model.name(a)[1:])


def _random_event_csvs(model: Model) -> set[int]:
    rand_dsvs = set()
    for name in RANDOM_BSVS:
        if name in model.by_name:
            b = model.bsvs[model.by_name[name]]
            rand_dsvs |= {b.dsv_activation, b.dsv_deactivation}
    return {c for c, x in model.csvs.items() if x.targets & rand_dsvs}


def _specs(config: ExperimentConfig, phases: Sequence[Phase]) -> dict[str, FsmSpec]:
    out = {}
    for ph in phases:
        if ph.subtype in out:
            continue
        if config.env_spec and ph.subtype == "Complete":
            spec = load_spec(config.env_spec)
        else:
            spec = load_spec(ph.subtype.lower())
        if config.random_variant:
            spec = spec.with_random_variant()
        out[ph.subtype] = spec
    return out


def run_trial(config: ExperimentConfig, trial: int, seed_seq: np.random.SeedSequence) -> TrialResult:
    phases = schedule(config)
    specs = _specs(config, phases)
    env_seed, agent_seed = seed_seq.spawn(2)
    first = specs[phases[0].subtype]
    env = SmrEnvironment(first, int(env_seed.generate_state(1)[0]))
    rng = np.random.default_rng(agent_seed)
    use_model = Protocol(config.protocol) is not Protocol.RANDOM
    eps = config.epsilon if config.significance_enabled else None
    agent = Agent(first, rng, config.exploration_rate, eps, config.goal)
    result = TrialResult(trial)

    obs = env.reset().observations
    if use_model:
        agent.observe(obs)
    step = 0
    episode = 0
    for ph in phases:
        env.set_spec(specs[ph.subtype])
        start_hash = agent.model.structure_hash() if use_model and not ph.learning else None
        limit = int(ph.steps * config.max_wait_factor) if config.max_wait_factor else None
        n = 0
        while True:
            if ph.planning and use_model and not env.restart_pending:
                action = agent.planned_action()
            else:
                action = agent.random_action()
            res = env.step(action)
            n += 1
            step += 1
            if use_model:
                rep = agent.observe(res.observations, learning=ph.learning)
                if rep.new_csv is not None and config.random_variant:
                    new = agent.model.csvs.get(rep.new_csv)
                    if new is not None and new.targets & _random_event_csvs(agent.model):
                        result.random_conditioner_steps.append(step)
            if res.goal_reached:
                result.episodes.append(
                    EpisodeLog(trial, ph.label, episode, res.episode_len, len(agent.model.csvs))
                )
                episode += 1
                if n >= ph.steps:
                    break
            if limit is not None and n >= limit:
                result.truncated_phases.append(ph.label)
                log.warning("trial %d: phase %s cut after %d steps", trial, ph.label, n)
                break
        result.phase_steps[ph.label] = n
        if start_hash is not None:
            result.nl_hash_constant[ph.label] = agent.model.structure_hash() == start_hash
    result.final_csvs = len(agent.model.csvs)
    return result


# --------------------------------------------------------------- reports
def _mean_std(values: Sequence[float]) -> dict:
    if not values:
        return {"mean": None, "std": None, "n": 0}
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}


def build_report(config: ExperimentConfig, trials: Sequence[TrialResult]) -> dict:
    labels = [ph.label for ph in schedule(config)]
    per_trial = []
    for t in trials:
        means = {}
        for lab in labels:
            d = [e.duration for e in t.episodes if e.phase == lab]
            means[lab] = float(np.mean(d)) if d else None
        per_trial.append(
            {
                "trial": t.trial,
                "phase_means": means,
                "phase_steps": t.phase_steps,
                "nl_hash_constant": t.nl_hash_constant,
                "random_conditioner_steps": t.random_conditioner_steps,
                "truncated_phases": t.truncated_phases,
                "final_csvs": t.final_csvs,
            }
        )
    table = {
        lab: _mean_std([p["phase_means"][lab] for p in per_trial if p["phase_means"][lab] is not None])
        for lab in labels
    }
    return {
        "format": REPORT_FORMAT,
        "version": REPORT_VERSION,
        "protocol": config.protocol,
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(config).items() if k != "output"},
        "columns": labels,
        "table": table,
        "trials": per_trial,
        "episodes": [asdict(e) for t in trials for e in t.episodes],
    }


def table_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["phase", "mean", "std", "n_trials", "formatted"])
    for lab in report["columns"]:
        row = report["table"][lab]
        fmt = "" if row["mean"] is None else f"{row['mean']:.2f} ({row['std']:.2f})"
        w.writerow([lab, row["mean"], row["std"], row["n"], fmt])
    return buf.getvalue()


def episodes_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trial", "phase", "episode", "duration", "n_csvs"])
    for e in report["episodes"]:
        w.writerow([e["trial"], e["phase"], e["episode"], e["duration"], e["n_csvs"]])
    return buf.getvalue()


def mean_curve(report: dict, phase_labels: Sequence[str] | None = None) -> dict[str, list[float]]:
    """Per phase, episode durations averaged across trials by episode index."""
    labels = phase_labels or report["columns"]
    out = {}
    for lab in labels:
        by_trial: dict[int, list[int]] = {}
        for e in report["episodes"]:
            if e["phase"] == lab:
                by_trial.setdefault(e["trial"], []).append(e["duration"])
        if not by_trial:
            out[lab] = []
            continue
        n = min(len(v) for v in by_trial.values())
        out[lab] = [float(np.mean([v[i] for v in by_trial.values()])) for i in range(n)]
    return out


def write_report(report: dict, output: str | Path) -> list[Path]:
    """Write ``<output>.json``, ``<output>.csv`` and ``<output>_episodes.csv``."""
    base = Path(output)
    if base.suffix in (".json", ".csv"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    paths = [base.with_suffix(".json"), base.with_suffix(".csv"), base.parent / f"{base.name}_episodes.csv"]
    paths[0].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    paths[1].write_text(table_csv(report))
    paths[2].write_text(episodes_csv(report))
    return paths


# ------------------------------------------------------------- protocols
def run_experiment(
    config: ExperimentConfig, progress: Callable[[int], None] | None = None
) -> dict:
    seqs = np.random.SeedSequence(config.seed).spawn(config.n_trials)
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(run_trial, config, i, s) for i, s in enumerate(seqs)]
            trials = [f.result() for f in futures]
    else:
        trials = []
        for i, s in enumerate(seqs):
            trials.append(run_trial(config, i, s))
            if progress is not None:
                progress(i)
    report = build_report(config, trials)
    if config.output:
        write_report(report, config.output)
    return report


def run_base_planning(config: ExperimentConfig) -> dict:
    return run_experiment(_with(config, protocol="base"))


def run_continual(config: ExperimentConfig, readapt: bool = False) -> dict:
    return run_experiment(_with(config, protocol="readapt" if readapt else "continual"))


def run_random_baseline(config: ExperimentConfig) -> dict:
    return run_experiment(_with(config, protocol="random"))


def _with(config: ExperimentConfig, **changes) -> ExperimentConfig:
    doc = asdict(config)
    doc.update(changes)
    return ExperimentConfig(**doc)

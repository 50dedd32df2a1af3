"""Two-cell finite-state-machine environment.

Each cell holds one of a few named states or is empty.  Transitions are read
from a YAML document (see ``data/*.yaml``) so that subtypes are plain data.
Observations are one BSV per (cell, state), one per action (the action taken
at the previous step) and, in the random variant, two extra BSVs that are
re-sampled every step.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np
import yaml

EMPTY = "-"
ANY = "*"
CELL_STATES = ("DO", "DC", "W", "G", "SG1", "SG2", "X")
SUBTYPES = ("Complete", "RS", "SGS", "NEG")
RANDOM_BSVS = ("R1", "R2")
_PROB_TOL = 1e-9


class SpecError(ValueError):
    """Invalid FSM specification."""


Cells = tuple[str, str]


@dataclass(frozen=True)
class Transition:
    pre: Cells
    action: str
    outcomes: tuple[tuple[Cells, float], ...]


@dataclass
class FsmSpec:
    name: str
    subtype: str
    states: tuple[str, ...]
    transitions: list[Transition]
    n_actions: int = 20
    goal: Cells = ("G", ANY)
    random_variant: bool = False
    random_activation_prob: float = 0.5
    _table: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        self._table = {(t.pre, t.action): t for t in self.transitions}

    @property
    def actions(self) -> list[str]:
        return [f"a{i}" for i in range(self.n_actions)]

    def lookup(self, cells: Cells, action: str) -> Transition | None:
        t = self._table.get((cells, action))
        if t is None:
            t = self._table.get((cells, ANY))
        return t

    def is_goal(self, cells: Cells) -> bool:
        return all(g == ANY or g == c for g, c in zip(self.goal, cells))

    def triples(self) -> set[tuple[Cells, str, Cells]]:
        """(pre, action, post) support of the transition relation."""
        return {(t.pre, t.action, post) for t in self.transitions for post, _ in t.outcomes}

    def with_random_variant(self, enabled: bool = True, prob: float | None = None) -> "FsmSpec":
        return FsmSpec(
            name=self.name + ("-random" if enabled else ""),
            subtype=self.subtype,
            states=self.states,
            transitions=list(self.transitions),
            n_actions=self.n_actions,
            goal=self.goal,
            random_variant=enabled,
            random_activation_prob=self.random_activation_prob if prob is None else prob,
        )


def _cells(raw, states: set[str], where: str) -> Cells:
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise SpecError(f"{where}: expected a pair of cell states, got {raw!r}")
    out = []
    for s in raw:
        s = str(s)
        if s != EMPTY and s not in states:
            raise SpecError(f"{where}: unknown state {s!r}")
        out.append(s)
    return (out[0], out[1])


def load_spec(document: Mapping | str | Path) -> FsmSpec:
    """Build and validate an :class:`FsmSpec`.

    ``document`` is a parsed mapping, a path to a YAML file, or the name of a
    bundled spec (``complete``, ``rs``, ``sgs``, ``neg``).
    """
    if not isinstance(document, Mapping):
        document = _read_document(document)
    doc = dict(document)
    states = tuple(str(s) for s in doc.get("states", CELL_STATES))
    known = set(states)
    n_actions = int(doc.get("n_actions", 20))
    if n_actions < 1:
        raise SpecError("n_actions must be positive")
    actions = {f"a{i}" for i in range(n_actions)}
    subtype = str(doc.get("subtype", "Complete"))
    if subtype not in SUBTYPES:
        raise SpecError(f"unknown subtype {subtype!r}")
    goal_raw = doc.get("goal", ["G", ANY])
    goal = tuple(str(g) for g in goal_raw)
    if len(goal) != 2 or not all(g == ANY or g in known for g in goal):
        raise SpecError(f"bad goal pattern {goal_raw!r}")

    transitions = []
    seen = set()
    for i, raw in enumerate(doc.get("transitions") or []):
        where = f"transition #{i} {raw.get('pre')!r}/{raw.get('action')!r}"
        pre = _cells(raw.get("pre"), known, where)
        action = str(raw.get("action"))
        if action != ANY and action not in actions:
            raise SpecError(f"{where}: unknown action {action!r}")
        if (pre, action) in seen:
            raise SpecError(f"{where}: duplicate (pre, action) key")
        seen.add((pre, action))
        outs = []
        for o in raw.get("outcomes") or []:
            p = float(o["p"])
            if not 0.0 < p <= 1.0:
                raise SpecError(f"{where}: probability {p} out of range")
            outs.append((_cells(o.get("post"), known, where), p))
        if not outs:
            raise SpecError(f"{where}: no outcomes")
        total = sum(p for _, p in outs)
        if abs(total - 1.0) > _PROB_TOL:
            raise SpecError(f"{where}: outcome probabilities sum to {total}")
        transitions.append(Transition(pre, action, tuple(outs)))

    prob = float(doc.get("random_activation_prob", 0.5))
    if not 0.0 <= prob <= 1.0:
        raise SpecError("random_activation_prob must lie in [0, 1]")
    spec = FsmSpec(
        name=str(doc.get("name", subtype.lower())),
        subtype=subtype,
        states=states,
        transitions=transitions,
        n_actions=n_actions,
        goal=goal,
        random_variant=bool(doc.get("random_variant", False)),
        random_activation_prob=prob,
    )
    if not goal_reachable(spec):
        raise SpecError(f"{spec.name}: goal unreachable from the empty state")
    return spec


def _read_document(source: str | Path) -> Mapping:
    path = Path(source)
    if path.suffix in (".yaml", ".yml") or path.exists():
        text = path.read_text()
    else:
        ref = resources.files("varsel") / "data" / f"{str(source).lower()}.yaml"
        if not ref.is_file():
            raise SpecError(f"no spec file or bundled spec named {source!r}")
        text = ref.read_text()
    doc = yaml.safe_load(text)
    if not isinstance(doc, Mapping):
        raise SpecError("spec document must be a mapping")
    return doc


def bundled_spec(subtype: str, random_variant: bool = False) -> FsmSpec:
    spec = load_spec(subtype.lower())
    return spec.with_random_variant() if random_variant else spec


def is_subspec(sub: FsmSpec, full: FsmSpec) -> bool:
    """Every (pre, action, post) of ``sub`` also occurs in ``full``."""
    return sub.triples() <= full.triples()


# ------------------------------------------------------------ reachability
START: Cells = (EMPTY, EMPTY)


def reachable_cells(spec: FsmSpec, start: Cells = START) -> set[Cells]:
    seen = {start}
    queue = deque([start])
    while queue:
        cells = queue.popleft()
        if spec.is_goal(cells):
            continue
        for a in spec.actions:
            t = spec.lookup(cells, a)
            if t is None:
                continue
            for post, _ in t.outcomes:
                if post not in seen:
                    seen.add(post)
                    queue.append(post)
    return seen


def goal_reachable(spec: FsmSpec) -> bool:
    return any(spec.is_goal(c) for c in reachable_cells(spec))


def _expected_lengths(spec: FsmSpec, policy: str) -> dict[Cells, float]:
    cells = sorted(reachable_cells(spec))
    idx = {c: i for i, c in enumerate(cells)}
    n = len(cells)
    if policy == "random":
        # E = 1 + mean_a sum_s' P(s'|s,a) E(s'), E(goal) = 0
        a_mat = np.eye(n)
        b = np.zeros(n)
        for c in cells:
            i = idx[c]
            if spec.is_goal(c):
                continue
            b[i] = 1.0
            for a in spec.actions:
                t = spec.lookup(c, a)
                outs = t.outcomes if t else ((c, 1.0),)
                for post, p in outs:
                    a_mat[i, idx[post]] -= p / spec.n_actions
        sol = np.linalg.solve(a_mat, b)
        return {c: float(sol[idx[c]]) for c in cells}
    values = np.zeros(n)
    for _ in range(10_000):
        new = np.zeros(n)
        for c in cells:
            if spec.is_goal(c):
                continue
            best = np.inf
            for a in spec.actions:
                t = spec.lookup(c, a)
                if t is None:
                    continue
                best = min(best, 1.0 + sum(p * values[idx[post]] for post, p in t.outcomes))
            new[idx[c]] = best
        if np.max(np.abs(new - values)) < 1e-12:
            values = new
            break
        values = new
    return {c: float(values[idx[c]]) for c in cells}


def optimal_episode_length(spec: FsmSpec) -> float:
    """Expected episode length from the empty state under the best policy."""
    return _expected_lengths(spec, "optimal")[START]


def random_episode_length(spec: FsmSpec) -> float:
    """Expected episode length from the empty state under uniform random actions."""
    return _expected_lengths(spec, "random")[START]


# ------------------------------------------------------------ simulation
@dataclass
class EnvStepResult:
    observations: dict[str, bool]
    goal_reached: bool
    episode_len: int


def bsv_names(spec: FsmSpec) -> tuple[list[str], list[str]]:
    """(state BSV names, action BSV names) in observation order."""
    states = [f"{cell}{s}" for cell in (1, 2) for s in spec.states]
    if spec.random_variant:
        states += list(RANDOM_BSVS)
    return states, spec.actions


class SmrEnvironment:
    """Stateful simulator of an :class:`FsmSpec`.

    After the goal is reached, the next :meth:`step` starts a new episode
    from the empty state; the action passed on that step is still reported
    as the previous action.
    """

    def __init__(self, spec: FsmSpec, seed: int | None = None):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.cells: Cells = START
        self.last_action: int | None = None
        self.randoms = [False] * len(RANDOM_BSVS)
        self.episode_len = 0
        self._restart_pending = False

    def reset(self, seed: int | None = None) -> EnvStepResult:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.cells = START
        self.last_action = None
        self.randoms = [False] * len(RANDOM_BSVS)
        self.episode_len = 0
        self._restart_pending = False
        return EnvStepResult(self.encode_observations(), False, 0)

    def set_spec(self, spec: FsmSpec) -> None:
        """Swap the transition table; the current cells are kept."""
        self.spec = spec

    def step(self, action: int) -> EnvStepResult:
        if not 0 <= action < self.spec.n_actions:
            raise ValueError(f"action {action} out of range [0, {self.spec.n_actions})")
        self.last_action = action
        if self._restart_pending:
            self.cells = START
            self.episode_len = 0
            self._restart_pending = False
        else:
            t = self.spec.lookup(self.cells, f"a{action}")
            if t is not None:
                if len(t.outcomes) == 1:
                    self.cells = t.outcomes[0][0]
                else:
                    k = self.rng.choice(len(t.outcomes), p=[p for _, p in t.outcomes])
                    self.cells = t.outcomes[k][0]
            self.episode_len += 1
        if self.spec.random_variant:
            p = self.spec.random_activation_prob
            self.randoms = [bool(self.rng.random() < p) for _ in RANDOM_BSVS]
        goal = self.spec.is_goal(self.cells)
        if goal:
            self._restart_pending = True
        return EnvStepResult(self.encode_observations(), goal, self.episode_len)

    @property
    def restart_pending(self) -> bool:
        return self._restart_pending

    def encode_observations(self) -> dict[str, bool]:
        obs: dict[str, bool] = {}
        for cell, held in zip((1, 2), self.cells):
            for s in self.spec.states:
                obs[f"{cell}{s}"] = held == s
        for i in range(self.spec.n_actions):
            obs[f"a{i}"] = self.last_action == i
        if self.spec.random_variant:
            for name, v in zip(RANDOM_BSVS, self.randoms):
                obs[name] = v
        return obs

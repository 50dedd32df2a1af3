"""Goal-directed planning over a learned model.

The model is first viewed through group SVs (GSVs): BSV sets that a CSV uses
together as sources, or whose events it predicts together.  From a goal node
``(sv, tag)`` the planner unfolds the model upstream into an action network
(AN): each node lists what would bring it about, down to nodes already
satisfied by the current observations.  An action is then picked among the
actions that can make some CSV of the network fire on the next step.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .model import ACTIVE, INACTIVE, Flag, Model, Polarity


class TargetTag(Enum):
    A = "A"
    D = "D"
    ONE = "1"
    ZERO = "0"

    # members are singletons; identity hashing keeps node lookups cheap
    __hash__ = object.__hash__


PRECONDITION = {
    TargetTag.A: TargetTag.ZERO,
    TargetTag.D: TargetTag.ONE,
    TargetTag.ONE: TargetTag.A,
    TargetTag.ZERO: TargetTag.D,
}
EVENT_TAGS = (TargetTag.A, TargetTag.D)

NodeKey = tuple[int, "TargetTag | None"]


class EdgeKind(Enum):
    CONDITIONING = "conditioning"
    SOURCE = "source"
    PRECONDITION = "precondition"
    CONSTITUENT = "constituent"
    CONSTITUENCY = "constituency"


@dataclass(frozen=True)
class GroupSV:
    id: int
    name: str
    constituents: tuple[int, ...]


@dataclass
class PlanningView:
    """Read-only planning view of a model, with GSVs and rewired CSV links."""

    model: Model
    gsvs: dict[int, GroupSV] = field(default_factory=dict)
    gsv_by_set: dict[frozenset, int] = field(default_factory=dict)
    requirements: dict[int, list[NodeKey]] = field(default_factory=dict)
    event_conditioners: dict[NodeKey, list[int]] = field(default_factory=dict)
    constituency: dict[int, list[int]] = field(default_factory=dict)

    def name(self, sv: int) -> str:
        g = self.gsvs.get(sv)
        return g.name if g is not None else self.model.name(sv)

    def is_gsv(self, sv: int) -> bool:
        return sv in self.gsvs

    def is_csv(self, sv: int) -> bool:
        return sv in self.model.csvs

    def is_action(self, sv: int) -> bool:
        b = self.model.bsvs.get(sv)
        return b is not None and b.is_action

    def constituents(self, sv: int) -> tuple[int, ...]:
        g = self.gsvs.get(sv)
        return g.constituents if g is not None else ()

    def _group(self, bsvs: Iterable[int]) -> int:
        key = frozenset(bsvs)
        gid = self.gsv_by_set.get(key)
        if gid is None:
            gid = self.model.next_id + len(self.gsvs)
            self.gsvs[gid] = GroupSV(gid, f"G{len(self.gsvs)}", tuple(sorted(key)))
            self.gsv_by_set[key] = gid
        return gid


def build_gsvs(model: Model) -> PlanningView:
    """Group multi-BSV source sets and co-predicted event sets of every CSV.

    Action BSVs are never grouped; they stay individual requirements.
    """
    view = PlanningView(model)
    conds: dict[NodeKey, list[int]] = defaultdict(list)
    for cid in sorted(model.csvs):
        csv = model.csvs[cid]
        reqs: list[NodeKey] = []
        pos_b = sorted(s for s in csv.pos_sources if s in model.bsvs and not model.bsvs[s].is_action)
        if len(pos_b) >= 2:
            reqs.append((view._group(pos_b), TargetTag.ONE))
        else:
            reqs += [(s, TargetTag.ONE) for s in pos_b]
        for s in sorted(csv.pos_sources):
            if s in model.bsvs and model.bsvs[s].is_action:
                reqs.append((s, TargetTag.ONE))
            elif s in model.dsvs:
                d = model.dsvs[s]
                reqs.append((d.owner, TargetTag.A if d.polarity is Polarity.ACTIVATION else TargetTag.D))
        neg_b = sorted(s for s in csv.neg_sources if s in model.bsvs)
        if len(neg_b) >= 2:
            reqs.append((view._group(neg_b), TargetTag.ZERO))
        else:
            reqs += [(s, TargetTag.ZERO) for s in neg_b]
        view.requirements[cid] = reqs

        for pol, tag in ((Polarity.ACTIVATION, TargetTag.A), (Polarity.DEACTIVATION, TargetTag.D)):
            owners = sorted(
                model.dsvs[t].owner
                for t in csv.targets
                if t in model.dsvs and model.dsvs[t].polarity is pol
            )
            if len(owners) >= 2:
                conds[(view._group(owners), tag)].append(cid)
            elif owners:
                conds[(owners[0], tag)].append(cid)
    view.event_conditioners = dict(conds)
    sets = {g.id: set(g.constituents) for g in view.gsvs.values()}
    for g in view.gsvs.values():
        for b in g.constituents:
            view.constituency.setdefault(b, []).append(g.id)
        view.constituency[g.id] = [h for h in sets if sets[g.id] < sets[h]]
    return view


# --------------------------------------------------------------- networks
@dataclass
class AnNode:
    sv: int
    tag: TargetTag | None
    satisfied_by_current: bool = False
    dead_end: bool = False
    is_choice: bool = False

    @property
    def key(self) -> NodeKey:
        return (self.sv, self.tag)


class ActionNetwork:
    """Dependency graph from current-state roots to goal nodes.

    Edges point from a requirement to the node that needs it.
    """

    def __init__(self, view: PlanningView | None = None, names: dict[int, str] | None = None):
        self.view = view
        self.nodes: dict[NodeKey, AnNode] = {}
        self.edges: dict[tuple[NodeKey, NodeKey], EdgeKind] = {}
        self.preds: dict[NodeKey, list[NodeKey]] = defaultdict(list)
        self.succs: dict[NodeKey, list[NodeKey]] = defaultdict(list)
        self._kpreds: dict[NodeKey, dict[EdgeKind, list[NodeKey]]] = defaultdict(dict)
        self.goals: list[NodeKey] = []
        self.reachable: dict[NodeKey, bool] = {}
        self._names = dict(names or {})
        self._kinds: dict[int, str] = {}

    def add_node(self, sv: int, tag: TargetTag | None) -> AnNode:
        key = (sv, tag)
        node = self.nodes.get(key)
        if node is None:
            node = self.nodes[key] = AnNode(sv, tag)
        return node

    def add_edge(self, u: NodeKey, v: NodeKey, kind: EdgeKind) -> None:
        if (u, v) in self.edges:
            return
        self.edges[(u, v)] = kind
        self.preds[v].append(u)
        self.succs[u].append(v)
        self._kpreds[v].setdefault(kind, []).append(u)

    def sv_name(self, sv: int) -> str:
        if sv in self._names:
            return self._names[sv]
        return self.view.name(sv) if self.view is not None else str(sv)

    def label(self, key: NodeKey) -> str:
        sv, tag = key
        name = self.sv_name(sv)
        return name if tag is None else f"{name}({tag.value})"

    def preds_of(self, key: NodeKey, kind: EdgeKind) -> list[NodeKey]:
        by_kind = self._kpreds.get(key)
        return by_kind.get(kind, []) if by_kind else []

    @property
    def roots(self) -> list[NodeKey]:
        return [k for k, n in self.nodes.items() if n.satisfied_by_current or n.is_choice]

    def goal_reachable(self, goal: NodeKey | None = None) -> bool:
        goal = self.goals[0] if goal is None else goal
        return self.reachable.get(goal, False)

    def signature(self) -> tuple:
        """Canonical, label-based form used to compare networks."""
        nodes = sorted(
            (self.label(k), n.satisfied_by_current, n.dead_end, n.is_choice)
            for k, n in self.nodes.items()
        )
        edges = sorted((self.label(u), self.label(v), k.value) for (u, v), k in self.edges.items())
        return tuple(nodes), tuple(edges), tuple(self.label(g) for g in self.goals)

    def to_dict(self) -> dict:
        def enc(k: NodeKey):
            return [k[0], None if k[1] is None else k[1].value]

        svs = {k[0] for k in self.nodes}
        return {
            "format": "varsel-an",
            "version": 1,
            "names": {str(sv): self.sv_name(sv) for sv in sorted(svs)},
            "kinds": {str(sv): self._kind(sv) for sv in sorted(svs)},
            "nodes": [
                dict(
                    key=enc(k),
                    satisfied_by_current=n.satisfied_by_current,
                    dead_end=n.dead_end,
                    is_choice=n.is_choice,
                )
                for k, n in self.nodes.items()
            ],
            "edges": [[enc(u), enc(v), kind.value] for (u, v), kind in self.edges.items()],
            "goals": [enc(g) for g in self.goals],
        }

    def _kind(self, sv: int) -> str:
        if self.view is None:
            return self._kinds.get(sv, "bsv")
        if self.view.is_gsv(sv):
            return "gsv"
        if self.view.is_csv(sv):
            return "csv"
        return "action" if self.view.is_action(sv) else "bsv"

    @classmethod
    def from_dict(cls, doc: dict) -> "ActionNetwork":
        if doc.get("format") != "varsel-an":
            raise ValueError("not an action-network document")

        def dec(raw) -> NodeKey:
            return (int(raw[0]), None if raw[1] is None else TargetTag(raw[1]))

        net = cls(names={int(k): v for k, v in doc.get("names", {}).items()})
        net._kinds = {int(k): v for k, v in doc.get("kinds", {}).items()}
        for n in doc["nodes"]:
            sv, tag = dec(n["key"])
            node = net.add_node(sv, tag)
            node.satisfied_by_current = n["satisfied_by_current"]
            node.dead_end = n["dead_end"]
            node.is_choice = n.get("is_choice", False)
        for u, v, kind in doc["edges"]:
            net.add_edge(dec(u), dec(v), EdgeKind(kind))
        net.goals = [dec(g) for g in doc["goals"]]
        net.reachable = {k: not n.dead_end for k, n in net.nodes.items()}
        return net

    def is_csv_node(self, key: NodeKey) -> bool:
        return key[1] is None


# --------------------------------------------------------------- planning
def satisfied_by_current(
    view: PlanningView, current_actives: set[int], sv: int, tag: TargetTag | None
) -> bool:
    """Whether the requirement ``(sv, tag)`` already holds now.

    Events (A/D) hold when the corresponding DSV is active at this step.
    Action BSVs are never active now; they are chosen, not observed.
    """
    if tag is None:
        return False
    model = view.model
    if sv in view.gsvs:
        members = view.gsvs[sv].constituents
    else:
        members = (sv,)
    if tag is TargetTag.ONE:
        return all(m in current_actives for m in members)
    if tag is TargetTag.ZERO:
        return not all(m in current_actives for m in members)
    out = []
    for m in members:
        b = model.bsvs[m]
        d = b.dsv_activation if tag is TargetTag.A else b.dsv_deactivation
        out.append(d is not None and d in current_actives)
    return all(out)


def _expand(net: ActionNetwork, key: NodeKey, current_actives: set[int]) -> list[NodeKey]:
    view = net.view
    sv, tag = key
    node = net.nodes[key]
    if satisfied_by_current(view, current_actives, sv, tag):
        node.satisfied_by_current = True
        return []
    if view.is_action(sv):
        node.is_choice = True
        return []
    new: list[tuple[NodeKey, EdgeKind]] = []
    if view.is_csv(sv):
        new += [(r, EdgeKind.SOURCE) for r in view.requirements[sv]]
        new += [((c, None), EdgeKind.CONDITIONING) for c in sorted(view.model.conditioners_of[sv])]
    else:
        new.append(((sv, PRECONDITION[tag]), EdgeKind.PRECONDITION))
        new += [((m, tag), EdgeKind.CONSTITUENT) for m in view.constituents(sv)]
        if tag is not TargetTag.ZERO:
            new += [((g, tag), EdgeKind.CONSTITUENCY) for g in view.constituency.get(sv, ())]
        if tag in EVENT_TAGS:
            new += [((c, None), EdgeKind.CONDITIONING) for c in view.event_conditioners.get(key, ())]
    opened = []
    for pred, kind in new:
        if pred not in net.nodes:
            net.add_node(*pred)
            opened.append(pred)
        net.add_edge(pred, key, kind)
    return opened


def generate_upstream_an(
    net: ActionNetwork,
    sv: int,
    tag: TargetTag | None,
    visited: set[NodeKey],
    current_actives: set[int],
) -> bool:
    """Unfold ``(sv, tag)`` upstream into ``net``; return whether it is reachable.

    Nodes in ``visited`` are linked to but never reopened, which bounds the
    work by the number of (sv, tag) pairs.
    """
    start = (sv, tag)
    net.add_node(sv, tag)
    stack = [start]
    while stack:
        key = stack.pop()
        if key in visited:
            continue
        visited.add(key)
        for pred in reversed(_expand(net, key, current_actives)):
            if pred not in visited:
                stack.append(pred)
    evaluate_reachability(net)
    return net.reachable[start]


def evaluate_reachability(net: ActionNetwork) -> dict[NodeKey, bool]:
    """Least fixpoint of the AND/OR reading of the network.

    CSVs need every source requirement and, when conditional with known
    conditioners, one reachable conditioner.  Events need their precondition
    plus a conditioner, a containing group's event, or all constituents'
    events.  States need their precondition event or a group route.
    """
    view = net.view
    reach = {k: (n.satisfied_by_current or n.is_choice) for k, n in net.nodes.items()}
    E = EdgeKind

    def ok(key: NodeKey) -> bool:
        sv, tag = key
        any_ = lambda kind: any(reach[u] for u in net.preds_of(key, kind))  # noqa: E731
        if net.is_csv_node(key):
            srcs = net.preds_of(key, E.SOURCE)
            if not all(reach[u] for u in srcs):
                return False
            conds = net.preds_of(key, E.CONDITIONING)
            flag = view.model.csvs[sv].flag if view is not None else Flag.UNCONDITIONAL
            return flag is not Flag.CONDITIONAL or not conds or any(reach[u] for u in conds)
        parts = net.preds_of(key, E.CONSTITUENT)
        if tag in EVENT_TAGS:
            if not any_(E.PRECONDITION):
                return False
            return (
                any_(E.CONDITIONING)
                or any_(E.CONSTITUENCY)
                or (bool(parts) and all(reach[u] for u in parts))
            )
        if tag is TargetTag.ONE:
            return (
                any_(E.PRECONDITION)
                or any_(E.CONSTITUENCY)
                or (bool(parts) and all(reach[u] for u in parts))
            )
        return any_(E.PRECONDITION) or any_(E.CONSTITUENT)

    queue = [k for k, r in reach.items() if r]
    while queue:
        key = queue.pop()
        for succ in net.succs.get(key, ()):
            if not reach[succ] and ok(succ):
                reach[succ] = True
                queue.append(succ)
    net.reachable = reach
    for key, node in net.nodes.items():
        node.dead_end = not reach[key]
    return reach


def plan(
    model: Model,
    current_actives: set[int] | None,
    goals: Sequence[tuple[int | str, TargetTag]],
    view: PlanningView | None = None,
) -> ActionNetwork:
    """Build the action network for ``goals`` from the current state.

    The model is only read.  ``current_actives`` defaults to the BSVs and
    DSVs active at the model's latest step.
    """
    view = build_gsvs(model) if view is None else view
    actives = model.current_actives() if current_actives is None else set(current_actives)
    net = ActionNetwork(view)
    visited: set[NodeKey] = set()
    for sv, tag in goals:
        sv_id = model.resolve(sv)
        key = (sv_id, tag)
        net.goals.append(key)
        generate_upstream_an(net, sv_id, tag, visited, actives)
    return net


# ---------------------------------------------------------- action choice
def _now_active(model: Model, sv: int) -> bool:
    return model.svs[sv].state is ACTIVE and not (sv in model.bsvs and model.bsvs[sv].is_action)


def _action_sources(model: Model, csv) -> set[int]:
    return {s for s in csv.pos_sources if s in model.bsvs and model.bsvs[s].is_action}


def _fires_with(model: Model, cid: int, action: int) -> bool:
    """All sources of the CSV hold on the next step if ``action`` is taken now."""
    csv = model.csvs[cid]
    acts = _action_sources(model, csv)
    if not acts <= {action}:
        return False
    if not all(_now_active(model, s) for s in csv.pos_sources - acts):
        return False
    return action not in csv.neg_sources and not any(_now_active(model, s) for s in csv.neg_sources)


def _activations(model: Model, cid: int, action: int, memo: dict) -> set[tuple[bool, bool]]:
    """Ways ``cid`` activates next step under ``action``.

    Each way is ``(uses_action, reliable)``: whether the action is one of the
    sources involved, and whether every CSV involved is unconditional or
    conditioned by another involved CSV.  A conditional CSV with known
    conditioners needs one of them to activate as well.
    """
    key = (cid, action)
    if key in memo:
        return memo[key]
    memo[key] = set()
    if not _fires_with(model, cid, action):
        return memo[key]
    csv = model.csvs[cid]
    own = action in csv.pos_sources
    conds = model.conditioners_of.get(cid, ())
    out: set[tuple[bool, bool]] = set()
    if csv.flag is Flag.CONDITIONAL and conds:
        for c in sorted(conds):
            out |= {(u or own, r) for u, r in _activations(model, c, action, memo)}
    else:
        out.add((own, csv.flag is Flag.UNCONDITIONAL))
    memo[key] = out
    return out


class OutcomeMemory:
    """Observed states in which a CSV's full firing failed.

    Kept by the acting agent, outside the model.  A CSV whose latest full
    firing in the current non-action state failed (state Inactive) is
    skipped by action choice there until it succeeds in that state.
    """

    def __init__(self) -> None:
        self.failed: dict[int, set[frozenset[int]]] = {}

    @staticmethod
    def context(model: Model, previous: bool = False) -> frozenset[int]:
        return frozenset(
            i for i, b in model.bsvs.items()
            if not b.is_action and (b.prev_state if previous else b.state) is ACTIVE
        )

    def update(self, model: Model) -> None:
        for cid in [c for c in self.failed if c not in model.csvs]:
            del self.failed[cid]
        ctx = None
        for cid, csv in model.csvs.items():
            if csv.state is INACTIVE:
                ctx = ctx or self.context(model, previous=True)
                self.failed.setdefault(cid, set()).add(ctx)
            elif csv.state is ACTIVE and cid in self.failed:
                if all(model.svs[s].prev_state is ACTIVE for s in csv.pos_sources):
                    ctx = ctx or self.context(model, previous=True)
                    self.failed[cid].discard(ctx)

    def blocked(self, model: Model) -> set[int]:
        """CSVs that failed before in the state the model is in now."""
        ctx = self.context(model)
        return {c for c, seen in self.failed.items() if ctx in seen}


def candidate_actions(
    net: ActionNetwork, model: Model, failed: set[int] | frozenset = frozenset()
) -> tuple[list[int], list[int]]:
    """Actions that make an event of the network happen on the next step.

    An event node of the network counts when its precondition holds now and
    one of its conditioning CSVs activates under the action, the action being
    among the sources involved.  Returns ``(reliable, all)`` candidate lists;
    reliable ones go only through unconditional or conditioned CSVs.  CSVs
    in ``failed`` are ignored.
    """
    actives = model.current_actives()
    reliable: set[int] = set()
    anyway: set[int] = set()
    memo: dict = {}
    actions = sorted(
        {a for k in net.nodes if k[1] is None and k[0] in model.csvs
         for a in _action_sources(model, model.csvs[k[0]])}
    )
    for (u, v), kind in net.edges.items():
        if kind is not EdgeKind.CONDITIONING or v[1] not in EVENT_TAGS:
            continue
        if u[0] not in model.csvs or net.nodes[u].dead_end or u[0] in failed:
            continue
        if not satisfied_by_current(net.view, actives, v[0], PRECONDITION[v[1]]):
            continue
        for a in actions:
            for uses, rel in _activations(model, u[0], a, memo):
                if uses:
                    anyway.add(a)
                    if rel:
                        reliable.add(a)
    return sorted(reliable), sorted(anyway)


def choose_action(
    net: ActionNetwork,
    model: Model,
    rng: np.random.Generator,
    exploration_rate: float = 0.1,
    memory: OutcomeMemory | None = None,
) -> int:
    """Pick an action BSV id.

    Explores uniformly with probability ``exploration_rate``; otherwise picks
    uniformly among reliable candidates, then among any candidates, then
    among all actions.
    """
    actions = sorted(model.action_ids)
    if not actions:
        raise ValueError("model has no action BSVs")
    if not 0.0 <= exploration_rate <= 1.0:
        raise ValueError("exploration_rate must lie in [0, 1]")
    if rng.random() < exploration_rate:
        return actions[int(rng.integers(len(actions)))]
    reliable, anyway = candidate_actions(net, model, memory.blocked(model) if memory else frozenset())
    pool = reliable or anyway or actions
    return pool[int(rng.integers(len(pool)))]

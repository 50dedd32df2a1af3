"""State variables and the per-step state computation of a varsel network.

A :class:`Model` holds three kinds of state variable (SV):

* base SVs (BSVs), observed from outside each step,
* dynamics SVs (DSVs), the activation/deactivation events of every
  non-action BSV,
* conditioning SVs (CSVs), learned relationships between a set of sources
  (BSVs/DSVs, evaluated at the previous step) and a set of targets
  (DSVs/CSVs, evaluated at the current step).

Everything that mutates a CSV while its state is being computed lives here
(target duplication and source refinement).  The learning loop that creates
CSVs is in :mod:`varsel.learning`.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .significance import NceCounters

FORMAT_VERSION = 1


class State(Enum):
    """Ternary SV state.  The values are labels used for serialization only."""

    ACTIVE = 1
    INACTIVE = -1
    UNOBSERVED = 0

    def __repr__(self) -> str:
        return f"State.{self.name}"


class SvKind(Enum):
    BSV = "bsv"
    DSV = "dsv"
    CSV = "csv"
    GSV = "gsv"


class Polarity(Enum):
    ACTIVATION = "A"
    DEACTIVATION = "D"


class Flag(Enum):
    """Unconditionality flag of a CSV (also carried by DSVs as targets)."""

    UNCONDITIONAL = "unconditional"
    CONDITIONAL = "conditional"
    POSSIBLY_CONDITIONAL = "possibly_conditional"


_FLAG_RANK = {Flag.UNCONDITIONAL: 0, Flag.CONDITIONAL: 1, Flag.POSSIBLY_CONDITIONAL: 2}

ACTIVE = State.ACTIVE
INACTIVE = State.INACTIVE
UNOBSERVED = State.UNOBSERVED


class ModelError(RuntimeError):
    """Raised when a model invariant is violated (ordering, cycles)."""


class ObservationError(ValueError):
    """Raised for malformed observation snapshots."""


@dataclass
class BaseSV:
    id: int
    name: str
    is_action: bool = False
    state: State = INACTIVE
    prev_state: State = INACTIVE
    dsv_activation: int | None = None
    dsv_deactivation: int | None = None

    kind = SvKind.BSV


@dataclass
class DynamicsSV:
    id: int
    name: str
    owner: int
    polarity: Polarity
    state: State = UNOBSERVED
    prev_state: State = UNOBSERVED
    flag: Flag = Flag.CONDITIONAL

    kind = SvKind.DSV


@dataclass
class ConditioningSV:
    id: int
    name: str
    pos_sources: set[int] = field(default_factory=set)
    neg_sources: set[int] = field(default_factory=set)
    targets: set[int] = field(default_factory=set)
    state: State = UNOBSERVED
    prev_state: State = UNOBSERVED
    flag: Flag = Flag.UNCONDITIONAL
    neg_formed: bool = False
    blocked: bool = False
    counters: dict[int, NceCounters] = field(default_factory=dict)
    created_step: int = 0

    kind = SvKind.CSV

    @property
    def unconditionality(self) -> Flag:
        return self.flag


SV = BaseSV | DynamicsSV | ConditioningSV


def more_uncertain(a: Flag, b: Flag) -> Flag:
    return a if _FLAG_RANK[a] >= _FLAG_RANK[b] else b


class Model:
    """A varsel network: BSVs, their DSVs and the learned CSVs.

    Ids are integers handed out in creation order, so sorting a set of ids
    gives creation order.  ``journal`` collects mutation records during a step
    (refinements, duplications, flag changes) for the step report.
    """

    def __init__(self) -> None:
        self.bsvs: dict[int, BaseSV] = {}
        self.dsvs: dict[int, DynamicsSV] = {}
        self.csvs: dict[int, ConditioningSV] = {}
        self.svs: dict[int, SV] = {}
        self.conditioners_of: dict[int, set[int]] = {}
        self.by_name: dict[str, int] = {}
        self.step_counter = 0
        self.next_id = 0
        self.next_csv_number = 0
        self.journal: list[tuple] = []
        self._computed: set[int] = set()

    # ------------------------------------------------------------------ build
    def _new_id(self) -> int:
        i = self.next_id
        self.next_id += 1
        return i

    def add_bsv(self, name: str, is_action: bool = False) -> int:
        """Register a BSV; non-action BSVs get their two DSVs."""
        if name in self.by_name:
            raise ValueError(f"duplicate SV name {name!r}")
        bsv = BaseSV(self._new_id(), name, is_action=is_action)
        self._register(bsv)
        if not is_action:
            for pol in Polarity:
                dsv = DynamicsSV(self._new_id(), f"{name}_{pol.value}", bsv.id, pol)
                self._register(dsv)
                if pol is Polarity.ACTIVATION:
                    bsv.dsv_activation = dsv.id
                else:
                    bsv.dsv_deactivation = dsv.id
        return bsv.id

    def _register(self, sv: SV) -> None:
        self.svs[sv.id] = sv
        self.by_name[sv.name] = sv.id
        if isinstance(sv, BaseSV):
            self.bsvs[sv.id] = sv
        elif isinstance(sv, DynamicsSV):
            self.dsvs[sv.id] = sv
            self.conditioners_of.setdefault(sv.id, set())
        else:
            self.csvs[sv.id] = sv
            self.conditioners_of.setdefault(sv.id, set())

    def new_csv(
        self,
        pos_sources: Iterable[int],
        targets: Iterable[int],
        neg_sources: Iterable[int] = (),
    ) -> ConditioningSV:
        csv = ConditioningSV(
            self._new_id(),
            f"C{self.next_csv_number}",
            pos_sources=set(pos_sources),
            neg_sources=set(neg_sources),
            targets=set(targets),
            created_step=self.step_counter,
        )
        self.next_csv_number += 1
        self._register(csv)
        for t in csv.targets:
            self.conditioners_of[t].add(csv.id)
            csv.counters[t] = NceCounters()
        return csv

    def clone_csv(self, csv: ConditioningSV, targets: Iterable[int]) -> ConditioningSV:
        """Copy ``csv`` with a different target set.

        The copy inherits sources, flags and per-target counters, and every
        conditioner of ``csv`` conditions the copy as well.
        """
        dup = self.new_csv(csv.pos_sources, (), csv.neg_sources)
        dup.flag = csv.flag
        dup.neg_formed = csv.neg_formed
        dup.blocked = csv.blocked
        dup.state = csv.state
        dup.prev_state = csv.prev_state
        for t in targets:
            dup.targets.add(t)
            self.conditioners_of[t].add(dup.id)
            dup.counters[t] = copy.copy(csv.counters.get(t) or NceCounters())
        for c in self.conditioners_of[csv.id]:
            cond = self.csvs[c]
            cond.targets.add(dup.id)
            cond.counters[dup.id] = copy.copy(cond.counters.get(csv.id) or NceCounters())
            self.conditioners_of[dup.id].add(c)
        return dup

    def remove_target(self, csv: ConditioningSV, target: int) -> None:
        csv.targets.discard(target)
        csv.counters.pop(target, None)
        self.conditioners_of[target].discard(csv.id)

    def delete_csv(self, cid: int) -> None:
        csv = self.csvs.pop(cid)
        del self.svs[cid]
        if self.by_name.get(csv.name) == cid:
            del self.by_name[csv.name]
        for t in csv.targets:
            self.conditioners_of[t].discard(cid)
        for c in self.conditioners_of.pop(cid, set()):
            if c in self.csvs:
                self.csvs[c].targets.discard(cid)
                self.csvs[c].counters.pop(cid, None)

    # ----------------------------------------------------------------- lookup
    def resolve(self, key: int | str) -> int:
        if isinstance(key, str):
            try:
                return self.by_name[key]
            except KeyError:
                raise KeyError(f"unknown SV {key!r}") from None
        if key not in self.svs:
            raise KeyError(f"unknown SV id {key}")
        return key

    def name(self, sv_id: int) -> str:
        return self.svs[sv_id].name

    def state(self, sv_id: int) -> State:
        return self.svs[sv_id].state

    def prev_state(self, sv_id: int) -> State:
        return self.svs[sv_id].prev_state

    @property
    def action_ids(self) -> list[int]:
        return [i for i, b in self.bsvs.items() if b.is_action]

    def active_pool(self) -> list[int]:
        """BSVs and DSVs that were active at the previous step (source time)."""
        pool = [i for i, b in self.bsvs.items() if b.prev_state is ACTIVE]
        pool += [i for i, d in self.dsvs.items() if d.prev_state is ACTIVE]
        return sorted(pool)

    def current_actives(self) -> set[int]:
        """BSVs/DSVs active now; action BSVs are never active until chosen."""
        out = {i for i, b in self.bsvs.items() if b.state is ACTIVE and not b.is_action}
        out |= {i for i, d in self.dsvs.items() if d.state is ACTIVE}
        return out

    def check_index(self) -> None:
        """Assert that ``conditioners_of`` is the inverse of the target sets."""
        expected: dict[int, set[int]] = {i: set() for i in list(self.dsvs) + list(self.csvs)}
        for cid, csv in self.csvs.items():
            for t in csv.targets:
                expected[t].add(cid)
        actual = {k: v for k, v in self.conditioners_of.items() if k in expected}
        if actual != expected:
            raise ModelError("conditioners_of index out of sync with CSV targets")

    # ---------------------------------------------------------- persistence
    def structure_hash(self) -> str:
        """Digest of the graph and flags; states and NCE counters are left out."""
        doc = {
            "dsv_flags": {d.id: d.flag.value for d in self.dsvs.values()},
            "csvs": [_csv_structure(c) for c in sorted(self.csvs.values(), key=lambda c: c.id)],
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def to_dict(self) -> dict:
        return {
            "format": "varsel-model",
            "version": FORMAT_VERSION,
            "step_counter": self.step_counter,
            "next_id": self.next_id,
            "next_csv_number": self.next_csv_number,
            "bsvs": [
                {
                    "id": b.id,
                    "name": b.name,
                    "is_action": b.is_action,
                    "state": b.state.value,
                    "prev_state": b.prev_state.value,
                    "dsv_activation": b.dsv_activation,
                    "dsv_deactivation": b.dsv_deactivation,
                }
                for b in self.bsvs.values()
            ],
            "dsvs": [
                {
                    "id": d.id,
                    "name": d.name,
                    "owner": d.owner,
                    "polarity": d.polarity.value,
                    "state": d.state.value,
                    "prev_state": d.prev_state.value,
                    "flag": d.flag.value,
                }
                for d in self.dsvs.values()
            ],
            "csvs": [
                dict(
                    _csv_structure(c),
                    name=c.name,
                    state=c.state.value,
                    prev_state=c.prev_state.value,
                    created_step=c.created_step,
                    counters={str(t): list(c.counters[t].as_tuple()) for t in sorted(c.counters)},
                )
                for c in sorted(self.csvs.values(), key=lambda c: c.id)
            ],
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Model":
        if doc.get("format") != "varsel-model":
            raise ValueError("not a varsel model document")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        m = cls()
        for b in doc["bsvs"]:
            m._register(
                BaseSV(
                    b["id"],
                    b["name"],
                    is_action=b["is_action"],
                    state=State(b["state"]),
                    prev_state=State(b["prev_state"]),
                    dsv_activation=b["dsv_activation"],
                    dsv_deactivation=b["dsv_deactivation"],
                )
            )
        for d in doc["dsvs"]:
            m._register(
                DynamicsSV(
                    d["id"],
                    d["name"],
                    d["owner"],
                    Polarity(d["polarity"]),
                    state=State(d["state"]),
                    prev_state=State(d["prev_state"]),
                    flag=Flag(d["flag"]),
                )
            )
        for c in doc["csvs"]:
            csv = ConditioningSV(
                c["id"],
                c["name"],
                pos_sources=set(c["pos_sources"]),
                neg_sources=set(c["neg_sources"]),
                targets=set(c["targets"]),
                state=State(c["state"]),
                prev_state=State(c["prev_state"]),
                flag=Flag(c["flag"]),
                neg_formed=c["neg_formed"],
                blocked=c["blocked"],
                counters={int(k): NceCounters(*v) for k, v in c["counters"].items()},
                created_step=c["created_step"],
            )
            m._register(csv)
        for csv in m.csvs.values():
            for t in csv.targets:
                m.conditioners_of[t].add(csv.id)
        m.step_counter = doc["step_counter"]
        m.next_id = doc["next_id"]
        m.next_csv_number = doc["next_csv_number"]
        return m

    def copy(self) -> "Model":
        return Model.from_dict(self.to_dict())


def _csv_structure(c: ConditioningSV) -> dict:
    return {
        "id": c.id,
        "pos_sources": sorted(c.pos_sources),
        "neg_sources": sorted(c.neg_sources),
        "targets": sorted(c.targets),
        "flag": c.flag.value,
        "neg_formed": c.neg_formed,
        "blocked": c.blocked,
    }


# ---------------------------------------------------------------- BSV / DSV
def _coerce_state(value) -> State:
    if isinstance(value, State):
        return value
    if isinstance(value, bool):
        return ACTIVE if value else INACTIVE
    if value in (1, -1, 0):
        return State(value)
    raise ObservationError(f"cannot interpret {value!r} as an SV state")


def compute_dsv_states(model: Model, observations: Mapping[int | str, object]) -> None:
    """Rotate BSV states from ``observations`` and recompute every DSV.

    Non-action BSVs must all be present.  Action BSVs describe the action
    executed at the previous step, so their value goes to ``prev_state``;
    missing action BSVs are taken as inactive.
    """
    values: dict[int, State] = {}
    for key, raw in observations.items():
        try:
            sv_id = model.resolve(key)
        except KeyError as exc:
            raise ObservationError(str(exc)) from None
        if sv_id not in model.bsvs:
            raise ObservationError(f"{model.name(sv_id)} is not a BSV")
        st = _coerce_state(raw)
        if st is UNOBSERVED:
            raise ObservationError(f"BSV {model.name(sv_id)} cannot be unobserved")
        values[sv_id] = st
    missing = [b.name for b in model.bsvs.values() if not b.is_action and b.id not in values]
    if missing:
        raise ObservationError(f"missing observations for {missing}")

    first = model.step_counter == 0
    for b in model.bsvs.values():
        if b.is_action:
            b.prev_state = values.get(b.id, INACTIVE)
            b.state = INACTIVE
        else:
            b.prev_state = values[b.id] if first else b.state
            b.state = values[b.id]
    for d in model.dsvs.values():
        d.prev_state = d.state
        d.state = dsv_state(d.polarity, model.bsvs[d.owner].prev_state, model.bsvs[d.owner].state)


def dsv_state(polarity: Polarity, before: State, after: State) -> State:
    if polarity is Polarity.ACTIVATION:
        if before is ACTIVE:
            return UNOBSERVED
        return ACTIVE if after is ACTIVE else INACTIVE
    if before is not ACTIVE:
        return UNOBSERVED
    return ACTIVE if after is not ACTIVE else INACTIVE


# --------------------------------------------------------------------- CSVs
def sources_satisfied(csv: ConditioningSV, states_at_prev_step: Mapping[int, State]) -> bool:
    """All positive sources were active and no negative source was."""
    return all(states_at_prev_step[s] is ACTIVE for s in csv.pos_sources) and not any(
        states_at_prev_step[s] is ACTIVE for s in csv.neg_sources
    )


def satisfied_now(model: Model, csv: ConditioningSV) -> bool:
    return all(model.svs[s].prev_state is ACTIVE for s in csv.pos_sources) and not any(
        model.svs[s].prev_state is ACTIVE for s in csv.neg_sources
    )


def separate_active_inactive_targets(
    model: Model, csv: ConditioningSV
) -> tuple[ConditioningSV, ConditioningSV] | None:
    """Split ``csv`` when it has both active and inactive targets.

    ``csv`` keeps the active targets; a new CSV takes the inactive ones.
    Unobserved targets go to both halves.
    """
    active, inactive, unobserved = [], [], []
    for t in csv.targets:
        st = model.svs[t].state
        (active if st is ACTIVE else inactive if st is INACTIVE else unobserved).append(t)
    if not active or not inactive:
        return None
    dup = model.clone_csv(csv, sorted(inactive + unobserved))
    for t in inactive:
        model.remove_target(csv, t)
    model.journal.append(("duplicate", csv.id, (csv.id, dup.id)))
    return csv, dup


def evaluate_csv(csv: ConditioningSV, prev: Mapping[int, State], cur: Mapping[int, State]) -> State:
    """State of ``csv`` on an instance, without touching the CSV.

    Same decision procedure as :func:`compute_csv_state`; used to replay
    recorded instances.
    """
    if not any(prev[s] is ACTIVE for s in csv.pos_sources):
        return UNOBSERVED
    tstates = [cur[t] for t in csv.targets]
    if ACTIVE in tstates:
        return ACTIVE
    if INACTIVE not in tstates:
        return UNOBSERVED
    if not all(prev[s] is ACTIVE for s in csv.pos_sources):
        return UNOBSERVED
    if any(prev[s] is ACTIVE for s in csv.neg_sources):
        return UNOBSERVED
    return INACTIVE


def compute_csv_state(
    model: Model, csv: ConditioningSV, learning: bool = True
) -> tuple[State, ConditioningSV | None]:
    """Compute the current state of ``csv``, refining it when learning.

    Returns the state and, when the CSV had to be split, the new CSV holding
    the inactive targets (the caller must compute it next).  Targets must
    already be computed this step.
    """
    for t in csv.targets:
        if t in model.csvs and t not in model._computed:
            raise ModelError(f"{csv.name} computed before its target {model.name(t)}")

    svs = model.svs
    pos_active = [s for s in csv.pos_sources if svs[s].prev_state is ACTIVE]
    dup = None
    if not pos_active:
        state = UNOBSERVED
    elif not learning:
        state = _frozen_state(model, csv)
    else:
        split = separate_active_inactive_targets(model, csv)
        if split is not None:
            dup = split[1]
        tstates = [svs[t].state for t in csv.targets]
        if ACTIVE in tstates:
            state = ACTIVE
            removed_pos = csv.pos_sources.difference(pos_active)
            removed_neg = {s for s in csv.neg_sources if svs[s].prev_state is ACTIVE}
            if removed_pos or removed_neg:
                csv.pos_sources.difference_update(removed_pos)
                csv.neg_sources.difference_update(removed_neg)
                model.journal.append(("refine", csv.id, tuple(sorted(removed_pos | removed_neg))))
        elif INACTIVE in tstates:
            if len(pos_active) < len(csv.pos_sources):
                state = UNOBSERVED
            else:
                neg_active = {s for s in csv.neg_sources if svs[s].prev_state is ACTIVE}
                if neg_active:
                    state = UNOBSERVED
                    removed = csv.neg_sources - neg_active
                    if removed:
                        csv.neg_sources = neg_active
                        model.journal.append(("refine", csv.id, tuple(sorted(removed))))
                else:
                    state = INACTIVE
        else:
            state = UNOBSERVED
    csv.state = state
    model._computed.add(csv.id)
    return state, dup


def _frozen_state(model: Model, csv: ConditioningSV) -> State:
    # literal satisfaction semantics; no refinement or splitting
    if not satisfied_now(model, csv):
        return UNOBSERVED
    tstates = [model.svs[t].state for t in csv.targets]
    if ACTIVE in tstates:
        return ACTIVE
    if INACTIVE in tstates:
        return INACTIVE
    return UNOBSERVED


def computation_levels(model: Model) -> dict[int, int]:
    """Level of each CSV: 0 if it conditions only DSVs, else 1 + max target level."""
    levels: dict[int, int] = {}
    visiting: set[int] = set()

    def level(cid: int) -> int:
        if cid in levels:
            return levels[cid]
        if cid in visiting:
            raise ModelError(f"conditioning cycle through {model.name(cid)}")
        visiting.add(cid)
        lv = 0
        for t in model.csvs[cid].targets:
            if t in model.csvs:
                lv = max(lv, level(t) + 1)
        visiting.discard(cid)
        levels[cid] = lv
        return lv

    for cid in sorted(model.csvs):
        level(cid)
    return levels


def computation_order(model: Model) -> list[int]:
    """CSV ids ordered so every CSV comes after the CSVs it conditions."""
    levels = computation_levels(model)
    return sorted(levels, key=lambda c: (levels[c], c))

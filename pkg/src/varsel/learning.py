"""One step of model learning.

Per step: BSV/DSV states are updated, CSVs are computed targets-first with
splitting and refinement, CSVs that turned inactive get their negative
sources (once) or lose unconditionality, NCE counters are updated, and a
single new CSV is formed for the unexplained active DSVs/CSVs.  The step ends
with model refinement (removing empty CSVs, merging identical ones).
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Iterable, Mapping, Sequence

from .model import (
    ACTIVE,
    INACTIVE,
    UNOBSERVED,
    ConditioningSV,
    DynamicsSV,
    Flag,
    Model,
    compute_csv_state,
    compute_dsv_states,
    computation_levels,
    more_uncertain,
    satisfied_now,
)
from .significance import NceCounters, apply_significance_policy, update_counters


class FlagEvent(Enum):
    INACTIVE_AFTER_NEG_FORMATION = "inactive_after_neg_formation"
    UNEXPLAINED_NO_CONDITIONER = "unexplained_no_conditioner"


@dataclass
class StepReport:
    step: int
    unexplained: list[int] = field(default_factory=list)
    new_csv: int | None = None
    refinements: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)
    duplications: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)
    flags_changed: list[tuple[int, Flag, Flag]] = field(default_factory=list)
    neg_formations: list[int] = field(default_factory=list)
    removed: list[int] = field(default_factory=list)
    names: dict[int, str] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        n = lambda i: self.names.get(i, str(i))  # noqa: E731
        return {
            "step": self.step,
            "unexplained": [n(i) for i in self.unexplained],
            "new_csv": None if self.new_csv is None else n(self.new_csv),
            "refinements": [[n(c), [n(s) for s in removed]] for c, removed in self.refinements],
            "duplications": [[n(o), [n(x) for x in new]] for o, new in self.duplications],
            "flags_changed": [[n(i), a.value, b.value] for i, a, b in self.flags_changed],
            "neg_formations": [n(i) for i in self.neg_formations],
            "removed": [n(i) for i in self.removed],
        }


class StepLogger:
    """Write one JSON object per processed step."""

    def __init__(self, stream: IO[str]):
        self.stream = stream

    def __call__(self, report: StepReport) -> None:
        self.stream.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")


# ------------------------------------------------------------- eligibility
def trivial_sources(model: Model, sv: int) -> set[int]:
    """Sources made uninformative by what ``sv`` already implies downstream.

    Walks ``sv`` and everything it conditions; collects the sources of every
    CSV met and the owner BSV of every DSV met.
    """
    out: set[int] = set()
    seen: set[int] = set()
    stack = [sv]
    while stack:
        x = stack.pop()
        if x in seen:
            continue
        seen.add(x)
        csv = model.csvs.get(x)
        if csv is not None:
            out |= csv.pos_sources
            out |= csv.neg_sources
            stack.extend(csv.targets)
        elif x in model.dsvs:
            out.add(model.dsvs[x].owner)
    return out


def upstream_positive_sources(model: Model, cid: int) -> set[int]:
    out: set[int] = set()
    seen: set[int] = set()
    stack = [cid]
    while stack:
        x = stack.pop()
        if x in seen:
            continue
        seen.add(x)
        out |= model.csvs[x].pos_sources
        stack.extend(model.conditioners_of.get(x, ()))
    return out


def eligible_positive_sources(
    model: Model, candidates: Sequence[int], prospective_targets: Sequence[int]
) -> tuple[list[int], list[int]]:
    trivial = {t: trivial_sources(model, t) for t in prospective_targets}
    kept = [c for c in candidates if any(c not in trivial[t] for t in prospective_targets)]
    kept_targets = [t for t in prospective_targets if any(c not in trivial[t] for c in kept)]
    return kept, kept_targets


def eligible_negative_sources(
    model: Model, csv: ConditioningSV, candidates: Iterable[int]
) -> list[int]:
    excluded = trivial_sources(model, csv.id) | upstream_positive_sources(model, csv.id)
    return [c for c in candidates if c not in excluded]


# ------------------------------------------------------------------- flags
def update_unconditionality(model: Model, sv: ConditioningSV | DynamicsSV, event: FlagEvent) -> None:
    old = sv.flag
    if event is FlagEvent.INACTIVE_AFTER_NEG_FORMATION:
        new = Flag.CONDITIONAL if old is Flag.UNCONDITIONAL else old
    else:
        new = Flag.POSSIBLY_CONDITIONAL
    if new is not old:
        sv.flag = new
        model.journal.append(("flag", sv.id, old, new))


# ------------------------------------------------------------ formations
def form_negative_connections(
    model: Model, csv: ConditioningSV, active_pool: Sequence[int] | None = None
) -> ConditioningSV | None:
    """Give an inactive CSV its negative sources; allowed once per CSV.

    Currently unobserved targets are first moved to an untouched copy, which
    is returned (or ``None`` when there was nothing to protect).
    """
    if csv.neg_formed:
        raise RuntimeError(f"{csv.name} already formed negative connections")
    protected = None
    unobserved = sorted(t for t in csv.targets if model.svs[t].state is UNOBSERVED)
    if unobserved and len(unobserved) < len(csv.targets):
        protected = model.clone_csv(csv, unobserved)
        for t in unobserved:
            model.remove_target(csv, t)
        protected.state = UNOBSERVED
        model._computed.add(protected.id)
        model.journal.append(("duplicate", csv.id, (csv.id, protected.id)))
    pool = model.active_pool() if active_pool is None else active_pool
    csv.neg_sources = set(eligible_negative_sources(model, csv, pool))
    csv.neg_formed = True
    model.journal.append(("negform", csv.id))
    return protected


def collect_unexplained(model: Model) -> list[int]:
    out = []
    for sv in list(model.dsvs.values()) + list(model.csvs.values()):
        if sv.state is not ACTIVE or sv.flag is Flag.UNCONDITIONAL:
            continue
        if any(model.csvs[c].state is ACTIVE for c in model.conditioners_of.get(sv.id, ())):
            continue
        out.append(sv.id)
    return sorted(out)


def form_csv(
    model: Model, unexplained: Sequence[int], active_pool: Sequence[int]
) -> ConditioningSV | None:
    """Create one CSV explaining the eligible unexplained SVs.

    Targets dropped by the eligibility filter become possibly conditional.
    """
    if not unexplained:
        return None
    sources, targets = eligible_positive_sources(model, active_pool, unexplained)
    for t in unexplained:
        if t not in targets:
            update_unconditionality(model, model.svs[t], FlagEvent.UNEXPLAINED_NO_CONDITIONER)
    if not targets:
        return None
    csv = model.new_csv(sources, targets)
    csv.state = ACTIVE
    return csv


# ----------------------------------------------------------- refinement
def model_refinement(model: Model) -> list[int]:
    """Drop CSVs without positive sources or targets and merge identical CSVs.

    Merging keeps the older CSV and adds up the NCE counters.  Repeats until
    nothing changes, since a removal can empty or duplicate a conditioner.
    Returns the removed ids.
    """
    removed: list[int] = []
    changed = True
    while changed:
        changed = False
        for cid in sorted(model.csvs):
            csv = model.csvs[cid]
            if not csv.pos_sources or not csv.targets:
                model.delete_csv(cid)
                removed.append(cid)
                changed = True
        groups: dict[tuple, list[int]] = defaultdict(list)
        for cid in sorted(model.csvs):
            c = model.csvs[cid]
            key = (
                frozenset(c.pos_sources),
                frozenset(c.neg_sources),
                frozenset(c.targets),
                c.neg_formed,
            )
            groups[key].append(cid)
        for ids in groups.values():
            if len(ids) < 2:
                continue
            keep = model.csvs[ids[0]]
            for cid in ids[1:]:
                _merge_into(model, keep, model.csvs[cid])
                removed.append(cid)
            changed = True
    return removed


def _merge_into(model: Model, keep: ConditioningSV, other: ConditioningSV) -> None:
    for t, c in other.counters.items():
        keep.counters[t] = keep.counters.get(t, NceCounters()) + c
    keep.flag = more_uncertain(keep.flag, other.flag)
    keep.blocked = keep.blocked and other.blocked
    if other.state is ACTIVE:
        keep.state = ACTIVE
    for c in sorted(model.conditioners_of.get(other.id, ())):
        cond = model.csvs[c]
        if keep.id not in cond.targets:
            cond.targets.add(keep.id)
            cond.counters[keep.id] = cond.counters.get(other.id, NceCounters())
            model.conditioners_of[keep.id].add(c)
    model.delete_csv(other.id)


# ------------------------------------------------------------------ step
def _sweep(model: Model, learning: bool, recorder=None) -> None:
    levels = computation_levels(model)
    order = sorted(levels, key=lambda c: (levels[c], c))
    queue = list(reversed(order))
    while queue:
        cid = queue.pop()
        csv = model.csvs.get(cid)
        if csv is None or cid in model._computed:
            continue
        if recorder is not None:
            recorder.before(model, csv)
        state, dup = compute_csv_state(model, csv, learning=learning)
        if not learning:
            continue
        ss = satisfied_now(model, csv)
        for t in csv.targets:
            update_counters(csv.counters.setdefault(t, NceCounters()), ss, model.svs[t].state)
        if state is INACTIVE:
            if not csv.neg_formed:
                form_negative_connections(model, csv)
            else:
                update_unconditionality(model, csv, FlagEvent.INACTIVE_AFTER_NEG_FORMATION)
        if dup is not None:
            queue.append(dup.id)


def process_environment_step(
    model: Model,
    observations: Mapping,
    learning_enabled: bool = True,
    *,
    epsilon: float | None = None,
    reset_counters_on_refinement: bool = False,
    recorder=None,
) -> StepReport:
    """Process one observation snapshot.

    ``epsilon`` turns on significance filtering (conditioner formation is
    blocked for CSVs whose targets all have |NCE| below it).  With learning
    disabled only states are computed; structure and counters stay frozen.
    """
    model.journal = []
    compute_dsv_states(model, observations)
    for csv in model.csvs.values():
        csv.prev_state = csv.state
        csv.state = UNOBSERVED
    model._computed = set()
    _sweep(model, learning_enabled, recorder)

    report = StepReport(step=model.step_counter)
    if learning_enabled:
        if reset_counters_on_refinement:
            for entry in model.journal:
                if entry[0] == "refine" and entry[1] in model.csvs:
                    csv = model.csvs[entry[1]]
                    csv.counters = {t: NceCounters() for t in csv.targets}
        if epsilon is not None:
            apply_significance_policy(model, epsilon)
        report.unexplained = collect_unexplained(model)
        candidates = [
            u for u in report.unexplained if not (u in model.csvs and model.csvs[u].blocked)
        ]
        new = form_csv(model, candidates, model.active_pool())
        report.new_csv = None if new is None else new.id
        report.names = {i: sv.name for i, sv in model.svs.items()}
        report.removed = model_refinement(model)
    else:
        report.unexplained = collect_unexplained(model)
        report.names = {i: sv.name for i, sv in model.svs.items()}

    for entry in model.journal:
        kind = entry[0]
        if kind == "refine":
            report.refinements.append((entry[1], entry[2]))
        elif kind == "duplicate":
            report.duplications.append((entry[1], entry[2]))
        elif kind == "flag":
            report.flags_changed.append((entry[1], entry[2], entry[3]))
        elif kind == "negform":
            report.neg_formations.append(entry[1])
    model.step_counter += 1
    return report


def build_model(bsv_names: Iterable[str], action_names: Iterable[str] = ()) -> Model:
    model = Model()
    for name in bsv_names:
        model.add_bsv(name)
    for name in action_names:
        model.add_bsv(name, is_action=True)
    return model

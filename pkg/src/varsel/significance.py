"""Normalized causal effect (NCE) of a CSV on each of its targets.

For a CSV ``C`` and target ``T`` four counts are kept, all restricted to
steps where ``T`` was observed (not unobserved)::

    NCE = (P(I | SS) - P(I)) / P(I)
    P(I)      = n_incidence / n_steps_observed
    P(I | SS) = n_cc / n_ss

where ``I`` is "T active", ``SS`` is "sources of C satisfied" and ``CC`` is
their conjunction.  Steps where the target is unobserved change nothing, so
the estimate never decays while a relationship is out of view.
"""

from __future__ import annotations

import csv as _csv
import io
from dataclasses import dataclass
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .model import Model, State


@dataclass
class NceCounters:
    n_steps_observed: int = 0
    n_incidence: int = 0
    n_ss: int = 0
    n_cc: int = 0

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.n_steps_observed, self.n_incidence, self.n_ss, self.n_cc)

    def __add__(self, other: "NceCounters") -> "NceCounters":
        return NceCounters(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))


def update_counters(counters: NceCounters, ss: bool, target_state: "State") -> None:
    from .model import State

    if target_state is State.UNOBSERVED:
        return
    incidence = target_state is State.ACTIVE
    counters.n_steps_observed += 1
    counters.n_incidence += incidence
    counters.n_ss += ss
    counters.n_cc += ss and incidence


def nce(counters: NceCounters) -> float | None:
    """Return the NCE, or ``None`` while any denominator is still zero."""
    if counters.n_steps_observed == 0 or counters.n_ss == 0 or counters.n_incidence == 0:
        return None
    p_i = counters.n_incidence / counters.n_steps_observed
    p_i_ss = counters.n_cc / counters.n_ss
    return (p_i_ss - p_i) / p_i


def is_insignificant(counters_by_target: dict[int, NceCounters], epsilon: float) -> bool:
    if not counters_by_target:
        return False
    for c in counters_by_target.values():
        value = nce(c)
        if value is None or abs(value) >= epsilon:
            return False
    return True


def apply_significance_policy(model: "Model", epsilon: float) -> list[int]:
    """Block conditioner formation for CSVs whose every target has |NCE| < epsilon.

    The block reflects current evidence and is re-evaluated on every call;
    relationships are never removed.  Returns the ids blocked after this call.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    blocked = []
    for cid in sorted(model.csvs):
        csv = model.csvs[cid]
        csv.blocked = is_insignificant(csv.counters, epsilon)
        if csv.blocked:
            blocked.append(cid)
    return blocked


def nce_table(model: "Model") -> list[dict]:
    rows = []
    for cid in sorted(model.csvs):
        csv = model.csvs[cid]
        for t in sorted(csv.counters):
            c = csv.counters[t]
            rows.append(
                {
                    "csv_id": csv.name,
                    "target_id": model.name(t),
                    "n_obs": c.n_steps_observed,
                    "n_inc": c.n_incidence,
                    "n_ss": c.n_ss,
                    "n_cc": c.n_cc,
                    "nce": nce(c),
                }
            )
    return rows


def nce_table_csv(model: "Model") -> str:
    buf = io.StringIO()
    fields = ["csv_id", "target_id", "n_obs", "n_inc", "n_ss", "n_cc", "nce"]
    writer = _csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in nce_table(model):
        writer.writerow({**row, "nce": "" if row["nce"] is None else repr(row["nce"])})
    return buf.getvalue()

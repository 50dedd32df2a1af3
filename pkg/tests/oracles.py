"""Reference implementations written straight from the definitions.

They share no code with the package beyond the State enum, so a test that
compares against them checks the package logic independently.
"""

from __future__ import annotations

from collections import deque
from itertools import product

from varsel.model import ACTIVE, INACTIVE, UNOBSERVED


def dsv_oracle(kind: str, before: bool, after: bool):
    """Activation ('A') or deactivation ('D') event state for one transition."""
    if kind == "A":
        if before:
            return UNOBSERVED
        return ACTIVE if after else INACTIVE
    if not before:
        return UNOBSERVED
    return INACTIVE if after else ACTIVE


def csv_oracle(pos, neg, prev, cur_targets):
    """Decision tree for one CSV on one instance.

    ``prev`` maps source -> state at the previous step, ``cur_targets`` maps
    target -> state now.  Returns (state, pos_after, neg_after, split) where
    ``split`` is None or (kept_targets, moved_targets).
    """
    active_t = {t for t, s in cur_targets.items() if s is ACTIVE}
    inactive_t = {t for t, s in cur_targets.items() if s is INACTIVE}
    unobs_t = set(cur_targets) - active_t - inactive_t
    pos_on = {s for s in pos if prev[s] is ACTIVE}
    neg_on = {s for s in neg if prev[s] is ACTIVE}
    if not pos_on:
        return UNOBSERVED, set(pos), set(neg), None
    split = None
    if active_t and inactive_t:
        split = (active_t | unobs_t, inactive_t | unobs_t)
    if active_t:
        return ACTIVE, pos_on, set(neg) - neg_on, split
    if not inactive_t:
        return UNOBSERVED, set(pos), set(neg), split
    if pos_on != set(pos):
        return UNOBSERVED, set(pos), set(neg), split
    if neg_on:
        return UNOBSERVED, set(pos), neg_on, split
    return INACTIVE, set(pos), set(neg), split


def topo_ok(order, conditions):
    """Each CSV appears after every CSV it conditions."""
    where = {c: i for i, c in enumerate(order)}
    return all(where[t] < where[c] for c, ts in conditions.items() for t in ts if t in where)


def bfs_reachable(succ, start):
    seen = {start}
    q = deque([start])
    while q:
        x = q.popleft()
        for y in succ.get(x, ()):
            if y not in seen:
                seen.add(y)
                q.append(y)
    return seen


def has_path(edges, u, v):
    """Plain BFS over an edge list, u != v."""
    succ = {}
    for a, b in edges:
        succ.setdefault(a, []).append(b)
    return v in bfs_reachable(succ, u) and u != v


def expected_episode_length(cells, goal, lookup, actions, policy):
    """Expected steps to the goal from the empty state by plain iteration.

    ``lookup(cells, action)`` returns a list of (next_cells, p) or None.
    ``policy`` is 'random' or 'optimal'.
    """
    value = {c: 0.0 for c in cells}
    for _ in range(20000):
        delta = 0.0
        for c in cells:
            if goal(c):
                continue
            outs = []
            for a in actions:
                t = lookup(c, a)
                outs.append(1.0 + sum(p * value[n] for n, p in (t or [(c, 1.0)])))
            if policy == "random":
                new = sum(outs) / len(outs)
            else:
                new = min(o for o, a in zip(outs, actions) if lookup(c, a))
            delta = max(delta, abs(new - value[c]))
            value[c] = new
        if delta < 1e-11:
            break
    return value


def all_state_assignments(ids, values=(ACTIVE, INACTIVE, UNOBSERVED)):
    for combo in product(values, repeat=len(ids)):
        yield dict(zip(ids, combo))

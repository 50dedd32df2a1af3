"""Hierarchical compression of action networks.

An exhaustive action network mixes several ways of reaching the goal.  It is
split into alternatives (one conditioning predecessor per choice point), the
nodes present in every alternative become subgoals, and the subgoals are
linked where every alternative connects them.  Whatever lies between two
linked subgoals is kept on the edge as a list of alternative subnetworks,
which are compressed the same way when they overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Sequence

import networkx as nx

from .planning import ActionNetwork, EdgeKind

DEFAULT_MAX_ALTERNATIVES = 4096
CONDITIONING = EdgeKind.CONDITIONING.value


class EncapsulationError(RuntimeError):
    """Raised when the number of alternatives exceeds the configured cap."""


def _sort_key(node: Hashable) -> str:
    return repr(node)


def _sorted(nodes: Iterable[Hashable]) -> list:
    return sorted(nodes, key=_sort_key)


# ------------------------------------------------------------ conversion
def an_to_digraph(net: ActionNetwork, include_dead_ends: bool = False) -> nx.DiGraph:
    """Directed graph of an action network with ``label``/``kind`` attributes."""
    g = nx.DiGraph(goal=net.goals[0] if net.goals else None)
    for key, node in net.nodes.items():
        if node.dead_end and not include_dead_ends:
            continue
        g.add_node(key, label=net.label(key), root=node.satisfied_by_current or node.is_choice)
    for (u, v), kind in net.edges.items():
        if u in g and v in g:
            g.add_edge(u, v, kind=kind.value)
    return g


def make_graph(
    edges: Sequence[tuple], goal: Hashable, kinds: dict | None = None
) -> nx.DiGraph:
    """Small helper for hand-built networks; edges default to conditioning."""
    g = nx.DiGraph(goal=goal)
    for u, v in edges:
        g.add_edge(u, v, kind=(kinds or {}).get((u, v), CONDITIONING))
    for n in g.nodes:
        g.nodes[n].setdefault("label", str(n))
    return g


def node_label(g: nx.DiGraph, n: Hashable) -> str:
    return g.nodes[n].get("label", str(n)) if n in g else str(n)


# ------------------------------------------------------------- splitting
def _prune_to_goal(g: nx.DiGraph, goal: Hashable) -> nx.DiGraph:
    if goal not in g:
        return nx.DiGraph(goal=goal)
    keep = nx.ancestors(g, goal) | {goal}
    out = g.subgraph(keep).copy()
    out.graph["goal"] = goal
    return out


def _choice_points(g: nx.DiGraph) -> list:
    out = []
    for n in _sorted(g.nodes):
        conds = [u for u in g.predecessors(n) if g.edges[u, n].get("kind") == CONDITIONING]
        if len(conds) > 1:
            out.append(n)
    return out


def split_alternatives(
    an: nx.DiGraph | ActionNetwork,
    goal: Hashable | None = None,
    max_alternatives: int = DEFAULT_MAX_ALTERNATIVES,
) -> list[nx.DiGraph]:
    """Expand every node with several conditioning predecessors into copies.

    Each copy keeps one conditioning predecessor per choice point; nodes that
    no longer lead to the goal are dropped, so later choice points may vanish.
    """
    g = an_to_digraph(an) if isinstance(an, ActionNetwork) else an
    goal = g.graph.get("goal") if goal is None else goal
    if goal not in g:
        return []
    out: list[nx.DiGraph] = []
    seen: set[frozenset] = set()
    stack = [_prune_to_goal(g, goal)]
    while stack:
        cur = stack.pop()
        points = _choice_points(cur)
        if not points:
            sig = frozenset(cur.edges) | frozenset((n,) for n in cur.nodes)
            if sig not in seen:
                seen.add(sig)
                out.append(cur)
                if len(out) > max_alternatives:
                    raise EncapsulationError(
                        f"more than {max_alternatives} alternatives; raise the cap"
                    )
            continue
        n = points[0]
        conds = _sorted(
            u for u in cur.predecessors(n) if cur.edges[u, n].get("kind") == CONDITIONING
        )
        for keep in reversed(conds):
            nxt = cur.copy()
            nxt.remove_edges_from((u, n) for u in conds if u != keep)
            stack.append(_prune_to_goal(nxt, goal))
    return out


# ------------------------------------------------------------- reduction
def _reach(g: nx.DiGraph) -> dict:
    return {n: nx.descendants(g, n) for n in g.nodes}


def reliable_relation(alternatives: Sequence[nx.DiGraph]) -> tuple[list, set]:
    """Nodes common to every alternative and pairs connected in all of them."""
    if not alternatives:
        raise ValueError("need at least one alternative")
    common = set(alternatives[0].nodes)
    for alt in alternatives[1:]:
        common &= set(alt.nodes)
    nodes = _sorted(common)
    reaches = [_reach(a) for a in alternatives]
    rel = {
        (u, v)
        for u in nodes
        for v in nodes
        if u != v and all(v in r[u] for r in reaches)
    }
    return nodes, rel


def _minimal_edges(nodes: list, rel: set) -> set:
    """Transitive reduction of ``rel``; strongly connected parts become cycles."""
    h = nx.DiGraph()
    h.add_nodes_from(nodes)
    h.add_edges_from(rel)
    cond = nx.condensation(h)
    members = {c: _sorted(cond.nodes[c]["members"]) for c in cond.nodes}
    out = set()
    for a, b in nx.transitive_reduction(cond).edges:
        pairs = [(u, v) for u in members[a] for v in members[b] if (u, v) in rel]
        out.add(min(pairs, key=lambda p: (_sort_key(p[0]), _sort_key(p[1]))))
    for c, ms in members.items():
        if len(ms) > 1:
            out |= {(ms[i], ms[(i + 1) % len(ms)]) for i in range(len(ms))}
    return out


def reduce_to_reliable(alternatives: Sequence[nx.DiGraph]) -> nx.DiGraph:
    """Skeleton of subgoals connected in every alternative.

    Nodes are those present in every alternative.  ``u -> v`` is kept when
    every alternative connects u to v and the link is not implied by other
    kept links, or when it is a direct edge in every alternative.  The result
    does not depend on the order of ``alternatives``.
    """
    nodes, rel = reliable_relation(alternatives)
    direct = {
        (u, v)
        for (u, v) in rel
        if all(a.has_edge(u, v) for a in alternatives)
    }
    edges = _minimal_edges(nodes, rel) | direct
    first = alternatives[0]
    out = nx.DiGraph(goal=first.graph.get("goal"))
    for n in nodes:
        out.add_node(n, **first.nodes[n])
    for u, v in sorted(edges, key=lambda p: (_sort_key(p[0]), _sort_key(p[1]))):
        kinds = {a.edges[u, v].get("kind") for a in alternatives if a.has_edge(u, v)}
        out.add_edge(u, v, kind=kinds.pop() if len(kinds) == 1 else None)
    return out


def reduce_by_edge_sweep(
    alternatives: Sequence[nx.DiGraph], seed: int = 0, max_sweeps: int = 10_000
) -> nx.DiGraph:
    """Sweep-style reduction starting from one alternative.

    Edges whose endpoints are not connected in every other alternative are
    removed, linking the source's predecessors to the target and the source
    to the target's successors, until nothing changes.  Nodes missing from
    some alternative are then dropped and the result is transitively reduced.
    """
    others = [a for i, a in enumerate(alternatives) if i != seed]
    reaches = [_reach(a) for a in others]
    cur = alternatives[seed].copy()

    def connected(u, v) -> bool:
        return all(u in r and v in r[u] for r in reaches)

    for _ in range(max_sweeps):
        bad = [(u, v) for u, v in _sorted(cur.edges) if not connected(u, v)]
        if not bad:
            break
        u, v = bad[0]
        preds = list(cur.predecessors(u))
        succs = list(cur.successors(v))
        cur.remove_edge(u, v)
        cur.add_edges_from((p, v) for p in preds if p != v)
        cur.add_edges_from((u, s) for s in succs if s != u)
    else:
        raise EncapsulationError("edge sweep did not settle")
    common = set(cur.nodes)
    for a in alternatives:
        common &= set(a.nodes)
    closure = _reach(cur)
    rel = {(u, v) for u in common for v in closure[u] if v in common and v != u}
    out = nx.DiGraph(goal=cur.graph.get("goal"))
    out.add_nodes_from(_sorted(common))
    out.add_edges_from(_minimal_edges(_sorted(common), rel))
    return out


# ----------------------------------------------------------- subpolicies
@dataclass
class Subpolicy:
    """One way of getting from an edge's source to its target."""

    nodes: frozenset
    graph: nx.DiGraph
    nested: "EncapsulatedAN | None" = None

    def labels(self) -> list[str]:
        return sorted(node_label(self.graph, n) for n in self.nodes)


@dataclass
class EncapsulatedEdge:
    source: Hashable
    target: Hashable
    alternatives: list[Subpolicy] = field(default_factory=list)

    @property
    def plain(self) -> bool:
        return all(not s.nodes for s in self.alternatives)


@dataclass
class EncapsulatedAN:
    skeleton: nx.DiGraph
    edges: dict[tuple, EncapsulatedEdge]
    goal: Hashable

    def label(self, n: Hashable) -> str:
        return node_label(self.skeleton, n)

    def depth(self) -> int:
        inner = [
            s.nested.depth()
            for e in self.edges.values()
            for s in e.alternatives
            if s.nested is not None
        ]
        return 1 + max(inner, default=0)

    def pathways(self, u: Hashable, v: Hashable) -> list[set[str]]:
        return [set(s.labels()) for s in self.edges[(u, v)].alternatives if s.nodes]

    def node_count(self) -> int:
        return self.skeleton.number_of_nodes()


def _between(g: nx.DiGraph, u: Hashable, v: Hashable, blocked: set) -> set:
    """Nodes on u->v paths whose interior avoids ``blocked``."""
    if u not in g or v not in g:
        return set()
    inner = g.subgraph(n for n in g.nodes if n not in blocked or n in (u, v))
    fwd = set()
    stack = [u]
    while stack:
        x = stack.pop()
        for y in inner.successors(x):
            if y not in fwd and y not in (u, v):
                fwd.add(y)
                stack.append(y)
    bwd = set()
    stack = [v]
    while stack:
        x = stack.pop()
        for y in inner.predecessors(x):
            if y not in bwd and y not in (u, v):
                bwd.add(y)
                stack.append(y)
    return fwd & bwd


def extract_subpolicies(
    reduced: nx.DiGraph, alternatives: Sequence[nx.DiGraph]
) -> EncapsulatedAN:
    """Attach to each skeleton edge the distinct ways alternatives realise it."""
    skeleton_nodes = set(reduced.nodes)
    edges: dict[tuple, EncapsulatedEdge] = {}
    for u, v in reduced.edges:
        edge = EncapsulatedEdge(u, v)
        seen: set[frozenset] = set()
        for alt in alternatives:
            inner = frozenset(_between(alt, u, v, skeleton_nodes - {u, v}))
            if inner in seen:
                continue
            seen.add(inner)
            sub = alt.subgraph(inner | {u, v}).copy()
            sub.graph["goal"] = v
            sub.graph["start"] = u
            edge.alternatives.append(Subpolicy(inner, sub))
        edge.alternatives.sort(key=lambda s: (len(s.nodes), sorted(map(_sort_key, s.nodes))))
        edges[(u, v)] = edge
    return EncapsulatedAN(reduced, edges, reduced.graph.get("goal"))


def _overlap_groups(subs: list[Subpolicy]) -> list[list[Subpolicy]]:
    g = nx.Graph()
    g.add_nodes_from(range(len(subs)))
    for i in range(len(subs)):
        for j in range(i + 1, len(subs)):
            if subs[i].nodes & subs[j].nodes:
                g.add_edge(i, j)
    comps = sorted((sorted(c) for c in nx.connected_components(g)), key=lambda c: c[0])
    return [[subs[i] for i in c] for c in comps]


def recursive_encapsulate(ean: EncapsulatedAN, _depth_guard: int = 64) -> EncapsulatedAN:
    """Compress overlapping subnetworks of every edge into nested EANs.

    Subnetworks sharing at least one node are grouped (transitively), and
    each group of two or more is reduced as a set of alternatives between the
    edge's endpoints.  Groups whose reduction finds no intermediate subgoal
    are left as they are.
    """
    if _depth_guard <= 0:
        return ean
    for edge in ean.edges.values():
        if edge.plain:
            continue
        new_alts: list[Subpolicy] = []
        for group in _overlap_groups([s for s in edge.alternatives if s.nodes]):
            if len(group) < 2:
                new_alts.extend(group)
                continue
            graphs = [s.graph for s in group]
            skeleton = reduce_to_reliable(graphs)
            if set(skeleton.nodes) <= {edge.source, edge.target}:
                new_alts.extend(group)
                continue
            nested = recursive_encapsulate(extract_subpolicies(skeleton, graphs), _depth_guard - 1)
            union = frozenset().union(*(s.nodes for s in group))
            merged = nx.compose_all(graphs)
            new_alts.append(Subpolicy(union, merged, nested))
        if any(not s.nodes for s in edge.alternatives):
            new_alts.insert(0, next(s for s in edge.alternatives if not s.nodes))
        edge.alternatives = new_alts
    return ean


def encapsulate(
    an: nx.DiGraph | ActionNetwork,
    goal: Hashable | None = None,
    max_alternatives: int = DEFAULT_MAX_ALTERNATIVES,
) -> EncapsulatedAN:
    """Split, reduce, extract and recursively compress an action network."""
    alts = split_alternatives(an, goal, max_alternatives)
    if not alts:
        raise ValueError("action network has no path to its goal")
    return recursive_encapsulate(extract_subpolicies(reduce_to_reliable(alts), alts))


def path_connected_everywhere(
    edges: Iterable[tuple], alternatives: Sequence[nx.DiGraph],
    has_path: Callable[[nx.DiGraph, Hashable, Hashable], bool] | None = None,
) -> bool:
    has_path = has_path or (lambda g, u, v: u in g and v in g and nx.has_path(g, u, v))
    return all(has_path(a, u, v) for u, v in edges for a in alternatives)

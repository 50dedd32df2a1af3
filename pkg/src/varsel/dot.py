"""Graphviz DOT text for models, action networks and encapsulated networks."""

from __future__ import annotations

from enum import Enum

from .encapsulation import EncapsulatedAN, node_label
from .model import Flag, Model
from .planning import ActionNetwork, EdgeKind


class ModelView(Enum):
    FULL = "full"
    RELIABLE = "reliable"
    PATHWAY = "pathway"


_BSV = 'shape=ellipse style=filled fillcolor="#d2a679"'
_DSV = 'shape=ellipse style=filled fillcolor="#a6c8e6"'
_CSV = {
    Flag.UNCONDITIONAL: 'shape=box style="filled,bold" fillcolor="#b5e3a6" penwidth=2',
    Flag.CONDITIONAL: 'shape=box style=filled fillcolor="#f3e6a0"',
    Flag.POSSIBLY_CONDITIONAL: 'shape=box style=filled fillcolor="#f2b8a0"',
}


def _q(text: str) -> str:
    return '"' + str(text).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _render(name: str, nodes: list[tuple[str, str]], edges: list[tuple[str, str, str]], extra=()) -> str:
    lines = [f"digraph {_q(name)} {{", "  rankdir=LR;"]
    lines += [f"  {_q(n)} [{attrs}];" for n, attrs in nodes]
    lines += [f"  {_q(u)} -> {_q(v)}" + (f" [{attrs}]" if attrs else "") + ";" for u, v, attrs in edges]
    lines += list(extra)
    lines.append("}")
    return "\n".join(lines) + "\n"


def _pathway_csvs(model: Model, sv: int) -> set[int]:
    if sv in model.bsvs:
        b = model.bsvs[sv]
        start = [d for d in (b.dsv_activation, b.dsv_deactivation) if d is not None]
    else:
        start = [sv]
    out: set[int] = set()
    stack = list(start)
    while stack:
        x = stack.pop()
        for c in model.conditioners_of.get(x, ()):
            if c not in out:
                out.add(c)
                stack.append(c)
    if sv in model.csvs:
        out.add(sv)
    return out


def export_model_dot(model: Model, mode: str | ModelView = ModelView.FULL, sv=None) -> str:
    """DOT of a model; disconnected SVs are left out.

    ``reliable`` keeps only unconditional CSVs; ``pathway`` keeps the CSVs
    that predict ``sv`` (directly or through conditioners) and their sources.
    """
    mode = ModelView(mode)
    if mode is ModelView.PATHWAY:
        if sv is None:
            raise ValueError("pathway view needs an SV")
        csvs = _pathway_csvs(model, model.resolve(sv))
    elif mode is ModelView.RELIABLE:
        csvs = {c for c, x in model.csvs.items() if x.flag is Flag.UNCONDITIONAL}
    else:
        csvs = set(model.csvs)

    edges: list[tuple[int, int, str]] = []
    for cid in sorted(csvs):
        c = model.csvs[cid]
        edges += [(s, cid, "") for s in sorted(c.pos_sources)]
        edges += [(s, cid, 'color=red arrowhead=tee style=dashed') for s in sorted(c.neg_sources)]
        edges += [(cid, t, 'color="#3060c0"') for t in sorted(c.targets) if t in model.dsvs or t in csvs]
    used = {u for u, _, _ in edges} | {v for _, v, _ in edges}
    for d in sorted(x for x in used if x in model.dsvs):
        edges.append((model.dsvs[d].owner, d, "style=dotted arrowhead=none"))
        used.add(model.dsvs[d].owner)

    nodes = []
    for i in sorted(used):
        if i in model.bsvs:
            nodes.append((model.name(i), _BSV))
        elif i in model.dsvs:
            nodes.append((model.name(i), _DSV))
        else:
            nodes.append((model.name(i), _CSV[model.csvs[i].flag]))
    named = [(model.name(u), model.name(v), a) for u, v, a in edges]
    return _render(f"model_{mode.value}", nodes, named)


_AN_EDGE = {
    EdgeKind.CONDITIONING: 'color="#3060c0"',
    EdgeKind.SOURCE: "",
    EdgeKind.PRECONDITION: "",
    EdgeKind.CONSTITUENT: 'color="#2a9d2a" style=dashed',
    EdgeKind.CONSTITUENCY: 'color="#2a9d2a"',
}


def export_an_dot(net: ActionNetwork, include_dead_ends: bool = True) -> str:
    """DOT of an action network; roots are doubled, dead ends greyed."""
    keep = [k for k, n in net.nodes.items() if include_dead_ends or not n.dead_end]
    keep_set = set(keep)
    nodes = []
    for k in keep:
        n = net.nodes[k]
        attrs = ["shape=box" if k[1] is None else "shape=ellipse"]
        if n.satisfied_by_current or n.is_choice:
            attrs.append("peripheries=2")
        if n.dead_end:
            attrs.append('style=filled fillcolor="#dddddd" fontcolor="#888888"')
        if k in net.goals:
            attrs.append('style=filled fillcolor="#ffd866"')
        nodes.append((net.label(k), " ".join(attrs)))
    edges = [
        (net.label(u), net.label(v), _AN_EDGE[kind])
        for (u, v), kind in net.edges.items()
        if u in keep_set and v in keep_set
    ]
    return _render("action_network", nodes, edges)


def export_ean_dot(ean: EncapsulatedAN, with_subpolicies: bool = False) -> str:
    """DOT of an encapsulated network; encapsulated edges are bold.

    With ``with_subpolicies`` each alternative of an encapsulated edge is
    drawn as a cluster next to the skeleton.
    """
    nodes = [(ean.label(n), "shape=ellipse") for n in ean.skeleton.nodes]
    edges = []
    extra: list[str] = []
    counter = 0
    for (u, v), e in ean.edges.items():
        if e.plain:
            edges.append((ean.label(u), ean.label(v), ""))
            continue
        n_alt = len(e.alternatives)
        edges.append((ean.label(u), ean.label(v), f'style=bold penwidth=3 label="{n_alt}"'))
        if not with_subpolicies:
            continue
        for sub in e.alternatives:
            counter += 1
            extra.append(f"  subgraph cluster_{counter} {{")
            extra.append(f'    label={_q(ean.label(u) + " -> " + ean.label(v))}; style=dashed;')
            for n in sorted(sub.nodes, key=repr):
                extra.append(f"    {_q(f'{counter}:{node_label(sub.graph, n)}')} [label={_q(node_label(sub.graph, n))}];")
            for a, b in sub.graph.edges:
                if a in sub.nodes and b in sub.nodes:
                    la = f"{counter}:{node_label(sub.graph, a)}"
                    lb = f"{counter}:{node_label(sub.graph, b)}"
                    extra.append(f"    {_q(la)} -> {_q(lb)};")
            extra.append("  }")
    return _render("encapsulated_network", nodes, edges, extra)

import itertools

import networkx as nx
import numpy as np
import pytest

from varsel.encapsulation import (
    EncapsulationError,
    encapsulate,
    extract_subpolicies,
    make_graph,
    recursive_encapsulate,
    reduce_by_edge_sweep,
    reduce_to_reliable,
    split_alternatives,
)

from helpers import two_route_graph, random_an_graph
from oracles import has_path


def _edges(g):
    return sorted(g.edges)


def _closure(g):
    return {(u, v) for u in g for v in nx.descendants(g, u)}


# ----------------------------------------------------------------- toy case
def test_toy_splits_into_two_pathways():
    alts = split_alternatives(two_route_graph())
    assert sorted(sorted(a.nodes) for a in alts) == [
        ["C0", "C2", "D0", "E1", "X", "Y", "Z"],
        ["C0", "D0", "E0", "X", "Y", "Z"],
    ]


def test_toy_skeleton_and_pathways():
    ean = encapsulate(two_route_graph())
    assert _edges(ean.skeleton) == [("C0", "D0"), ("D0", "Y"), ("X", "C0"), ("Y", "Z")]
    assert sorted(map(sorted, ean.pathways("D0", "Y"))) == [["C2", "E1"], ["E0"]]
    assert ean.edges[("X", "C0")].plain and not ean.edges[("D0", "Y")].plain
    assert ean.depth() == 1
    assert not list(ean.skeleton.successors("Z"))


def test_no_choice_point_is_identity():
    g = make_graph([("a", "b"), ("b", "c")], "c")
    [alt] = split_alternatives(g)
    assert _edges(alt) == _edges(g)


def test_single_alternative_reduces_to_itself():
    g = make_graph([("a", "b"), ("b", "c"), ("a", "c")], "c")
    assert _edges(reduce_to_reliable([g])) == _edges(g)


def test_disjoint_routes_become_one_edge():
    g = make_graph([("X", "P"), ("P", "Z"), ("X", "Q"), ("Q", "Z")], "Z")
    alts = split_alternatives(g)
    assert len(alts) == 2
    red = reduce_to_reliable(alts)
    assert _edges(red) == [("X", "Z")]
    assert all(has_path(a.edges, "X", "Z") for a in alts)


def test_overlapping_routes_are_nested():
    # three ways from S to T, two of them sharing M
    g = make_graph(
        [("S", "P"), ("P", "T"), ("S", "M"), ("M", "Q1"), ("Q1", "T"),
         ("M", "Q2"), ("Q2", "T")],
        "T",
    )
    ean = encapsulate(g)
    [edge] = ean.edges.values()
    nested = [s for s in edge.alternatives if s.nested is not None]
    assert len(nested) == 1
    assert ean.depth() == 2
    assert "M" in nested[0].nested.skeleton


def test_cap_on_alternatives():
    # twelve independent binary choices give 4096 alternatives
    edges = []
    for i in range(13):
        edges += [(f"S{i}", f"a{i}"), (f"S{i}", f"b{i}"), (f"a{i}", f"S{i+1}"), (f"b{i}", f"S{i+1}")]
    g = make_graph(edges, "S13")
    with pytest.raises(EncapsulationError):
        split_alternatives(g, max_alternatives=4096)
    assert len(split_alternatives(two_route_graph(), max_alternatives=2)) == 2
    with pytest.raises(EncapsulationError):
        split_alternatives(two_route_graph(), max_alternatives=1)


def test_unreachable_goal_rejected():
    g = make_graph([("a", "b")], "z")
    with pytest.raises(ValueError):
        encapsulate(g)


# -------------------------------------------------------------- properties
def _random_cases(seed, n):
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        alts = split_alternatives(random_an_graph(rng), max_alternatives=64)
        if alts:
            out.append(alts)
    return out


@pytest.mark.parametrize("chunk", range(4))
def test_reduction_properties_on_random_networks(chunk):
    for alts in _random_cases(100 + chunk, 50):
        red = reduce_to_reliable(alts)
        # idempotent
        again = reduce_to_reliable([red])
        assert _edges(again) == _edges(red) and sorted(again.nodes) == sorted(red.nodes)
        # independent of which alternative comes first
        for k in range(1, len(alts)):
            rot = alts[k:] + alts[:k]
            assert _edges(reduce_to_reliable(rot)) == _edges(red)
        # every skeleton node is needed, every edge is realised everywhere
        for a in alts:
            assert set(red.nodes) <= set(a.nodes)
            assert all(has_path(list(a.edges), u, v) for u, v in red.edges)


def test_sweep_procedure_agrees_on_small_cases():
    for alts in _random_cases(7, 60):
        red = reduce_to_reliable(alts)
        for seed in range(len(alts)):
            sw = reduce_by_edge_sweep(alts, seed)
            assert sorted(sw.nodes) == sorted(red.nodes)
            assert _closure(sw) == _closure(red)


def test_extracted_subpolicies_connect_endpoints():
    for alts in _random_cases(11, 30):
        ean = recursive_encapsulate(extract_subpolicies(reduce_to_reliable(alts), alts))
        for (u, v), edge in ean.edges.items():
            for s in edge.alternatives:
                if s.nodes and s.nested is None:
                    assert has_path(list(s.graph.edges), u, v)

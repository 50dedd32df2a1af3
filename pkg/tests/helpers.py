"""Small builders shared by the test modules."""

from __future__ import annotations

from varsel.learning import build_model
from varsel.model import Model


def instance_model(n_sources: int, n_targets: int):
    """Model whose DSVs serve as free-form sources and targets.

    DSV states can take all three values, so any instance can be written
    straight into ``prev_state``/``state``.
    """
    m = build_model([f"S{i}" for i in range(n_sources)] + [f"T{i}" for i in range(n_targets)])
    src = [m.by_name[f"S{i}_A"] for i in range(n_sources)]
    tgt = [m.by_name[f"T{i}_A"] for i in range(n_targets)]
    return m, src, tgt


def fresh_csv(m: Model, pos, neg, targets):
    for cid in list(m.csvs):
        m.delete_csv(cid)
    csv = m.new_csv(pos, targets, neg)
    m._computed = set()
    m.journal = []
    return csv


def set_instance(m: Model, prev: dict, cur: dict) -> None:
    for s, st in prev.items():
        m.svs[s].prev_state = st
    for t, st in cur.items():
        m.svs[t].state = st


def observe(m: Model, active=(), **kw):
    """Feed one step where exactly the BSVs named in ``active`` are on."""
    from varsel.learning import process_environment_step

    obs = {b.name: (b.name in active) for b in m.bsvs.values()}
    return process_environment_step(m, obs, **kw)


def names(m: Model, ids) -> set[str]:
    return {m.name(i) for i in ids}


def random_model(rng, n_states: int = 4, n_actions: int = 3, n_csvs: int = 10) -> Model:
    """Random acyclic CSV graph over a small BSV set, with live states.

    New CSVs only target DSVs or older CSVs, so the graph stays acyclic.
    """
    from varsel.model import Flag

    m = build_model([f"B{i}" for i in range(n_states)], [f"a{i}" for i in range(n_actions)])
    sources = list(m.bsvs) + list(m.dsvs)
    flags = list(Flag)
    for _ in range(int(rng.integers(1, n_csvs + 1))):
        pos = rng.choice(sources, size=int(rng.integers(1, 4)), replace=False)
        rest = [s for s in sources if s not in pos and not (s in m.bsvs and m.bsvs[s].is_action)]
        neg = rng.choice(rest, size=int(rng.integers(0, 3)), replace=False)
        pool = list(m.dsvs) + list(m.csvs)
        tgt = rng.choice(pool, size=int(rng.integers(1, 3)), replace=False)
        c = m.new_csv([int(x) for x in pos], [int(x) for x in tgt], [int(x) for x in neg])
        c.flag = flags[int(rng.integers(len(flags)))]
    for _ in range(2):
        on = [b.name for b in m.bsvs.values() if rng.random() < 0.5]
        observe(m, on, learning_enabled=False)
    return m


def two_route_graph():
    """Two ways from D0 to Y: through E0, or through C2 then E1."""
    from varsel.encapsulation import make_graph

    edges = [
        ("X", "C0"), ("C0", "D0"), ("D0", "E0"), ("E0", "Y"),
        ("D0", "C2"), ("C2", "E1"), ("E1", "Y"), ("Y", "Z"),
    ]
    kinds = {("X", "C0"): "source", ("Y", "Z"): "source", ("D0", "C2"): "source"}
    return make_graph(edges, "Z", kinds)


def random_an_graph(rng, max_nodes: int = 12):
    """Random DAG ending in a goal node, edges mixed conditioning/source."""
    from varsel.encapsulation import make_graph

    n = int(rng.integers(3, max_nodes + 1))
    names = [f"N{i}" for i in range(n)]
    edges, kinds = [], {}
    for j in range(1, n):
        preds = rng.choice(j, size=int(rng.integers(1, min(j, 3) + 1)), replace=False)
        for i in preds:
            e = (names[int(i)], names[j])
            edges.append(e)
            kinds[e] = "conditioning" if rng.random() < 0.6 else "source"
    return make_graph(edges, names[-1], kinds)

from collections import Counter

import numpy as np
import pytest

from varsel.environment import SmrEnvironment, bsv_names, bundled_spec
from varsel.learning import build_model, process_environment_step
from varsel.model import Flag
from varsel.planning import (
    PRECONDITION,
    ActionNetwork,
    EdgeKind,
    OutcomeMemory,
    TargetTag,
    build_gsvs,
    candidate_actions,
    choose_action,
    generate_upstream_an,
    plan,
    satisfied_by_current,
)

from helpers import observe, random_model

A, D, ONE, ZERO = TargetTag.A, TargetTag.D, TargetTag.ONE, TargetTag.ZERO


def test_precondition_table():
    assert PRECONDITION == {A: ZERO, D: ONE, ONE: A, ZERO: D}
    assert len(set(PRECONDITION.values())) == 4


# ------------------------------------------------------------------ GSVs
def test_groups_for_sources_and_joint_events():
    m = build_model([f"B{i}" for i in range(5)])
    b = [m.by_name[f"B{i}"] for i in range(5)]
    m.new_csv(b[:3], [m.by_name["B3_D"], m.by_name["B4_D"]])
    view = build_gsvs(m)
    groups = {g.name: g.constituents for g in view.gsvs.values()}
    assert groups == {"G0": tuple(b[:3]), "G1": (b[3], b[4])}


def test_shared_source_set_reuses_group():
    m = build_model(["B0", "B1", "B2"])
    b0, b1 = m.by_name["B0"], m.by_name["B1"]
    m.new_csv([b0, b1], [m.by_name["B2_A"]])
    m.new_csv([b0, b1], [m.by_name["B2_D"]])
    assert len(build_gsvs(m).gsvs) == 1


def test_single_source_makes_no_group():
    m = build_model(["B0", "B1"])
    m.new_csv([m.by_name["B0"]], [m.by_name["B1_A"]])
    assert build_gsvs(m).gsvs == {}


def test_groups_are_never_singletons():
    rng = np.random.default_rng(0)
    for _ in range(50):
        view = build_gsvs(random_model(rng))
        assert all(len(g.constituents) >= 2 for g in view.gsvs.values())


# ----------------------------------------------------------- satisfaction
def _gsv_state_oracle(members, actives):
    on = [x in actives for x in members]
    return all(on), not all(on)


def test_satisfied_examples():
    m = build_model(["B", "C"])
    observe(m, ["B"])
    observe(m, ["B"])
    view = build_gsvs(m)
    b = m.by_name["B"]
    actives = m.current_actives()
    assert satisfied_by_current(view, actives, b, ONE)
    assert not satisfied_by_current(view, actives, b, A)
    assert not satisfied_by_current(view, actives, b, ZERO)


def test_group_satisfaction_matches_oracle():
    m = build_model(["B0", "B1", "B2"])
    b = [m.by_name[f"B{i}"] for i in range(3)]
    m.new_csv(b, [m.by_name["B0_A"]])
    view = build_gsvs(m)
    [g] = view.gsvs
    for mask in range(8):
        actives = {b[i] for i in range(3) if mask >> i & 1}
        one, zero = _gsv_state_oracle(b, actives)
        assert satisfied_by_current(view, actives, g, ONE) is one
        assert satisfied_by_current(view, actives, g, ZERO) is zero


# ----------------------------------------------------------------- plans
def _toggle_model():
    """B switched on by action a3 (unconditionally), off by a1."""
    m = build_model(["B"], ["a0", "a1", "a2", "a3"])
    m.new_csv([m.by_name["a3"]], [m.by_name["B_A"]])
    m.new_csv([m.by_name["a1"]], [m.by_name["B_D"]])
    observe(m, [], learning_enabled=False)
    observe(m, [], learning_enabled=False)
    return m


def test_satisfied_goal_is_a_lone_root():
    m = build_model(["B"])
    observe(m, ["B"])
    net = plan(m, None, [("B", ONE)])
    assert list(net.nodes) == [(m.by_name["B"], ONE)]
    assert net.edges == {} and net.goal_reachable()


def test_goal_without_conditioners_is_dead_end():
    m = build_model(["B"], ["a0"])
    observe(m, [])
    net = plan(m, None, [("B", ONE)])
    assert not net.goal_reachable()
    assert net.nodes[(m.by_name["B"], A)].dead_end


def test_unknown_goal_raises():
    with pytest.raises(KeyError):
        plan(build_model(["B"]), set(), [("nope", ONE)])


def test_event_expands_to_precondition_and_conditioner():
    m = _toggle_model()
    b = m.by_name["B"]
    net = plan(m, None, [("B", A)])
    preds = {net.label(u): k for (u, v), k in net.edges.items() if v == (b, A)}
    assert preds == {"B(0)": EdgeKind.PRECONDITION, "C0": EdgeKind.CONDITIONING}
    assert net.goal_reachable()


def test_group_expands_constituents_groups_and_event():
    m = build_model(["B1", "B2", "B3", "B4"], ["a0"])
    b1, b2, b3 = (m.by_name[n] for n in ("B1", "B2", "B3"))
    m.new_csv([b2, b3], [m.by_name["B4_A"]])
    m.new_csv([b1, b2, b3], [m.by_name["B4_D"]])
    observe(m, [])
    view = build_gsvs(m)
    g0 = view.gsv_by_set[frozenset({b2, b3})]
    g1 = view.gsv_by_set[frozenset({b1, b2, b3})]
    net = ActionNetwork(view)
    generate_upstream_an(net, g0, ONE, set(), m.current_actives())
    kinds = {(net.label(u), k) for (u, v), k in net.edges.items() if v == (g0, ONE)}
    assert kinds == {
        ("B2(1)", EdgeKind.CONSTITUENT),
        ("B3(1)", EdgeKind.CONSTITUENT),
        (view.name(g1) + "(1)", EdgeKind.CONSTITUENCY),
        (view.name(g0) + "(A)", EdgeKind.PRECONDITION),
    }


def test_cycles_are_not_reopened():
    m = build_model(["B", "X"], ["a0"])
    b, x = m.by_name["B"], m.by_name["X"]
    m.new_csv([x], [m.by_name["B_A"]])
    c1 = m.new_csv([b], [m.by_name["X_A"]])
    observe(m, [])
    # (B,1) <- (B,A) <- C0 <- (X,1) <- (X,A) <- C1 <- (B,1): closed by an edge
    net = plan(m, None, [("B", ONE)])
    assert ((b, ONE), (c1.id, None)) in net.edges
    assert not net.goal_reachable()


def test_plan_is_read_only_and_deterministic():
    rng = np.random.default_rng(5)
    for _ in range(30):
        m = random_model(rng)
        doc = m.to_dict()
        goal = [(int(rng.choice(list(m.bsvs))), ONE)]
        assert plan(m, None, goal).signature() == plan(m, None, goal).signature()
        assert m.to_dict() == doc


def test_roots_are_satisfied_now():
    rng = np.random.default_rng(6)
    for _ in range(50):
        m = random_model(rng)
        view = build_gsvs(m)
        actives = m.current_actives()
        goal = (int(rng.choice([b for b in m.bsvs if not m.bsvs[b].is_action])), ONE)
        net = plan(m, None, [goal], view=view)
        for k in net.roots:
            node = net.nodes[k]
            assert node.is_choice or satisfied_by_current(view, actives, *k)
            assert not node.satisfied_by_current or not net.preds[k]


def test_node_count_bound_on_random_models():
    rng = np.random.default_rng(7)
    for _ in range(100):
        m = random_model(rng, n_csvs=15)
        view = build_gsvs(m)
        for b in m.bsvs:
            net = plan(m, None, [(b, ONE)], view=view)
            assert len(net.nodes) <= 5 * (len(m.svs) + len(view.gsvs))


def test_learned_model_has_pathway_to_goal():
    spec = bundled_spec("complete")
    states, actions = bsv_names(spec)
    m = build_model(states, actions)
    env = SmrEnvironment(spec, 0)
    rng = np.random.default_rng(0)
    process_environment_step(m, env.reset().observations)
    for _ in range(3000):
        process_environment_step(m, env.step(int(rng.integers(spec.n_actions))).observations)
    goal = m.by_name["1G"]
    net = plan(m, None, [("1G", ONE)])
    conds = net.preds_of((goal, A), EdgeKind.CONDITIONING)
    assert conds
    assert all(m.dsvs[m.by_name["1G_A"]].id in m.csvs[c[0]].targets for c in conds)


# --------------------------------------------------------- action choice
def test_single_firing_action_is_chosen():
    m = _toggle_model()
    net = plan(m, None, [("B", ONE)])
    rng = np.random.default_rng(0)
    assert candidate_actions(net, m) == ([m.by_name["a3"]], [m.by_name["a3"]])
    assert {choose_action(net, m, rng, 0.0) for _ in range(20)} == {m.by_name["a3"]}


def test_no_candidate_falls_back_to_uniform():
    m = build_model(["B"], [f"a{i}" for i in range(4)])
    observe(m, [])
    net = plan(m, None, [("B", ONE)])
    rng = np.random.default_rng(1)
    picks = Counter(choose_action(net, m, rng, 0.0) for _ in range(2000))
    assert set(picks) == set(m.action_ids)
    assert min(picks.values()) > 400


def test_full_exploration_is_uniform_over_twenty():
    m = build_model(["B"], [f"a{i}" for i in range(20)])
    m.new_csv([m.by_name["a3"]], [m.by_name["B_A"]])
    observe(m, [])
    net = plan(m, None, [("B", ONE)])
    rng = np.random.default_rng(2)
    picks = Counter(choose_action(net, m, rng, 1.0) for _ in range(20_000))
    assert len(picks) == 20
    # chi-square with 19 dof, 0.999 quantile is about 43.8
    chi2 = sum((n - 1000) ** 2 / 1000 for n in picks.values())
    assert chi2 < 43.8


def test_choice_is_seed_deterministic():
    m = _toggle_model()
    net = plan(m, None, [("B", ONE)])
    a = [choose_action(net, m, np.random.default_rng(9), 0.5) for _ in range(5)]
    b = [choose_action(net, m, np.random.default_rng(9), 0.5) for _ in range(5)]
    assert a == b


def test_reliable_candidates_come_first():
    m = _toggle_model()
    # a second, conditional route through a2
    c = m.new_csv([m.by_name["a2"]], [m.by_name["B_A"]])
    c.flag = Flag.POSSIBLY_CONDITIONAL
    net = plan(m, None, [("B", ONE)])
    reliable, anyway = candidate_actions(net, m)
    assert reliable == [m.by_name["a3"]]
    assert anyway == sorted([m.by_name["a2"], m.by_name["a3"]])


def test_choice_needs_actions():
    m = build_model(["B"])
    observe(m, [])
    with pytest.raises(ValueError):
        choose_action(plan(m, None, [("B", ONE)]), m, np.random.default_rng(0))


def test_outcome_memory_skips_failed_firing_in_same_state():
    m = _toggle_model()
    a3 = m.by_name["a3"]
    c0 = next(c for c in m.csvs.values() if a3 in c.pos_sources)
    mem = OutcomeMemory()
    # a3 taken, B stays off: the unconditional CSV fails in state {}
    observe(m, ["a3"])
    assert m.csvs[c0.id].state.name == "INACTIVE"
    mem.update(m)
    assert c0.id in mem.blocked(m)
    net = plan(m, None, [("B", ONE)])
    assert candidate_actions(net, m, mem.blocked(m)) == ([], [])
    # success in the same state clears the record
    observe(m, ["B", "a3"])
    mem.update(m)
    assert c0.id not in mem.failed or not mem.failed[c0.id]

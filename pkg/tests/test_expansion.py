import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aepn.core import Marking, Token, initial_state, insert_tokens, set_observability
from aepn.errors import IndexOutOfRange
from aepn.expansion import (
    A_TRANSITION,
    E_TRANSITION,
    action_index_to_binding,
    encode_token,
    expand,
    map_to_graph,
    node_type_dims,
    observe,
)
from aepn.patterns import build_problem, disjoint_demo_net, fig1_net, joint_demo_net
from aepn.semantics import advance, enabled_bindings, fire, is_terminal

BENCH = ["a", "b", "c", "d", "e", "f", "g", "h"]


def _reachable(net, seed, steps):
    """Decision marking reached after ``steps`` random actions (or the terminal one)."""
    rng = np.random.default_rng(seed)
    m = advance(net, initial_state(net, 0))
    for _ in range(steps):
        if is_terminal(net, m):
            break
        bs = enabled_bindings(net, m, "A")
        m = advance(net, fire(net, m, bs[int(rng.integers(len(bs)))]).marking)
    return m


class TestExpand:
    def test_disjoint_demo(self):
        net = disjoint_demo_net()
        x = expand(net, initial_state(net, 0))
        assert len(x.places) == 8
        assert all(p.token is not None for p in x.places)
        assert [t.origin for t in x.transitions] == ["Start1"] * 3 + ["Start2"] * 3
        assert [x.get_A_transition_type(i) for i in range(6)] == [0, 0, 0, 1, 1, 1]

    def test_joint_demo_shares_pool(self):
        net = joint_demo_net()
        x = expand(net, initial_state(net, 0))
        pool = {i for i, p in enumerate(x.places) if p.origin == "Resources"}
        assert len(pool) == 3
        for t in x.transitions:
            assert len(set(t.inputs) & pool) == 1
        used = {next(iter(set(t.inputs) & pool)) for t in x.transitions}
        assert used == pool

    def test_empty_marking(self):
        net = fig1_net()
        m = initial_state(net, 0)
        m.tokens = {k: () for k in m.tokens}
        x = expand(net, m)
        assert x.places == [] and x.transitions == []

    def test_e_bindings_expanded_too(self):
        net = fig1_net()
        x = expand(net, initial_state(net, 0))
        assert [t.origin for t in x.transitions] == ["Arrive", "Arrive"]
        assert x.get_E_transition_type(0) == 0

    def test_arcs_link_bound_tokens(self):
        net = disjoint_demo_net()
        x = expand(net, initial_state(net, 0))
        for t in x.transitions:
            assert tuple(x.places[i].token for i in t.inputs) == t.binding.tokens

    def test_exports(self):
        net = joint_demo_net()
        x = expand(net, initial_state(net, 0))
        doc = json.loads(json.dumps(x.to_json()))
        assert len(doc["places"]) == 5 and len(doc["transitions"]) == 6
        assert x.to_dot().startswith("digraph")


class TestMapping:
    def test_disjoint_two_components(self):
        net = disjoint_demo_net()
        g = observe(net, initial_state(net, 0))
        assert g.num_components() == 2
        assert g.num_actions == 6

    def test_joint_one_component(self):
        net = joint_demo_net()
        g = observe(net, initial_state(net, 0))
        assert g.num_components() == 1

    def test_hidden_arrival(self):
        net = set_observability(fig1_net(), "Arrival", False)
        m = initial_state(net, 0)
        g = observe(net, m)
        assert "Arrival" not in g.origins
        assert g.node_types.count(E_TRANSITION) == 2
        e_nodes = {i for i, t in enumerate(g.node_types) if t == E_TRANSITION}
        assert not any(s in e_nodes or d in e_nodes for s, d in g.edges)

    def test_place_features(self):
        net = fig1_net()
        m = advance(net, initial_state(net, 0))
        g = observe(net, m)
        i = g.origins.index("Waiting")
        assert g.node_types[i] == "Place[task_type:cat2]"
        np.testing.assert_array_equal(g.features[i], [0.0, 1.0, 0.0])
        busy = net.place("Busy")
        np.testing.assert_array_equal(encode_token(busy, Token(5.0, (1, 0)), 10.0), [0.5, 0, 1, 1, 0])

    def test_node_type_dims(self):
        dims = node_type_dims(fig1_net())
        assert dims[A_TRANSITION] == 1 and dims[E_TRANSITION] == 2
        assert dims["Place[task_type:cat2]"] == 3
        assert dims["Place[task_type:cat2,id:cat2]"] == 5

    def test_action_index_to_binding(self):
        net = disjoint_demo_net()
        m = initial_state(net, 0)
        g = observe(net, m)
        assert action_index_to_binding(g, 0) == enabled_bindings(net, m, "A")[0]
        assert action_index_to_binding(g, 0).transition == "Start1"
        with pytest.raises(IndexOutOfRange):
            action_index_to_binding(g, g.num_actions)
        with pytest.raises(IndexOutOfRange):
            action_index_to_binding(g, -1)

    def test_single_action(self):
        net = fig1_net()
        m = advance(net, initial_state(net, 0))
        first = enabled_bindings(net, m, "A")[0]
        m = fire(net, m, first).marking
        g = observe(net, m)
        assert g.num_actions == 1
        assert action_index_to_binding(g, 0) == enabled_bindings(net, m, "A")[0]

    def test_dot_export(self):
        net = joint_demo_net()
        g = observe(net, initial_state(net, 0))
        dot = g.to_dot()
        assert dot.count("doublecircle") == g.num_actions
        assert 'label="A_Transition|1,0"' in dot
        assert 'label="Place[resource_id:cat3]|0,1,0,0"' in dot

    def test_json_export(self):
        net = disjoint_demo_net()
        g = observe(net, initial_state(net, 0))
        doc = json.loads(json.dumps(g.to_json()))
        assert len(doc["nodes"]) == g.num_nodes
        assert doc["action_nodes"] == [i for i, _ in g.action_nodes]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(BENCH + ["fig1"]), st.integers(0, 2**16), st.integers(0, 25))
def test_mapping_invariants(problem, seed, steps):
    net = fig1_net() if problem == "fig1" else build_problem(problem)
    m = _reachable(net, seed, steps)
    x = expand(net, m)
    g = map_to_graph(x, net)
    hidden = {p.id for p in net.places if not p.observable}

    # exclusion: no node for hidden or empty places
    assert not hidden & set(g.origins)
    n_obs = sum(len(m.tokens[p.id]) for p in net.places if p.observable)
    n_place_nodes = sum(1 for t in g.node_types if t.startswith("Place["))
    assert n_place_nodes == n_obs

    # place features: time first, then only observed attributes
    for t, f, o in zip(g.node_types, g.features, g.origins):
        if t.startswith("Place["):
            place = net.place(o)
            assert f.shape == (1 + sum(a.width for a in place.observed_attributes),)

    # one-hot transition features
    by_origin = {}
    for t, f, o in zip(g.node_types, g.features, g.origins):
        if t in (A_TRANSITION, E_TRANSITION):
            assert f.sum() == 1.0
            assert int(np.argmax(f)) == net.transition(o).type_index
            by_origin.setdefault(o, f)
            np.testing.assert_array_equal(by_origin[o], f)

    # edge soundness
    for s, d in g.edges:
        assert g.node_types[s].startswith("Place[")
        assert g.origins[s] not in hidden
        assert g.node_types[d] in (A_TRANSITION, E_TRANSITION)

    # action nodes <-> enabled A bindings, same order
    assert [b for _, b in g.action_nodes] == enabled_bindings(net, m, "A")
    assert all(g.node_types[i] == A_TRANSITION for i, _ in g.action_nodes)


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(BENCH), st.integers(0, 2**16), st.integers(0, 15), st.randoms(use_true_random=False))
def test_token_order_does_not_change_graph(problem, seed, steps, rnd):
    net = build_problem(problem)
    m = _reachable(net, seed, steps)
    shuffled = {}
    for pid, toks in m.tokens.items():
        toks = list(toks)
        rnd.shuffle(toks)
        shuffled[pid] = insert_tokens((), toks)
    m2 = Marking(shuffled, m.clock, m.tag, m.cumulative_reward, m.rng)
    assert observe(net, m2).canonical_hash() == observe(net, m).canonical_hash()


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(BENCH), st.integers(0, 2**16), st.integers(0, 15))
def test_hiding_attributes_removes_their_values(problem, seed, steps):
    net = build_problem(problem)
    pool = next(p for p in net.places if p.id.startswith("Resources"))
    hidden = set_observability(net, pool.id, True, [False])
    m = _reachable(net, seed, steps)
    g = observe(hidden, m)
    for f, o in zip(g.features, g.origins):
        if o == pool.id:
            assert f.shape == (1,)

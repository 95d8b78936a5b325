"""Expansion of a marked net and its mapping to an assignment graph.

Expansion gives every token its own place and every enabled binding its own
transition.  Arcs run from the expanded places of a binding's tokens to that
binding's expanded transition; output arcs are dropped because the tokens
they would point at do not exist yet.

The mapping then keeps observable places only, encodes each surviving token
as ``[time, observed attributes...]`` and each expanded transition as the
one-hot of its origin's type index.  Action nodes are listed in exactly the
order of ``enabled_bindings(net, marking, "A")`` so an integer action picks a
binding unambiguously.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import CAT, REAL, TAG_A, TAG_E, Marking, NetDef, Place, Token
from .errors import IndexOutOfRange
from .semantics import Binding, enabled_bindings

A_TRANSITION = "A_Transition"
E_TRANSITION = "E_Transition"


class ExpandedPlace(NamedTuple):
    origin: str
    token: Token


class ExpandedTransition(NamedTuple):
    origin: str
    tag: str
    type_index: int
    binding: Binding
    inputs: tuple[int, ...]


@dataclass
class ExpandedNet:
    net: NetDef
    marking: Marking
    places: list[ExpandedPlace]
    transitions: list[ExpandedTransition]

    @property
    def arcs(self) -> list[tuple[int, int]]:
        """(expanded place index, expanded transition index) pairs."""
        return [(p, i) for i, t in enumerate(self.transitions) for p in t.inputs]

    def get_A_transition_type(self, i: int) -> int:
        t = self.transitions[i]
        assert t.tag == TAG_A
        return t.type_index

    def get_E_transition_type(self, i: int) -> int:
        t = self.transitions[i]
        assert t.tag == TAG_E
        return t.type_index

    def to_json(self) -> dict:
        return {
            "places": [
                {"origin": p.origin, "time": p.token.time, "values": list(p.token.values)}
                for p in self.places
            ],
            "transitions": [
                {"origin": t.origin, "tag": t.tag, "type_index": t.type_index, "inputs": list(t.inputs)}
                for t in self.transitions
            ],
            "arcs": [list(a) for a in self.arcs],
        }

    def to_dot(self) -> str:
        lines = ["digraph expanded {", "  rankdir=LR;"]
        for i, p in enumerate(self.places):
            vals = ",".join(str(v) for v in p.token.values)
            lines.append(f'  p{i} [shape=circle, label="{p.origin}\\n{p.token.time:g}|{vals}"];')
        for i, t in enumerate(self.transitions):
            lines.append(f'  t{i} [shape=box, label="{t.origin}:{t.tag}"];')
        for p, t in self.arcs:
            lines.append(f"  p{p} -> t{t};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def expand(net: NetDef, marking: Marking) -> ExpandedNet:
    places: list[ExpandedPlace] = []
    where: dict[str, list[int]] = {}
    for p in net.places:
        for tok in marking.tokens.get(p.id, ()):
            where.setdefault(p.id, []).append(len(places))
            places.append(ExpandedPlace(p.id, tok))

    bindings = enabled_bindings(net, marking, TAG_A) + enabled_bindings(net, marking, TAG_E)
    order = {t.id: i for i, t in enumerate(net.transitions)}
    # stable sort keeps the per-transition enumeration order
    bindings.sort(key=lambda b: order[b.transition])

    transitions = []
    for b in bindings:
        spec = net.transition(b.transition)
        used: set[int] = set()
        inputs = []
        for (pid, _), tok in zip(spec.input_arcs, b.tokens):
            idx = next(i for i in where[pid] if i not in used and places[i].token == tok)
            used.add(idx)
            inputs.append(idx)
        transitions.append(ExpandedTransition(b.transition, spec.tag, spec.type_index, b, tuple(inputs)))
    return ExpandedNet(net, marking, places, transitions)


def place_type(place: Place) -> str:
    return "Place[" + ",".join(a.label() for a in place.observed_attributes) + "]"


def place_feature_dim(place: Place) -> int:
    return 1 + sum(a.width for a in place.observed_attributes)


def node_type_dims(net: NetDef) -> dict[str, int]:
    """Feature width per node type for the net's current observability."""
    dims = {A_TRANSITION: max(net.num_A_types, 1), E_TRANSITION: max(net.num_E_types, 1)}
    for p in net.places:
        if p.observable:
            dims.setdefault(place_type(p), place_feature_dim(p))
    return dims


def one_hot(index: int, n: int) -> np.ndarray:
    v = np.zeros(max(n, 1))
    v[index] = 1.0
    return v


def encode_token(place: Place, token: Token, horizon: float) -> np.ndarray:
    out = [token.time / horizon]
    for attr, flag, value in zip(place.schema, place.attribute_observable, token.values):
        if not flag:
            continue
        if attr.kind == CAT:
            out.extend(one_hot(int(value), attr.cardinality))
        elif attr.kind == REAL:
            out.append(float(value) / horizon)
        else:
            out.append(float(value))
    return np.asarray(out, dtype=float)


@dataclass
class AssignmentGraph:
    node_types: list[str] = field(default_factory=list)
    features: list[np.ndarray] = field(default_factory=list)
    origins: list[str] = field(default_factory=list)
    edges: list[tuple[int, int]] = field(default_factory=list)
    action_nodes: list[tuple[int, Binding]] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return len(self.node_types)

    @property
    def num_actions(self) -> int:
        return len(self.action_nodes)

    def add_node(self, ntype: str, feats: np.ndarray, origin: str) -> int:
        self.node_types.append(ntype)
        self.features.append(feats)
        self.origins.append(origin)
        return len(self.node_types) - 1

    def num_components(self) -> int:
        """Number of weakly connected components."""
        parent = list(range(self.num_nodes))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for s, d in self.edges:
            parent[find(s)] = find(d)
        return len({find(i) for i in range(self.num_nodes)})

    def to_json(self) -> dict:
        return {
            "nodes": [
                {"type": t, "features": f.tolist(), "origin": o}
                for t, f, o in zip(self.node_types, self.features, self.origins)
            ],
            "edges": [list(e) for e in self.edges],
            "action_nodes": [i for i, _ in self.action_nodes],
        }

    def to_dot(self) -> str:
        actions = {i for i, _ in self.action_nodes}
        lines = ["digraph assignment_graph {"]
        for i, (t, f) in enumerate(zip(self.node_types, self.features)):
            feats = ",".join(f"{x:g}" for x in f)
            shape = "doublecircle" if i in actions else ("box" if t.endswith("_Transition") else "circle")
            lines.append(f'  n{i} [shape={shape}, label="{t}|{feats}"];')
        for s, d in self.edges:
            lines.append(f"  n{s} -> n{d};")
        lines.append("}")
        return "\n".join(lines) + "\n"

    def canonical_hash(self) -> str:
        """Isomorphism-invariant fingerprint (Weisfeiler-Lehman), for tests."""
        import networkx as nx

        g = nx.DiGraph()
        actions = {i for i, _ in self.action_nodes}
        for i, (t, f) in enumerate(zip(self.node_types, self.features)):
            label = json.dumps([t, np.round(f, 12).tolist(), i in actions])
            g.add_node(i, label=label)
        g.add_edges_from(self.edges)
        return nx.weisfeiler_lehman_graph_hash(g, node_attr="label", iterations=4)


def map_to_graph(expanded: ExpandedNet, net: NetDef | None = None) -> AssignmentGraph:
    """Build the assignment graph of an expanded net.

    ``net`` supplies the observability flags (defaults to the net the
    expansion came from).  Transitions are always observable; an arc becomes
    an edge only when its place end is observable.
    """
    net = net or expanded.net
    g = AssignmentGraph()
    place_node: dict[int, int] = {}
    for i, ep in enumerate(expanded.places):
        place = net.place(ep.origin)
        if not place.observable:
            continue
        place_node[i] = g.add_node(place_type(place), encode_token(place, ep.token, net.horizon), ep.origin)
    n_a, n_e = net.num_A_types, net.num_E_types
    for t in expanded.transitions:
        if t.tag == TAG_E:
            node = g.add_node(E_TRANSITION, one_hot(t.type_index, n_e), t.origin)
        else:
            node = g.add_node(A_TRANSITION, one_hot(t.type_index, n_a), t.origin)
            g.action_nodes.append((node, t.binding))
        for p in t.inputs:
            if p in place_node:
                g.edges.append((place_node[p], node))
    return g


def observe(net: NetDef, marking: Marking) -> AssignmentGraph:
    return map_to_graph(expand(net, marking), net)


def action_index_to_binding(graph: AssignmentGraph, index: int) -> Binding:
    if not 0 <= int(index) < graph.num_actions or int(index) != index:
        raise IndexOutOfRange(f"action {index!r} outside [0, {graph.num_actions})")
    return graph.action_nodes[int(index)][1]

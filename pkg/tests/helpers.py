"""Checkers shared by the unit tests and the acceptance suite."""
from __future__ import annotations

import numpy as np

from aepn.core import CAT, REAL, initial_state
from aepn.env import PetriEnv
from aepn.expansion import A_TRANSITION, E_TRANSITION, AssignmentGraph, observe
from aepn.learn.model import EncoderConfig, GraphPolicy
from aepn.learn.ppo import PPOConfig, log_softmax, ppo_loss
from aepn.learn.tape import param
from aepn.semantics import Binding, advance, enabled_bindings, fire, format_trace, is_terminal

GRAD_TYPE_DIMS = {"Place[p:cat2]": 3, "Place[q:cat3]": 4, A_TRANSITION: 2}


def random_graph(rng, min_actions=1, type_dims=GRAD_TYPE_DIMS) -> AssignmentGraph:
    """Small random assignment graph: 1-4 places wired to 1-3 action nodes."""
    g = AssignmentGraph()
    places = []
    for _ in range(int(rng.integers(1, 5))):
        t = "Place[p:cat2]" if rng.random() < 0.5 else "Place[q:cat3]"
        places.append(g.add_node(t, rng.normal(size=type_dims[t]), "P"))
    for k in range(int(rng.integers(min_actions, 4))):
        node = g.add_node(A_TRANSITION, np.eye(2)[k % 2], "T")
        g.action_nodes.append((node, Binding("T", ())))
        for p in places:
            if rng.random() < 0.6:
                g.edges.append((p, node))
    return g


def _flat(params):
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def gradient_rel_errors(trials=100, eps=1e-5, seed=0) -> list[float]:
    """Relative error of tape gradients vs central differences of the PPO loss, per random graph batch.

    Error is ||a - n|| / (||a|| + ||n||) over the flattened parameter vector.
    """
    rng = np.random.default_rng(seed)
    cfg = PPOConfig()
    errors = []
    for trial in range(trials):
        model = GraphPolicy(GRAD_TYPE_DIMS, EncoderConfig(hidden=3, rounds=2), seed=trial)
        graphs = [random_graph(rng) for _ in range(2)]
        logits, _ = model.predict(graphs)
        acts = [int(rng.integers(len(z))) for z in logits]
        # keep ratios inside the clip range so the objective is smooth at this point
        old = [float(log_softmax(z)[a]) + rng.uniform(-0.05, 0.05) for z, a in zip(logits, acts)]
        adv, ret = rng.normal(size=2), rng.normal(size=2)
        base = {k: v.copy() for k, v in model.params.items()}

        def loss_at(params):
            model.params = params
            loss, _ = ppo_loss(model, model.tensors(False), graphs, acts, old, adv, ret, cfg)
            return float(loss.data)

        P = {k: param(v) for k, v in base.items()}
        loss, _ = ppo_loss(model, P, graphs, acts, old, adv, ret, cfg)
        loss.backward()
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}
        numeric = {}
        for k, v in base.items():
            g = np.zeros_like(v)
            for idx in np.ndindex(v.shape):
                hi, lo = v.copy(), v.copy()
                hi[idx] += eps
                lo[idx] -= eps
                g[idx] = (loss_at({**base, k: hi}) - loss_at({**base, k: lo})) / (2 * eps)
            numeric[k] = g
        model.params = base
        a, n = _flat(analytic), _flat(numeric)
        errors.append(float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12)))
    return errors


def reachable_markings(net, seed, steps):
    """Decision markings along one random run, starting with the first decision."""
    rng = np.random.default_rng(seed)
    m = advance(net, initial_state(net, 0))
    out = [m]
    for _ in range(steps):
        if is_terminal(net, m):
            break
        bs = enabled_bindings(net, m, "A")
        m = advance(net, fire(net, m, bs[int(rng.integers(len(bs)))]).marking)
        out.append(m)
    return out


def _expected_features(place, tok, horizon):
    out = [tok.time / horizon]
    for attr, flag, value in zip(place.schema, place.attribute_observable, tok.values):
        if not flag:
            continue
        if attr.kind == CAT:
            out.extend(np.eye(attr.cardinality)[int(value)])
        elif attr.kind == REAL:
            out.append(float(value) / horizon)
        else:
            out.append(float(value))
    return tuple(out)


def mapping_violations(net, m) -> list[str]:
    """Every way the observation of ``m`` breaks the mapping invariants."""
    g = observe(net, m)
    bad = []
    hidden = {p.id for p in net.places if not p.observable}
    place_nodes = [i for i, t in enumerate(g.node_types) if t not in (A_TRANSITION, E_TRANSITION)]
    trans_nodes = {i for i, t in enumerate(g.node_types) if t in (A_TRANSITION, E_TRANSITION)}

    if hidden & {g.origins[i] for i in place_nodes}:
        bad.append("node for an unobservable place")
    for p in net.places:
        if not p.observable:
            continue
        want = sorted(_expected_features(p, t, net.horizon) for t in m.tokens[p.id])
        got = sorted(tuple(g.features[i]) for i in place_nodes if g.origins[i] == p.id)
        if want != got:
            bad.append(f"features of {p.id} do not match its observed attributes")
    for i in trans_nodes:
        f = g.features[i]
        spec = net.transition(g.origins[i])
        if f.sum() != 1.0 or set(np.unique(f)) - {0.0, 1.0} or int(np.argmax(f)) != spec.type_index:
            bad.append(f"transition node {i} is not a one-hot of its type")
    if [b for _, b in g.action_nodes] != enabled_bindings(net, m, "A"):
        bad.append("action nodes differ from enabled A bindings")
    nodes = [i for i, _ in g.action_nodes]
    if len(set(nodes)) != len(nodes) or sum(t == A_TRANSITION for t in g.node_types) != len(nodes):
        bad.append("action nodes are not a bijection with A transition nodes")
    for s, d in g.edges:
        if s in trans_nodes or d not in trans_nodes or g.origins[s] in hidden:
            bad.append(f"edge {s}->{d} is unsound")
            break
    for node, b in g.action_nodes:
        spec = net.transition(b.transition)
        n_obs = sum(1 for pid, _ in spec.input_arcs if pid not in hidden)
        if sum(1 for _, d in g.edges if d == node) != n_obs:
            bad.append(f"action node {node} has the wrong number of input edges")
    return bad


def semantics_violations(net, actions_seed, env_seed=0) -> list[str]:
    """Conservation, clock monotonicity, tag correctness and replay identity on one random run."""
    bad = []
    m = advance(net, initial_state(net, env_seed))
    rng = np.random.default_rng(actions_seed)
    while not is_terminal(net, m):
        bs = enabled_bindings(net, m, m.tag)
        b = bs[int(rng.integers(len(bs)))]
        spec = net.transition(b.transition)
        if spec.tag != m.tag:
            bad.append(f"{b.transition} fired under tag {m.tag}")
        out = fire(net, m, b)
        if out.marking.count() != m.count() - len(spec.input_arcs) + len(out.produced):
            bad.append(f"{b.transition} did not conserve tokens")
        nxt = advance(net, out.marking)
        if nxt.clock < m.clock:
            bad.append("clock moved backwards")
        m = nxt

    def trace():
        r = np.random.default_rng(actions_seed)
        env = PetriEnv(net, record_trace=True)
        res = env.reset(env_seed)
        while not res.done:
            res = env.step(int(r.integers(res.observation.num_actions)))
        for e in env.episode.trace:
            if net.transition(e.transition).tag != e.tag:
                bad.append(f"trace event {e.transition} carries tag {e.tag}")
        return format_trace(env.episode.trace), env.episode.marking

    first, second = trace(), trace()
    if first != second:
        bad.append("replay is not bit-identical")
    return bad

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aepn.errors import ModelSchemaMismatch, NoActions, NonFiniteLoss
from aepn.expansion import A_TRANSITION, AssignmentGraph, node_type_dims, observe
from aepn.core import initial_state
from aepn.learn.model import EncoderConfig, GraphPolicy
from aepn.learn.ppo import (
    Adam,
    PPOConfig,
    TrajectoryBuffer,
    clip_grad_norm,
    compute_gae,
    greedy_action,
    log_softmax,
    ppo_loss,
    ppo_update,
    sample_action,
    train,
)
from aepn.learn.tape import Tensor, param, segment_log_softmax
from aepn.patterns import build_problem, joint_demo_net
from aepn.semantics import Binding
from helpers import GRAD_TYPE_DIMS, gradient_rel_errors, random_graph

def _two_action_graph():
    g = AssignmentGraph()
    p = g.add_node("Place[p:cat2]", np.array([0.0, 1.0, 0.0]), "P")
    for k in range(2):
        node = g.add_node(A_TRANSITION, np.eye(2)[k], "T")
        g.action_nodes.append((node, Binding("T", ())))
        g.edges.append((p, node))
    return g


class TestGradients:
    def test_central_differences(self):
        t0 = time.perf_counter()
        errors = gradient_rel_errors(trials=100, eps=1e-5)
        assert len(errors) == 100 and max(errors) < 1e-3
        assert time.perf_counter() - t0 < 120

    def test_segment_log_softmax_normalizes(self):
        x = param(np.array([1.0, 2.0, 3.0, -1.0, 0.5]))
        seg = np.array([0, 0, 0, 1, 1])
        out = segment_log_softmax(x, seg, 2)
        assert math.isclose(np.exp(out.data[:3]).sum(), 1.0)
        assert math.isclose(np.exp(out.data[3:]).sum(), 1.0)

    def test_tensor_ops(self):
        a = param(np.array([[1.0, -2.0]]))
        b = param(np.array([[3.0], [4.0]]))
        (a @ b).sum().backward()
        np.testing.assert_allclose(a.grad, [[3.0, 4.0]])
        np.testing.assert_allclose(b.grad, [[1.0], [-2.0]])
        t = Tensor(np.ones(2))
        assert t.grad is None


class TestGAE:
    def test_single_step(self):
        adv, ret = compute_gae([1.0], [0.0], [True], 0.0, 0.99, 0.95)
        assert adv.tolist() == [1.0] and ret.tolist() == [1.0]

    def test_undiscounted_returns(self):
        adv, ret = compute_gae([0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [False, False, True], 5.0, 1.0, 1.0)
        assert ret.tolist() == [1.0, 1.0, 1.0]

    def test_bootstraps_when_not_done(self):
        adv, ret = compute_gae([0.0], [0.0], [False], 2.0, 0.5, 1.0)
        assert ret.tolist() == [1.0]


def _gae_recursive(rewards, values, dones, last_value, gamma, lam):
    n = len(rewards)

    def a(t):
        if t >= n:
            return 0.0
        live = 0.0 if dones[t] else 1.0
        nxt = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * nxt * live - values[t]
        return delta + gamma * lam * live * a(t + 1)

    return np.array([a(t) for t in range(n)])


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.floats(-5, 5), st.floats(-5, 5), st.booleans()), min_size=1, max_size=30),
    st.floats(-5, 5),
    st.floats(0.01, 1.0),
    st.floats(0.01, 1.0),
)
def test_gae_matches_recursion(steps, last_value, gamma, lam):
    rewards, values, dones = map(list, zip(*steps))
    adv, ret = compute_gae(rewards, values, dones, last_value, gamma, lam)
    ref = _gae_recursive(rewards, values, dones, last_value, gamma, lam)
    np.testing.assert_allclose(adv, ref, rtol=0, atol=1e-10)
    np.testing.assert_allclose(ret, ref + np.array(values), rtol=0, atol=1e-10)


class TestSampling:
    def test_greedy(self):
        assert greedy_action(np.array([0.0, 10.0])) == 1
        assert greedy_action(np.array([3.0, 3.0, 1.0])) == 0

    def test_sample_log_prob(self):
        rng = np.random.default_rng(0)
        logits = np.array([0.3, -1.2, 2.0])
        for _ in range(20):
            i, lp = sample_action(logits, rng)
            ref = logits[i] - np.log(np.exp(logits).sum())
            assert abs(lp - ref) < 1e-12

    def test_sample_distribution(self):
        rng = np.random.default_rng(1)
        draws = [sample_action(np.array([0.0, np.log(3.0)]), rng)[0] for _ in range(4000)]
        assert abs(np.mean(draws) - 0.75) < 0.03

    def test_empty(self):
        with pytest.raises(NoActions):
            sample_action(np.array([]), np.random.default_rng(0))
        with pytest.raises(NoActions):
            greedy_action(np.array([]))


class TestModel:
    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        model = GraphPolicy(GRAD_TYPE_DIMS, EncoderConfig(8, 2), seed=0)
        for _ in range(20):
            g = random_graph(rng, min_actions=2)
            perm = rng.permutation(g.num_nodes)
            inv = np.argsort(perm)
            h = AssignmentGraph()
            for old in perm:
                h.add_node(g.node_types[old], g.features[old], g.origins[old])
            h.edges = [(int(inv[s]), int(inv[d])) for s, d in g.edges]
            h.action_nodes = [(int(inv[n]), b) for n, b in g.action_nodes]
            (la,), va = model.predict([g])
            (lb,), vb = model.predict([h])
            np.testing.assert_allclose(la, lb, atol=1e-12)
            assert abs(va[0] - vb[0]) < 1e-9

    def test_zero_rounds_same_origin_identical(self):
        model = GraphPolicy(GRAD_TYPE_DIMS, EncoderConfig(8, 0), seed=0)
        g = _two_action_graph()
        g.features[2] = g.features[1]
        (logits,), _ = model.predict([g])
        assert logits[0] == logits[1]

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        model = GraphPolicy(GRAD_TYPE_DIMS, EncoderConfig(8, 2), seed=1)
        graphs = [random_graph(rng) for _ in range(4)]
        logits, values = model.predict(graphs)
        for g, l, v in zip(graphs, logits, values):
            (l1,), v1 = model.predict([g])
            np.testing.assert_allclose(l, l1, atol=1e-12)
            assert abs(v - v1[0]) < 1e-12

    def test_json_round_trip_exact(self):
        net = joint_demo_net()
        model = GraphPolicy(node_type_dims(net), EncoderConfig(16, 2), seed=7)
        clone = GraphPolicy.loads(model.dumps())
        assert clone.type_dims == model.type_dims and clone.config == model.config
        for k, v in model.params.items():
            assert np.array_equal(clone.params[k], v)
        g = observe(net, initial_state(net, 0))
        assert np.array_equal(model.predict([g])[0][0], clone.predict([g])[0][0])

    def test_schema_mismatch(self):
        model = GraphPolicy(node_type_dims(build_problem("a")), seed=0)
        with pytest.raises(ModelSchemaMismatch):
            model.check_compatible(node_type_dims(build_problem("e")))
        g = observe(build_problem("e"), initial_state(build_problem("e"), 0))
        with pytest.raises(ModelSchemaMismatch):
            model.predict([g])
        with pytest.raises(ModelSchemaMismatch):
            GraphPolicy.loads('{"format": "other"}')

    def test_bad_encoder_config(self):
        with pytest.raises(ValueError):
            EncoderConfig(hidden=0)
        with pytest.raises(ValueError):
            PPOConfig(clip=1.5)


class TestUpdates:
    def _buffer(self, graphs, actions, model, rewards):
        buf = TrajectoryBuffer()
        logits, values = model.predict(graphs)
        for g, a, l, v, r in zip(graphs, actions, logits, values, rewards):
            buf.add(g, a, log_softmax(l)[a], v, r, True)
        buf.finish(0.0, 0.99, 0.95)
        return buf

    def test_overfit_two_action_toy(self):
        cfg = PPOConfig(learning_rate=1e-2, epochs=4, minibatch_size=32, ent_coef=0.0)
        model = GraphPolicy(GRAD_TYPE_DIMS, EncoderConfig(8, 1), seed=0)
        opt = Adam(model.params, cfg.learning_rate)
        rng = np.random.default_rng(0)
        g = _two_action_graph()
        for _ in range(40):
            logits, _ = model.predict([g] * 32)
            acts = [sample_action(l, rng)[0] for l in logits]
            rewards = [1.0 if a == 1 else 0.0 for a in acts]
            ppo_update(model, self._buffer([g] * 32, acts, model, rewards), cfg, opt, rng)
        (logits,), _ = model.predict([g])
        assert np.exp(log_softmax(logits))[1] > 0.99

    def test_zero_advantages_leave_policy_loss_flat(self):
        model = GraphPolicy(GRAD_TYPE_DIMS, EncoderConfig(4, 1), seed=0)
        rng = np.random.default_rng(2)
        graphs = [random_graph(rng) for _ in range(3)]
        logits, _ = model.predict(graphs)
        acts = [0, 0, 0]
        old = [log_softmax(l)[0] for l in logits]
        cfg = PPOConfig(vf_coef=0.0, ent_coef=0.0)
        P = {k: param(v) for k, v in model.params.items()}
        loss, stats = ppo_loss(model, P, graphs, acts, old, np.zeros(3), np.zeros(3), cfg)
        loss.backward()
        assert stats["policy_loss"] == 0.0
        assert all(t.grad is None or not t.grad.any() for t in P.values())

    def test_non_finite_loss(self):
        model = GraphPolicy(GRAD_TYPE_DIMS, EncoderConfig(4, 1), seed=0)
        g = _two_action_graph()
        buf = self._buffer([g, g], [0, 1], model, [1.0, 0.0])
        buf.returns = np.array([np.nan, 0.0])
        with pytest.raises(NonFiniteLoss):
            ppo_update(model, buf, PPOConfig(), Adam(model.params, 1e-3), np.random.default_rng(0))

    def test_clip_grad_norm(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_grad_norm(grads, 1.0) == 5.0
        assert math.isclose(np.sqrt(grads["a"] ** 2 + grads["b"] ** 2)[0], 1.0)


class TestTrain:
    CFG = dict(rollout_length=64, epochs=2, minibatch_size=32, num_envs=2, hidden=8, total_steps=128)

    def test_deterministic_logs(self):
        net = build_problem("a")
        a = train(net, PPOConfig(**self.CFG), seed=3)
        b = train(net, PPOConfig(**self.CFG), seed=3)
        assert a.log_csv() == b.log_csv()
        assert a.steps == 128 and a.status == "no_target"
        assert a.log_csv().splitlines()[0] == "step,mean_reward,policy_loss,value_loss,entropy,clip_frac"
        for k, v in a.model.params.items():
            assert np.array_equal(v, b.model.params[k])

    def test_zero_steps(self):
        res = train(build_problem("a"), PPOConfig(total_steps=0), seed=0, target=9)
        assert res.steps == 0 and res.log == [] and res.status == "budget_exhausted"

    @pytest.mark.slow
    def test_reaches_optimum_on_c(self):
        cfg = PPOConfig(rollout_length=256, minibatch_size=64, total_steps=60_000, hidden=32)
        res = train(build_problem("c"), cfg, seed=0, target=10.0, max_seconds=300)
        assert res.reached_target, res.log[-1]

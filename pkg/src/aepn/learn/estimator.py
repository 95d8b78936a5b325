"""scikit-learn style wrapper around the PPO graph-policy learner.

``fit`` takes a net (or a benchmark problem id) instead of a feature matrix;
``predict`` maps assignment graphs to action indices.  Hyperparameters are
plain constructor arguments so ``get_params``/``set_params``/``clone`` work.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ..core import NetDef
from ..expansion import AssignmentGraph, node_type_dims
from ..patterns import build_problem
from .model import GraphPolicy
from .ppo import PPOConfig, evaluate, greedy_action, log_softmax, train


def _as_net(X) -> NetDef:
    if isinstance(X, NetDef):
        return X
    if isinstance(X, str):
        return build_problem(X)
    raise TypeError(f"expected a NetDef or a problem id, got {type(X).__name__}")


def _as_graphs(X) -> list[AssignmentGraph]:
    if isinstance(X, AssignmentGraph):
        return [X]
    graphs = list(X)
    for g in graphs:
        if not isinstance(g, AssignmentGraph):
            raise TypeError(f"expected AssignmentGraph, got {type(g).__name__}")
    return graphs


class GraphPPOAgent(BaseEstimator):
    """PPO agent over assignment-graph observations.

    Parameters mirror :class:`PPOConfig`, plus ``seed``, ``target`` (stop as
    soon as a greedy episode reaches it) and ``max_seconds``.
    """

    def __init__(
        self,
        clip=0.2,
        gamma=0.99,
        lam=0.95,
        learning_rate=3e-4,
        rollout_length=2048,
        epochs=4,
        minibatch_size=256,
        ent_coef=0.01,
        vf_coef=0.5,
        max_grad_norm=0.5,
        total_steps=200_000,
        num_envs=8,
        hidden=32,
        rounds=2,
        seed=0,
        target=None,
        max_seconds=None,
    ):
        self.clip = clip
        self.gamma = gamma
        self.lam = lam
        self.learning_rate = learning_rate
        self.rollout_length = rollout_length
        self.epochs = epochs
        self.minibatch_size = minibatch_size
        self.ent_coef = ent_coef
        self.vf_coef = vf_coef
        self.max_grad_norm = max_grad_norm
        self.total_steps = total_steps
        self.num_envs = num_envs
        self.hidden = hidden
        self.rounds = rounds
        self.seed = seed
        self.target = target
        self.max_seconds = max_seconds

    def _config(self) -> PPOConfig:
        names = PPOConfig.__dataclass_fields__
        return PPOConfig(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, X, y=None):
        """Train on the net ``X`` (a NetDef or problem id).  ``y`` is ignored."""
        net = _as_net(X)
        result = train(net, self._config(), seed=self.seed, target=self.target, max_seconds=self.max_seconds)
        self.model_ = result.model
        self.net_ = net
        self.train_log_ = result.log
        self.n_steps_ = result.steps
        self.status_ = result.status
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("GraphPPOAgent is not fitted yet; call fit first")

    def decision_function(self, X) -> list[np.ndarray]:
        """Raw action logits, one array per graph."""
        self._check_fitted()
        logits, _ = self.model_.predict(_as_graphs(X))
        return logits

    def predict_proba(self, X) -> list[np.ndarray]:
        return [np.exp(log_softmax(z)) for z in self.decision_function(X)]

    def predict(self, X) -> np.ndarray:
        """Greedy action index for each graph."""
        return np.array([greedy_action(z) for z in self.decision_function(X)], dtype=np.int64)

    def evaluate(self, X=None, episodes: int = 10, deterministic: bool = True, seed: int = 0) -> list[float]:
        self._check_fitted()
        net = self.net_ if X is None else _as_net(X)
        return evaluate(self.model_, net, episodes, deterministic, seed)

    def score(self, X=None, y=None) -> float:
        """Mean greedy episode reward over 10 episodes."""
        return float(np.mean(self.evaluate(X)))

    @classmethod
    def from_model(cls, model: GraphPolicy, net: NetDef | None = None, **params) -> "GraphPPOAgent":
        agent = cls(hidden=model.config.hidden, rounds=model.config.rounds, **params)
        agent.model_ = model
        if net is not None:
            model.check_compatible(node_type_dims(net))
            agent.net_ = net
        return agent

"""Proximal policy optimization over assignment-graph observations."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..core import NetDef
from ..env import PetriEnv
from ..errors import NoActions, NonFiniteLoss
from ..expansion import AssignmentGraph, node_type_dims
from .model import EncoderConfig, GraphPolicy
from .tape import minimum, segment_log_softmax, segment_sum

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "mean_reward", "policy_loss", "value_loss", "entropy", "clip_frac")


@dataclass
class PPOConfig:
    clip: float = 0.2
    gamma: float = 0.99
    lam: float = 0.95
    learning_rate: float = 3e-4
    rollout_length: int = 2048
    epochs: int = 4
    minibatch_size: int = 256
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    total_steps: int = 200_000
    num_envs: int = 8
    hidden: int = 32
    rounds: int = 2

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip ratio must lie in (0, 1)")
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lambda must lie in (0, 1]")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")


# sampling -----------------------------------------------------------------

def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def sample_action(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    logits = np.asarray(logits, dtype=float)
    if logits.size == 0:
        raise NoActions("cannot sample from an empty action set")
    lp = log_softmax(logits)
    cdf = np.cumsum(np.exp(lp))
    i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    i = min(i, logits.size - 1)
    return i, float(lp[i])


def greedy_action(logits: np.ndarray) -> int:
    logits = np.asarray(logits, dtype=float)
    if logits.size == 0:
        raise NoActions("cannot choose from an empty action set")
    return int(np.argmax(logits))


# advantage estimation -----------------------------------------------------

def compute_gae(rewards, values, dones, last_value: float, gamma: float, lam: float):
    """Generalized advantage estimates for one environment's consecutive steps.

    ``dones[t]`` marks that the episode ended right after step t, which cuts
    both bootstrapping and accumulation.  Returns (advantages, returns).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        live = 0.0 if dones[t] else 1.0
        nxt = last_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * nxt * live - values[t]
        gae = delta + gamma * lam * live * gae
        adv[t] = gae
    return adv, adv + values


@dataclass
class TrajectoryBuffer:
    observations: list[AssignmentGraph] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self):
        return len(self.actions)

    def add(self, obs, action, logp, value, reward, done):
        self.observations.append(obs)
        self.actions.append(int(action))
        self.log_probs.append(float(logp))
        self.values.append(float(value))
        self.rewards.append(float(reward))
        self.dones.append(bool(done))

    def extend(self, other: "TrajectoryBuffer"):
        for name in ("observations", "actions", "log_probs", "values", "rewards", "dones"):
            getattr(self, name).extend(getattr(other, name))
        if other.advantages is not None:
            self.advantages = other.advantages if self.advantages is None else np.concatenate([self.advantages, other.advantages])
            self.returns = other.returns if self.returns is None else np.concatenate([self.returns, other.returns])

    def finish(self, last_value: float, gamma: float, lam: float):
        self.advantages, self.returns = compute_gae(self.rewards, self.values, self.dones, last_value, gamma, lam)


# optimization -------------------------------------------------------------

class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def ppo_loss(model: GraphPolicy, P, graphs, actions, old_logp, advantages, returns, config: PPOConfig):
    """Build the PPO objective on the tape; returns (loss tensor, stats dict)."""
    b = model.batch(graphs)
    logits, values = model.forward(b, P)
    logp_all = segment_log_softmax(logits, b.action_segment, b.n_graphs)
    chosen = b.action_offsets[:-1] + np.asarray(actions, dtype=np.int64)
    logp = logp_all.rows(chosen)
    ratio = (logp - np.asarray(old_logp)).exp()
    adv = np.asarray(advantages, dtype=float)
    surr = minimum(ratio * adv, ratio.clip(1 - config.clip, 1 + config.clip) * adv)
    policy_loss = -surr.mean()
    value_loss = (values - np.asarray(returns, dtype=float)).square().mean()
    p = logp_all.exp()
    entropy = -(segment_sum(p * logp_all, b.action_segment, b.n_graphs).mean())
    loss = policy_loss + config.vf_coef * value_loss - config.ent_coef * entropy
    clip_frac = float(np.mean(np.abs(ratio.data - 1.0) > config.clip))
    stats = {
        "policy_loss": float(policy_loss.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "clip_frac": clip_frac,
    }
    return loss, stats


def loss_and_grads(model: GraphPolicy, graphs, actions, old_logp, advantages, returns, config: PPOConfig):
    P = model.tensors(True)
    loss, stats = ppo_loss(model, P, graphs, actions, old_logp, advantages, returns, config)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}
    return float(loss.data), grads, stats


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def ppo_update(model: GraphPolicy, buffer: TrajectoryBuffer, config: PPOConfig, optimizer: Adam, rng: np.random.Generator) -> dict:
    """Several epochs of clipped-surrogate minibatch steps on one rollout."""
    n = len(buffer)
    if n == 0:
        raise ValueError("empty buffer")
    acts = np.asarray(buffer.actions)
    old = np.asarray(buffer.log_probs)
    adv_all = buffer.advantages
    ret_all = buffer.returns
    totals = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0, "loss": 0.0}
    count = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = perm[start:start + config.minibatch_size]
            adv = adv_all[idx]
            adv = (adv - adv.mean()) / (adv.std() + 1e-8) if len(idx) > 1 else adv * 0.0
            loss, grads, stats = loss_and_grads(
                model, [buffer.observations[i] for i in idx], acts[idx], old[idx], adv, ret_all[idx], config
            )
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss(f"non-finite PPO loss {loss!r}")
            clip_grad_norm(grads, config.max_grad_norm)
            optimizer.step(model.params, grads)
            for k, v in stats.items():
                totals[k] += v
            totals["loss"] += loss
            count += 1
    return {k: v / count for k, v in totals.items()}


# rollouts and training ----------------------------------------------------

def seed_stream(seed: int, name: str) -> np.random.Generator:
    """Independent named sub-stream of a run seed."""
    return np.random.default_rng([int(seed), *name.encode()])


def evaluate(model: GraphPolicy, net: NetDef, episodes: int = 10, deterministic: bool = True, seed: int = 0) -> list[float]:
    rng = seed_stream(seed, "policy")
    env_rng = seed_stream(seed, "env")
    out = []
    for _ in range(episodes):
        env = PetriEnv(net)
        res = env.reset(int(env_rng.integers(2**31)))
        while not res.done:
            logits, _ = model.predict([res.observation])
            a = greedy_action(logits[0]) if deterministic else sample_action(logits[0], rng)[0]
            res = env.step(a)
        out.append(env.total_reward)
    return out


class _Worker:
    def __init__(self, net, env_rng):
        self.env = PetriEnv(net)
        self.env_rng = env_rng
        self.obs = None
        self.episode_reward = 0.0
        self.reset()

    def reset(self):
        res = self.env.reset(int(self.env_rng.integers(2**31)))
        while res.done:  # degenerate episodes without a single decision
            res = self.env.reset(int(self.env_rng.integers(2**31)))
        self.obs = res.observation
        self.episode_reward = 0.0


@dataclass
class TrainResult:
    model: GraphPolicy
    log: list[dict]
    steps: int
    reached_target: bool
    status: str
    config: PPOConfig
    seconds: float

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LOG_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(r[k])) if k != "step" else int(r[k])) for k in LOG_FIELDS})
    return buf.getvalue()


def train(
    net: NetDef,
    config: PPOConfig = PPOConfig(),
    seed: int = 0,
    target: float | None = None,
    max_seconds: float | None = None,
    callback=None,
) -> TrainResult:
    """Train a graph policy with PPO until ``target`` or the step budget.

    After each update the greedy policy is evaluated on one episode; training
    stops as soon as that reaches ``target``.  Status is "target_reached",
    "budget_exhausted" or "no_target".
    """
    t0 = time.perf_counter()
    model = GraphPolicy(node_type_dims(net), EncoderConfig(config.hidden, config.rounds), seed=int(seed_stream(seed, "init").integers(2**31)))
    optimizer = Adam(model.params, config.learning_rate)
    learner_rng = seed_stream(seed, "learner")
    policy_rng = seed_stream(seed, "policy")
    env_rng = seed_stream(seed, "env")
    workers = [_Worker(net, env_rng) for _ in range(max(1, config.num_envs))] if config.total_steps > 0 else []
    rows: list[dict] = []
    steps = 0
    reached = False
    finished_rewards: list[float] = []

    while steps < config.total_steps:
        per_env = [TrajectoryBuffer() for _ in workers]
        n_collect = min(config.rollout_length, config.total_steps - steps)
        collected = 0
        while collected < n_collect:
            logits, values = model.predict([w.obs for w in workers])
            for wi, w in enumerate(workers):
                a, lp = sample_action(logits[wi], policy_rng)
                res = w.env.step(a)
                w.episode_reward += res.reward
                per_env[wi].add(w.obs, a, lp, values[wi], res.reward, res.done)
                if res.done:
                    finished_rewards.append(w.env.total_reward)
                    w.reset()
                else:
                    w.obs = res.observation
            collected += len(workers)
        steps += collected
        _, last_values = model.predict([w.obs for w in workers])
        buffer = TrajectoryBuffer()
        for wi, b in enumerate(per_env):
            b.finish(last_values[wi], config.gamma, config.lam)
            buffer.extend(b)
        stats = ppo_update(model, buffer, config, optimizer, learner_rng)
        recent = finished_rewards[-20:]
        row = {"step": steps, "mean_reward": float(np.mean(recent)) if recent else float("nan"), **stats}
        rows.append(row)
        log.info("step %d mean_reward %.3f entropy %.3f", steps, row["mean_reward"], row["entropy"])
        if callback is not None:
            callback(row, model)
        if target is not None:
            score = evaluate(model, net, episodes=1, deterministic=True, seed=seed)[0]
            if score >= target:
                reached = True
                break
        if max_seconds is not None and time.perf_counter() - t0 > max_seconds:
            break

    if target is None:
        status = "no_target"
    else:
        status = "target_reached" if reached else "budget_exhausted"
    return TrainResult(model, rows, steps, reached, status, config, time.perf_counter() - t0)

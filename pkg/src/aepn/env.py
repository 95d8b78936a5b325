"""Reset/step decision environment over an A-E PN."""
from __future__ import annotations

from dataclasses import dataclass

from .core import TAG_A, Marking, NetDef, initial_state
from .errors import EpisodeFinished
from .expansion import AssignmentGraph, action_index_to_binding, expand, map_to_graph
from .semantics import TraceEvent, _event, advance, fire, is_terminal


@dataclass
class StepResult:
    observation: AssignmentGraph
    reward: float
    done: bool


@dataclass
class Episode:
    net: NetDef
    marking: Marking
    seed: int | None
    checkpoint: float
    steps: int = 0
    done: bool = False
    trace: list[TraceEvent] | None = None
    observation: AssignmentGraph | None = None


class PetriEnv:
    """Sequential decision environment: one A binding fired per ``step``.

    Rewards are deltas of the marking's cumulative reward since the previous
    decision, so rewards earned by evolutions (e.g. completions) between two
    decisions are attributed to the action that preceded them.
    """

    def __init__(self, net: NetDef, record_trace: bool = False):
        self.net = net
        self.record_trace = record_trace
        self.episode: Episode | None = None

    def reset(self, seed: int | None = 0) -> StepResult:
        m = initial_state(self.net, seed)
        ep = Episode(self.net, m, seed, m.cumulative_reward, trace=[] if self.record_trace else None)
        self.episode = ep
        # rewards earned before the first decision surface in the first step's delta
        ep.marking = advance(self.net, m, on_fire=self._recorder())
        return self._result(0.0)

    def step(self, action: int) -> StepResult:
        ep = self.episode
        if ep is None or ep.done:
            raise EpisodeFinished("episode is finished; call reset()")
        binding = action_index_to_binding(ep.observation, action)
        m = ep.marking
        out = fire(self.net, m, binding)
        if ep.trace is not None:
            ep.trace.append(_event(self.net, m, binding, out.reward))
        ep.marking = advance(self.net, out.marking, on_fire=self._recorder())
        ep.steps += 1
        reward = ep.marking.cumulative_reward - ep.checkpoint
        ep.checkpoint = ep.marking.cumulative_reward
        return self._result(reward)

    def _recorder(self):
        ep = self.episode
        return ep.trace.append if ep is not None and ep.trace is not None else None

    def _result(self, reward: float) -> StepResult:
        ep = self.episode
        m = ep.marking
        obs = map_to_graph(expand(self.net, m), self.net)
        ep.done = is_terminal(self.net, m) or not (m.tag == TAG_A and obs.num_actions > 0)
        ep.observation = obs
        return StepResult(obs, reward, ep.done)

    @property
    def total_reward(self) -> float:
        return self.episode.marking.cumulative_reward - self.net.initial_reward


def reset(net: NetDef, seed: int | None = 0) -> tuple[PetriEnv, StepResult]:
    env = PetriEnv(net)
    return env, env.reset(seed)


def run_episode(net: NetDef, choose, seed: int | None = 0, record_trace: bool = False):
    """Roll out one episode with ``choose(observation) -> action index``.

    Returns (total reward, list of chosen action indices, env).
    """
    env = PetriEnv(net, record_trace=record_trace)
    res = env.reset(seed)
    actions = []
    while not res.done:
        a = int(choose(res.observation))
        actions.append(a)
        res = env.step(a)
    return env.total_reward, actions, env

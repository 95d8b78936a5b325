"""Baseline policies and an exhaustive optimal oracle for small deterministic nets."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import Marking, NetDef, initial_state
from .errors import BudgetExceeded, NoActions
from .expansion import AssignmentGraph
from .semantics import Binding, advance, bound_views, enabled_bindings, fire, is_terminal

DEFAULT_ORACLE_BUDGET = 10**7


@dataclass(frozen=True)
class PolicyDecision:
    action: int
    probs: np.ndarray | None = None


def _require_actions(observation: AssignmentGraph) -> int:
    n = observation.num_actions
    if n == 0:
        raise NoActions("observation has no action nodes")
    return n


def random_policy(observation: AssignmentGraph, rng: np.random.Generator) -> PolicyDecision:
    n = _require_actions(observation)
    return PolicyDecision(int(rng.integers(n)), np.full(n, 1.0 / n))


def binding_duration(net: NetDef, binding: Binding) -> float:
    spec = net.transition(binding.transition)
    if spec.duration is None:
        raise ValueError(f"transition {spec.id!r} has no registered duration function")
    return float(net.registry.durations[spec.duration](bound_views(net, spec, binding.tokens)))


def greedy_spt_policy(observation: AssignmentGraph, net: NetDef) -> PolicyDecision:
    """Shortest processing time first; ties go to the lowest action index."""
    _require_actions(observation)
    times = [binding_duration(net, b) for _, b in observation.action_nodes]
    return PolicyDecision(int(np.argmin(times)))


@dataclass
class OracleResult:
    value: float
    actions: list[int]
    nodes: int
    processing_time: float = 0.0


class _Search:
    """Depth-first branch and bound over decision markings.

    ``value(m, alpha)`` returns the exact best future score when it exceeds
    ``alpha``; otherwise it returns an upper bound that is <= alpha.  Memo
    entries remember which of the two they hold.

    The score is reward minus ``weight`` times the processing time of each
    assignment.  With a small positive weight this ranks reward-optimal
    sequences by how little processing time they spend, i.e. by cycle time.
    """

    def __init__(self, net: NetDef, budget: int, memo: bool = True, bound=None, weight: float = 0.0):
        self.net = net
        self.budget = budget
        self.memo: dict = {}
        self.use_memo = memo
        self.bound = bound
        self.weight = weight
        self.nodes = 0

    def children(self, m: Marking):
        """(index, binding, score delta, successor) in action order."""
        for i, b in enumerate(enabled_bindings(self.net, m, "A")):
            nxt = advance(self.net, fire(self.net, m, b).marking)
            r = nxt.cumulative_reward - m.cumulative_reward
            if self.weight:
                r -= self.weight * binding_duration(self.net, b)
            yield i, b, r, nxt

    def _ordered(self, m: Marking):
        kids = list(self.children(m))
        if self.weight:
            # cheap assignments first so good scores (and tight alphas) come early
            kids.sort(key=lambda k: -k[2])
        return kids

    def value(self, m: Marking, alpha: float = -math.inf) -> float:
        key = m.key() if self.use_memo else None
        if key is not None:
            hit = self.memo.get(key)
            if hit is not None:
                v, exact = hit
                if exact or v <= alpha:
                    return v
        self.nodes += 1
        if self.nodes > self.budget:
            raise BudgetExceeded(f"search exceeded {self.budget} nodes")
        if is_terminal(self.net, m):
            v, exact = 0.0, True
        else:
            ub = math.inf if self.bound is None else self.bound(self.net, m)
            if ub <= alpha:
                v, exact = ub, False
            else:
                best = -math.inf
                for _, _, r, nxt in self._ordered(m):
                    best = max(best, r + self.value(nxt, max(alpha, best) - r))
                    if best >= ub:
                        break
                if best == -math.inf:
                    best = 0.0
                # a margin keeps rounding in r + bound from passing a bound off as exact
                v, exact = best, best > alpha + _EXACT_MARGIN
        if key is not None:
            self.memo[key] = (v, exact)
        return v

    def optimal_children(self, m: Marking, target: float):
        """Yield (index, binding, successor, is_optimal) for every action of ``m``."""
        for i, b, r, nxt in self.children(m):
            v = self.value(nxt, target - r - _EPS)
            yield i, b, nxt, v > target - r - _EPS and r + v >= target - _EPS


_EPS = 1e-9
_EXACT_MARGIN = 1e-10


def _make_search(net: NetDef, budget: int, memo: bool, tie_weight: float = 0.0) -> _Search:
    return _Search(net, budget, memo, net.metadata.get("upper_bound"), tie_weight)


def _start(net: NetDef, seed) -> Marking:
    return advance(net, initial_state(net, seed))


def exhaustive_oracle(
    net: NetDef,
    seed: int | None = 0,
    budget: int = DEFAULT_ORACLE_BUDGET,
    memo: bool = True,
    tie_weight: float = 0.0,
) -> OracleResult:
    """Exact best total reward over all action sequences, plus one optimal sequence.

    Only meaningful for nets whose behaviors ignore the RNG.  Decision
    markings are memoized on their canonical key, and an admissible bound
    stored as ``net.metadata["upper_bound"]`` (if any) prunes subtrees.  Among
    equally good actions the lowest index wins, so the returned sequence is
    reproducible.

    ``tie_weight > 0`` breaks reward ties by least total processing time.  It
    must be small enough that the whole penalty of an episode stays below the
    smallest reward difference (1e-4 is ample for the benchmarks).
    """
    search = _make_search(net, budget, memo, tie_weight)
    m = _start(net, seed)
    start_reward = net.initial_reward
    search.value(m)

    actions: list[int] = []
    spent = 0.0
    while not is_terminal(net, m):
        target = search.value(m)
        for i, b, nxt, best in search.optimal_children(m, target):
            if best:
                actions.append(i)
                if tie_weight:
                    spent += binding_duration(net, b)
                m = nxt
                break
        else:
            break
    return OracleResult(m.cumulative_reward - start_reward, actions, search.nodes, spent)


def naive_tree_search(net: NetDef, seed: int | None = 0, budget: int = DEFAULT_ORACLE_BUDGET) -> float:
    """Plain recursive maximum over the full decision tree, no memo, no shortcuts."""
    nodes = 0

    def rec(m: Marking) -> float:
        nonlocal nodes
        nodes += 1
        if nodes > budget:
            raise BudgetExceeded(f"tree search exceeded {budget} nodes")
        if is_terminal(net, m):
            return 0.0
        best = None
        for b in enabled_bindings(net, m, "A"):
            nxt = advance(net, fire(net, m, b).marking)
            v = (nxt.cumulative_reward - m.cumulative_reward) + rec(nxt)
            best = v if best is None or v > best else best
        return 0.0 if best is None else best

    m = _start(net, seed)
    return (m.cumulative_reward - net.initial_reward) + rec(m)


def optimal_action_sets(
    net: NetDef,
    seed: int | None = 0,
    budget: int = DEFAULT_ORACLE_BUDGET,
    tie_weight: float = 0.0,
):
    """Walk every optimal trajectory; yield (marking, optimal bindings, all bindings).

    Each reachable decision marking on some optimal path is visited once.
    """
    search = _make_search(net, budget, True, tie_weight)
    stack = [_start(net, seed)]
    seen = set()
    while stack:
        m = stack.pop()
        k = m.key()
        if k in seen or is_terminal(net, m):
            continue
        seen.add(k)
        best, bindings = [], []
        for _, b, nxt, is_best in search.optimal_children(m, search.value(m)):
            bindings.append(b)
            if is_best:
                best.append(b)
                stack.append(nxt)
        yield m, best, bindings

"""Firing rules: binding enumeration, firing, and the tag/clock engine."""
from __future__ import annotations

import csv
import io
import itertools
import logging
from typing import Callable, Iterable, NamedTuple

import numpy as np

from .core import TAG_A, TAG_E, Marking, NetDef, Token, TransitionSpec, insert_tokens
from .errors import SchemaMismatch, StaleBinding

log = logging.getLogger(__name__)


class Binding(NamedTuple):
    """A transition plus one token per input arc, in arc order."""

    transition: str
    tokens: tuple[Token, ...]


class StepOutcome(NamedTuple):
    marking: Marking
    reward: float
    transition: str
    produced: tuple[tuple[str, Token], ...]


class TraceEvent(NamedTuple):
    clock: float
    tag: str
    transition: str
    tokens: tuple[tuple[str, Token], ...]
    reward: float


def bound_views(net: NetDef, spec: TransitionSpec, tokens) -> dict:
    return {var: net.view(pid, tok) for (pid, var), tok in zip(spec.input_arcs, tokens)}


def _guard_ok(net: NetDef, spec: TransitionSpec, tokens, clock) -> bool:
    if spec.guard is None:
        return True
    try:
        return bool(net.registry.guards[spec.guard](bound_views(net, spec, tokens), clock))
    except Exception as exc:  # noqa: BLE001 - a throwing guard disables the binding
        log.warning("guard %r of %r raised %r; treated as false", spec.guard, spec.id, exc)
        return False


def _ready(tokens: tuple[Token, ...], clock: float) -> tuple[Token, ...]:
    # tokens are sorted by time first, so the ready ones form a prefix
    n = 0
    for tok in tokens:
        if tok.time > clock:
            break
        n += 1
    return tokens[:n]


def _transition_bindings(net, marking, spec, clock, first_only=False):
    pools = [_ready(marking.tokens.get(pid, ()), clock) for pid, _ in spec.input_arcs]
    if any(not p for p in pools):
        return []
    places = [pid for pid, _ in spec.input_arcs]
    shared = len(set(places)) < len(places)
    out = []
    for combo in itertools.product(*(range(len(p)) for p in pools)):
        if shared:
            used = set()
            clash = False
            for pid, i in zip(places, combo):
                if (pid, i) in used:
                    clash = True
                    break
                used.add((pid, i))
            if clash:
                continue
        tokens = tuple(pool[i] for pool, i in zip(pools, combo))
        if _guard_ok(net, spec, tokens, clock):
            out.append(Binding(spec.id, tokens))
            if first_only:
                break
    return out


def enabled_bindings(net: NetDef, marking: Marking, tag: str | None = None, clock=None) -> list[Binding]:
    """All enabled bindings of transitions carrying ``tag`` (default: the marking's tag).

    Ordered by transition declaration index, then lexicographically over the
    chosen tokens' (time, values) keys.
    """
    tag = marking.tag if tag is None else tag
    clock = marking.clock if clock is None else clock
    out: list[Binding] = []
    for spec in net.transitions:
        if spec.tag == tag:
            out.extend(_transition_bindings(net, marking, spec, clock))
    return out


def _any_enabled(net, marking, clock, tags=(TAG_A, TAG_E)) -> bool:
    return any(
        _transition_bindings(net, marking, spec, clock, first_only=True)
        for spec in net.transitions
        if spec.tag in tags
    )


def is_enabled(net: NetDef, marking: Marking, binding: Binding) -> bool:
    try:
        spec = net.transition(binding.transition)
    except KeyError:
        return False
    if spec.tag != marking.tag or len(binding.tokens) != len(spec.input_arcs):
        return False
    need: dict[str, list[Token]] = {}
    for (pid, _), tok in zip(spec.input_arcs, binding.tokens):
        if tok.time > marking.clock:
            return False
        need.setdefault(pid, []).append(tok)
    for pid, toks in need.items():
        have = list(marking.tokens.get(pid, ()))
        for tok in toks:
            try:
                have.remove(tok)
            except ValueError:
                return False
    return _guard_ok(net, spec, binding.tokens, marking.clock)


def fire(net: NetDef, marking: Marking, binding: Binding, rng: np.random.Generator | None = None) -> StepOutcome:
    """Fire ``binding`` and return the successor marking.  Clock and tag are untouched."""
    if not is_enabled(net, marking, binding):
        raise StaleBinding(f"binding {binding!r} is not enabled at clock {marking.clock} tag {marking.tag}")
    rng = marking.rng if rng is None else rng
    spec = net.transition(binding.transition)
    clock = marking.clock
    tokens = dict(marking.tokens)
    for (pid, _), tok in zip(spec.input_arcs, binding.tokens):
        lst = list(tokens[pid])
        lst.remove(tok)
        tokens[pid] = tuple(lst)

    produced: list[tuple[str, Token]] = []
    if spec.output_arcs:
        views = bound_views(net, spec, binding.tokens)
        outputs = list(net.registry.behaviors[spec.behavior](views, clock, rng))
        if len(outputs) != len(spec.output_arcs):
            raise SchemaMismatch(
                spec.id,
                f"behavior {spec.behavior!r} returned {len(outputs)} outputs for "
                f"{len(spec.output_arcs)} output arcs",
            )
        for (pid, _), tok in zip(spec.output_arcs, outputs):
            if tok is None:
                continue
            tok = Token(float(tok[0]), tuple(tok[1]))
            if tok.time < clock:
                raise SchemaMismatch(pid, f"{spec.id} produced a token in the past on {pid!r}")
            net.place(pid).schema.validate(tok.values, where=pid)
            produced.append((pid, tok))
    for pid, tok in produced:
        tokens[pid] = insert_tokens(tokens.get(pid, ()), [tok])

    reward = 0.0
    if spec.reward is not None:
        reward = float(net.registry.rewards[spec.reward](bound_views(net, spec, binding.tokens), clock))
    new = Marking(tokens, clock, marking.tag, marking.cumulative_reward + reward, marking.rng)
    return StepOutcome(new, reward, spec.id, tuple(produced))


def next_enabling_time(net: NetDef, marking: Marking) -> float | None:
    """Smallest future token time (capped at the horizon) at which some binding is enabled."""
    times = sorted({
        tok.time
        for toks in marking.tokens.values()
        for tok in toks
        if marking.clock < tok.time <= net.horizon
    })
    for t in times:
        if _any_enabled(net, marking, t):
            return t
    return None


def advance(
    net: NetDef,
    marking: Marking,
    rng: np.random.Generator | None = None,
    on_fire: Callable[[TraceEvent], None] | None = None,
) -> Marking:
    """Run evolutions and the tag/clock engine until the next decision or the end.

    Returns at the first marking with tag A and an enabled A binding, or at a
    terminal marking.  E bindings are fired one at a time, always the first
    in enumeration order, re-enumerating after every firing.
    """
    m = marking
    while True:
        if m.tag == TAG_E:
            bs = enabled_bindings(net, m, TAG_E)
            if bs:
                out = fire(net, m, bs[0], rng)
                if on_fire is not None:
                    on_fire(_event(net, m, bs[0], out.reward))
                m = out.marking
                continue
            m = _with(m, tag=TAG_A)
        if m.clock >= net.horizon:
            return m
        if enabled_bindings(net, m, TAG_A):
            return m
        if _any_enabled(net, m, m.clock, (TAG_E,)):
            m = _with(m, tag=TAG_E)
            continue
        t = next_enabling_time(net, m)
        if t is None:
            return m
        m = _with(m, clock=t, tag=TAG_E)


def _with(m: Marking, **kw) -> Marking:
    return Marking(
        m.tokens,
        kw.get("clock", m.clock),
        kw.get("tag", m.tag),
        m.cumulative_reward,
        m.rng,
    )


def is_terminal(net: NetDef, marking: Marking) -> bool:
    if marking.clock >= net.horizon:
        return True
    if _any_enabled(net, marking, marking.clock):
        return False
    return next_enabling_time(net, marking) is None


def _event(net, marking, binding, reward) -> TraceEvent:
    spec = net.transition(binding.transition)
    return TraceEvent(
        marking.clock,
        marking.tag,
        binding.transition,
        tuple((pid, tok) for (pid, _), tok in zip(spec.input_arcs, binding.tokens)),
        reward,
    )


def _fmt_token(pid: str, tok: Token) -> str:
    return f"{pid}@{tok.time!r}:" + "|".join(repr(v) for v in tok.values)


def trace_rows(events: Iterable[TraceEvent]) -> list[list[str]]:
    return [
        [repr(e.clock), e.tag, e.transition, "+".join(_fmt_token(p, t) for p, t in e.tokens), repr(e.reward)]
        for e in events
    ]


def format_trace(events: Iterable[TraceEvent]) -> str:
    """Render events as ``clock;tag;transition_id;binding_tokens;reward_delta`` lines."""
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=";", lineterminator="\n")
    writer.writerows(trace_rows(events))
    return buf.getvalue()


def parse_trace(text: str) -> list[tuple[float, str, str, str, float]]:
    rows = csv.reader(io.StringIO(text), delimiter=";")
    return [(float(c), tag, tid, toks, float(r)) for c, tag, tid, toks, r in rows]

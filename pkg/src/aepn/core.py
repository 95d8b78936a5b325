"""Static structure and dynamic state of a partially observable A-E Petri net.

A net is assembled from :class:`Place` and :class:`TransitionSpec` objects by
:func:`build_net`, which validates everything up front and returns an
immutable :class:`NetDef`.  Guards, behaviors, rewards and processing-time
estimates are plain Python callables looked up by name in a
:class:`Registry`, so a net's structure stays serializable while its
functions stay opaque.

Observability follows the positive convention: ``Place.observable=True``
means the place shows up in observations.  (The usual formal notation flips
this and writes 0 for observable.)
"""
from __future__ import annotations

import bisect
import json
from collections import namedtuple
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    FlagLengthMismatch,
    InvalidHorizon,
    MissingTransitions,
    SchemaMismatch,
    UnknownPlace,
    UnknownPlaceInArc,
    UnknownRegistryRef,
)

TAG_A = "A"
TAG_E = "E"
TAGS = (TAG_A, TAG_E)

INT = "int"
REAL = "real"
CAT = "cat"

NET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str = INT
    cardinality: int | None = None

    def __post_init__(self):
        if self.kind not in (INT, REAL, CAT):
            raise SchemaMismatch(self.name, f"unknown attribute kind {self.kind!r}")
        if self.kind == CAT:
            if self.cardinality is None or self.cardinality < 1:
                raise SchemaMismatch(self.name, "categorical cardinality must be >= 1")
        elif self.cardinality is not None:
            raise SchemaMismatch(self.name, "cardinality only applies to categorical attributes")

    def accepts(self, value) -> bool:
        if isinstance(value, (bool, np.bool_)):
            return False
        if self.kind == INT:
            return isinstance(value, (int, np.integer))
        if self.kind == REAL:
            return isinstance(value, (int, float, np.integer, np.floating))
        return isinstance(value, (int, np.integer)) and 0 <= value < self.cardinality

    @property
    def width(self) -> int:
        """Number of feature columns this attribute occupies."""
        return self.cardinality if self.kind == CAT else 1

    def label(self) -> str:
        return f"{self.name}:{self.kind}{self.cardinality or ''}"


def cat(name: str, cardinality: int) -> Attribute:
    return Attribute(name, CAT, cardinality)


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple[Attribute, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        seen = set()
        for a in self.attributes:
            if a.name in seen:
                raise DuplicateId(a.name, f"attribute {a.name!r} declared twice in schema")
            seen.add(a.name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def __len__(self):
        return len(self.attributes)

    def __iter__(self):
        return iter(self.attributes)

    def validate(self, values, where="token"):
        if len(values) != len(self.attributes):
            raise SchemaMismatch(
                where, f"{where}: expected {len(self.attributes)} values, got {len(values)}"
            )
        for a, v in zip(self.attributes, values):
            if not a.accepts(v):
                raise SchemaMismatch(where, f"{where}: value {v!r} is not a valid {a.label()}")


class Token(NamedTuple):
    """A timed token.  Tuple ordering (time, values) is the canonical sort key."""

    time: float
    values: tuple = ()


@dataclass(frozen=True)
class Place:
    id: str
    schema: AttributeSchema = field(default_factory=AttributeSchema)
    observable: bool = True
    attribute_observable: tuple[bool, ...] | None = None

    def __post_init__(self):
        if not isinstance(self.schema, AttributeSchema):
            object.__setattr__(self, "schema", AttributeSchema(tuple(self.schema)))
        flags = self.attribute_observable
        if flags is None:
            flags = (True,) * len(self.schema)
        flags = tuple(bool(f) for f in flags)
        if len(flags) != len(self.schema):
            raise FlagLengthMismatch(
                f"place {self.id!r}: {len(flags)} attribute flags for {len(self.schema)} attributes"
            )
        object.__setattr__(self, "attribute_observable", flags)

    @property
    def observed_attributes(self) -> tuple[Attribute, ...]:
        return tuple(a for a, f in zip(self.schema, self.attribute_observable) if f)


@dataclass(frozen=True)
class TransitionSpec:
    id: str
    tag: str
    input_arcs: tuple[tuple[str, str], ...]
    output_arcs: tuple[tuple[str, str], ...] = ()
    behavior: str | None = None
    guard: str | None = None
    reward: str | None = None
    duration: str | None = None
    type_index: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "input_arcs", tuple(tuple(a) for a in self.input_arcs))
        object.__setattr__(self, "output_arcs", tuple(tuple(a) for a in self.output_arcs))
        if self.tag not in TAGS:
            raise SchemaMismatch(self.id, f"transition {self.id!r}: tag must be 'A' or 'E'")

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(v for _, v in self.input_arcs)


@dataclass
class Registry:
    """Named host-language functions referenced from transitions.

    * guard(bound, clock) -> bool
    * behavior(bound, clock, rng) -> sequence of Token | None, one per output arc
    * reward(bound, clock) -> float
    * duration(bound) -> float, a processing-time estimate used by heuristics

    ``bound`` maps each input-arc variable to a read-only view of its token
    exposing ``time`` plus one field per attribute.
    """

    guards: dict[str, Callable] = field(default_factory=dict)
    behaviors: dict[str, Callable] = field(default_factory=dict)
    rewards: dict[str, Callable] = field(default_factory=dict)
    durations: dict[str, Callable] = field(default_factory=dict)

    def refs(self) -> list[str]:
        out = []
        for kind in ("guards", "behaviors", "rewards", "durations"):
            out.extend(f"{kind}:{name}" for name in sorted(getattr(self, kind)))
        return out


@dataclass(frozen=True, eq=False)
class NetDef:
    places: tuple[Place, ...]
    transitions: tuple[TransitionSpec, ...]
    initial_tokens: Mapping[str, tuple[Token, ...]]
    horizon: float
    registry: Registry
    initial_tag: str = TAG_E
    initial_reward: float = 0.0
    name: str = "net"
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_place_index", {p.id: i for i, p in enumerate(self.places)})
        object.__setattr__(self, "_views", {
            p.id: namedtuple(f"{_ident(p.id)}Token", ("time",) + p.schema.names, rename=True)
            for p in self.places
        })

    def place(self, place_id: str) -> Place:
        try:
            return self.places[self._place_index[place_id]]
        except KeyError:
            raise UnknownPlace(place_id) from None

    def place_position(self, place_id: str) -> int:
        return self._place_index[place_id]

    def transition(self, transition_id: str) -> TransitionSpec:
        for t in self.transitions:
            if t.id == transition_id:
                return t
        raise KeyError(transition_id)

    def view(self, place_id: str, token: Token):
        return self._views[place_id](token.time, *token.values)

    def num_types(self, tag: str) -> int:
        return sum(1 for t in self.transitions if t.tag == tag)

    @property
    def num_A_types(self) -> int:
        return self.num_types(TAG_A)

    @property
    def num_E_types(self) -> int:
        return self.num_types(TAG_E)

    def to_json(self) -> dict:
        return net_to_json(self)


def _ident(s: str) -> str:
    out = "".join(c if c.isalnum() else "_" for c in s)
    return out if out and out[0].isalpha() else "P" + out


@dataclass(eq=False)
class Marking:
    """Dynamic state.  Token tuples per place are kept sorted by (time, values)."""

    tokens: dict[str, tuple[Token, ...]]
    clock: float = 0.0
    tag: str = TAG_E
    cumulative_reward: float = 0.0
    rng: np.random.Generator | None = None

    def copy(self) -> "Marking":
        return Marking(dict(self.tokens), self.clock, self.tag, self.cumulative_reward, self.rng)

    def key(self) -> tuple:
        """Canonical hashable state key (ignores reward and RNG)."""
        return (self.clock, self.tag, tuple(sorted(self.tokens.items())))

    def __eq__(self, other):
        if not isinstance(other, Marking):
            return NotImplemented
        return (
            self.key() == other.key()
            and self.cumulative_reward == other.cumulative_reward
        )

    def count(self, place_id: str | None = None) -> int:
        if place_id is not None:
            return len(self.tokens.get(place_id, ()))
        return sum(len(v) for v in self.tokens.values())



def insert_tokens(existing: Sequence[Token], new: Sequence[Token]) -> tuple[Token, ...]:
    """Insert into a sorted token tuple; equal tokens keep insertion order."""
    lst = list(existing)
    for tok in new:
        bisect.insort_right(lst, tok)
    return tuple(lst)


def build_net(
    places: Sequence[Place],
    transitions: Sequence[TransitionSpec],
    initial_tokens: Mapping[str, Sequence] | None = None,
    horizon: float = 10.0,
    registry: Registry | None = None,
    *,
    initial_tag: str = TAG_E,
    initial_reward: float = 0.0,
    name: str = "net",
    metadata: Mapping[str, Any] | None = None,
) -> NetDef:
    """Validate the pieces of a net and freeze them into a :class:`NetDef`.

    Places and transitions keep their declaration order, which every
    downstream ordering (graph nodes, action indices) relies on.  Transitions
    without an explicit ``type_index`` get their rank among same-tag
    transitions.  Initial tokens may be given as :class:`Token` objects or as
    ``(time, values)`` pairs.
    """
    registry = registry or Registry()
    places = tuple(places)
    transitions = tuple(transitions)

    place_ids = set()
    for p in places:
        if p.id in place_ids:
            raise DuplicateId(p.id)
        place_ids.add(p.id)
    if not transitions:
        raise MissingTransitions("transitions", "a net needs at least one transition")
    if not horizon > 0:
        raise InvalidHorizon("horizon", f"horizon must be positive, got {horizon!r}")
    if initial_tag not in TAGS:
        raise SchemaMismatch("initial_tag", f"initial tag must be A or E, got {initial_tag!r}")

    seen = set()
    counters = {TAG_A: 0, TAG_E: 0}
    n_by_tag = {tag: sum(1 for t in transitions if t.tag == tag) for tag in TAGS}
    fixed = []
    for t in transitions:
        if t.id in seen or t.id in place_ids:
            raise DuplicateId(t.id)
        seen.add(t.id)
        variables = set()
        for pid, var in t.input_arcs:
            if pid not in place_ids:
                raise UnknownPlaceInArc(pid)
            if var in variables:
                raise DuplicateId(var, f"transition {t.id!r}: variable {var!r} used twice")
            variables.add(var)
        for pid, _ in t.output_arcs:
            if pid not in place_ids:
                raise UnknownPlaceInArc(pid)
        for ref, table in (
            (t.guard, registry.guards),
            (t.behavior, registry.behaviors),
            (t.reward, registry.rewards),
            (t.duration, registry.durations),
        ):
            if ref is not None and ref not in table:
                raise UnknownRegistryRef(ref)
        if t.output_arcs and t.behavior is None:
            raise UnknownRegistryRef(t.id, f"transition {t.id!r} has output arcs but no behavior")
        idx = t.type_index
        if idx is None:
            idx = counters[t.tag]
        if not 0 <= idx < n_by_tag[t.tag]:
            raise SchemaMismatch(t.id, f"transition {t.id!r}: type_index {idx} out of range")
        counters[t.tag] += 1
        fixed.append(replace(t, type_index=idx))

    by_id = {p.id: p for p in places}
    tokens: dict[str, tuple[Token, ...]] = {}
    for pid, toks in (initial_tokens or {}).items():
        if pid not in by_id:
            raise UnknownPlace(pid)
        norm = []
        for tok in toks:
            tok = tok if isinstance(tok, Token) else Token(*tok)
            tok = Token(float(tok.time), tuple(tok.values))
            if tok.time < 0:
                raise SchemaMismatch(pid, f"place {pid!r}: negative token time {tok.time}")
            by_id[pid].schema.validate(tok.values, where=pid)
            norm.append(tok)
        tokens[pid] = tuple(sorted(norm))

    return NetDef(
        places=places,
        transitions=tuple(fixed),
        initial_tokens=tokens,
        horizon=float(horizon),
        registry=registry,
        initial_tag=initial_tag,
        initial_reward=float(initial_reward),
        name=name,
        metadata=dict(metadata or {}),
    )


def initial_state(net: NetDef, seed: int | None = 0) -> Marking:
    tokens = {p.id: net.initial_tokens.get(p.id, ()) for p in net.places}
    return Marking(
        tokens=tokens,
        clock=0.0,
        tag=net.initial_tag,
        cumulative_reward=net.initial_reward,
        rng=np.random.default_rng(seed),
    )


def set_observability(
    net: NetDef,
    place_id: str,
    observable: bool = True,
    attribute_flags: Sequence[bool] | Mapping[str, bool] | None = None,
) -> NetDef:
    """Return a copy of ``net`` with one place's observability changed.

    ``attribute_flags`` is either one boolean per schema attribute or a
    mapping from attribute name to flag (unmentioned attributes keep their
    current flag).
    """
    place = net.place(place_id)
    if attribute_flags is None:
        flags = place.attribute_observable
    elif isinstance(attribute_flags, Mapping):
        unknown = set(attribute_flags) - set(place.schema.names)
        if unknown:
            raise FlagLengthMismatch(f"place {place_id!r} has no attributes {sorted(unknown)}")
        flags = tuple(
            bool(attribute_flags.get(a.name, f))
            for a, f in zip(place.schema, place.attribute_observable)
        )
    else:
        flags = tuple(bool(f) for f in attribute_flags)
        if len(flags) != len(place.schema):
            raise FlagLengthMismatch(
                f"place {place_id!r}: {len(flags)} flags for {len(place.schema)} attributes"
            )
    new_place = replace(place, observable=bool(observable), attribute_observable=flags)
    places = tuple(new_place if p.id == place_id else p for p in net.places)
    return replace(net, places=places)


def net_to_json(net: NetDef) -> dict:
    return {
        "format": "aepn-net",
        "version": NET_FORMAT_VERSION,
        "name": net.name,
        "places": [
            {
                "id": p.id,
                "attributes": [
                    {"name": a.name, "kind": a.kind, "cardinality": a.cardinality}
                    for a in p.schema
                ],
            }
            for p in net.places
        ],
        "transitions": [
            {
                "id": t.id,
                "tag": t.tag,
                "type_index": t.type_index,
                "input_arcs": [list(a) for a in t.input_arcs],
                "output_arcs": [list(a) for a in t.output_arcs],
                "guard": t.guard,
                "behavior": t.behavior,
                "reward": t.reward,
                "duration": t.duration,
            }
            for t in net.transitions
        ],
        "observability": {
            p.id: {
                "observable": p.observable,
                "attributes": dict(zip(p.schema.names, p.attribute_observable)),
            }
            for p in net.places
        },
        "initial_tokens": [
            {"place": pid, "time": tok.time, "values": [_plain(v) for v in tok.values]}
            for pid in (p.id for p in net.places)
            for tok in net.initial_tokens.get(pid, ())
        ],
        "initial_tag": net.initial_tag,
        "initial_reward": net.initial_reward,
        "horizon": net.horizon,
        "registry_refs": net.registry.refs(),
    }


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


def dumps_net(net: NetDef) -> str:
    return json.dumps(net_to_json(net), indent=2, sort_keys=False)

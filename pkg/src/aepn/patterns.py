"""Benchmark nets: the introductory single-activity example, the two
multiple-action demos, and the eight workflow-pattern problems (a)-(h).

Every benchmark has two action transitions, ``Start1`` and ``Start2``, one
per activity type.  Joint variants feed both from one ``Resources`` place;
disjoint variants use ``Resources1`` and ``Resources2``.  Three resources per
pool, processing times from :data:`PROCESSING_TIMES`, reward 1 per completed
case, horizon 10, deterministic arrivals.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

from .core import (
    Attribute,
    NetDef,
    Place,
    Registry,
    Token,
    TransitionSpec,
    build_net,
    cat,
)
from .errors import UnknownProblem

# rows: resource R1, R2, R3; columns: activity type 1, 2
PROCESSING_TIMES = ((1.0, 2.0), (2.0, 1.0), (3.0, 3.0))

PATTERNS = ("sequence", "parallel", "cycle", "exclusive")


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    pattern: str
    pooling: str
    interarrival: float = 1.0
    arrivals_per_instant: int = 1
    horizon: float = 10.0
    processing_times: tuple = PROCESSING_TIMES
    resources_per_pool: int = 3
    repetitions: int = 1
    notes: str = ""

    def as_row(self) -> dict:
        d = asdict(self)
        d["processing_times"] = [list(r) for r in self.processing_times]
        return d


PROBLEMS: dict[str, ProblemSpec] = {
    "a": ProblemSpec("a", "sequence", "joint"),
    "b": ProblemSpec("b", "sequence", "disjoint"),
    "c": ProblemSpec("c", "parallel", "joint"),
    "d": ProblemSpec(
        "d", "parallel", "disjoint",
        notes="1 arrival per instant; 2 per instant gives an optimum other than 10",
    ),
    "e": ProblemSpec("e", "cycle", "joint", repetitions=2, notes="each case repeats its activity twice"),
    "f": ProblemSpec("f", "cycle", "disjoint", repetitions=2, notes="each case repeats its activity twice"),
    "g": ProblemSpec("g", "exclusive", "joint", arrivals_per_instant=2),
    "h": ProblemSpec(
        "h", "exclusive", "disjoint", arrivals_per_instant=2,
        notes="2 arrivals per instant; with 1 the optimum cannot exceed 10",
    ),
}

# (random mean, random std, ppo mean, optimum)
TABLE2 = {
    "a": (6.1, 0.8, 9, 9),
    "b": (7.5, 0.5, 9, 9),
    "c": (6.8, 0.4, 10, 10),
    "d": (8.8, 0.4, 10, 10),
    "e": (2.9, 1.4, 9, 9),
    "f": (3.9, 0.4, 9, 9),
    "g": (15.1, 1.1, 20, 20),
    "h": (17.8, 1.2, 20, 20),
}


def table2_reference(problem: str | None = None):
    """Reference Random/PPO/Optimum values, for one problem or all of them."""
    if problem is None:
        return dict(TABLE2)
    try:
        return TABLE2[problem]
    except KeyError:
        raise UnknownProblem(f"unknown problem {problem!r}; expected one of {', '.join(PROBLEMS)}") from None


def problem_spec(problem: str) -> ProblemSpec:
    try:
        return PROBLEMS[problem]
    except KeyError:
        raise UnknownProblem(f"unknown problem {problem!r}; expected one of {', '.join(PROBLEMS)}") from None


def build_problem(problem: str | ProblemSpec, **overrides) -> NetDef:
    """Build the net for benchmark ``problem`` ('a'..'h').

    Keyword overrides replace ProblemSpec fields, e.g. ``horizon=4`` for the
    reduced instances used in cross-checks.
    """
    spec = problem if isinstance(problem, ProblemSpec) else problem_spec(problem)
    if overrides:
        spec = ProblemSpec(**{**asdict(spec), **overrides})
    return _workflow_net(spec)


def _case_attrs(spec: ProblemSpec) -> tuple[Attribute, ...]:
    attrs = (Attribute("case_id"),)
    if spec.pattern == "cycle":
        attrs += (Attribute("remaining"),)
    return attrs


def _hidden(n):
    return (False,) * n


def _workflow_net(spec: ProblemSpec, *, arrivals: bool = True, initial=None, name=None) -> NetDef:
    pt = spec.processing_times
    n_res = len(pt)
    case = _case_attrs(spec)
    res_attr = cat("resource_id", n_res)
    joint = spec.pooling == "joint"
    pools = ("Resources", "Resources") if joint else ("Resources1", "Resources2")

    places = [
        Place(
            "Arrival",
            (Attribute("next_id"), cat("next_type", 2)),
            observable=False,
        )
    ]
    for p in dict.fromkeys(pools):
        places.append(Place(p, (res_attr,)))
    for k in (1, 2):
        places.append(Place(f"Wait{k}", case, attribute_observable=_hidden(len(case))))
        places.append(
            Place(
                f"Busy{k}",
                case + (res_attr,),
                attribute_observable=_hidden(len(case)) + (True,),
            )
        )
        if spec.pattern == "parallel":
            places.append(Place(f"Done{k}", case, attribute_observable=_hidden(len(case))))
        if spec.pattern == "cycle":
            places.append(Place(f"Check{k}", case, attribute_observable=_hidden(len(case))))

    reg = Registry()
    stride = spec.arrivals_per_instant
    reps = spec.repetitions

    def new_case(cid):
        return (cid, reps) if spec.pattern == "cycle" else (cid,)

    def arrive(b, clock, rng):
        g = b["g"]
        nxt = Token(clock + spec.interarrival, (g.next_id + stride, 1 - g.next_type))
        c = Token(clock, new_case(g.next_id))
        if spec.pattern == "sequence":
            return [nxt, c, None]
        if spec.pattern == "parallel":
            return [nxt, c, c]
        return [nxt, c, None] if g.next_type == 0 else [nxt, None, c]

    reg.behaviors["arrive"] = arrive

    transitions = []
    if arrivals:
        transitions.append(
            TransitionSpec(
                "Arrive", "E", [("Arrival", "g")], [("Arrival", "next"), ("Wait1", "c"), ("Wait2", "c")],
                behavior="arrive",
            )
        )

    reg.rewards["complete"] = lambda b, clock: 1.0

    for k in (1, 2):
        col = k - 1
        pool = pools[col]

        def duration(b, col=col):
            return pt[b["r"].resource_id][col]

        def start(b, clock, rng, col=col):
            c, r = b["c"], b["r"]
            return [Token(clock + pt[r.resource_id][col], tuple(c[1:]) + (r.resource_id,))]

        def complete(b, clock, rng, k=k):
            x = b["b"]
            res = Token(clock, (x.resource_id,))
            case_vals = tuple(x[1:-1])
            if spec.pattern == "sequence":
                return [res, Token(clock, case_vals) if k == 1 else None]
            if spec.pattern == "cycle":
                return [res, Token(clock, (x.case_id, x.remaining - 1))]
            if spec.pattern == "parallel":
                return [res, Token(clock, case_vals)]
            return [res]

        reg.durations[f"pt{k}"] = duration
        reg.behaviors[f"start{k}"] = start
        reg.behaviors[f"complete{k}"] = complete

        transitions.append(
            TransitionSpec(
                f"Start{k}", "A", [(f"Wait{k}", "c"), (pool, "r")], [(f"Busy{k}", "busy")],
                behavior=f"start{k}", duration=f"pt{k}",
            )
        )
        outs = [(pool, "r")]
        reward = None
        if spec.pattern == "sequence":
            outs.append(("Wait2", "c"))
            reward = "complete" if k == 2 else None
        elif spec.pattern == "parallel":
            outs.append((f"Done{k}", "c"))
        elif spec.pattern == "cycle":
            outs.append((f"Check{k}", "c"))
        else:
            reward = "complete"
        transitions.append(
            TransitionSpec(f"Complete{k}", "E", [(f"Busy{k}", "b")], outs, behavior=f"complete{k}", reward=reward)
        )

    if spec.pattern == "parallel":
        reg.guards["same_case"] = lambda b, clock: b["x"].case_id == b["y"].case_id
        transitions.append(
            TransitionSpec("Join", "E", [("Done1", "x"), ("Done2", "y")], guard="same_case", reward="complete")
        )
    if spec.pattern == "cycle":
        reg.guards["again"] = lambda b, clock: b["c"].remaining > 0
        reg.guards["finished"] = lambda b, clock: b["c"].remaining <= 0
        reg.behaviors["loop"] = lambda b, clock, rng: [Token(clock, (b["c"].case_id, b["c"].remaining))]
        for k in (1, 2):
            transitions.append(
                TransitionSpec(f"Repeat{k}", "E", [(f"Check{k}", "c")], [(f"Wait{k}", "c")],
                               behavior="loop", guard="again")
            )
            transitions.append(
                TransitionSpec(f"Finish{k}", "E", [(f"Check{k}", "c")], guard="finished", reward="complete")
            )

    if initial is None:
        initial = {
            "Arrival": [Token(0.0, (j, j % 2)) for j in range(spec.arrivals_per_instant)],
        }
        for p in dict.fromkeys(pools):
            initial[p] = [Token(0.0, (r,)) for r in range(min(spec.resources_per_pool, n_res))]

    return build_net(
        places, transitions, initial, spec.horizon, reg,
        name=name or f"problem-{spec.id}",
        metadata={"problem": spec.as_row(), "upper_bound": _completion_bound(spec)},
    )


def _completion_bound(spec: ProblemSpec):
    """Admissible bound on future reward: cases that could still finish in time.

    Each pending or future case is assumed to get the fastest resource for
    every remaining activity with no waiting, so the bound never
    underestimates what any policy can still collect.
    """
    fast = [min(row[k] for row in spec.processing_times) for k in (0, 1)]
    horizon = spec.horizon
    if spec.pattern == "sequence":
        fresh = fast[0] + fast[1]
    elif spec.pattern == "parallel":
        fresh = max(fast)
    elif spec.pattern == "cycle":
        fresh = spec.repetitions * min(fast)
    else:
        fresh = min(fast)

    def bound(net, m):
        clock = m.clock
        tok = m.tokens
        finish: dict[int, float] = {}

        def upd(cid, t):
            finish[cid] = max(finish.get(cid, 0.0), t)

        for k, f in ((1, fast[0]), (2, fast[1])):
            for t in tok.get(f"Wait{k}", ()):
                ready = max(clock, t.time)
                if spec.pattern == "sequence":
                    upd(t.values[0], ready + (f if k == 2 else fast[0] + fast[1]))
                elif spec.pattern == "cycle":
                    upd(t.values[0], ready + t.values[1] * f)
                else:
                    upd(t.values[0], ready + f)
            for t in tok.get(f"Busy{k}", ()):
                done = t.time
                if spec.pattern == "sequence" and k == 1:
                    done += fast[1]
                elif spec.pattern == "cycle":
                    done += (t.values[1] - 1) * f
                upd(t.values[0], done)
            for place in (f"Done{k}", f"Check{k}"):
                for t in tok.get(place, ()):
                    extra = t.values[1] * f if place.startswith("Check") else 0.0
                    upd(t.values[0], max(clock, t.time) + extra)
        n = sum(1 for v in finish.values() if v <= horizon)
        for g in tok.get("Arrival", ()):
            a = g.time
            while a + fresh <= horizon:
                n += 1
                a += spec.interarrival
        return float(n)

    return bound


def fig1_net(horizon: float = 10.0) -> NetDef:
    """Single-activity task assignment with two case types and two resources.

    Two arrival tokens each emit one case per time unit.  Processing time is 1
    when the case type matches the resource id and 2 otherwise.
    """
    places = [
        Place("Arrival", (cat("task_type", 2),)),
        Place("Waiting", (cat("task_type", 2),)),
        Place("Resources", (cat("id", 2),)),
        Place("Busy", (cat("task_type", 2), cat("id", 2))),
        Place("Completed", (cat("task_type", 2),)),
    ]
    reg = Registry()

    def tf(b):
        return 1.0 if b["x"].task_type == b["y"].id else 2.0

    reg.durations["tf"] = tf
    reg.behaviors["arrive"] = lambda b, clock, rng: [
        Token(clock + 1.0, (b["a"].task_type,)),
        Token(clock, (b["a"].task_type,)),
    ]
    reg.behaviors["start"] = lambda b, clock, rng: [
        Token(clock + tf(b), (b["x"].task_type, b["y"].id)),
    ]
    reg.behaviors["complete"] = lambda b, clock, rng: [
        Token(clock, (b["b"].id,)),
        Token(clock, (b["b"].task_type,)),
    ]
    reg.rewards["complete"] = lambda b, clock: 1.0
    transitions = [
        TransitionSpec("Arrive", "E", [("Arrival", "a")], [("Arrival", "a"), ("Waiting", "x")], behavior="arrive"),
        TransitionSpec("Start", "A", [("Waiting", "x"), ("Resources", "y")], [("Busy", "b")],
                       behavior="start", duration="tf"),
        TransitionSpec("Complete", "E", [("Busy", "b")], [("Resources", "y"), ("Completed", "c")],
                       behavior="complete", reward="complete"),
    ]
    initial = {
        "Arrival": [Token(0.0, (0,)), Token(0.0, (1,))],
        "Resources": [Token(0.0, (0,)), Token(0.0, (1,))],
    }
    return build_net(places, transitions, initial, horizon, reg, name="fig1")


def _demo(pooling: str) -> NetDef:
    spec = ProblemSpec(f"demo-{pooling}", "exclusive", pooling)
    pools = ("Resources",) if pooling == "joint" else ("Resources1", "Resources2")
    initial = {"Wait1": [Token(0.0, (0,))], "Wait2": [Token(0.0, (1,))]}
    for p in pools:
        initial[p] = [Token(0.0, (r,)) for r in range(3)]
    return _workflow_net(spec, initial=initial, name=f"demo-{pooling}")


def disjoint_demo_net() -> NetDef:
    """Two sub-processes with separate resource pools, one case waiting in each."""
    return _demo("disjoint")


def joint_demo_net() -> NetDef:
    """Two action transitions competing for one shared pool of three resources."""
    return _demo("joint")


DEMOS = {"fig1": fig1_net, "disjoint": disjoint_demo_net, "joint": joint_demo_net}


def get_net(name: str) -> NetDef:
    """Resolve a benchmark id ('a'..'h') or a demo name ('fig1', 'disjoint', 'joint')."""
    if name in DEMOS:
        return DEMOS[name]()
    return build_problem(name)


def assigned_resource(net: NetDef, binding) -> int | None:
    """Resource id consumed by ``binding``, or None when it takes no resource."""
    spec = net.transition(binding.transition)
    for (pid, _), tok in zip(spec.input_arcs, binding.tokens):
        if pid.startswith("Resources"):
            return int(tok.values[0])
    return None

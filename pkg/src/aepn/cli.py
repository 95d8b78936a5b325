"""Command-line interface: ``aepn <command> [flags]``.

Exit codes: 0 success, 2 usage error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import dumps_net, initial_state
from .env import run_episode
from .errors import (
    AEPNError,
    EmptyEvaluation,
    ModelSchemaMismatch,
    NonFiniteLoss,
    UnknownPolicy,
    UnknownProblem,
    UnknownStage,
)
from .expansion import expand, node_type_dims, observe
from .learn.model import GraphPolicy
from .learn.ppo import PPOConfig, evaluate, seed_stream, train
from .patterns import DEMOS, PROBLEMS, build_problem, get_net, problem_spec, table2_reference
from .policies import exhaustive_oracle, greedy_spt_policy, random_policy
from .semantics import advance

log = logging.getLogger("aepn")

POLICIES = ("random", "greedy", "oracle")
STAGES = ("net", "expanded", "graph")
FORMATS = ("dot", "json")
PPO_SECONDS_PER_PROBLEM = 15 * 60
USAGE_ERRORS = (UnknownProblem, UnknownPolicy, UnknownStage, EmptyEvaluation, ModelSchemaMismatch)


@dataclass
class RunReport:
    problem: str
    policy: str
    seed: int
    episodes: int
    per_episode: list[float]
    mean_reward: float = field(init=False)
    std_reward: float = field(init=False)
    wall_clock_seconds: float = 0.0

    def __post_init__(self):
        arr = np.asarray(self.per_episode, dtype=float)
        self.mean_reward = float(arr.mean())
        self.std_reward = float(arr.std())

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_episode"] = [float(x) for x in self.per_episode]
        return d

    def summary(self) -> str:
        return (
            f"{self.problem} {self.policy}: {self.mean_reward:.2f} +/- {self.std_reward:.2f} "
            f"over {self.episodes} episodes ({self.wall_clock_seconds:.2f}s)"
        )


def write_atomic(path: str, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file in the same directory."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("AEPN_THREADS", "1")))
    except ValueError:
        return 1


def _check_episodes(n: int):
    if n < 1:
        raise EmptyEvaluation("at least one episode is required")


# policies -------------------------------------------------------------------

def run_policy(problem: str, policy: str, episodes: int, seed: int) -> RunReport:
    if policy not in POLICIES:
        raise UnknownPolicy(f"unknown policy {policy!r}; choose one of {', '.join(POLICIES)}")
    _check_episodes(episodes)
    net = get_net(problem)
    t0 = time.perf_counter()
    env_rng = seed_stream(seed, "env")
    policy_rng = seed_stream(seed, "policy")
    rewards = []
    if policy == "oracle":
        value = exhaustive_oracle(net, seed=seed).value
        rewards = [value] * episodes
    else:
        if policy == "random":
            choose = lambda g: random_policy(g, policy_rng).action  # noqa: E731
        else:
            choose = lambda g: greedy_spt_policy(g, net).action  # noqa: E731
        for _ in range(episodes):
            total, _, _ = run_episode(net, choose, seed=int(env_rng.integers(2**31)))
            rewards.append(total)
    return RunReport(problem, policy, seed, episodes, rewards, wall_clock_seconds=time.perf_counter() - t0)


def cmd_run(args) -> int:
    report = run_policy(args.problem, args.policy, args.episodes, args.seed)
    if args.out:
        write_atomic(args.out, json.dumps(report.to_json(), indent=2) + "\n")
    print(report.summary())
    return 0


def cmd_train(args) -> int:
    net = get_net(args.problem)
    if args.steps == 0:
        log.warning("--steps 0: saving the untrained initial model")
    target = None
    if args.problem in PROBLEMS and not args.no_early_stop:
        target = table2_reference(args.problem)[3]
    config = PPOConfig(total_steps=args.steps)
    result = train(net, config, seed=args.seed, target=target, max_seconds=args.max_seconds)
    write_atomic(args.out, result.model.dumps())
    if args.log:
        write_atomic(args.log, result.log_csv())
    print(f"{args.problem}: {result.status} after {result.steps} steps in {result.seconds:.1f}s -> {args.out}")
    return 0


def load_model(path: str) -> GraphPolicy:
    with open(path, encoding="utf-8") as f:
        return GraphPolicy.loads(f.read())


def eval_model(problem: str, model: GraphPolicy, episodes: int, deterministic: bool, seed: int) -> RunReport:
    _check_episodes(episodes)
    net = get_net(problem)
    model.check_compatible(node_type_dims(net))
    t0 = time.perf_counter()
    rewards = evaluate(model, net, episodes, deterministic, seed)
    name = "ppo-deterministic" if deterministic else "ppo-stochastic"
    return RunReport(problem, name, seed, episodes, rewards, wall_clock_seconds=time.perf_counter() - t0)


def cmd_eval(args) -> int:
    _check_episodes(args.episodes)  # usage errors before touching the model file
    report = eval_model(args.problem, load_model(args.model), args.episodes, args.deterministic, args.seed)
    if args.out:
        write_atomic(args.out, json.dumps(report.to_json(), indent=2) + "\n")
    print(report.summary())
    return 0


# export ---------------------------------------------------------------------

def export_text(problem: str, fmt: str, stage: str, seed: int = 0) -> str:
    if stage not in STAGES:
        raise UnknownStage(f"unknown stage {stage!r}; choose one of {', '.join(STAGES)}")
    if fmt not in FORMATS:
        raise UnknownStage(f"unknown format {fmt!r}; choose one of {', '.join(FORMATS)}")
    net = get_net(problem)
    if stage == "net":
        if fmt == "json":
            return dumps_net(net)
        return net_to_dot(net)
    m = advance(net, initial_state(net, seed))
    obj = expand(net, m) if stage == "expanded" else observe(net, m)
    if fmt == "json":
        return json.dumps(obj.to_json(), indent=2)
    return obj.to_dot()


def net_to_dot(net) -> str:
    lines = [f'digraph "{net.name}" {{', "  rankdir=LR;"]
    for p in net.places:
        style = "" if p.observable else ", style=dashed"
        lines.append(f'  "{p.id}" [shape=circle{style}];')
    for t in net.transitions:
        lines.append(f'  "{t.id}" [shape=box, label="{t.id}|{t.tag}"];')
        for pid, var in t.input_arcs:
            lines.append(f'  "{pid}" -> "{t.id}" [label="{var}"];')
        for pid, slot in t.output_arcs:
            lines.append(f'  "{t.id}" -> "{pid}" [label="{slot}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def cmd_export(args) -> int:
    text = export_text(args.problem, args.format, args.stage, args.seed)
    if args.out:
        write_atomic(args.out, text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return 0


# benchmark table ------------------------------------------------------------

def _ppo_cell(problem: str, budget: int, seed: int, episodes: int) -> dict:
    net = build_problem(problem)
    target = table2_reference(problem)[3]
    result = train(net, PPOConfig(total_steps=budget), seed=seed, target=target, max_seconds=PPO_SECONDS_PER_PROBLEM)
    rewards = evaluate(result.model, net, episodes, True, seed)
    return {
        "mean": float(np.mean(rewards)),
        "std": float(np.std(rewards)),
        "steps": result.steps,
        "status": result.status,
        "seconds": result.seconds,
    }


def reproduce_table2(budget: int = 200_000, seed: int = 0, episodes: int = 10, problems=None) -> dict:
    problems = list(problems or PROBLEMS)
    rows = {}
    for p in problems:
        rnd = run_policy(p, "random", episodes, seed)
        opt = exhaustive_oracle(build_problem(p), seed=seed).value
        ref = table2_reference(p)
        rows[p] = {
            "random": {"mean": rnd.mean_reward, "std": rnd.std_reward},
            "optimum": opt,
            "ppo": None,
            "reference": {"random_mean": ref[0], "random_std": ref[1], "ppo": ref[2], "optimum": ref[3]},
        }
    if budget > 0:
        workers = min(max_workers(), len(problems))
        if workers > 1:
            with ProcessPoolExecutor(workers) as ex:
                cells = list(ex.map(_ppo_cell, problems, [budget] * len(problems), [seed] * len(problems), [episodes] * len(problems)))
        else:
            cells = [_ppo_cell(p, budget, seed, episodes) for p in problems]
        for p, c in zip(problems, cells):
            rows[p]["ppo"] = c
    for p, r in rows.items():
        ref = r["reference"]
        r["pass"] = {
            "random": abs(r["random"]["mean"] - ref["random_mean"]) <= 2.0,
            "optimum": r["optimum"] == ref["optimum"],
            "ppo": None if r["ppo"] is None else (r["ppo"]["mean"] == r["optimum"] and r["ppo"]["std"] == 0.0),
        }
    return {"budget": budget, "seed": seed, "episodes": episodes, "rows": rows}


def _mark(ok) -> str:
    return "skipped" if ok is None else ("pass" if ok else "FAIL")


def table2_markdown(result: dict) -> str:
    out = [
        "| problem | random | reference random | optimum | reference optimum | PPO | reference PPO | random | optimum | PPO |",
        "|---|---|---|---|---|---|---|---|---|---|",
    ]
    for p, r in result["rows"].items():
        pp = r["reference"]
        ppo = "skipped" if r["ppo"] is None else f"{r['ppo']['mean']:g} ± {r['ppo']['std']:g}"
        out.append(
            f"| {p} | {r['random']['mean']:.1f} ± {r['random']['std']:.1f} "
            f"| {pp['random_mean']} ± {pp['random_std']} | {r['optimum']:g} | {pp['optimum']:g} "
            f"| {ppo} | {pp['ppo']:g} ± 0 | {_mark(r['pass']['random'])} | {_mark(r['pass']['optimum'])} "
            f"| {_mark(r['pass']['ppo'])} |"
        )
    return "\n".join(out) + "\n"


def cmd_reproduce_table2(args) -> int:
    result = reproduce_table2(args.budget, args.seed, args.episodes)
    md = table2_markdown(result)
    print(md, end="")
    if args.out:
        write_atomic(args.out, json.dumps(result, indent=2) + "\n")
    if args.markdown:
        write_atomic(args.markdown, md)
    return 0


def cmd_list_problems(args) -> int:
    rows = [problem_spec(p).as_row() for p in PROBLEMS]
    cols = list(rows[0])
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    print("  ".join(c.ljust(widths[c]) for c in cols))
    for r in rows:
        print("  ".join(str(r[c]).ljust(widths[c]) for c in cols))
    print("demo nets: " + ", ".join(DEMOS))
    return 0


# entry point ----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aepn", description="Action-Evolution Petri net toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run a fixed policy on a problem")
    p.add_argument("--problem", required=True)
    p.add_argument("--policy", default="random")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="train a PPO graph policy")
    p.add_argument("--problem", required=True)
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="model JSON path")
    p.add_argument("--log", help="CSV training log path")
    p.add_argument("--max-seconds", type=float, default=PPO_SECONDS_PER_PROBLEM)
    p.add_argument("--no-early-stop", action="store_true", help="train for the full step budget")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a saved model")
    p.add_argument("--problem", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="export a net, expanded net or assignment graph")
    p.add_argument("--problem", required=True, help="a-h or one of: " + ", ".join(DEMOS))
    p.add_argument("--format", default="dot")
    p.add_argument("--stage", default="net")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("reproduce-table2", help="random, oracle and PPO on all benchmarks")
    p.add_argument("--budget", type=int, default=200_000, help="PPO steps per problem (0 skips PPO)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--out", help="JSON results path")
    p.add_argument("--markdown", help="Markdown table path")
    p.set_defaults(func=cmd_reproduce_table2)

    p = sub.add_parser("list-problems", help="describe the benchmark problems")
    p.set_defaults(func=cmd_list_problems)
    return parser


def _message(e: BaseException) -> str:
    # KeyError subclasses would otherwise print their message quoted
    return str(e.args[0]) if len(e.args) == 1 else str(e)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except USAGE_ERRORS as e:
        print(f"aepn: error: {_message(e)}", file=sys.stderr)
        return 2
    except (NonFiniteLoss, AEPNError, OSError, ValueError) as e:
        print(f"aepn: failure: {_message(e)}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

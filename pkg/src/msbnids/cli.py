"""Command-line front end.

Subcommands: validate, infer, communicate-demo, trust, simulate, benchmark.
Exit codes: 0 success, 1 domain-level negative result, 2 input error,
3 protocol undecidable. Results go to stdout, diagnostics to stderr; every
subcommand is deterministic given its inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bayes import BayesNet, enumerate_posterior, validate_network
from .errors import (
    InconsistentEvidenceError,
    InvalidAssignmentError,
    ModelFormatError,
    MsbnIdsError,
    OutOfDomainError,
)
from .junction import build_junction_tree, propagate
from .modelio import as_single_subnet, bundled_path, load_model
from .msbn import Msbn, compile_ljf, validate_msbn
from .sim import (
    REFERENCE_RATES,
    RunConfig,
    build_world,
    compute_metrics,
    load_run_config,
)
from .trust import load_scenario, run_scenario

EXIT_OK = 0
EXIT_NEGATIVE = 1
EXIT_INPUT = 2
EXIT_UNDECIDABLE = 3


def _resolve(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    for candidate in (bundled_path(path), bundled_path(f"scenarios/{path}")):
        if candidate.exists():
            return candidate
    return p


def _fail(message: str, code: int) -> int:
    print(message, file=sys.stderr)
    return code


# -- validate ----------------------------------------------------------------


def cmd_validate(args) -> int:
    try:
        model = load_model(_resolve(args.model))
    except ModelFormatError as exc:
        return _fail(f"error: {exc}", EXIT_INPUT)
    violations = (
        validate_msbn(model) if isinstance(model, Msbn)
        else validate_network(model)
    )
    if violations:
        for v in violations:
            print(v)
        return EXIT_NEGATIVE
    print("OK")
    return EXIT_OK


# -- infer ---------------------------------------------------------------


def _parse_evidence(items) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in items or ():
        if "=" not in item:
            raise ModelFormatError(
                f"evidence '{item}' is not of the form var=state"
            )
        name, state = item.split("=", 1)
        out[name] = state
    return out


def _infer_msbn(msbn: Msbn, query: str, evidence: dict[str, str]):
    ljf = compile_ljf(msbn)
    for name in sorted(evidence):
        home = next(
            (s.id for s in msbn.subnets if name in s.variables), None
        )
        if home is None:
            raise InvalidAssignmentError(f"unknown variable '{name}'")
        ljf.enter_local_evidence(home, {name: evidence[name]})
    ljf.communicate()
    holder = next(
        (s.id for s in msbn.subnets if query in s.variables), None
    )
    if holder is None:
        raise InvalidAssignmentError(f"unknown variable '{query}'")
    return ljf.local_query(holder, query)


def cmd_infer(args) -> int:
    try:
        model = load_model(_resolve(args.model))
        evidence = _parse_evidence(args.evidence)
    except ModelFormatError as exc:
        return _fail(f"error: {exc}", EXIT_INPUT)
    net = model.net if isinstance(model, Msbn) else model
    try:
        if args.engine == "enumerate":
            post = enumerate_posterior(net, args.query, evidence)
        elif args.engine == "jt":
            cal = propagate(build_junction_tree(net), evidence)
            post = cal.query(args.query)
        else:
            msbn = model if isinstance(model, Msbn) else as_single_subnet(model)
            post = _infer_msbn(msbn, args.query, evidence)
    except InconsistentEvidenceError as exc:
        return _fail(f"inconsistent evidence: {exc}", EXIT_NEGATIVE)
    except (InvalidAssignmentError, OutOfDomainError) as exc:
        return _fail(f"error: {exc}", EXIT_INPUT)
    print(f"P({args.query} | {_format_evidence(evidence)})")
    for state, p in zip(post.states, post.probs):
        print(f"  {state} {p:.6f}")
    return EXIT_OK


def _format_evidence(evidence: dict[str, str]) -> str:
    if not evidence:
        return "-"
    return ", ".join(f"{k}={v}" for k, v in sorted(evidence.items()))


# -- communicate-demo ------------------------------------------------------


def cmd_communicate_demo(args) -> int:
    try:
        model = load_model(_resolve(args.model))
    except ModelFormatError as exc:
        return _fail(f"error: {exc}", EXIT_INPUT)
    if not isinstance(model, Msbn):
        return _fail("error: communicate-demo needs a sectioned model",
                     EXIT_INPUT)
    try:
        ljf = compile_ljf(model)
        placed: dict[str, dict[str, str]] = {}
        for item in args.evidence or ():
            if ":" not in item or "=" not in item:
                raise ModelFormatError(
                    f"evidence '{item}' is not of the form subnet:var=state"
                )
            sid, rest = item.split(":", 1)
            name, state = rest.split("=", 1)
            placed.setdefault(sid, {})[name] = state
        for sid in sorted(placed):
            ljf.enter_local_evidence(sid, placed[sid])
    except MsbnIdsError as exc:
        return _fail(f"error: {exc}", EXIT_INPUT)

    holders = [s.id for s in model.subnets if args.query in s.variables]
    if not holders:
        return _fail(f"error: unknown variable '{args.query}'", EXIT_INPUT)

    def show(title):
        print(title)
        for sid in sorted(s.id for s in model.subnets):
            if sid not in holders:
                continue
            post = ljf.local_query(sid, args.query)
            states = " ".join(
                f"{s}={p:.6f}" for s, p in zip(post.states, post.probs)
            )
            print(f"  {sid}: {states}")

    show(f"before communication, P({args.query}) per subnet:")
    try:
        ljf.communicate()
    except InconsistentEvidenceError as exc:
        return _fail(f"inconsistent evidence: {exc}", EXIT_NEGATIVE)
    show(f"after communication, P({args.query}) per subnet:")
    return EXIT_OK


# -- trust ------------------------------------------------------------------


def _choice_label(value) -> str:
    if value == 0:
        return "safe"
    if value == 1:
        return "compromised"
    return str(value)


def cmd_trust(args) -> int:
    try:
        scenario = load_scenario(_resolve(args.scenario))
    except ModelFormatError as exc:
        return _fail(f"error: {exc}", EXIT_INPUT)
    result = run_scenario(scenario)
    for rnd, round_result in enumerate(result.rounds):
        print(f"round {rnd}")
        if round_result.undecidable:
            print("  undecidable: loyal majority lost, no isolation performed")
            continue
        for inst_id in sorted(round_result.instances):
            inst = round_result.instances[inst_id]
            choices = " ".join(
                f"{h}:{_choice_label(inst.choices[h])}"
                for h in sorted(inst.choices)
                if h != inst.commander
            )
            print(f"  instance {inst_id} ({inst.message_count} msgs): {choices}")
        for verdict in round_result.verdicts:
            observers = " ".join(
                f"{o}:{v}" for o, v in sorted(verdict.by_observer.items())
            )
            flag = " -> isolate" if verdict.isolate else ""
            print(f"  subject {verdict.subject}: {observers}{flag}")
    print(f"isolated: {result.isolated}")
    if args.trace:
        lines = ["round,from,to,instance,chain,value"]
        lines += [
            f"{r},{frm},{to},{inst},{chain},{value}"
            for (r, frm, to, inst, chain, value) in result.trace
        ]
        Path(args.trace).write_text("\n".join(lines) + "\n", encoding="utf-8")
        print(f"trace written to {args.trace}", file=sys.stderr)
    return EXIT_UNDECIDABLE if result.undecidable else EXIT_OK


# -- simulate ----------------------------------------------------------------


def _interactive_confirm(alert) -> bool:
    prompt = (
        f"anomaly at event {alert.event} (max posterior "
        f"{alert.posterior:.4f}); confirm as new attack? [y/N] "
    )
    print(prompt, end="", file=sys.stderr, flush=True)
    answer = sys.stdin.readline().strip().lower()
    return answer in ("y", "yes")


def cmd_simulate(args) -> int:
    try:
        config = load_run_config(_resolve(args.config))
    except ModelFormatError as exc:
        return _fail(f"error: {exc}", EXIT_INPUT)
    if args.policy:
        config.alert_policy = args.policy
    if args.seed is not None:
        config.seed = args.seed
    confirm = None
    if config.alert_policy == "interactive":
        if sys.stdin.isatty():
            confirm = _interactive_confirm
        else:
            print("stdin is not a terminal; falling back to auto-reject",
                  file=sys.stderr)
            config.alert_policy = "auto-reject"
    dataset = _resolve(config.dataset)
    if not dataset.exists():
        return _fail(f"error: dataset '{config.dataset}' not found",
                     EXIT_INPUT)
    config.dataset = str(dataset)
    try:
        world = build_world(config)
    except (MsbnIdsError, OSError) as exc:
        return _fail(f"error: {exc}", EXIT_INPUT)
    world.run(confirm=confirm)
    with open(args.alerts, "w", encoding="utf-8") as fh:
        for alert in world.alerts:
            fh.write(alert.to_json() + "\n")
    kinds: dict[str, int] = {}
    for alert in world.alerts:
        kinds[alert.kind] = kinds.get(alert.kind, 0) + 1
    print(f"events processed: {world.t}")
    print(f"alerts: {json.dumps(kinds, sort_keys=True)}")
    print(f"isolated hosts: {sorted(world.isolated)}")
    print(f"model digest: {world.model_digest()}")
    print(f"alert log written to {args.alerts}", file=sys.stderr)
    return EXIT_OK


# -- benchmark ---------------------------------------------------------------


def cmd_benchmark(args) -> int:
    if args.config:
        try:
            config = load_run_config(_resolve(args.config))
        except ModelFormatError as exc:
            return _fail(f"error: {exc}", EXIT_INPUT)
    elif args.dataset:
        config = RunConfig(dataset=args.dataset)
    else:
        return _fail("error: provide a config file or --dataset", EXIT_INPUT)
    if args.dataset:
        config.dataset = args.dataset
    if args.seed is not None:
        config.seed = args.seed
    if args.sample_size is not None:
        config.sample_size = args.sample_size
    if args.hold_out:
        config.hold_out = args.hold_out
    if args.communicate_every is not None:
        config.communicate_every = args.communicate_every
    if args.policy:
        config.alert_policy = args.policy
    dataset = _resolve(config.dataset)
    if not dataset.exists():
        return _fail(
            f"error: dataset '{config.dataset}' not found. The 10% capture "
            "is available as kddcup.data_10_percent.gz from the KDD Cup 1999 "
            "archive (https://kdd.ics.uci.edu/databases/kddcup99/); the "
            "bundled synthetic fixture is kdd_fixture.csv.gz",
            EXIT_INPUT,
        )
    config.dataset = str(dataset)
    try:
        world = build_world(config)
    except MsbnIdsError as exc:
        return _fail(f"error: {exc}", EXIT_INPUT)
    world.run()
    report = compute_metrics(world, config)
    Path(args.out_json).write_text(report.to_json(), encoding="utf-8")
    Path(args.out_csv).write_text(report.to_csv(), encoding="utf-8")
    print(f"{'category':<10} {'detect%':>8} {'fp%':>7} {'n':>6} "
          f"{'ref-detect%':>12} {'ref-fp%':>8}")
    for row in report.rows:
        ref = REFERENCE_RATES.get(row["category"], {})
        det = ("NA" if row["detection_rate_pct"] is None
               else f"{row['detection_rate_pct']:.2f}")
        fp = ("NA" if row["false_positive_pct"] is None
              else f"{row['false_positive_pct']:.2f}")
        print(
            f"{row['category']:<10} {det:>8} {fp:>7} {row['n_records']:>6} "
            f"{ref.get('detection_rate_pct', float('nan')):>12.2f} "
            f"{ref.get('false_positive_pct', float('nan')):>8.2f}"
        )
    print(f"reports written to {args.out_json}, {args.out_csv}",
          file=sys.stderr)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msbnids",
        description=(
            "Distributed intrusion detection on sectioned Bayesian networks"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file for violations")
    p.add_argument("model", help="model file (plain or sectioned JSON)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("infer", help="answer a posterior query")
    p.add_argument("model", help="model file")
    p.add_argument("--query", required=True, help="variable to query")
    p.add_argument("--evidence", action="append", metavar="VAR=STATE",
                   help="observed value; repeatable")
    p.add_argument("--engine", choices=("enumerate", "jt", "msbn"),
                   default="jt", help="inference engine (default: jt)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser(
        "communicate-demo",
        help="show per-subnet posteriors before and after communication",
    )
    p.add_argument("model", help="sectioned model file")
    p.add_argument("--query", required=True, help="variable to report")
    p.add_argument("--evidence", action="append", metavar="SUBNET:VAR=STATE",
                   help="evidence entered at one subnet; repeatable")
    p.set_defaults(func=cmd_communicate_demo)

    p = sub.add_parser("trust", help="run a trust-domain scenario")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--trace", help="write the message trace to this file")
    p.set_defaults(func=cmd_trust)

    p = sub.add_parser("simulate", help="run the agent simulation")
    p.add_argument("config", help="run-config JSON file")
    p.add_argument("--alerts", default="alerts.jsonl",
                   help="alert log path (default: alerts.jsonl)")
    p.add_argument("--policy",
                   help="override the alert policy (auto-reject, "
                        "auto-confirm, auto-confirm:CATS, interactive)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="train/test benchmark with report")
    p.add_argument("config", nargs="?", help="run-config JSON file")
    p.add_argument("--dataset", help="connection-record file (csv or csv.gz)")
    p.add_argument("--sample-size", type=int, help="stratified sample size")
    p.add_argument("--seed", type=int, help="sampling/split seed")
    p.add_argument("--hold-out", help="category to withhold from training")
    p.add_argument("--communicate-every", type=int,
                   help="events between system-wide communications")
    p.add_argument("--policy", help="alert policy for the benchmark run")
    p.add_argument("--out-json", default="report.json",
                   help="metrics report JSON path (default: report.json)")
    p.add_argument("--out-csv", default="report.csv",
                   help="metrics report CSV path (default: report.csv)")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface.

Exit codes: 0 success, 2 validation or configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .catalog import ValidationItem, build_catalog, load_catalog, load_tasks, save_catalog
from .clustering import pseudo_task_catalog
from .encoders import HashingEncoder, PrecomputedEncoder, make_encoder, write_responses
from .errors import AdaptRouteError, ConfigError, FormatError, IoError
from .evaluators import ReplayEvaluator
from .fusion import route
from .harness.evaluation import RouterConfig, run_regime
from .harness.sweep import average_tables, budget_sweep, default_budgets
from .harness.world import WorldSpec, generate_world
from .linalg import dump_json, load_pool, read_json
from .metrics import MetricKind
from .pairing import Exhaustive, ShConfig, SuccessiveHalving, Uniform, build_pairing, report_path_for, save_pairing_report
from .retrieval import DEFAULT_K, DEFAULT_SAMPLES, DEFAULT_TEMPERATURE, with_representations

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3


def _read_jsonl(path) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return out


def _encoder_from_arg(name: str, dim: int, seed: int):
    if name in ("hashing", HashingEncoder.name):
        return HashingEncoder(dim, seed)
    if name.startswith("precomputed:"):
        path = Path(name.split(":", 1)[1])
        return PrecomputedEncoder.from_file(path, dim, path.name)
    raise ConfigError(f"unknown encoder {name!r} (use 'hashing' or 'precomputed:<responses.jsonl>')")


def _load_world(path):
    return generate_world(WorldSpec.from_dict(read_json(path)))


def _evaluator(args, catalog):
    if args.world and args.outputs:
        raise ConfigError("give either --world or --outputs, not both")
    if args.world:
        world = _load_world(args.world)
        if catalog.encoder_fingerprint != world.encoder.fingerprint:
            raise ConfigError("catalog was not generated from this world spec")
        return world.evaluator()
    if args.outputs:
        return ReplayEvaluator.from_file(args.outputs)
    raise ConfigError("an evaluator is required: pass --outputs <replay.jsonl> or --world <spec.json>")


def _catalog_encoder(catalog, catalog_path):
    if catalog.encoder is None:
        raise ConfigError("catalog does not record its encoder; rebuild it with 'catalog build'")
    return make_encoder(catalog.encoder, Path(catalog_path).parent)


def cmd_catalog_build(args) -> None:
    encoder = _encoder_from_arg(args.encoder, args.dim, args.encoder_seed)
    tasks = load_tasks(args.tasks)
    pool = load_pool(args.adapters) if args.adapters else {}
    catalog = build_catalog(tasks, pool, validation_cap=args.cap)
    catalog = with_representations(catalog, encoder, args.m, args.seed)
    if isinstance(encoder, PrecomputedEncoder):
        # keep the response file next to the catalog so the encoder can be rebuilt
        src = Path(args.encoder.split(":", 1)[1])
        dest = Path(args.out).parent / src.name
        if src.resolve() != dest.resolve():
            dest.write_bytes(src.read_bytes())
    save_catalog(catalog, args.out)
    print(f"wrote {args.out}: {len(catalog.tasks)} tasks, {len(catalog.pool)} adapters")


def cmd_pair(args) -> None:
    catalog = load_catalog(args.catalog)
    evaluator = _evaluator(args, catalog)
    if args.strategy == "exhaustive":
        strategy = Exhaustive()
    elif args.strategy == "sh":
        strategy = SuccessiveHalving(
            ShConfig(args.base_samples, args.eta, args.gamma, args.rounds, args.warmup, args.seed)
        )
    else:
        if args.budget is None:
            raise ConfigError("--budget is required for the uniform strategy")
        strategy = Uniform(args.budget, args.seed)
    paired, outcomes = build_pairing(catalog, evaluator, strategy, workers=args.workers)
    out = args.out or args.catalog
    save_catalog(paired, out)
    save_pairing_report(outcomes, report_path_for(out))
    spent = sum(o.total_budget_spent for o in outcomes.values())
    print(f"paired {len(outcomes)} tasks, {spent} adapter-sample evaluations; wrote {out}")


def cmd_route(args) -> None:
    catalog = load_catalog(args.catalog)
    encoder = _catalog_encoder(catalog, args.catalog)
    if (args.query is None) == (args.batch is None):
        raise ConfigError("give exactly one of --query or --batch")
    if args.query is not None:
        queries = [{"query_id": "", "text": args.query}]
    else:
        queries = _read_jsonl(args.batch)
    for q in queries:
        try:
            qid, text = str(q.get("query_id", "")), q["text"]
        except (KeyError, AttributeError) as exc:
            raise FormatError(f"batch line lacks a text field: {q!r}") from exc
        decision = route(catalog, encoder, text, args.k, args.temperature, query_id=qid)
        print(decision.to_json())


def _load_test_sets(path) -> dict[str, list[ValidationItem]]:
    sets: dict[str, list[ValidationItem]] = {}
    for rec in _read_jsonl(path):
        try:
            sets.setdefault(rec["task_id"], []).append(ValidationItem(rec["input"], rec.get("target", "")))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad test line {rec!r}") from exc
    return sets


def cmd_eval(args) -> None:
    catalog = load_catalog(args.catalog)
    evaluator = _evaluator(args, catalog)
    encoder = _catalog_encoder(catalog, args.catalog)
    tests = _load_test_sets(args.test)
    report = run_regime(catalog, args.regime, encoder, evaluator, tests, RouterConfig(args.k, args.temperature))
    dump_json(report.to_dict(), args.report)
    print(f"{report.regime}: normalized average {report.normalized_average:.2f}% over {len(report.rows)} tasks")


def cmd_cluster(args) -> None:
    encoder = _encoder_from_arg(args.encoder, args.dim, args.encoder_seed)
    items = []
    for rec in _read_jsonl(args.items):
        try:
            items.append(ValidationItem(rec["input"], rec.get("target", "")))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad item line {rec!r}") from exc
    pool = load_pool(args.adapters) if args.adapters else {}
    catalog = pseudo_task_catalog(items, encoder, args.k, args.seed, MetricKind(args.metric), pool)
    save_catalog(catalog, args.out)
    print(f"wrote {args.out}: {args.k} pseudo-tasks from {len(items)} items")


def cmd_sweep(args) -> None:
    world = _load_world(args.world)
    catalog = world.catalog()
    n_items = world.spec.validation_size
    if args.budgets == "auto":
        budgets = default_budgets(len(world.pool), n_items)
    else:
        try:
            budgets = sorted({int(b) for b in args.budgets.split(",") if b.strip()})
        except ValueError:
            raise ConfigError(f"--budgets must be a comma-separated list of integers, got {args.budgets!r}") from None
    tasks = world.task_ids[: args.tasks] if args.tasks else world.task_ids
    evaluator = world.evaluator()
    tables = [budget_sweep(catalog.tasks[t], catalog.pool, evaluator, budgets, args.runs, args.seed) for t in tasks]
    table = average_tables(tables)
    level = args.level
    reach = {m: table.budget_to_reach(m, level) for m in ("uniform", "successive_halving")}
    doc = table.to_dict() | {"budget_to_reach": reach, "level": level, "tasks": list(tasks), "world": world.spec.to_dict()}
    dump_json(doc, args.report)
    print(f"budget to reach {level}%: uniform {reach['uniform']}, successive halving {reach['successive_halving']}")


def cmd_world(args) -> None:
    world = _load_world(args.spec)
    out = Path(args.out)
    encoder = world.encoder
    write_responses(encoder.table, out.parent / encoder.spec.params["source"])
    save_catalog(world.catalog(), out)
    test_path = Path(args.test_out) if args.test_out else out.with_name(f"{out.stem}.test.jsonl")
    lines = [
        json.dumps({"input": it.input, "target": it.target, "task_id": tid}, sort_keys=True)
        for tid in world.task_ids
        for it in world.test[tid]
    ]
    try:
        test_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {test_path}: {exc}") from exc
    print(f"wrote {out} ({len(world.task_ids)} tasks, {len(world.pool)} adapters) and {test_path}")


def _add_evaluator_args(p) -> None:
    p.add_argument("--outputs", help="replay file of precomputed adapter outputs (JSON lines)")
    p.add_argument("--world", help="world spec the catalog was generated from")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptroute", description="Training-free LoRA adapter routing")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    cat = sub.add_parser("catalog", help="catalog management")
    cat_sub = cat.add_subparsers(dest="catalog_command", required=True)
    b = cat_sub.add_parser("build", help="build a catalog with task representations")
    b.add_argument("--tasks", required=True)
    b.add_argument("--adapters")
    b.add_argument("--encoder", default="hashing")
    b.add_argument("--dim", type=int, default=256)
    b.add_argument("--encoder-seed", type=int, default=0)
    b.add_argument("--m", type=int, default=DEFAULT_SAMPLES)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--cap", type=int, default=200)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_catalog_build)

    p = sub.add_parser("pair", help="pair every task with its best adapter")
    p.add_argument("--catalog", required=True)
    p.add_argument("--strategy", choices=["exhaustive", "sh", "uniform"], default="sh")
    p.add_argument("--budget", type=int)
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--base-samples", type=int, default=8)
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write the paired catalog here instead of in place")
    _add_evaluator_args(p)
    p.set_defaults(func=cmd_pair)

    r = sub.add_parser("route", help="route queries to weighted adapter sets")
    r.add_argument("--catalog", required=True)
    r.add_argument("--k", type=int, default=DEFAULT_K)
    r.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    r.add_argument("--query")
    r.add_argument("--batch")
    r.set_defaults(func=cmd_route)

    e = sub.add_parser("eval", help="evaluate routing under a regime")
    e.add_argument("--catalog", required=True)
    e.add_argument("--regime", choices=["non-ood", "semi-ood", "ood"], default="non-ood")
    e.add_argument("--test", required=True)
    e.add_argument("--k", type=int, default=DEFAULT_K)
    e.add_argument("--temperature", type=float, default=DEFAULT_TEMPERATURE)
    e.add_argument("--report", required=True)
    _add_evaluator_args(e)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cluster", help="build pseudo-tasks by K-Means")
    c.add_argument("--items", required=True)
    c.add_argument("--k", type=int, required=True)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.add_argument("--encoder", default="hashing")
    c.add_argument("--dim", type=int, default=256)
    c.add_argument("--encoder-seed", type=int, default=0)
    c.add_argument("--metric", choices=[m.value for m in MetricKind], default=MetricKind.EXACT_MATCH.value)
    c.add_argument("--adapters")
    c.set_defaults(func=cmd_cluster)

    s = sub.add_parser("sweep", help="uniform vs successive-halving budget sweep")
    s.add_argument("--world", required=True)
    s.add_argument("--budgets", default="auto")
    s.add_argument("--runs", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tasks", type=int, help="only sweep the first N tasks")
    s.add_argument("--level", type=float, default=95.0)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_sweep)

    w = sub.add_parser("world", help="generate a synthetic world catalog and test set")
    w.add_argument("--spec", required=True)
    w.add_argument("--out", required=True)
    w.add_argument("--test-out")
    w.set_defaults(func=cmd_world)
    return parser


def _message(exc: BaseException) -> str:
    # KeyError subclasses would otherwise print their message quoted
    return str(exc.args[0]) if len(exc.args) == 1 else str(exc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (IoError, OSError) as exc:
        print(f"error: {_message(exc)}", file=sys.stderr)
        return EXIT_IO
    except AdaptRouteError as exc:
        print(f"error: {_message(exc)}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

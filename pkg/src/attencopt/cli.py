"""Command-line entry point: ``attencopt <command> [--seed N] [--config FILE] [--out PATH]``.

``--config`` names a JSON object. Keys matching a command's options become
their defaults (explicit flags still win); remaining keys are passed to the
generator (``generate``) or to the training configuration (``train``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .features import build_features
from .harness import (
    OracleSolver,
    bench_inference,
    compare_visit_costs,
    emit_schedule_plot_data,
    location_changes,
    run_gap_study,
    run_transfer_study,
    study_instances,
    write_plot_csv,
)
from .instance import GeneratorConfig, generate_many, preset_name, read_instance, write_instance
from .model import PolicyModel
from .oracle import solve_exact
from .trainer import TRAIN_PRESETS, TrainConfig, train, train_preset

logger = logging.getLogger("attencopt")


def _write_json(doc, out) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out is None or str(out) == "-":
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _load_instances(args) -> list:
    if getattr(args, "instance", None):
        return [read_instance(p) for p in args.instance]
    return study_instances(args.preset, args.n, args.seed)


def _load_model(args) -> PolicyModel:
    if args.checkpoint:
        return PolicyModel.load(args.checkpoint)
    logger.warning("no checkpoint given; using a randomly initialized policy")
    return PolicyModel.initialize(seed=args.seed)


# -- commands ---------------------------------------------------------------


def cmd_generate(args, extra) -> int:
    config = GeneratorConfig.preset(args.preset, seed=args.seed, **_generator_overrides(extra))
    out = Path(args.out or "instances")
    names = []
    for k, inst in enumerate(generate_many(config, args.n)):
        name = f"instance_{k:04d}.json"
        write_instance(inst, out / name)
        names.append(name)
    _write_json({"generator": config.to_dict(), "count": args.n, "files": names}, out / "manifest.json")
    return 0


def _generator_overrides(extra: dict) -> dict:
    names = {f.name for f in fields(GeneratorConfig)} - {"seed"}
    unknown = set(extra) - names
    if unknown:
        raise SystemExit(f"unknown generator options in config: {sorted(unknown)}")
    return {k: tuple(v) if isinstance(v, list) else v for k, v in extra.items()}


def cmd_features(args, extra) -> int:
    docs = []
    for inst in _load_instances(args):
        fs = build_features(inst, pad_to=args.pad_to)
        docs.append(
            {
                "n_real": fs.n_real,
                "n_idle": fs.n_idle,
                "visit_cost": fs.visit_cost,
                "chi_scale": fs.scale,
                "cost_matrix": fs.raw_chi[:, :, 0].tolist(),
                "locations": fs.candidate_locations.tolist(),
                "network_input_shape": list(fs.network_input().shape),
            }
        )
    _write_json(docs, args.out)
    return 0


def cmd_solve_exact(args, extra) -> int:
    docs = []
    for inst in _load_instances(args):
        res = solve_exact(inst, time_limit=args.time_limit)
        docs.append(
            {
                "maint": res.schedule.maint.tolist(),
                "periods": (res.schedule.periods() + 1).tolist(),
                "change_flags": res.schedule.change_flags.tolist(),
                "cost": res.value,
                "optimal": res.optimal,
                "nodes": res.nodes,
                "wall_time": res.wall_time,
            }
        )
    _write_json(docs, args.out)
    return 0


def cmd_train(args, extra) -> int:
    overrides = dict(extra)
    overrides["seed"] = args.seed
    for name in ("epochs", "instances_per_epoch", "batch_size", "learning_rate", "baseline"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    try:
        if args.preset in TRAIN_PRESETS:
            config = train_preset(args.preset, **overrides)
        else:
            config = TrainConfig(preset=preset_name(args.preset), **overrides)
    except TypeError as exc:
        raise SystemExit(f"bad training option: {exc}") from None
    out = Path(args.out or f"runs/{args.preset}")
    model, log = train(config, out_dir=out, resume=args.resume)
    last = log.epochs[-1] if log.epochs else {}
    logger.info("finished: validation gap %.3f%%", last.get("val_mean_gap", float("nan")))
    return 0


def cmd_infer(args, extra) -> int:
    model = _load_model(args)
    instances = _load_instances(args)
    sols = model.solve(instances, mode=args.mode, seed=args.seed, pad_to=args.pad_to)
    _write_json([s.to_dict(inst) for s, inst in zip(sols, instances)], args.out)
    return 0


def cmd_gap_study(args, extra) -> int:
    model = _load_model(args)
    report = run_gap_study(
        model, args.preset, n_instances=args.n, time_limit=args.time_limit, seed=args.seed, pad_to=args.pad_to
    )
    report.write(args.out or "gap_study")
    _write_json(report.summary(), None)
    return 0


def cmd_transfer_study(args, extra) -> int:
    models = {}
    for spec in args.model:
        case, _, path = spec.partition("=")
        if not path:
            raise SystemExit(f"--model expects CASE=CHECKPOINT, got {spec!r}")
        models[preset_name(case)] = PolicyModel.load(path)
    matrix = run_transfer_study(
        models, args.test_cases, n_instances=args.n, seed=args.seed, time_limit=args.time_limit, pad=not args.no_pad
    )
    matrix.write(args.out or "transfer_study")
    _write_json(matrix.summary(), None)
    return 0


def cmd_bench(args, extra) -> int:
    model = _load_model(args)
    stats = bench_inference(model, args.preset, n=args.n, seed=args.seed, repeats=args.repeats)
    _write_json(stats, args.out)
    return 0


def cmd_plot_data(args, extra) -> int:
    inst = _load_instances(args)[0]
    solver = PolicyModel.load(args.checkpoint) if args.checkpoint else OracleSolver(time_limit=args.time_limit)
    if args.compare:
        rows = compare_visit_costs(inst, solver, high=args.high_visit_cost)
    else:
        rows = emit_schedule_plot_data(inst, solver.solve([inst])[0], variant="visit_cost")
    write_plot_csv(rows, args.out or "schedule.csv")
    changes = {v: location_changes([r for r in rows if r["variant"] == v]) for v in dict.fromkeys(r["variant"] for r in rows)}
    _write_json({"rows": len(rows), "location_changes": changes}, None)
    return 0


# -- parser -----------------------------------------------------------------

COMMANDS = {
    "generate": (cmd_generate, "write synthetic instances as JSON"),
    "features": (cmd_features, "cost matrix and candidate features for instances"),
    "solve-exact": (cmd_solve_exact, "optimal schedules by branch and bound"),
    "train": (cmd_train, "train a policy with REINFORCE"),
    "infer": (cmd_infer, "decode schedules with a trained policy"),
    "gap-study": (cmd_gap_study, "policy gap against exact optima"),
    "transfer-study": (cmd_transfer_study, "evaluate trained policies on other cases"),
    "bench": (cmd_bench, "greedy decode timing"),
    "plot-data": (cmd_plot_data, "per-slot schedule table for Gantt plots"),
}


def _common(p: argparse.ArgumentParser, preset_default="desk-a") -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, help="JSON file with option defaults")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--preset", default=preset_default, help="case preset (case1..case5, desk-a..desk-c)")


def _instance_source(p, n_default=1) -> None:
    p.add_argument("--instance", nargs="+", help="instance JSON files (default: generate from --preset)")
    p.add_argument("--n", type=int, default=n_default, help="number of generated instances")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="attencopt", description="Wind-farm maintenance scheduling")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}
    for name, (_, help_text) in COMMANDS.items():
        subs[name] = sub.add_parser(name, help=help_text)

    p = subs["generate"]
    _common(p)
    p.add_argument("--n", type=int, default=10)

    p = subs["features"]
    _common(p)
    _instance_source(p)
    p.add_argument("--pad-to", type=int)

    p = subs["solve-exact"]
    _common(p)
    _instance_source(p)
    p.add_argument("--time-limit", type=float)

    p = subs["train"]
    _common(p, preset_default="desk-case-a")
    p.set_defaults(seed=1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--instances-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--baseline", choices=("none", "rollout", "greedy"))
    p.add_argument("--resume", action="store_true")

    p = subs["infer"]
    _common(p)
    _instance_source(p)
    p.add_argument("--checkpoint")
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--pad-to", type=int)

    p = subs["gap-study"]
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--pad-to", type=int)

    p = subs["transfer-study"]
    _common(p)
    p.add_argument("--model", nargs="+", required=True, metavar="CASE=CHECKPOINT")
    p.add_argument("--test-cases", nargs="+", default=["desk-a", "desk-b", "desk-c"])
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--no-pad", action="store_true")

    p = subs["bench"]
    _common(p, preset_default="case5")
    p.add_argument("--checkpoint")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--repeats", type=int, default=1)

    p = subs["plot-data"]
    _common(p)
    _instance_source(p)
    p.add_argument("--checkpoint", help="policy checkpoint (default: exact solver)")
    p.add_argument("--time-limit", type=float)
    p.add_argument("--compare", action="store_true", help="emit zero and positive visit-cost variants")
    p.add_argument("--high-visit-cost", type=float)
    return parser, subs


def _apply_config(parser, subs, argv):
    """Parse twice: once to find --config, then with its keys as defaults."""
    args = parser.parse_args(argv)
    if args.config is None:
        return args, {}
    doc = json.loads(args.config.read_text())
    if not isinstance(doc, dict):
        raise SystemExit("--config must contain a JSON object")
    sub = subs[args.command]
    dests = {a.dest for a in sub._actions}
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in doc.items() if k.replace("-", "_") in dests})
    extra = {k: v for k, v in doc.items() if k.replace("-", "_") not in dests}
    return parser.parse_args(argv), extra


def main(argv=None) -> int:
    parser, subs = build_parser()
    args, extra = _apply_config(parser, subs, argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if args.command != "train" and args.command != "generate" and extra:
        raise SystemExit(f"unknown options in config for {args.command}: {sorted(extra)}")
    func, _ = COMMANDS[args.command]
    return func(args, extra)


if __name__ == "__main__":
    sys.exit(main())

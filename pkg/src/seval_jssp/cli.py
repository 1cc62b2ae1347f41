"""Command-line interface: solve, gen-data, train, infer, bench."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import bench as bench_mod
from .dataset import build_dataset
from .engine import TrainConfig, load_training_data, seval_rollout, greedy_rollout
from .engine import train as train_fn
from .instance import makespan, parse_standard, parse_taillard, schedule_to_text
from .model import ModelConfig, load_checkpoint
from .oracle import solve


def _read_instance(path: str, fmt: str):
    text = Path(path).read_text(encoding="ascii")
    parser = parse_standard if fmt == "std" else parse_taillard
    return parser(text, name=Path(path).stem)


def _cmd_solve(args) -> int:
    instance = _read_instance(args.file, args.format)
    result = solve(instance, rule=args.rule, time_limit=args.time_limit)
    print(f"makespan {result.makespan}")
    print(f"status {result.status}")
    sys.stdout.write(schedule_to_text(instance, result.schedule))
    return 0


def _cmd_gen_data(args) -> int:
    manifest = build_dataset(
        count=args.count,
        num_jobs=args.jobs,
        num_machines=args.machines,
        seed=args.seed,
        out_dir=args.out,
        perturbed_fraction=args.perturbed_frac,
        time_limit=args.time_limit,
        workers=args.workers,
    )
    print(manifest.to_json())
    return 0


def _cmd_train(args) -> int:
    train_samples, val_samples = load_training_data(args.data)
    if args.profile == "paper":
        model_config = ModelConfig(seed=args.seed)
    else:
        model_config = ModelConfig.desk_profile(seed=args.seed)
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=args.seed,
        threads=args.threads,
    )
    metrics_path = args.metrics or str(Path(args.out).with_suffix(".metrics.jsonl"))
    _, metrics = train_fn(
        train_samples, val_samples, model_config, config,
        checkpoint_path=args.out, metrics_path=metrics_path,
    )
    last = metrics[-1]
    print(
        f"trained {args.epochs} epochs on {len(train_samples)} samples; "
        f"final train KL {last['train_kl']:.4f}"
        + (f", val KL {last['val_kl']:.4f}" if "val_kl" in last else "")
    )
    print(f"checkpoint {args.out}")
    return 0


def _cmd_infer(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    model.eval()
    instance = _read_instance(args.instance, args.format)
    if args.mode == "greedy":
        schedule = greedy_rollout(instance, model)
    else:
        schedule = seval_rollout(instance, model, n=args.n, seed=args.seed)
    sys.stdout.write(schedule_to_text(instance, schedule))
    print(f"makespan {makespan(instance, schedule)}", file=sys.stderr)
    return 0


def _cmd_bench(args) -> int:
    instances = bench_mod.load_instance_dir(args.instances, fmt=args.format)
    methods = [m for m in args.methods.split(",") if m]
    model = None
    if any(bench_mod.parse_method(m)[0] in ("greedy", "seval") for m in methods):
        if not args.ckpt:
            raise SystemExit("--ckpt is required for policy-based methods")
        model, _ = load_checkpoint(args.ckpt)
        model.eval()
    references = bench_mod.load_references(args.refs) if args.refs else None
    report = bench_mod.run_benchmark(
        instances, methods, model=model, references=references,
        time_limit=args.time_limit, seed=args.seed,
    )
    bench_mod.emit_artifacts(report, args.out, instances=dict(instances))
    sys.stdout.write(bench_mod.aggregates_to_text(report))
    print(f"artifacts in {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seval-jssp",
        description="Subset-scoring schedulers for job-shop instances",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance file")
    p.add_argument("file")
    p.add_argument("--time-limit", type=float, default=10.0)
    p.add_argument("--rule", choices=("exact", "spt", "mwkr", "fifo"), default="exact")
    p.add_argument("--format", choices=("std", "taillard"), default="std")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("gen-data", help="build a labeled training corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--jobs", type=int, required=True)
    p.add_argument("--machines", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--perturbed-frac", type=float, default=0.5)
    p.add_argument("--time-limit", type=float, default=10.0)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train policy and subset scorer")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--profile", choices=("desk", "paper"), default="desk")
    p.add_argument("--metrics", default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="schedule one instance with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--instance", required=True)
    p.add_argument("--mode", choices=("greedy", "seval"), default="seval")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("std", "taillard"), default="std")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("bench", help="evaluate methods over an instance corpus")
    p.add_argument("--instances", required=True)
    p.add_argument("--refs", default=None)
    p.add_argument("--methods", required=True,
                   help="comma list: greedy,seval16,spt,mwkr,fifo,exact")
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--time-limit", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=("std", "taillard"), default="std")
    p.set_defaults(func=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line interface: run / baseline / make-data / enumerate-actions / replay."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import load_config
from .data import read_manifest, read_simulator_spec, replay_manifest, write_dataset_file
from .errors import ConfigurationError, exit_code_for
from .generators import SimulatedGenerator
from .orchestrate import (
    build_generator,
    build_splits,
    compare_and_report,
    emit_dataset,
    run_baseline,
)
from .prompts import action_index, format_prompt, iter_actions

logger = logging.getLogger("synthctl")


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, seed_override=args.seed, out_dir_override=args.out)
    report = compare_and_report(config, out_dir=config.out_dir)
    print(report.table())
    print(f"\nreport written to {Path(config.out_dir) / 'report.json'}")
    return 0


def _cmd_baseline(args: argparse.Namespace) -> int:
    config = load_config(args.config, seed_override=args.seed, out_dir_override=args.out)
    splits, sim_spec = build_splits(config, config.seed)
    generator = build_generator(config, sim_spec)
    report = run_baseline(args.mode, config, splits, generator)
    entry = {
        "mode": args.mode,
        "seed": config.seed,
        "test_accuracy": report.accuracy,
        "mean_entropy": report.mean_entropy,
        "n_eval": report.n_eval,
    }
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"baseline_{args.mode}.json"
    out_path.write_text(json.dumps(entry, indent=1) + "\n")
    print(f"baseline mode={args.mode}: test accuracy {report.accuracy:.4f}")
    print(f"written to {out_path}")
    return 0


def _cmd_make_data(args: argparse.Namespace) -> int:
    config = load_config(args.config, seed_override=args.seed, out_dir_override=args.out)
    out_dir = emit_dataset(config, config.out_dir)
    print(f"dataset files written to {out_dir}")
    return 0


def _cmd_enumerate_actions(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    dictionary = config.dictionary
    limit = args.limit if args.limit is not None else dictionary.action_space_size()
    for action in iter_actions(dictionary):
        index = action_index(dictionary, action)
        if index >= limit:
            break
        print(f"{index}\t{format_prompt(dictionary, action).text}")
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    manifest_path = Path(args.manifest)
    records = read_manifest(manifest_path)
    sim_path = Path(args.simulator) if args.simulator else manifest_path.parent / "simulator.json"
    if not sim_path.exists():
        raise ConfigurationError(
            f"simulator spec not found at {sim_path}; pass --simulator explicitly"
        )
    generator = SimulatedGenerator(read_simulator_spec(sim_path))
    feature_dim = generator.spec.feature_dim
    n_syn = sum(r["count"] for r in records)
    support = replay_manifest(records, config.dictionary, generator, feature_dim, n_syn)
    out_path = Path(args.out) if args.out else manifest_path.parent / "support_set.replay.csv"
    write_dataset_file(out_path, support.samples, config.dictionary.n_classes)
    print(f"replayed {len(support)} samples from {len(records)} manifest records")
    print(f"written to {out_path}")
    original = manifest_path.parent / "support_set.csv"
    if original.exists():
        if original.read_bytes() == out_path.read_bytes():
            print("replay matches the original support set byte-for-byte")
        else:
            print("WARNING: replay differs from the original support set")
            return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthctl",
        description="RL-controlled synthesis of small synthetic support sets",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="full RL training + finalize + report")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.set_defaults(fn=_cmd_run)

    baseline = sub.add_parser("baseline", help="pretrained or random-synthesis row")
    baseline.add_argument("--mode", choices=("none", "random"), required=True)
    baseline.add_argument("--config", required=True)
    baseline.add_argument("--seed", type=int, default=None)
    baseline.add_argument("--out", default=None)
    baseline.set_defaults(fn=_cmd_baseline)

    make_data = sub.add_parser("make-data", help="emit synthetic dataset files")
    make_data.add_argument("--config", required=True)
    make_data.add_argument("--seed", type=int, default=None)
    make_data.add_argument("--out", default=None)
    make_data.set_defaults(fn=_cmd_make_data)

    enum = sub.add_parser("enumerate-actions", help="list prompts with flat indices")
    enum.add_argument("--config", required=True)
    enum.add_argument("--limit", type=int, default=None)
    enum.set_defaults(fn=_cmd_enumerate_actions)

    replay = sub.add_parser("replay", help="regenerate a support set from a manifest")
    replay.add_argument("--manifest", required=True)
    replay.add_argument("--config", required=True)
    replay.add_argument("--simulator", default=None)
    replay.add_argument("--out", default=None)
    replay.set_defaults(fn=_cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single translation point to exit codes
        code = exit_code_for(exc)
        logger.error("%s (exit code %d)", exc, code)
        return code


if __name__ == "__main__":
    sys.exit(main())

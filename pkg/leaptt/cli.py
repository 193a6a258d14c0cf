"""
Command-line surface: ``python -m leaptt <command> --config cfg.json --out runs/x``.

Exit codes: 0 success, 2 input error, 3 numeric error, 1 anything unexpected.
"""

import argparse
import dataclasses
import glob
import os
import sys
import traceback
from typing import Callable, Dict, List, Optional

from leaptt import __version__
from leaptt.errors import EXIT_UNEXPECTED, LeapError
from leaptt.pipeline import Recipe, ablate, verify_lineage
from leaptt.plotting import plot_metrics
from leaptt.types import RunConfig, StageName


def load_config(args: argparse.Namespace) -> RunConfig:
    """Reads --config (defaults when omitted) and applies --seed and --out."""
    config = RunConfig.from_json(args.config) if args.config else RunConfig.from_dict({})
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if args.out:
        config = dataclasses.replace(config, output_dir=args.out)
    return config


def _recipe(args: argparse.Namespace) -> Recipe:
    recipe = Recipe(load_config(args), quiet=args.quiet)
    recipe.write_resolved_config()
    return recipe


def cmd_gen_data(args: argparse.Namespace) -> int:
    recipe = _recipe(args)
    splits = recipe.splits
    print(f"train={len(splits.train)} valid={len(splits.valid)} test={len(splits.test)}")
    return 0


def _run_stage(args: argparse.Namespace, stage_name: str) -> int:
    recipe = _recipe(args)
    runners = {
        StageName.SSL.value: recipe.run_ssl,
        StageName.LEAP.value: recipe.run_leap,
        StageName.FINETUNE.value: recipe.run_finetune,
    }
    with recipe.context():
        parent_stage, parent = recipe.latest(before=stage_name)
        runners[stage_name](parent, parent_stage)
    return 0


def cmd_pretrain_ssl(args: argparse.Namespace) -> int:
    return _run_stage(args, StageName.SSL.value)


def cmd_leap(args: argparse.Namespace) -> int:
    return _run_stage(args, StageName.LEAP.value)


def cmd_finetune(args: argparse.Namespace) -> int:
    return _run_stage(args, StageName.FINETUNE.value)


def cmd_evaluate(args: argparse.Namespace) -> int:
    recipe = _recipe(args)
    with recipe.context():
        _, checkpoint = recipe.latest(before=StageName.EVALUATE.value)
        report = recipe.run_evaluation(checkpoint)
    print(report.to_json())
    return 0


def cmd_recipe(args: argparse.Namespace) -> int:
    result = _recipe(args).run()
    for stage_name, sha in verify_lineage(result.checkpoints[StageName.FINETUNE.value]):
        print(f"{stage_name:<9} {sha}")
    print(f"overall WER {result.report.overall:.2f}%")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    config = load_config(args)
    report = ablate(config, config.output_dir, quiet=args.quiet)
    print(report.to_csv(), end="")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    config = load_config(args)
    paths = args.metrics or sorted(glob.glob(os.path.join(config.output_dir, "*_metrics.jsonl")))
    svg_path, csv_path = plot_metrics(paths, config.output_dir)
    print(svg_path)
    print(csv_path)
    return 0


COMMANDS: Dict[str, Callable[[argparse.Namespace], int]] = {
    "gen-data": cmd_gen_data,
    "pretrain-ssl": cmd_pretrain_ssl,
    "leap": cmd_leap,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "recipe": cmd_recipe,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}

HELP = {
    "gen-data": "Generate (or reload) the synthetic train/test corpora",
    "pretrain-ssl": "Masked-contrastive pretraining of the encoder",
    "leap": "Meta-learn the initialization across languages",
    "finetune": "Fine-tune with the transducer loss",
    "evaluate": "Greedy-decode the test corpus and write report.json/report.csv",
    "recipe": "Run every enabled stage and evaluate",
    "ablate": "Run the lang-ID x pretraining grid",
    "plot": "Render metrics JSONL files to SVG + CSV",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leaptt", description="SSL + LEAP initialization for multilingual transducers"
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name in COMMANDS:
        sub = subparsers.add_parser(name, help=HELP[name])
        sub.add_argument("--config", default=None, help="JSON config (defaults when omitted)")
        sub.add_argument("--out", default=None, help="Output directory (overrides output_dir)")
        sub.add_argument("--seed", type=int, default=None, help="Override the global seed")
        sub.add_argument("--quiet", action="store_true", help="No console logging")
        if name == "plot":
            sub.add_argument(
                "--metrics",
                nargs="*",
                default=None,
                help="JSONL files (default: <out>/*_metrics.jsonl)",
            )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parses arguments, runs one command and maps failures to exit codes.

    Returns:
        Process exit code
    """
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except LeapError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        print(f"FATAL leaptt error: {e}", file=sys.stderr)
        traceback.print_exc()
        return EXIT_UNEXPECTED

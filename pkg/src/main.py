"""Main entry point for biasfst."""

import argparse
import sys
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import yaml

from .boost_fst import BoostingFst, build_fst
from .config import PipelineConfig
from .corpus import SubwordInventory, load_corpus
from .decoder import read_nbest, write_nbest
from .evaluation import load_testset, score_testset
from .llr_boost import BoostTable
from .logger import logger, setup_logger
from .ngram_lm import InterpolationSpec, interpolate, read_arpa, write_arpa
from .pipeline import Pipeline
from .rescore import RescoreConfig, rescore_all
from .synth import generate_suite

# Flags shared by every subcommand, mapped to configuration keys
_OVERRIDE_FLAGS = {
    "general_corpus": "general_corpus",
    "ood_corpus": "ood_corpora",
    "order": "order",
    "threshold": "threshold",
    "lambda_": "lambda",
    "alpha": "alpha",
    "word_reward": "word_reward",
    "beam": "beam",
    "nbest": "nbest",
    "beta": "beta",
    "seed": "seed",
    "jobs": "jobs",
    "out_dir": "out_dir",
    "thresholds": "thresholds",
    "lambdas": "lambdas",
}


def _train_lm(pipeline: Pipeline, args: argparse.Namespace) -> None:
    path = Path(args.corpus or pipeline.config.general_corpus)
    corpus = load_corpus(path, lowercase=pipeline.config.lowercase)
    model = pipeline.train_lm(corpus, path.stem)
    write_arpa(model, args.output or pipeline.out_dir / "lm" / f"{path.stem}.arpa")


def _interpolate(pipeline: Pipeline, args: argparse.Namespace) -> None:
    models = [read_arpa(path) for path in args.lm]
    if args.weights:
        if len(args.weights) != len(models):
            raise ValueError(
                f"Got {len(args.weights)} weights for {len(models)} models"
            )
        spec = InterpolationSpec(tuple(zip(models, args.weights)))
    else:
        spec = InterpolationSpec.equal_weights(models)
    mixed = interpolate(spec, name="interpolated")
    write_arpa(mixed, args.output or pipeline.out_dir / "lm" / "interpolated.arpa")


def _build_boost(pipeline: Pipeline, args: argparse.Namespace) -> None:
    if args.general_lm:
        pipeline.general_lm = read_arpa(args.general_lm)
    if args.ood_lm:
        pipeline.ood_lm = read_arpa(args.ood_lm)
    pipeline.boost_table().write_tsv(args.output or pipeline.out_dir / "boost.tsv")


def _build_fst(pipeline: Pipeline, args: argparse.Namespace) -> None:
    if args.inventory:
        pipeline.inventory = SubwordInventory.read(args.inventory)
    else:
        pipeline.inventory.write(pipeline.out_dir / "inventory.tsv")
    if args.boost_table:
        table = BoostTable.read_tsv(args.boost_table)
    else:
        table = pipeline.boost_table()
    fst = build_fst(table, pipeline.inventory)
    fst.write(args.output or pipeline.out_dir / "boost.fst")


def _synth_suite(pipeline: Pipeline, args: argparse.Namespace) -> None:
    suite = generate_suite(
        seed=pipeline.config.seed,
        general_size=args.general_size,
        domain_size=args.domain_size,
        testset_size=args.testset_size,
        control_size=args.control_size,
    )
    out = Path(args.output_dir or pipeline.out_dir / "suite")
    paths = suite.write(out)
    with open(out / "suite.yaml", "w", encoding="utf-8", newline="\n") as f:
        yaml.safe_dump(paths, f, sort_keys=True)
    logger.info(f"Suite configuration written to {out / 'suite.yaml'}")


def _decode(pipeline: Pipeline, args: argparse.Namespace) -> None:
    if args.inventory:
        pipeline.inventory = SubwordInventory.read(args.inventory)
    if args.fst:
        pipeline.use_fst(BoostingFst.read(args.fst, pipeline.inventory))
    names = args.testset or list(pipeline.testsets)
    for name in names:
        if name not in pipeline.testsets:
            known = list(pipeline.testsets)
            raise ValueError(f"Unknown testset {name!r}; known: {known}")
        threshold = None if args.no_fusion else pipeline.config.threshold
        lists = pipeline.decode(name, threshold)
        write_nbest(pipeline.out_dir / "nbest" / f"{name}.jsonl", lists)


def _rescore(pipeline: Pipeline, args: argparse.Namespace) -> None:
    scorer = read_arpa(args.rescore_lm) if args.rescore_lm else pipeline.rescoring_lm
    cfg = RescoreConfig(scorer, pipeline.config.alpha, pipeline.config.word_reward)
    lists = rescore_all(read_nbest(args.nbest_file), cfg)
    output = args.output or Path(args.nbest_file).with_suffix(".rescored.jsonl")
    write_nbest(output, lists)


def _evaluate(pipeline: Pipeline, args: argparse.Namespace) -> None:
    if args.nbest_file:
        if not args.reference:
            raise ValueError("--nbest-file needs --reference")
        testset = load_testset(args.reference, lowercase=pipeline.config.lowercase)
        score = score_testset(testset, read_nbest(args.nbest_file))
        print(
            f"WER {score.one_best.wer:.4f} "
            f"(S={score.one_best.substitutions} D={score.one_best.deletions} "
            f"I={score.one_best.insertions} N={score.one_best.reference_words}) "
            f"Oracle WER {score.oracle.wer:.4f}"
        )
        return
    pipeline.evaluate()


def _sweep(pipeline: Pipeline, args: argparse.Namespace) -> None:
    report = pipeline.sweep()
    if report.selected is None:
        print("No operating point satisfies the control constraint")
    else:
        print(
            f"Selected T={report.selected.threshold} lambda={report.selected.lam}: "
            f"OOD WERR {report.selected.ood_werr:+.2f}%, "
            f"control WERR {report.selected.control_werr:+.2f}%"
        )


def _pipeline(pipeline: Pipeline, args: argparse.Namespace) -> None:
    pipeline.run()


SUBCOMMANDS: dict[str, Callable[[Pipeline, argparse.Namespace], None]] = {
    "train-lm": _train_lm,
    "interpolate": _interpolate,
    "build-boost": _build_boost,
    "build-fst": _build_fst,
    "synth-suite": _synth_suite,
    "decode": _decode,
    "rescore": _rescore,
    "evaluate": _evaluate,
    "sweep": _sweep,
    "pipeline": _pipeline,
}


def run_subcommand(name: str, config: PipelineConfig, args: argparse.Namespace) -> int:
    """Run one subcommand.

    Args:
        name: Subcommand name.
        config: Configuration after flag overrides.
        args: Parsed arguments carrying subcommand paths.

    Returns:
        Exit status: 0 on success, 1 on any error.
    """
    handler = SUBCOMMANDS.get(name)
    if handler is None:
        logger.error(f"Unknown subcommand: {name}")
        return 2
    try:
        handler(Pipeline(config), args)
    except (ValueError, OSError) as e:
        logger.error(f"{name} failed: {e}")
        return 1
    except Exception as e:
        logger.exception(f"Unexpected error in {name}: {e}")
        return 1
    logger.info(f"{name} finished")
    return 0


def build_parser() -> argparse.ArgumentParser:
    """Create the argument parser with all subcommands."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="Path to configuration file")
    common.add_argument("--general-corpus", help="General-domain training text")
    common.add_argument(
        "--ood-corpus",
        action="append",
        help="Out-of-domain text (repeat for equal-weight interpolation)",
    )
    common.add_argument("--order", type=int, help="N-gram order")
    common.add_argument("--threshold", type=float, help="Boost threshold T")
    common.add_argument("--lambda", dest="lambda_", type=float, help="Fusion weight")
    common.add_argument("--alpha", type=float, help="Rescoring LM weight")
    common.add_argument("--word-reward", type=float, help="Per-word rescoring reward")
    common.add_argument("--beam", type=int, help="Beam width")
    common.add_argument("--nbest", type=int, help="N-best list size")
    common.add_argument("--beta", type=float, help="Surrogate prior weight")
    common.add_argument("--seed", type=int, help="Random seed")
    common.add_argument("--jobs", type=int, help="Worker processes")
    common.add_argument("--out-dir", help="Output directory")

    parser = argparse.ArgumentParser(
        description="LLR-pruned n-gram boosting for shallow-fusion decoding"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-lm", parents=[common], help="Train a Katz backoff model")
    p.add_argument("--corpus", help="Training text (default: general corpus)")
    p.add_argument("--output", help="ARPA output path")

    p = sub.add_parser("interpolate", parents=[common], help="Interpolate ARPA models")
    p.add_argument(
        "--lm", action="append", required=True, help="ARPA model (repeatable)"
    )
    p.add_argument("--weights", type=float, nargs="+", help="Mixture weights")
    p.add_argument("--output", help="ARPA output path")

    p = sub.add_parser("build-boost", parents=[common], help="Build the boost table")
    p.add_argument("--general-lm", help="General ARPA model (default: trained)")
    p.add_argument("--ood-lm", help="OOD ARPA model (default: trained)")
    p.add_argument("--output", help="Boost table output path")

    p = sub.add_parser("build-fst", parents=[common], help="Compile the boosting FST")
    p.add_argument("--boost-table", help="Boost table TSV (default: built)")
    p.add_argument("--inventory", help="Subword inventory (default: built)")
    p.add_argument("--output", help="FST output path")

    p = sub.add_parser(
        "synth-suite", parents=[common], help="Generate a synthetic suite"
    )
    p.add_argument("--output-dir", help="Suite directory (default: <out-dir>/suite)")
    p.add_argument("--general-size", type=int, default=5000)
    p.add_argument("--domain-size", type=int, default=500)
    p.add_argument("--testset-size", type=int, default=100)
    p.add_argument("--control-size", type=int, default=200)

    p = sub.add_parser("decode", parents=[common], help="Decode testsets")
    p.add_argument("--testset", action="append", help="Testset name (default: all)")
    p.add_argument("--fst", help="Serialized FST (default: built)")
    p.add_argument("--inventory", help="Subword inventory (default: built)")
    p.add_argument("--no-fusion", action="store_true", help="Decode without boosting")

    p = sub.add_parser("rescore", parents=[common], help="Rescore n-best lists")
    p.add_argument("--nbest-file", required=True, help="N-best JSON lines")
    p.add_argument("--rescore-lm", help="Rescoring ARPA model (default: built)")
    p.add_argument("--output", help="Output path")

    p = sub.add_parser(
        "evaluate", parents=[common], help="Compare systems or score a file"
    )
    p.add_argument("--nbest-file", help="N-best JSON lines to score")
    p.add_argument("--reference", help="Reference testset TSV")

    p = sub.add_parser(
        "sweep", parents=[common], help="Sweep threshold and fusion weight"
    )
    p.add_argument("--thresholds", type=float, nargs="+")
    p.add_argument("--lambdas", type=float, nargs="+")

    sub.add_parser("pipeline", parents=[common], help="Run every stage")
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then command-line flags."""
    config = PipelineConfig.from_yaml(args.config) if args.config else PipelineConfig()
    overrides: dict[str, Any] = {
        key: getattr(args, flag)
        for flag, key in _OVERRIDE_FLAGS.items()
        if getattr(args, flag, None) is not None
    }
    return config.with_overrides(overrides)


def main(argv: Optional[Sequence[str]] = None) -> None:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args)
    except (ValueError, OSError) as e:
        logger.error(f"Configuration error: {e}")
        sys.exit(1)

    setup_logger(log_file=config.log_file, level=config.log_level)
    sys.exit(run_subcommand(args.command, config, args))


if __name__ == "__main__":
    main()

"""Command-line entry point: ``avconsensus <subcommand> [flags]``.

Exit status is 0 on success, 1 on validation errors (bad config, bad
input rows, bad rule files) and 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .config import ConfigError, PipelineConfig
from .ingest import write_detections
from .pipeline import (
    StageError,
    cmd_communities,
    cmd_fit,
    cmd_normalize,
    cmd_report,
    cmd_score,
    cmd_stats,
)
from .synth import synthetic_dataset

log = logging.getLogger("avconsensus")

COMMANDS = {
    "normalize": cmd_normalize,
    "stats": cmd_stats,
    "communities": cmd_communities,
    "fit": cmd_fit,
    "score": cmd_score,
    "report": cmd_report,
}

# flag dest -> config field, for flags that override the config file
_OVERRIDES = (
    "input", "format", "sep", "rules", "stopwords", "corr_min", "k", "shingle_width", "bands",
    "rows", "seed", "standardize", "max_iters", "tol", "anonymize", "salt", "models_dir", "apps", "out_dir",
)


def _verbosity(p: argparse.ArgumentParser, default=argparse.SUPPRESS) -> None:
    p.add_argument("-v", "--verbose", action="count", default=default, help="-v info, -vv debug")


def _pipeline_flags(p: argparse.ArgumentParser) -> None:
    _verbosity(p)
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--input", help="detections file")
    p.add_argument("--format", choices=("delimited", "json-lines"))
    p.add_argument("--sep", help="field separator for delimited input (default ',')")
    p.add_argument("--rules", help="rule file (default: built-in 41-class table)")
    p.add_argument("--stopwords", help="stop-word file (default: built-in list)")
    p.add_argument("--corr-min", dest="corr_min", type=float, action="append",
                   help="correlation threshold; repeat for a sweep (default 0.2 0.35 0.5)")
    p.add_argument("--k", type=int, help="minhash functions")
    p.add_argument("--shingle-width", dest="shingle_width", type=int)
    p.add_argument("--bands", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--standardize", action="store_true", default=None,
                   help="fit factor models on correlations instead of covariances")
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--anonymize", action="store_true", default=None, help="rename engines AV1..AVn")
    p.add_argument("--salt", help="tie-break salt for --anonymize")
    p.add_argument("--models-dir", dest="models_dir", help="where `score` reads model files (default --out-dir)")
    p.add_argument("--app", dest="apps", action="append", help="extra app id to score (repeatable)")
    p.add_argument("--out-dir", dest="out_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avconsensus", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _verbosity(parser, default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "normalize": "clean and classify signatures; minhash grouping report; token frequencies",
        "stats": "summary statistics, histograms and matrices A, B, D",
        "communities": "class correlation graph communities per threshold",
        "fit": "fit one single-factor model per category",
        "score": "score apps with fitted models",
        "report": "run every stage into one output directory",
    }
    for name, text in helps.items():
        _pipeline_flags(sub.add_parser(name, help=text))
    synth = sub.add_parser("synth", help="write a synthetic detections file")
    _verbosity(synth)
    synth.add_argument("--apps", type=int, default=2500)
    synth.add_argument("--engines", type=int, default=20)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--output", required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    overrides = {k: getattr(args, k) for k in _OVERRIDES if getattr(args, k, None) is not None}
    return cfg.merged(overrides).validate()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            ds, _ = synthetic_dataset(args.apps, args.engines, args.seed)
            write_detections(ds, args.output)
            log.info("wrote %d records for %d apps", len(ds), ds.n_apps)
            return 0
        cfg = config_from_args(args)
        report = COMMANDS[args.command](cfg)
    except (StageError, ConfigError, ValueError) as exc:
        cause = exc.cause if isinstance(exc, StageError) else exc
        print(f"avconsensus {args.command}: {exc}", file=sys.stderr)
        return 1 if isinstance(cause, ValueError) else 2
    except Exception as exc:  # runtime failure: I/O, numerical, ...
        print(f"avconsensus {args.command}: {exc}", file=sys.stderr)
        return 2
    log.info("%s: wrote %d files to %s", args.command, len(report.files), cfg.out_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())

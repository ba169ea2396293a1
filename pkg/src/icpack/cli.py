"""Command line front end: one subcommand per pipeline stage plus `run`."""

import argparse
import json
import logging
import sys

from .config import PipelineConfig, config_from_dict, parse_config
from .errors import ConfigError, IcpackError, StageError
from .pipeline import STAGE_NAMES, artifact_summary, run_pipeline

log = logging.getLogger(__name__)

_INT_KEYS = (
    "dim",
    "knn_k",
    "nlist",
    "m",
    "nprobe",
    "context_length",
    "seed",
    "shard_size",
    "vocab_size",
    "n_clusters",
    "train_sample",
)
_BOOL_KEYS = ("separator", "drop_last", "shuffle_contexts")


def _add_common(sp, with_input):
    sp.add_argument("--out", "-o", required=True, help="pipeline output directory")
    if with_input:
        sp.add_argument("--input", "-i", help="input corpus (JSONL with a 'text' field)")
    sp.add_argument("--config", "-c", help="JSON config file")
    # accepted after the subcommand too; SUPPRESS keeps the top-level value
    sp.add_argument(
        "--verbose", "-v", action="store_true", default=argparse.SUPPRESS,
        help="log stage progress",
    )
    for key in _INT_KEYS:
        sp.add_argument(f"--{key.replace('_', '-')}", type=int, dest=key)
    sp.add_argument("--dedup-threshold", type=float, dest="dedup_threshold")
    sp.add_argument("--strategy", choices=("icp", "knn", "cluster", "random"))
    sp.add_argument("--embedder", choices=("builtin-hash", "external-file"))
    sp.add_argument("--index-mode", choices=("pq", "flat"), dest="index_mode")
    sp.add_argument("--external-embeddings", dest="external_embeddings")
    for key in _BOOL_KEYS:
        sp.add_argument(
            f"--{key.replace('_', '-')}",
            action=argparse.BooleanOptionalAction,
            dest=key,
        )


def _config_from_args(args):
    raw = parse_config(args.config).to_dict() if args.config else {}
    for key in (*_INT_KEYS, *_BOOL_KEYS, "dedup_threshold", "strategy", "embedder",
                "index_mode", "external_embeddings"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    return config_from_dict(raw) if raw else PipelineConfig()


def build_parser():
    parser = argparse.ArgumentParser(
        prog="icpack",
        description="Order a document corpus by similarity and pack it into "
        "fixed-length training contexts.",
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    helps = {
        "ingest": "tokenize a JSONL corpus into the document store",
        "embed": "embed every document",
        "index": "train the similarity index and add all documents",
        "search": "find each document's nearest neighbours",
        "dedup": "drop near-duplicate documents",
        "graph": "build the similarity graph from surviving neighbours",
        "sort": "order the documents",
        "pack": "cut the ordered token stream into fixed-length contexts",
        "stats": "compute ordering metrics and write the report",
    }
    for name in STAGE_NAMES:
        sp = sub.add_parser(name, help=helps[name])
        _add_common(sp, with_input=name == "ingest")

    sp = sub.add_parser("run", help="run every stage in order")
    _add_common(sp, with_input=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _config_from_args(args)
        input_path = getattr(args, "input", None)
        only = None if args.command == "run" else [args.command]
        results = run_pipeline(config, input_path, args.out, only=only)
        for stage in STAGE_NAMES:
            if stage in results:
                log.info("%s: %s", stage, results[stage])
        if args.command == "stats":
            print(json.dumps(artifact_summary(args.out), sort_keys=True, indent=2))
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except IcpackError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

"""Operator entry points: ingest a corpus, run a query, serve the API.

Output is machine-readable JSON by default (the CLI doubles as a test
harness driver); pass --pretty for indented output. Precedence for
settings: defaults < config file < environment < command-line flags.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ServiceConfig, build_backends, load_config
from .dataset import (
    ArchiveError,
    DatasetError,
    create_dataset,
    load_archive,
    load_dataset,
    slugify,
)
from .engine import QueryEngine, StageError
from .model import HyperParams, QueryError, QueryFormatError, QueryValidationError, parse_query


def _emit(payload: dict, pretty: bool):
    if pretty:
        print(json.dumps(payload, indent=2))
    else:
        print(json.dumps(payload, separators=(",", ":")))


def _fail(message: str, code: int = 1) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _load_cli_config(args) -> ServiceConfig:
    config = load_config(args.config)
    overrides = {}
    if getattr(args, "data_dir", None):
        overrides["data_dir"] = args.data_dir
    if getattr(args, "backend", None):
        overrides["backend"] = args.backend
    if getattr(args, "workers", None):
        overrides["engine_workers"] = args.workers
    if getattr(args, "port", None):
        overrides["port"] = args.port
    if getattr(args, "host", None):
        overrides["host"] = args.host
    return replace(config, **overrides) if overrides else config


def cmd_ingest(args) -> int:
    try:
        config = _load_cli_config(args)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    source = Path(args.dataset)
    if not source.is_dir():
        return _fail(f"dataset directory not found: {source}")
    try:
        docs, sidecar = load_archive(source, args.segment_length)
    except ArchiveError as exc:
        _emit({"error": str(exc), "files": exc.file_errors}, args.pretty)
        return 1
    except DatasetError as exc:
        return _fail(str(exc))
    name = args.name or source.name
    embedder, _verifier = build_backends(config, sidecar or _empty_sidecar())
    try:
        dataset, stats = create_dataset(
            config.data_dir,
            slugify(name),
            name,
            docs,
            embedder,
            raw_path=str(source),
            sidecar=sidecar,
            workers=config.engine_workers,
        )
    except DatasetError as exc:
        return _fail(str(exc))
    _emit(
        {
            "dataset": dataset.descriptor.to_dict(),
            "stats": stats.to_dict(),
        },
        args.pretty,
    )
    return 0


def _empty_sidecar():
    from .backends import GroundTruthSidecar

    return GroundTruthSidecar()


def cmd_query(args) -> int:
    try:
        config = _load_cli_config(args)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    query_path = Path(args.query_file)
    if not query_path.is_file():
        return _fail(f"query file not found: {query_path}")
    try:
        spec = parse_query(query_path.read_text(encoding="utf-8"))
    except QueryValidationError as exc:
        _emit(
            {
                "findings": [
                    {"code": f.code, "message": f.message, "severity": f.severity}
                    for f in exc.findings
                ]
            },
            args.pretty,
        )
        return 2
    except QueryFormatError as exc:
        return _fail(f"query file: {exc}", 2)

    try:
        params = HyperParams(
            top_k=args.top_k,
            temperature=args.temperature,
            text_threshold=args.text_threshold,
            image_threshold=args.image_threshold,
            rel_label_threshold=args.rel_threshold,
        )
    except ValueError as exc:
        return _fail(str(exc), 2)

    try:
        dataset = load_dataset(config.data_dir, args.dataset)
    except DatasetError as exc:
        return _fail(str(exc))
    embedder, verifier = build_backends(config, dataset.sidecar or _empty_sidecar())
    engine = QueryEngine(
        dataset.entity_store,
        dataset.relationship_store,
        embedder,
        verifier,
        workers=config.engine_workers,
    )
    try:
        report = engine.execute_query(spec, params)
    except StageError as exc:
        return _fail(str(exc))
    payload = report.to_dict()
    if args.explain:
        payload["predicates"] = report.metrics.predicates
    _emit(payload, args.pretty)
    return 0


def cmd_serve(args) -> int:
    try:
        config = _load_cli_config(args)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    from .service import serve

    serve(config)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vidmoment",
        description="Hybrid relational/vector retrieval of multi-frame video moments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="path to a JSON config file")
    common.add_argument("--data-dir", default=None, help="dataset storage directory")
    common.add_argument("--backend", choices=("mock", "remote"), default=None)
    common.add_argument("--pretty", action="store_true", help="indent JSON output")

    p_ingest = sub.add_parser("ingest", parents=[common], help="ingest a scene-graph corpus")
    p_ingest.add_argument("--dataset", required=True, help="corpus directory to ingest")
    p_ingest.add_argument(
        "--segment-length",
        type=int,
        default=None,
        help="frames per segment when partitioning whole-video documents",
    )
    p_ingest.add_argument("--name", default=None, help="dataset name (defaults to directory name)")
    p_ingest.add_argument("--workers", type=int, default=None)
    p_ingest.set_defaults(func=cmd_ingest)

    p_query = sub.add_parser("query", parents=[common], help="run a query against a dataset")
    p_query.add_argument("query_file", help="query document file")
    p_query.add_argument("--dataset", required=True, help="dataset id")
    p_query.add_argument("--top-k", type=int, default=10)
    p_query.add_argument("--temperature", type=float, default=0.0)
    p_query.add_argument("--text-threshold", type=float, default=0.7)
    p_query.add_argument("--image-threshold", type=float, default=0.7)
    p_query.add_argument("--rel-threshold", type=float, default=None)
    p_query.add_argument("--workers", type=int, default=None)
    p_query.add_argument(
        "--explain", action="store_true", help="include the generated relational predicates"
    )
    p_query.set_defaults(func=cmd_query)

    p_serve = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p_serve.add_argument("--host", default=None)
    p_serve.add_argument("--port", type=int, default=None)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except QueryError as exc:
        return _fail(str(exc), 2)
    except Exception as exc:  # surface anything unexpected as a clean exit code
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())

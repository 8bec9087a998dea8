"""
rerun - replay an experiment from its manifest.
"""

import argparse
import logging
from pathlib import Path

from src.commands import common
from src.errors import InputError
from src.schemas.results import ExperimentManifest
from src.services.model_service import model_service

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("rerun", help="re-execute an experiment from its manifest")
    parser.add_argument("--manifest", required=True)
    parser.add_argument("--out-dir", default=None, help="write outputs here instead of the recorded paths")
    parser.add_argument("--workers", type=int, default=None, help="override the recorded worker count")
    parser.set_defaults(handler=run)


def load_manifest(path: str) -> ExperimentManifest:
    try:
        return ExperimentManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise InputError(f"manifest not found: {path}") from e
    except ValueError as e:
        raise InputError(f"{path}: not a valid manifest: {e}") from e


def run(args: argparse.Namespace) -> int:
    from src.commands import COMMANDS

    manifest = load_manifest(args.manifest)
    if manifest.command not in COMMANDS or manifest.command == "rerun":
        raise InputError(f"manifest records an unknown command {manifest.command!r}")

    params = dict(manifest.parameters)
    if args.out_dir:
        for key in common.OUTPUT_KEYS:
            if params.get(key):
                params[key] = str(Path(args.out_dir) / Path(params[key]).name)
    if args.workers is not None:
        params["workers"] = args.workers

    config, _ = model_service.load_config(params["law"])
    if config.content_hash() != manifest.law_hash:
        raise InputError(f"law {params['law']} changed since the manifest was written "
                         f"(hash {config.content_hash()} != {manifest.law_hash})")

    logger.info("replaying %s from %s", manifest.command, args.manifest)
    replay = argparse.Namespace(**params)
    return COMMANDS[manifest.command].run(replay)

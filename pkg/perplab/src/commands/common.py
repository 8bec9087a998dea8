"""
Shared plumbing for the subcommands: argument parsing helpers, law loading,
JSON/CSV output and experiment manifests.
"""

import argparse
import json
import logging
import math
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel

from src import __version__
from src.config import settings
from src.errors import InputError
from src.schemas.law import MatrixQLaw
from src.schemas.results import ExperimentManifest
from src.services.model_service import model_service

logger = logging.getLogger(__name__)

OUTPUT_KEYS = ("out", "oracle_csv")


# ============== Argument parsing ==============

def parse_log_u(text: str) -> float:
    """Threshold as log u: "e8" means log u = 8 exactly, a plain number is u itself."""
    text = str(text).strip()
    try:
        if text.lower().startswith("e"):
            return float(text[1:])
        u = float(text)
    except ValueError as e:
        raise InputError(f"cannot parse threshold {text!r}") from e
    if u <= 0:
        raise InputError(f"threshold u must be positive, got {u}")
    return math.log(u)


def parse_log_u_list(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    return [parse_log_u(part) for part in text.split(",") if part.strip()]


def parse_floats(text: Optional[str]) -> Optional[List[float]]:
    """Comma list "0,0.5,1" or inclusive range "lo:hi:count"."""
    if text is None:
        return None
    try:
        if ":" in text:
            lo, hi, count = text.split(":")
            return np.linspace(float(lo), float(hi), int(count)).tolist()
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise InputError(f"cannot parse number list {text!r}") from e


def parse_vector(text: Optional[str], d: int) -> Optional[np.ndarray]:
    """"e1" is the first basis vector; otherwise a comma list of d nonnegative numbers."""
    if text is None:
        return None
    text = text.strip()
    if text.lower().startswith("e") and text[1:].isdigit():
        j = int(text[1:])
        if not 1 <= j <= d:
            raise InputError(f"basis vector {text} out of range for d={d}")
        return np.eye(d)[j - 1]
    values = parse_floats(text)
    if len(values) != d or any(v < 0 for v in values) or sum(values) <= 0:
        raise InputError(f"vector {text!r} must hold {d} nonnegative entries, not all zero")
    return np.asarray(values)


def add_common_arguments(parser: argparse.ArgumentParser, seeded: bool = True) -> None:
    parser.add_argument("--law", required=True, help="law JSON file or bundled law name")
    parser.add_argument("--out", default=None, help="output file")
    if seeded:
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--workers", type=int, default=settings.WORKERS)


# ============== Laws ==============

def load_law(args: argparse.Namespace) -> Tuple[MatrixQLaw, Path]:
    config, path = model_service.load_config(args.law)
    law = model_service.law_from_config(config)
    structlog.contextvars.bind_contextvars(law_hash=law.law_hash)
    return law, path


# ============== Output ==============

def dump(payload: Any) -> Any:
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode="json", by_alias=True)
    if isinstance(payload, (list, tuple)):
        return [dump(item) for item in payload]
    if isinstance(payload, dict):
        return {key: dump(value) for key, value in payload.items()}
    if isinstance(payload, np.ndarray):
        return payload.tolist()
    if isinstance(payload, np.generic):
        return payload.item()
    return payload


def to_json(payload: Any) -> str:
    return json.dumps(dump(payload), indent=2, ensure_ascii=False) + "\n"


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(payload), encoding="utf-8")
    return path


def write_frame(path: Path, frame: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return path


def default_output(command: str, law: MatrixQLaw, seed: Optional[int], suffix: str) -> Path:
    tag = f"_seed{seed}" if seed is not None else ""
    return settings.OUTPUT_DIR / f"{command}_{law.name}{tag}{suffix}"


def manifest_path(output: Path) -> Path:
    return Path(output).with_suffix(".manifest.json")


def write_manifest(args: argparse.Namespace, law: MatrixQLaw, law_path: Path, outputs: List[Path],
                   started: float) -> Path:
    parameters: Dict[str, Any] = {k: v for k, v in vars(args).items() if k != "handler"}
    manifest = ExperimentManifest(
        command=args.command,
        law_path=str(law_path),
        law_hash=law.law_hash,
        parameters=dump(parameters),
        seed=getattr(args, "seed", 0),
        workers=getattr(args, "workers", 1),
        tool_version=__version__,
        outputs=[str(p) for p in outputs],
        runtime_seconds=time.perf_counter() - started,
    )
    path = write_json(manifest_path(outputs[0]), manifest)
    logger.info("wrote manifest %s", path)
    return path

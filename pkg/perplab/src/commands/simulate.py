"""
simulate - first passage records of |V_n| (or <y, V_n>) over u as CSV.

With --pair the second law is driven by the same noise sequence and the CSV
holds both passage times per replicate.
"""

import argparse
import logging
import math
import time

from src.commands import common
from src.errors import InputError
from src.services.model_service import model_service
from src.services.oracle_service import oracle_service
from src.services.simulation_service import simulation_service
from src.services.spectral_service import spectral_service

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("simulate", help="simulate first passage times")
    common.add_common_arguments(parser)
    parser.add_argument("--u", required=True, help='threshold u, or "e8" for log u = 8')
    parser.add_argument("--samples", type=int, default=10_000)
    parser.add_argument("--max-steps", type=int, default=None)
    parser.add_argument("--y", default=None, help='direction: "e1" or comma list')
    parser.add_argument("--s", type=float, default=0.0, help="tilt parameter (0 = plain simulation)")
    parser.add_argument("--pair", default=None, help="second law sharing the noise sequence of --law")
    parser.add_argument("--oracle-csv", default=None, help="also write the exact tau law enumerated to --n-max")
    parser.add_argument("--n-max", type=int, default=None, help="enumeration depth for --oracle-csv")
    parser.set_defaults(handler=run)


def _calibrated(law, args: argparse.Namespace):
    if law.finite_support and (args.max_steps is None or args.s != 0.0):
        return spectral_service.calibrate(law)
    return None


def _run_pair(args: argparse.Namespace, law, law_path, log_u: float, y, started: float) -> int:
    if args.s != 0.0:
        raise InputError("--pair runs plain simulations; drop --s")
    config, _ = model_service.load_config(args.pair)
    other = model_service.law_from_config(config)
    pair = simulation_service.simulate_shared_noise(
        law, other, math.exp(log_u), args.samples, args.seed, max_steps=args.max_steps, y=y,
        model=_calibrated(law, args), other_model=_calibrated(other, args), workers=args.workers,
    )

    args.out = str(args.out or common.default_output("simulate", law, args.seed, f"_{other.name}.csv"))
    outputs = [common.write_frame(args.out, pair.to_frame())]
    common.write_manifest(args, law, law_path, outputs, started)

    summary = {"samples": len(pair.first), "out": args.out, "pair_hash": other.law_hash,
               "correlation": pair.correlation()}
    for key, batch in ((law.name, pair.first), (other.name, pair.second)):
        hit = ~batch.censored
        summary[key] = {"mean_tau": float(batch.tau[hit].mean()) if hit.any() else None,
                        "censored": int(batch.censored.sum())}
    print(common.to_json(summary), end="")
    return 0


def run(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    law, law_path = common.load_law(args)
    log_u = common.parse_log_u(args.u)
    y = common.parse_vector(args.y, law.d)
    if getattr(args, "pair", None):
        return _run_pair(args, law, law_path, log_u, y, started)

    batch = simulation_service.simulate_passages(
        law, math.exp(log_u), args.samples, args.seed, max_steps=args.max_steps, y=y, s=args.s,
        model=_calibrated(law, args), workers=args.workers,
    )

    args.out = str(args.out or common.default_output("simulate", law, args.seed, ".csv"))
    outputs = [common.write_frame(args.out, batch.to_frame())]

    if args.oracle_csv:
        n_max = args.n_max or int(batch.tau.max())
        exact = oracle_service.exact_passage_law(law, math.exp(log_u), n_max, y=y)
        outputs.append(common.write_frame(args.oracle_csv, oracle_service.passage_law_frame(exact)))

    common.write_manifest(args, law, law_path, outputs, started)
    censored = int(batch.censored.sum())
    print(common.to_json({"samples": len(batch), "censored": censored, "out": args.out}), end="")
    return 0

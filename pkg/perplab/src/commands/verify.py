"""
verify - theorem checks with pass/warn/fail reports; exits 1 on any failure.
"""

import argparse
import logging
import math
import time

from src.commands import common
from src.services.verification_service import THEOREMS, verification_service

logger = logging.getLogger(__name__)


def register(subparsers) -> None:
    parser = subparsers.add_parser("verify", help="check theorem predictions against simulation and enumeration")
    common.add_common_arguments(parser)
    parser.add_argument("--theorem", choices=THEOREMS + ("all",), default="all")
    parser.add_argument("--u-grid", default=None, help='thresholds, e.g. "e8,e12,e16" (u values for kesten)')
    parser.add_argument("--n-grid", default=None, help="product lengths for matrixld, e.g. 8,12,16")
    parser.add_argument("--samples", type=int, default=None)
    parser.add_argument("--beta", type=float, default=None)
    parser.add_argument("--a", type=float, default=-1.0)
    parser.add_argument("--m", type=int, default=1)
    parser.add_argument("--q", type=float, default=None)
    parser.add_argument("--y", default=None, help='direction: "e1" or comma list')
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    law, law_path = common.load_law(args)
    theorems = list(THEOREMS) if args.theorem == "all" else [args.theorem]

    grids = {}
    if args.u_grid:
        if args.theorem == "kesten":
            grids["kesten"] = [math.exp(v) for v in common.parse_log_u_list(args.u_grid)]
        else:
            for theorem in ("lln", "clt", "ld", "local"):
                grids[theorem] = common.parse_log_u_list(args.u_grid)
    if args.n_grid:
        grids["matrixld"] = [int(v) for v in common.parse_floats(args.n_grid)]

    reports = verification_service.run_checks(
        law, theorems, samples=args.samples, seed=args.seed, workers=args.workers, grids=grids,
        beta=args.beta, a=args.a, m=args.m, q=args.q, y=common.parse_vector(args.y, law.d),
    )

    args.out = str(args.out or common.default_output("verify", law, args.seed, ".json"))
    out = common.write_json(args.out, reports)
    common.write_manifest(args, law, law_path, [out], started)
    summary = {r.theorem: r.verdict for r in reports}
    print(common.to_json(summary), end="")
    return 1 if any(r.verdict == "fail" for r in reports) else 0

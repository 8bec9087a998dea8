"""
spectral - kappa, Lambda and its derivatives on an s-grid, plus alpha, rho, sigma_alpha.
"""

import argparse
import logging
import time

from src.commands import common
from src.services.model_service import model_service
from src.services.spectral_service import SimplexGrid, spectral_service

logger = logging.getLogger(__name__)

KAPPA_MC_N = 50


def register(subparsers) -> None:
    parser = subparsers.add_parser("spectral", help="spectral table and tail index of a law")
    common.add_common_arguments(parser)
    parser.add_argument("--s-grid", default=None, help='comma list or "lo:hi:count"')
    parser.add_argument("--grid-resolution", type=int, default=None, help="simplex grid resolution")
    parser.add_argument("--samples", type=int, default=None, help="Monte Carlo samples for sampler-only laws")
    parser.add_argument("--kappa-n", type=int, default=KAPPA_MC_N, help="product length for Monte Carlo kappa")
    parser.add_argument("--order", type=int, default=2, help="highest Lambda derivative in the table (2..5)")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    law, law_path = common.load_law(args)
    s_grid = common.parse_floats(args.s_grid)
    conditions = model_service.check_conditions(law, seed=args.seed)

    if law.finite_support:
        grid = SimplexGrid.build(law.d, args.grid_resolution)
        model = spectral_service.calibrate(law, grid, s_grid)
        payload = {
            "law": law.name,
            "law_hash": law.law_hash,
            "regime": model.regime,
            "alpha": model.alpha,
            "rho": model.rho,
            "sigma_alpha": model.sigma_alpha,
            "drift": model.drift,
            "grid": {"method": grid.method, "nodes": grid.size},
            "conditions": conditions,
            "rows": spectral_service.spectral_rows(model, model.s_grid, getattr(args, "order", 2)),
        }
    else:
        s_grid = s_grid or [0.5, 1.0, 2.0]
        samples = args.samples or 20_000
        payload = {
            "law": law.name,
            "law_hash": law.law_hash,
            "regime": None,
            "conditions": conditions,
            "kappa_mc": [spectral_service.kappa_mc(law, s, args.kappa_n, samples, args.seed, args.workers)
                         for s in s_grid],
        }

    args.out = str(args.out or common.default_output("spectral", law, None, ".json"))
    out = common.write_json(args.out, payload)
    common.write_manifest(args, law, law_path, [out], started)
    print(common.to_json({k: payload[k] for k in ("law", "regime", "alpha", "rho", "sigma_alpha")
                          if k in payload}), end="")
    return 0

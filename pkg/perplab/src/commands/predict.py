"""
predict - closed-form asymptotic predictions for one parameter set, as JSON.
"""

import argparse
import logging
import time

from src.commands import common
from src.errors import InputError
from src.services.asymptotics_service import asymptotics_service
from src.services.spectral_service import spectral_service

logger = logging.getLogger(__name__)

VARIANTS = ("cumulative", "directional", "local", "pointwise", "clt", "lln", "matrixld")


def register(subparsers) -> None:
    parser = subparsers.add_parser("predict", help="asymptotic predictions")
    common.add_common_arguments(parser)
    parser.add_argument("--variant", choices=VARIANTS, default="cumulative")
    parser.add_argument("--u", default="e10", help='threshold u, or "e8" for log u = 8')
    parser.add_argument("--beta", type=float, default=None, help="time scale (default rho / 2)")
    parser.add_argument("--l", type=float, default=0.0)
    parser.add_argument("--a", type=float, default=-1.0)
    parser.add_argument("--m", type=int, default=1)
    parser.add_argument("--y", default=None, help='direction: "e1" or comma list')
    parser.add_argument("--t", type=float, default=0.0, help="CLT argument")
    parser.add_argument("--b", type=float, default=1.0, help="LLN window constant")
    parser.add_argument("--n", type=int, default=10, help="product length (matrixld)")
    parser.add_argument("--q", type=float, default=None, help="slope (matrixld, default Lambda'(1))")
    parser.add_argument("--estimator", choices=("oracle", "mc"), default="oracle", help="prefactor estimator")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    law, law_path = common.load_law(args)
    model = spectral_service.calibrate(law)
    log_u = common.parse_log_u(args.u)
    y = common.parse_vector(args.y, law.d)
    inputs = {k: v for k, v in vars(args).items() if k not in ("handler", "out")}
    inputs["log_u"] = log_u

    if args.variant in ("cumulative", "directional", "local", "pointwise"):
        if args.variant == "directional" and y is None:
            raise InputError("--variant directional needs --y")
        beta = args.beta if args.beta is not None else (model.rho or 0.0) / 2
        point = asymptotics_service.rate_I(model, beta, for_ld=True)
        prefactor = asymptotics_service.cached_prefactor(model, point.s_of_beta, args.estimator,
                                                         seed=args.seed, workers=args.workers)
        if args.variant == "local":
            pred = asymptotics_service.predict_local(model, prefactor, None, beta, args.l, args.a, args.m, y,
                                                     log_u=log_u)
        elif args.variant == "pointwise":
            pred = asymptotics_service.predict_pointwise(model, prefactor, None, beta, y, log_u=log_u)
        else:
            pred = asymptotics_service.predict_ld(model, prefactor, None, beta, args.l,
                                                  y if args.variant == "directional" else None, log_u=log_u)
        payload = {"inputs": inputs, "chi": pred.chi, "C": pred.C, "value": pred.value,
                   "variant": pred.variant, "factor": pred.factor, "rate_point": pred.rate_point,
                   "prefactor": {"varkappa": prefactor.varkappa, "ci": prefactor.ci,
                                 "estimator": prefactor.estimator, "flags": prefactor.flags}}
    elif args.variant == "clt":
        pred = asymptotics_service.predict_clt(model, None, args.t, log_u=log_u)
        payload = {"inputs": inputs, "value": pred.probability, "center": pred.center, "scale": pred.scale}
    elif args.variant == "lln":
        lo, hi = asymptotics_service.predict_lln_window(model, None, args.b, log_u=log_u)
        payload = {"inputs": inputs, "window": [lo, hi]}
    else:
        q = args.q if args.q is not None else float(model.derivs(1.0, 1)[1])
        value = asymptotics_service.predict_matrix_ld(model, args.n, q, args.l, y=y)
        payload = {"inputs": {**inputs, "q": q}, "value": value}

    if args.out:
        out = common.write_json(args.out, payload)
        common.write_manifest(args, law, law_path, [out], started)
    print(common.to_json(payload), end="")
    return 0

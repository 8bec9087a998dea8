import logging
import math
import os
import sys

# Add the current directory to sys.path to allow imports from src
current_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.append(current_dir)

from src.config import settings
from src.errors import PerplabError
from src.services.asymptotics_service import asymptotics_service
from src.services.model_service import model_service
from src.services.oracle_service import oracle_service
from src.services.simulation_service import simulation_service
from src.services.spectral_service import spectral_service

# Keep the walkthrough print based
logging.basicConfig(level=logging.ERROR)


def run_law(name: str):
    print(f"\n{'='*20} Law: {name} {'='*20}")
    law = model_service.load_law(name)
    conditions = model_service.check_conditions(law)
    print(f"d = {law.d}, atoms = {law.n_atoms}, hash = {law.law_hash}")
    print(f"allowable: {conditions.allowable}, positive product at length {conditions.witness_length}, "
          f"non-arithmetic heuristic: {conditions.nonarith_heuristic}")

    model = spectral_service.calibrate(law)
    print(f"regime: {model.regime}, Lambda'(0) = {model.drift:.6f}")
    if model.regime != "kesten":
        print("no positive root of Lambda; passage-time asymptotics below are skipped")
        return

    print(f"alpha = {model.alpha:.8f}, rho = {model.rho:.6f}, sigma_alpha = {model.sigma_alpha:.6f}")
    beta = model.rho / 2
    point = asymptotics_service.rate_I(model, beta, for_ld=True)
    print(f"beta = rho/2 = {beta:.6f}: s = {point.s_of_beta:.6f}, I(beta) = {point.I:.6f}")

    try:
        prefactor = asymptotics_service.cached_prefactor(model, point.s_of_beta)
    except PerplabError as e:
        print(f"prefactor unavailable: {e}")
        return
    print(f"varkappa = {prefactor.varkappa:.6g} (95% interval {prefactor.ci[0]:.6g} .. {prefactor.ci[1]:.6g})")

    print("-" * 50)
    print(f"{'log u':>6} {'n':>4} {'exact P(tau <= n)':>20} {'prediction':>14} {'ratio':>8}")
    for log_u in (4.0, 6.0, 8.0):
        n = math.floor(beta * log_u + 1e-9)
        if not oracle_service.feasible(law, n):
            continue
        exact = oracle_service.exact_passage_law(law, math.exp(log_u), n).cdf(n)
        pred = asymptotics_service.predict_ld(model, prefactor, None, beta, log_u=log_u)
        ratio = exact / pred.value if pred.value > 0 else math.nan
        print(f"{log_u:>6g} {n:>4d} {exact:>20.6e} {pred.value:>14.6e} {ratio:>8.3f}")


def run_garch_pair(log_u: float = 4.0, samples: int = 2000):
    print(f"\n{'='*20} Shared noise: garch12 vs garch12_alt {'='*20}")
    first, second = model_service.load_law("garch12"), model_service.load_law("garch12_alt")
    pair = simulation_service.simulate_shared_noise(first, second, math.exp(log_u), samples, seed=0,
                                                    max_steps=2000, y=[1.0, 0.0])
    for law, batch in ((first, pair.first), (second, pair.second)):
        hit = ~batch.censored
        mean = f"{batch.tau[hit].mean():.2f}" if hit.any() else "n/a"
        print(f"{law.name:>12}: mean tau^e1 = {mean} over {hit.sum()} crossings")
    print(f"correlation of the paired passage times: {pair.correlation():.3f}")


def main():
    print(f"Bundled laws under {settings.DATA_DIR / 'laws'}")
    for name in model_service.bundled_laws():
        try:
            run_law(name)
        except PerplabError as e:
            print(f"Error on law {name}: {e}")
    run_garch_pair()


if __name__ == "__main__":
    main()

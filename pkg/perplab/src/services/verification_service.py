"""
Verification Service - Theorem predictions against simulation and enumeration.

Each check returns a VerificationReport with the predicted and empirical
values, the statistic it judges, the tolerances from settings and a
pass/warn/fail verdict. Checks whose hypotheses the law does not meet
report "warn" with an "inapplicable" note instead of failing.
"""

import logging
import math
import time
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import kstest, norm

from src.config import settings
from src.errors import InputError, OutsideRegimeError
from src.schemas.law import MatrixQLaw
from src.schemas.results import HillEstimate, PrefactorEstimate, VerificationReport
from src.services.asymptotics_service import asymptotics_service
from src.services.model_service import model_service
from src.services.oracle_service import oracle_service
from src.services.simulation_service import simulation_service
from src.services.spectral_service import RateModel, spectral_service
from src.utils import numerics
from src.utils.rng import block_generator

logger = logging.getLogger(__name__)

THEOREMS = ("kesten", "lln", "clt", "ld", "local", "matrixld")

# Default threshold grids, as log u (n for matrixld)
DEFAULT_GRIDS: Dict[str, List[float]] = {
    "lln": [10.0, 20.0, 30.0],
    "clt": [8.0, 12.0, 16.0],
    "ld": [10.0, 20.0, 30.0],
    "local": [6.0, 9.0, 12.0],
    "matrixld": [8, 12, 16],
}
KESTEN_QUANTILES = (0.9, 0.97, 0.99, 0.997)
JITTER_STREAM = 2**31 - 1  # block id reserved for CLT jitter draws
SIGMA_TOL = 1e-9
KESTEN_BURN_IN = 30.0  # forward steps = KESTEN_BURN_IN / |Lambda'(0)|
KESTEN_MAX_STEPS = 5000


def _nonincreasing(values: Sequence[float], errors: Sequence[float], sigmas: float) -> bool:
    return all(
        b <= a + sigmas * math.hypot(ea, eb)
        for a, b, ea, eb in zip(values, values[1:], errors, errors[1:])
    )


class VerificationService:

    # ============== Statistics ==============

    def ks_statistic(self, samples, cdf: Callable, weights: Optional[np.ndarray] = None) -> float:
        """Sup distance between the (weighted) empirical CDF of samples and cdf."""
        x = np.asarray(samples, dtype=float)
        if x.size == 0:
            raise InputError("no samples for the KS statistic")
        if weights is None:
            return float(kstest(x, cdf).statistic)
        w = np.asarray(weights, dtype=float)
        order = np.argsort(x, kind="stable")
        x, w = x[order], w[order] / w.sum()
        after = np.cumsum(w)
        before = after - w
        f = cdf(x)
        return float(max((after - f).max(), (f - before).max()))

    def hill_estimate(self, values, k: Optional[int] = None) -> HillEstimate:
        """Hill estimator on the k largest positive values."""
        x = np.sort(np.asarray(values, dtype=float))[::-1]
        x = x[x > 0]
        if k is None:
            k = max(10, int(settings.HILL_TAIL_FRACTION * x.size))
        if not 1 <= k < x.size:
            raise InputError(f"Hill estimator needs 1 <= k < {x.size}, got k = {k}")
        gamma = float(np.mean(np.log(x[:k]) - math.log(x[k])))
        alpha = 1.0 / gamma
        return HillEstimate(alpha=alpha, std_error=alpha / math.sqrt(k), k=k, threshold=float(x[k]))

    # ============== Reports ==============

    def _report(self, theorem: str, law: MatrixQLaw, started: float, verdict: str,
                seeds: Optional[List[int]] = None, notes: Optional[List[str]] = None, **fields: Any
                ) -> VerificationReport:
        report = VerificationReport(
            theorem=theorem,
            law_name=law.name,
            law_hash=law.law_hash,
            verdict=verdict,
            notes=notes or [],
            seeds=seeds or [],
            runtime_seconds=time.perf_counter() - started,
            **fields,
        )
        log = logger.warning if verdict == "fail" else logger.info
        log("%s on %s: %s %s", theorem, law.name, verdict, "; ".join(report.notes))
        return report

    def _inapplicable(self, theorem: str, law: MatrixQLaw, started: float, reason: str,
                      parameters: Optional[Dict[str, Any]] = None) -> VerificationReport:
        return self._report(theorem, law, started, "warn", notes=[f"inapplicable: {reason}"],
                            parameters=parameters or {})

    def _model(self, law: MatrixQLaw, model: Optional[RateModel]) -> RateModel:
        return model if model is not None else spectral_service.calibrate(law)

    # ============== Checks ==============

    def check_kesten(self, law: MatrixQLaw, model: Optional[RateModel] = None, u_grid: Optional[Sequence[float]] = None,
                     samples: Optional[int] = None, seed: int = 0, workers: int = 1, y=None) -> VerificationReport:
        """Hill tail index of stationary draws against the spectral alpha, plus a plateau fit of u^alpha P(|V| > u)."""
        started = time.perf_counter()
        model = self._model(law, model)
        if model.regime != "kesten":
            return self._inapplicable("kesten", law, started, f"no positive root of Lambda (regime {model.regime})")

        samples = samples or settings.VERIFY_SAMPLES
        n = min(KESTEN_MAX_STEPS, math.ceil(KESTEN_BURN_IN / abs(model.drift)))
        draws = simulation_service.sample_V(law, n, samples, seed, workers, model)
        values = draws.sum(axis=1)
        hill = self.hill_estimate(values)
        error = abs(hill.alpha - model.alpha) / model.alpha
        u_grid = list(u_grid) if u_grid is not None else np.quantile(values, KESTEN_QUANTILES).tolist()

        notes: List[str] = []
        empirical: Dict[str, Any] = {"hill": hill.model_dump()}
        try:
            fit = asymptotics_service.kesten_prefactor(model.alpha, values, u_grid)
            empirical["kesten_constant"] = fit.model_dump()
            if not fit.plateau:
                notes.append("no plateau in u^alpha P(|V| > u); pre-asymptotic u grid")
            if y is not None:
                directional = asymptotics_service.kesten_prefactor(model.alpha, draws @ np.asarray(y, dtype=float), u_grid)
                empirical["directional_ratio"] = directional.constant / fit.constant
                empirical["r_star_alpha_y"] = spectral_service.r_star_eval(model.solution(model.alpha), y)
        except InputError as e:
            notes.append(str(e))

        verdict = "pass" if error <= settings.KESTEN_ALPHA_RTOL else "fail"
        return self._report(
            "kesten", law, started, verdict, [seed], notes,
            parameters={"n": n, "samples": samples, "u_grid": u_grid},
            predicted={"alpha": model.alpha},
            empirical=empirical,
            statistics={"alpha_relative_error": error},
            tolerances={"alpha_rtol": settings.KESTEN_ALPHA_RTOL},
        )

    def _conditional_passages(self, law: MatrixQLaw, model: RateModel, log_u: float, samples: int,
                              seed: int, workers: int):
        """Passage records conditioned on tau_u < infinity: tilted at alpha in the kesten regime, plain otherwise."""
        s = model.alpha if model.regime == "kesten" else 0.0
        batch = simulation_service.simulate_passages(law, math.exp(log_u), samples, seed, s=s, model=model,
                                                     workers=workers)
        done = ~batch.censored
        log_w = batch.log_weight[done]
        weights = np.exp(log_w - log_w.max()) if log_w.size else log_w
        return batch, done, weights

    def check_lln(self, law: MatrixQLaw, model: Optional[RateModel] = None,
                  log_u_grid: Optional[Sequence[float]] = None, samples: Optional[int] = None, seed: int = 0,
                  workers: int = 1, b: Optional[float] = None, eps: Optional[float] = None) -> VerificationReport:
        """
        Conditional fractions of tau_u / log u outside rho +- eps (trend) and
        outside the localization window (final level).
        """
        started = time.perf_counter()
        model = self._model(law, model)
        if model.regime not in ("kesten", "transient"):
            return self._inapplicable("lln", law, started, f"no finite rho (regime {model.regime})")

        grid = list(log_u_grid or DEFAULT_GRIDS["lln"])
        samples = samples or settings.VERIFY_SAMPLES
        eps = settings.LLN_EPS if eps is None else eps
        if b is None:
            sigma = model.sigma_alpha or 0.0
            b = 1.01 * (model.rho * (1 + model.alpha + settings.LLN_DELTA) + model.rho**2 * sigma**2)

        outside, outside_se, window_frac, window_se, means, seeds = [], [], [], [], [], []
        for i, log_u in enumerate(grid):
            seeds.append(seed + i)
            batch, done, weights = self._conditional_passages(law, model, log_u, samples, seed + i, workers)
            ratio = batch.tau[done] / log_u
            f, se = numerics.self_normalized(np.abs(ratio - model.rho) > eps, weights)
            outside.append(f)
            outside_se.append(se)
            lo, hi = asymptotics_service.predict_lln_window(model, None, b, log_u=log_u)
            f, se = numerics.self_normalized((batch.tau[done] < lo) | (batch.tau[done] > hi), weights)
            window_frac.append(f)
            window_se.append(se)
            means.append(numerics.self_normalized(ratio, weights)[0])

        trend = _nonincreasing(outside, outside_se, settings.TREND_SIGMAS)
        final_ok = window_frac[-1] <= settings.LLN_MAX_FRACTION
        notes = [] if trend else ["fraction outside rho +- eps increases along the u grid"]
        return self._report(
            "lln", law, started, "pass" if trend and final_ok else "fail", seeds, notes,
            parameters={"log_u_grid": grid, "samples": samples, "eps": eps, "b": b},
            predicted={"rho": model.rho},
            empirical={"mean_tau_over_log_u": means, "fraction_outside_eps": outside,
                       "fraction_outside_eps_se": outside_se, "fraction_outside_window": window_frac,
                       "fraction_outside_window_se": window_se},
            statistics={"trend_nonincreasing": trend, "final_window_fraction": window_frac[-1]},
            tolerances={"max_fraction": settings.LLN_MAX_FRACTION, "trend_sigmas": settings.TREND_SIGMAS},
        )

    def check_clt(self, law: MatrixQLaw, model: Optional[RateModel] = None,
                  log_u_grid: Optional[Sequence[float]] = None, samples: Optional[int] = None, seed: int = 0,
                  workers: int = 1) -> VerificationReport:
        """KS distance between standardized conditional passage times (with jitter) and the normal law."""
        started = time.perf_counter()
        model = self._model(law, model)
        if model.regime != "kesten" or (model.sigma_alpha or 0.0) <= SIGMA_TOL:
            return self._inapplicable("clt", law, started,
                                      f"needs a kesten regime with sigma_alpha > 0 (regime {model.regime}, sigma_alpha {model.sigma_alpha})")

        grid = list(log_u_grid or DEFAULT_GRIDS["clt"])
        samples = samples or settings.VERIFY_SAMPLES
        notes: List[str] = []
        if model_service.check_conditions(law).nonarith_heuristic == "warn":
            notes.append("non-arithmeticity heuristic warns; lattice effects possible")

        ks, noise, seeds = [], [], []
        for i, log_u in enumerate(grid):
            seeds.append(seed + i)
            batch, done, weights = self._conditional_passages(law, model, log_u, samples, seed + i, workers)
            jitter = block_generator(seed + i, JITTER_STREAM).random(len(batch))[done]
            clt = asymptotics_service.predict_clt(model, None, 0.0, log_u=log_u)
            z = clt.standardize(batch.tau[done] - jitter)
            ks.append(self.ks_statistic(z, norm.cdf, weights))
            noise.append(1.0 / math.sqrt(max(numerics.effective_sample_size(weights), 1.0)))

        trend = _nonincreasing(ks, noise, settings.TREND_SIGMAS)
        final_ok = ks[-1] <= settings.CLT_MAX_KS
        if not trend:
            notes.append("KS distance does not decrease along the u grid")
        return self._report(
            "clt", law, started, "pass" if trend and final_ok else "fail", seeds, notes,
            parameters={"log_u_grid": grid, "samples": samples},
            predicted={"rho": model.rho, "sigma_alpha": model.sigma_alpha},
            empirical={"ks": ks},
            statistics={"ks_final": ks[-1], "trend_nonincreasing": trend, "ks_noise": noise},
            tolerances={"max_ks": settings.CLT_MAX_KS, "trend_sigmas": settings.TREND_SIGMAS},
        )

    def _ld_model(self, law: MatrixQLaw, model: Optional[RateModel], theorem: str, started: float,
                  beta: Optional[float]):
        model = self._model(law, model)
        if model.regime != "kesten" or (model.sigma_alpha or 0.0) <= SIGMA_TOL:
            return model, None, self._inapplicable(
                theorem, law, started, f"needs a non-degenerate kesten regime (regime {model.regime})")
        return model, (model.rho / 2 if beta is None else beta), None

    def _passage_cdf(self, law: MatrixQLaw, model: RateModel, log_u: float, n_cut: int, s: float,
                     samples: int, seed: int, workers: int):
        """Exact passage law when enumerable, else the tilted batch censored at n_cut."""
        if oracle_service.feasible(law, n_cut):
            return oracle_service.exact_passage_law(law, math.exp(log_u), n_cut), None
        batch = simulation_service.simulate_passages(law, math.exp(log_u), samples, seed, max_steps=n_cut,
                                                     s=s, model=model, workers=workers)
        return None, batch

    def check_ld(self, law: MatrixQLaw, model: Optional[RateModel] = None,
                 prefactor: Optional[PrefactorEstimate] = None, beta: Optional[float] = None,
                 l_schedule: Sequence[float] = (0.0,), log_u_grid: Optional[Sequence[float]] = None,
                 samples: Optional[int] = None, seed: int = 0, workers: int = 1) -> VerificationReport:
        """P(tau_u <= (beta - l) log u): exact or tilted estimates against the large-deviation prediction."""
        started = time.perf_counter()
        model, beta, skipped = self._ld_model(law, model, "ld", started, beta)
        if skipped:
            return skipped

        grid = list(log_u_grid or DEFAULT_GRIDS["ld"])
        samples = samples or settings.VERIFY_SAMPLES
        s = model.s_of_beta(beta)
        prefactor = prefactor or asymptotics_service.cached_prefactor(model, s)

        rows, seeds = [], []
        for l in l_schedule:
            for i, log_u in enumerate(grid):
                n_cut = math.floor((beta - l) * log_u + 1e-9)
                if n_cut < 1:
                    raise InputError(f"(beta - l) log u = {(beta - l) * log_u:g} leaves no admissible passage time")
                exact, batch = self._passage_cdf(law, model, log_u, n_cut, s, samples, seed + i, workers)
                if exact is not None:
                    p, se, method = exact.cdf(n_cut), 0.0, "oracle"
                else:
                    seeds.append(seed + i)
                    p, se = numerics.weighted_mean_se(~batch.censored, batch.weight)
                    method = "importance-sampling"
                pred = asymptotics_service.predict_ld(model, prefactor, None, beta, l, log_u=log_u)
                rows.append({"l": l, "log_u": log_u, "n": n_cut, "estimate": p, "std_error": se,
                             "method": method, "prediction": pred.value, "prediction_direct": pred.value_direct,
                             "chi": pred.chi,
                             "ratio": p / pred.value if pred.value > 0 else math.nan})

        base = [r for r in rows if r["l"] == l_schedule[0] and r["estimate"] > 0]
        rate = asymptotics_service.rate_I(model, beta).I
        notes: List[str] = []
        slope = math.nan
        if len(base) >= 2:
            x = np.array([r["log_u"] for r in base])
            yv = -np.log([r["estimate"] for r in base])
            slope = float(np.polyfit(x, yv, 1)[0])
        else:
            notes.append("fewer than two positive estimates; slope not computed")
        slope_error = abs(slope - rate) / rate if math.isfinite(slope) else math.inf
        final_ratio = rows[len(grid) - 1]["ratio"]
        lo, hi = settings.LD_RATIO_BAND
        verdict = "pass" if slope_error <= settings.LD_SLOPE_RTOL and lo <= final_ratio <= hi else "fail"
        return self._report(
            "ld", law, started, verdict, seeds, notes,
            parameters={"beta": beta, "s": s, "l_schedule": list(l_schedule), "log_u_grid": grid,
                        "samples": samples},
            predicted={"I_beta": rate, "varkappa": prefactor.varkappa, "varkappa_ci": list(prefactor.ci)},
            empirical={"rows": rows},
            statistics={"slope": slope, "slope_relative_error": slope_error, "final_ratio": final_ratio},
            tolerances={"slope_rtol": settings.LD_SLOPE_RTOL, "ratio_band": [lo, hi]},
        )

    def check_local(self, law: MatrixQLaw, model: Optional[RateModel] = None,
                    prefactor: Optional[PrefactorEstimate] = None, beta: Optional[float] = None,
                    a: float = -1.0, m: int = 1, log_u_grid: Optional[Sequence[float]] = None,
                    samples: Optional[int] = None, seed: int = 0, workers: int = 1) -> VerificationReport:
        """P(tau_u - beta log u in (a, a+m]) / P(tau_u <= beta log u) against e^{a Lambda(s)}(e^{m Lambda(s)} - 1)."""
        started = time.perf_counter()
        model, beta, skipped = self._ld_model(law, model, "local", started, beta)
        if skipped:
            return skipped

        grid = list(log_u_grid or DEFAULT_GRIDS["local"])
        samples = samples or settings.VERIFY_SAMPLES
        s = model.s_of_beta(beta)
        predicted = asymptotics_service.local_factor(model, s, a, m)

        rows, errors, noise, seeds = [], [], [], []
        for i, log_u in enumerate(grid):
            center = beta * log_u
            n_cut = math.floor(center + 1e-9)
            exact, batch = self._passage_cdf(law, model, log_u, n_cut, s, samples, seed + i, workers)
            if exact is not None:
                cumulative = exact.cdf(n_cut)
                ratio = exact.window(center + a, center + a + m) / cumulative if cumulative > 0 else math.nan
                se, method = 0.0, "oracle"
            else:
                seeds.append(seed + i)
                hit = ~batch.censored
                in_window = hit & (batch.tau > center + a) & (batch.tau <= center + a + m)
                ratio, se = numerics.self_normalized(in_window[hit], batch.weight[hit])
                method = "importance-sampling"
            errors.append(abs(ratio - predicted) / predicted)
            noise.append(se / predicted)
            rows.append({"log_u": log_u, "n": n_cut, "ratio": ratio, "std_error": se, "method": method})

        trend = errors[-1] <= errors[0] + settings.TREND_SIGMAS * math.hypot(noise[0], noise[-1])
        final_ok = errors[-1] <= settings.LOCAL_RTOL
        return self._report(
            "local", law, started, "pass" if trend and final_ok else "fail", seeds,
            [] if trend else ["relative error does not improve along the u grid"],
            parameters={"beta": beta, "s": s, "a": a, "m": m, "log_u_grid": grid, "samples": samples},
            predicted={"factor": predicted},
            empirical={"rows": rows},
            statistics={"relative_errors": errors, "final_relative_error": errors[-1], "trend": trend},
            tolerances={"rtol": settings.LOCAL_RTOL, "trend_sigmas": settings.TREND_SIGMAS},
        )

    def check_matrix_ld(self, law: MatrixQLaw, model: Optional[RateModel] = None,
                        n_grid: Optional[Sequence[int]] = None, q: Optional[float] = None, x=None, y=None,
                        l: float = 0.0, samples: Optional[int] = None, seed: int = 0,
                        workers: int = 1) -> VerificationReport:
        """P(log|Pi_n x| >= n(q + l)): exact or tilted against the Bahadur-Rao-Petrov prediction."""
        started = time.perf_counter()
        model = self._model(law, model)
        if q is None:
            q = float(model.derivs(1.0, 1)[1])
        try:
            s = model.s_of_slope(q)
        except OutsideRegimeError as e:
            return self._inapplicable("matrixld", law, started, str(e), {"q": q})
        if s <= 0 or model.sigma(s) <= SIGMA_TOL:
            return self._inapplicable("matrixld", law, started, f"needs s > 0 and sigma_s > 0 at q = {q:g}", {"q": q})

        grid = [int(n) for n in (n_grid or DEFAULT_GRIDS["matrixld"])]
        samples = samples or settings.VERIFY_SAMPLES
        rows, seeds = [], []
        for i, n in enumerate(grid):
            if oracle_service.feasible(law, n):
                tail = oracle_service.exact_product_tail(law, n, q + l, x, y)
                p, p_y, se, method = tail.norm, tail.directional, 0.0, "oracle"
            else:
                seeds.append(seed + i)
                batch = simulation_service.simulate_products(law, n, samples, seed + i, x, y, s=s,
                                                             solution=model.solution(s), workers=workers)
                weights = np.exp(batch.log_weight)
                p, se = numerics.weighted_mean_se(batch.log_norm >= n * (q + l), weights)
                p_y = None
                if batch.log_inner is not None:
                    p_y = numerics.weighted_mean_se(batch.log_inner >= n * (q + l), weights)[0]
                method = "importance-sampling"
            pred = asymptotics_service.predict_matrix_ld(model, n, q, l, x)
            row = {"n": n, "estimate": p, "std_error": se, "method": method, "prediction": pred,
                   "ratio": p / pred}
            if y is not None:
                pred_y = asymptotics_service.predict_matrix_ld(model, n, q, l, x, y)
                row.update({"directional_estimate": p_y, "directional_prediction": pred_y,
                            "directional_ratio": p_y / pred_y if p_y is not None else None})
            rows.append(row)

        gaps = [abs(r["ratio"] - 1) for r in rows]
        gap_noise = [r["std_error"] / r["prediction"] for r in rows]
        trend = gaps[-1] <= gaps[0] + settings.TREND_SIGMAS * math.hypot(gap_noise[0], gap_noise[-1])
        lo, hi = settings.MATRIX_LD_BAND
        final_ok = lo <= rows[-1]["ratio"] <= hi
        return self._report(
            "matrixld", law, started, "pass" if trend and final_ok else "fail", seeds,
            [] if trend else ["ratio does not approach 1 along the n grid"],
            parameters={"n_grid": grid, "q": q, "l": l, "s": s, "samples": samples,
                        "x": None if x is None else np.asarray(x, dtype=float).tolist(),
                        "y": None if y is None else np.asarray(y, dtype=float).tolist()},
            predicted={"rows": [r["prediction"] for r in rows]},
            empirical={"rows": rows},
            statistics={"final_ratio": rows[-1]["ratio"], "trend": trend},
            tolerances={"ratio_band": [lo, hi], "trend_sigmas": settings.TREND_SIGMAS},
        )

    # ============== Batch ==============

    def run_checks(self, law: MatrixQLaw, theorems: Sequence[str], model: Optional[RateModel] = None,
                   samples: Optional[int] = None, seed: int = 0, workers: int = 1,
                   grids: Optional[Dict[str, Sequence[float]]] = None, **options) -> List[VerificationReport]:
        """Run the requested checks in a fixed order; the spectral calibration is shared."""
        grids = grids or {}
        unknown = set(theorems) - set(THEOREMS)
        if unknown:
            raise InputError(f"unknown theorem(s): {sorted(unknown)}")
        if model is None and law.finite_support:
            model = spectral_service.calibrate(law)

        reports = []
        for theorem in THEOREMS:
            if theorem not in theorems:
                continue
            common = {"model": model, "samples": samples, "seed": seed, "workers": workers}
            if theorem == "kesten":
                reports.append(self.check_kesten(law, u_grid=grids.get("kesten"), y=options.get("y"), **common))
            elif theorem == "lln":
                reports.append(self.check_lln(law, log_u_grid=grids.get("lln"), **common))
            elif theorem == "clt":
                reports.append(self.check_clt(law, log_u_grid=grids.get("clt"), **common))
            elif theorem == "ld":
                reports.append(self.check_ld(law, beta=options.get("beta"), log_u_grid=grids.get("ld"),
                                             l_schedule=options.get("l_schedule", (0.0,)), **common))
            elif theorem == "local":
                reports.append(self.check_local(law, beta=options.get("beta"), a=options.get("a", -1.0),
                                                m=options.get("m", 1), log_u_grid=grids.get("local"), **common))
            elif theorem == "matrixld":
                reports.append(self.check_matrix_ld(law, n_grid=grids.get("matrixld"), q=options.get("q"),
                                                    x=options.get("x"), y=options.get("y"), **common))
        return reports


# Singleton instance
verification_service = VerificationService()

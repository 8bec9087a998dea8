"""
Asymptotics Service - Closed-form predictions calibrated on a RateModel.

Pipeline:
1. Invert Lambda' (s of a slope) and build the rate point I(beta) = s - Lambda(s)/Lambda'(s)
2. Expand I(beta - l) with the truncated Cramer series
3. Estimate the prefactor varkappa_s from the limit of kappa(s)^-n E[|V_n|^s r_s(V_n/|V_n|)]
4. Assemble large-deviation, local, CLT, LLN-window and matrix predictions
"""

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress, norm

from src.config import settings
from src.errors import InputError, MomentRangeError, NonConvexityError, OutsideRegimeError
from src.schemas.results import (
    CLTPrediction,
    ExpansionResult,
    KestenEstimate,
    LDPrediction,
    PrefactorEstimate,
    RatePoint,
)
from src.services.oracle_service import oracle_service
from src.services.simulation_service import simulation_service
from src.services.spectral_service import RateModel, SpectralSolution, spectral_service
from src.utils import numerics

logger = logging.getLogger(__name__)

Z_95 = 1.959963984540054


def cramer_series(gammas: Sequence[float], t: float) -> float:
    """Three leading terms of the Cramer series from Lambda derivatives (g2, g3, g4, g5)."""
    g2, g3, g4, g5 = gammas
    if g2 <= 0:
        raise NonConvexityError(f"Lambda'' = {g2:.3g} is not positive")
    return (
        g3 / (6 * g2**1.5)
        + (g4 * g2 - 3 * g3**2) * t / (24 * g2**3)
        + (g5 * g2**2 - 10 * g4 * g3 * g2 + 15 * g3**3) * t**2 / (120 * g2**4.5)
    )


class AsymptoticsService:

    # ============== Rate function ==============

    def legendre(self, model: RateModel, q: float) -> float:
        """Lambda*(q) = s q - Lambda(s) at the s with Lambda'(s) = q."""
        s = model.s_of_slope(q)
        return s * q - model.Lambda(s)

    def rate_I(self, model: RateModel, beta: float, for_ld: bool = False) -> RatePoint:
        if for_ld:
            self._require_lower_deviation(model, beta)
        s = model.s_of_beta(beta)
        if for_ld and model.law.s_max is not None and 2 * s >= model.law.s_max:
            raise MomentRangeError(f"2s = {2 * s:g} outside the moment range s < {model.law.s_max:g}")
        g = model.derivs(s, 5)
        return RatePoint(
            beta=beta,
            s_of_beta=s,
            I=s - g[0] / g[1],
            I_prime=-g[0],
            gammas=g[1:].tolist(),
        )

    def _require_lower_deviation(self, model: RateModel, beta: float) -> None:
        if model.rho is None:
            raise OutsideRegimeError(f"law {model.law.name} has no rho (regime {model.regime})")
        if not 0 < beta < model.rho:
            raise OutsideRegimeError(
                f"beta = {beta:g} outside lower-deviation regime (0, rho = {model.rho:.6g})"
            )

    def cramer_xi(self, model: RateModel, s: float, t: float) -> float:
        return cramer_series(model.derivs(s, 5)[2:], t)

    def expand_I(self, model: RateModel, beta: float, l: float) -> ExpansionResult:
        """I(beta - l) from the rate point at beta, next to rate_I(beta - l) computed directly."""
        if l >= beta:
            raise OutsideRegimeError(f"perturbation l = {l:g} must stay below beta = {beta:g}")
        point = self.rate_I(model, beta)
        s, gap = point.s_of_beta, beta - l
        sigma = math.sqrt(point.gammas[1])
        h = 0.0
        if l != 0:
            h = (l**2 / (2 * sigma**2 * beta**2 * gap)
                 - l**3 / (sigma**3 * beta**3 * gap**2) * cramer_series(point.gammas[1:], l / (sigma * beta * gap)))
        expansion = gap / beta * point.I + s * l / beta + h
        direct = point.I if l == 0 else self.rate_I(model, gap).I
        return ExpansionResult(beta=beta, l=l, expansion=expansion, direct=direct, h=h)

    # ============== Prefactor ==============

    def prefactor_varkappa(
        self,
        model: RateModel,
        s: float,
        estimator: str = "oracle",
        n_max: Optional[int] = None,
        samples: Optional[int] = None,
        seed: int = 0,
        workers: int = 1,
        solution: Optional[SpectralSolution] = None,
    ) -> PrefactorEstimate:
        """
        varkappa_s = sqrt(Lambda'(s)) / (s sigma_s nu_s(r_s) sqrt(2 pi)) * lim W_n(s).

        W_n is enumerated exactly ("oracle") or averaged over the tilted
        forward process ("mc"). The limit is the last value plus a geometric
        extrapolation of the remaining increments.
        """
        if s <= (model.alpha or 0.0):
            raise OutsideRegimeError(f"prefactor needs s > alpha = {model.alpha}, got s = {s:g}")
        solution = solution or model.solution(s)
        flags: List[str] = []

        if estimator == "oracle":
            if n_max is None:
                n_max = 1
                while n_max < settings.PREFACTOR_MAX_N and oracle_service.feasible(model.law, n_max + 1):
                    n_max += 1
            trace = [w.w for w in oracle_service.W_trace(model.law, solution, n_max)]
            errors: List[float] = []
            half_width = 0.0
        elif estimator == "mc":
            n_max = n_max or settings.PREFACTOR_MAX_N
            samples = samples or settings.PREFACTOR_MC_SAMPLES
            forward = simulation_service.forward_trace(model.law, solution, n_max, samples, seed, workers)
            log_kappa = math.log(solution.kappa)
            trace, errors = [], []
            for n in range(1, n_max + 1):
                values = np.exp(forward.log_terms[n - 1] - n * log_kappa) * solution.r_at(forward.directions[n - 1])
                mean, se = numerics.weighted_mean_se(values, np.ones(values.size))
                trace.append(mean)
                errors.append(se)
            half_width = Z_95 * errors[-1]
        else:
            raise InputError(f"unknown prefactor estimator {estimator!r}")

        last = trace[-1]
        rtol = max(settings.PLATEAU_RTOL, half_width / last if last > 0 else 0.0)
        reached = numerics.plateau(trace, rtol, settings.PLATEAU_RUN) is not None
        if not reached:
            flags.append("plateau not reached")

        # MC increments are dominated by noise, so only exact traces are extrapolated
        tail = numerics.geometric_tail(trace)[0] if estimator == "oracle" else 0.0
        if math.isinf(tail):
            flags.append("increments do not decay; interval widened")
            tail = n_max * max(trace[-1] - trace[-2], 0.0) if len(trace) > 1 else last
        widen = 0.0
        if not reached and estimator == "mc":
            run = min(settings.PLATEAU_RUN, len(trace))
            widen = abs(trace[-1] - trace[-run])

        limit = last + tail
        lo, hi = max(last - half_width, 0.0), last + 2 * tail + half_width + widen

        d = model.derivs(s, 2)
        factor = math.sqrt(d[1]) / (s * math.sqrt(d[2]) * solution.nu_r * math.sqrt(2 * math.pi))
        if limit <= 0:
            raise OutsideRegimeError(f"W_n(s={s:g}) has a nonpositive limit estimate {limit:.3g}")
        if flags:
            logger.warning("prefactor at s=%g (%s): %s", s, estimator, "; ".join(flags))
        return PrefactorEstimate(
            s=s,
            estimator=estimator,
            varkappa=factor * limit,
            ci=(factor * lo, factor * hi),
            limit=limit,
            limit_trace=trace,
            trace_errors=errors,
            plateau_reached=reached,
            nu_r=solution.nu_r,
            flags=flags,
        )

    def _cache_path(self, model: RateModel, s: float, estimator: str) -> Path:
        return settings.CACHE_DIR / f"prefactor_{model.law.law_hash}_{estimator}_{s:.12g}.json"

    def cached_prefactor(self, model: RateModel, s: float, estimator: str = "oracle", **kwargs) -> PrefactorEstimate:
        """Prefactor from the on-disk cache, computed and stored when missing."""
        path = self._cache_path(model, s, estimator)
        if path.exists():
            try:
                return PrefactorEstimate.model_validate_json(path.read_text(encoding="utf-8"))
            except Exception as e:
                logger.error(f"Error loading cached prefactor {path}: {e}")

        logger.info("no cached prefactor for %s at s=%g; computing (%s)", model.law.name, s, estimator)
        estimate = self.prefactor_varkappa(model, s, estimator, **kwargs)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(estimate.model_dump_json(indent=2), encoding="utf-8")
        return estimate

    # ============== Passage-time predictions ==============

    def predict_ld(
        self,
        model: RateModel,
        prefactor: PrefactorEstimate,
        u: Optional[float],
        beta: float,
        l: float = 0.0,
        y=None,
        log_u: Optional[float] = None,
    ) -> LDPrediction:
        """
        P(tau_u <= (beta - l) log u) ~ C_{beta,l}(u) / sqrt(log u) u^{-I(beta - l)}.

        Pass log_u instead of u for thresholds beyond float range or to hit
        integer (beta - l) log u exactly.

        For l > 0 the exponent is the expansion of I(beta - l) around the rate
        point at beta, which is the form the prefactor C_{beta,l} belongs to
        (the tilt stays at s(beta)). The directly solved I(beta - l) is
        reported next to it as exponent_direct and value_direct.
        """
        log_u = math.log(u) if log_u is None else log_u
        if log_u <= 0:
            raise InputError(f"threshold u must exceed 1, got log u = {log_u:g}")
        if not 0 <= l < beta:
            raise OutsideRegimeError(f"perturbation l = {l:g} must lie in [0, beta)")
        point = self.rate_I(model, beta, for_ld=True)
        s = point.s_of_beta
        if abs(prefactor.s - s) > 1e-6 * max(1.0, s):
            raise InputError(f"prefactor was computed at s = {prefactor.s:.8g}, this prediction needs s = {s:.8g}")

        chi = numerics.fractional_part((beta - l) * log_u)
        C = prefactor.varkappa * math.exp(-chi * model.Lambda(s))
        exponent = direct = point.I
        if l:
            expanded = self.expand_I(model, beta, l)
            exponent, direct = expanded.expansion, expanded.direct
        value = C / math.sqrt(log_u) * math.exp(-exponent * log_u)
        value_direct = C / math.sqrt(log_u) * math.exp(-direct * log_u)

        variant = "cumulative"
        if y is not None:
            r_star = spectral_service.r_star_eval(model.solution(s), y)
            value *= r_star
            value_direct *= r_star
            variant = f"directional({','.join(f'{v:g}' for v in np.asarray(y, dtype=float))})"
        if u is None:
            u = math.exp(log_u) if log_u < 700 else math.inf
        return LDPrediction(u=u, log_u=log_u, beta=beta, l=l, s=s,
                            chi=chi, C=C, value=value, variant=variant, rate_point=point,
                            exponent=exponent, exponent_direct=direct, value_direct=value_direct)

    def local_factor(self, model: RateModel, s: float, a: float, m: int) -> float:
        lam = model.Lambda(s)
        return math.exp(a * lam) * math.expm1(m * lam)

    def predict_local(
        self,
        model: RateModel,
        prefactor: PrefactorEstimate,
        u: Optional[float],
        beta: float,
        l: float,
        a: float,
        m: int,
        y=None,
        log_u: Optional[float] = None,
    ) -> LDPrediction:
        """P(tau_u - (beta - l) log u in (a, a + m]) = e^{a Lambda(s)} (e^{m Lambda(s)} - 1) times the cumulative form."""
        if a > 0 or m < 1 or int(m) != m or a + m > 0:
            raise OutsideRegimeError(f"local window needs a <= 0, integer m >= 1 and a + m <= 0 (a={a:g}, m={m})")
        base = self.predict_ld(model, prefactor, u, beta, l, y, log_u)
        factor = self.local_factor(model, base.s, a, int(m))
        return base.model_copy(update={"value": base.value * factor, "value_direct": base.value_direct * factor,
                                       "factor": factor,
                                       "variant": f"local({a:g},{int(m)})"})

    def predict_pointwise(self, model: RateModel, prefactor: PrefactorEstimate, u: Optional[float], beta: float,
                          y=None, log_u: Optional[float] = None) -> LDPrediction:
        """P(tau_u = floor(beta log u)) ~ (1 - e^{-Lambda(s)}) C_{beta,0}(u) / sqrt(log u) u^{-I(beta)}."""
        out = self.predict_local(model, prefactor, u, beta, 0.0, -1.0, 1, y, log_u)
        return out.model_copy(update={"variant": "pointwise"})

    def predict_clt(self, model: RateModel, u: Optional[float], t: float,
                    kesten: Optional[KestenEstimate] = None, log_u: Optional[float] = None) -> CLTPrediction:
        log_u = math.log(u) if log_u is None else log_u
        if model.rho is None or not model.sigma_alpha:
            raise OutsideRegimeError(f"CLT needs rho and sigma_alpha > 0 (regime {model.regime})")
        if log_u <= 0:
            raise InputError(f"threshold u must exceed 1, got log u = {log_u:g}")
        probability = float(norm.cdf(t))
        unconditional = None
        if kesten is not None:
            unconditional = kesten.constant * math.exp(-model.alpha * log_u) * probability
        return CLTPrediction(
            t=t,
            probability=probability,
            center=model.rho * log_u,
            scale=model.sigma_alpha * model.rho**1.5 * math.sqrt(log_u),
            unconditional=unconditional,
        )

    def predict_lln_window(self, model: RateModel, u: Optional[float], b: float,
                           log_u: Optional[float] = None) -> Tuple[float, float]:
        """[(rho -+ b sqrt(loglog u / log u)) log u]."""
        log_u = math.log(u) if log_u is None else log_u
        if log_u <= math.e:
            raise OutsideRegimeError(f"LLN window needs u > e^e, got log u = {log_u:g}")
        if model.rho is None:
            raise OutsideRegimeError(f"law {model.law.name} has no rho (regime {model.regime})")
        half = b * math.sqrt(math.log(log_u) / log_u)
        return (model.rho - half) * log_u, (model.rho + half) * log_u

    # ============== Matrix products ==============

    def matrix_rate(self, model: RateModel, q: float, l: float = 0.0) -> float:
        """Lambda*(q + l) expanded around q."""
        s = model.s_of_slope(q)
        g = model.derivs(s, 5)
        sigma = math.sqrt(g[2])
        base = s * q - g[0]
        if l == 0:
            return base
        return base + s * l + l**2 / (2 * sigma**2) - l**3 / sigma**3 * cramer_series(g[2:], l / sigma)

    def predict_matrix_ld(self, model: RateModel, n: int, q: float, l: float = 0.0, x=None, y=None) -> float:
        """P(log|Pi_n x| >= n(q + l)) ~ r_s(x)/nu_s(r_s) exp(-n Lambda*(q + l)) / (s sigma_s sqrt(2 pi n))."""
        s = model.s_of_slope(q)
        if s <= 0:
            raise OutsideRegimeError(f"slope q = {q:g} is not above Lambda'(0); upper deviations only")
        solution = model.solution(s)
        x = np.full(model.law.d, 1.0 / model.law.d) if x is None else np.asarray(x, dtype=float)
        r_x = float(solution.r_at(x / x.sum())[0])
        value = (r_x / solution.nu_r * math.exp(-n * self.matrix_rate(model, q, l))
                 / (s * model.sigma(s) * math.sqrt(2 * math.pi * n)))
        if y is not None:
            value *= spectral_service.r_star_eval(solution, y)
        return value

    # ============== Stationary tail ==============

    def kesten_prefactor(
        self,
        alpha: float,
        values: np.ndarray,
        u_grid: Sequence[float],
        weights: Optional[np.ndarray] = None,
    ) -> KestenEstimate:
        """Fit u^alpha P(X > u) over the u grid; a flat fit is the plateau whose level estimates the constant."""
        values = np.asarray(values, dtype=float)
        w = np.ones(values.size) if weights is None else np.asarray(weights, dtype=float)
        total = w.sum()
        us, logs, variances = [], [], []
        for u in u_grid:
            p = float(w[values > u].sum() / total)
            if p <= 0:
                continue
            us.append(float(u))
            logs.append(alpha * math.log(u) + math.log(p))
            variances.append((1 - p) / (p * values.size))
        if len(us) < 2:
            raise InputError("need at least two u values with observed exceedances")

        fit = linregress(np.log(us), logs)
        center = float(np.mean(logs))
        half = Z_95 * math.sqrt(sum(variances)) / len(us)
        plateau = abs(fit.slope) <= max(settings.TREND_SIGMAS * fit.stderr, 0.02)
        return KestenEstimate(
            alpha=alpha,
            constant=math.exp(center),
            ci=(math.exp(center - half), math.exp(center + half)),
            slope=float(fit.slope),
            slope_se=float(fit.stderr),
            plateau=plateau,
            u_grid=us,
            scaled_tail=np.exp(logs).tolist(),
        )


# Singleton instance
asymptotics_service = AsymptoticsService()

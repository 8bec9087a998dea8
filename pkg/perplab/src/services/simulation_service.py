"""
Simulation Service - Forward process, perpetuity paths and first passage times.

Passage times are simulated on the perpetuity sequence itself,
V_n = V_{n-1} + Pi_{n-1} Q_n with Pi_n = M_1 ... M_n, because only that
sequence has the path law of tau_u. The forward recursion
V*_n = M_n V*_{n-1} + Q_n shares its marginals and serves the stationary
and moment studies.

Replicates run in blocks; block b of seed sigma owns its own Philox stream
(see src.utils.rng) so results do not depend on the worker count.

Exponential tilting picks atoms with probability proportional to
p_k |A_k w|^s h(A_k.w), h an eigenfunction evaluated exactly from a
discretized eigenmeasure, and carries the exact likelihood ratio
log Z(w) - s log|A_k w| - log h(A_k.w) per step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from src.config import settings
from src.errors import InputError
from src.schemas.law import GaussianGarchSampler, MatrixQLaw
from src.schemas.results import PassageSample
from src.services.model_service import model_service
from src.services.spectral_service import RateModel, SpectralSolution, spectral_service
from src.utils.parallel import run_blocks
from src.utils.rng import block_generator, block_layout, lineage

logger = logging.getLogger(__name__)

OVERFLOW_LEVEL = 1e290


# ============== Single-path state ==============

@dataclass(frozen=True)
class PathState:
    """Forward-process state. The true vector is V * exp(log_scale)."""
    n: int
    V: np.ndarray
    direction: np.ndarray
    log_scale: float = 0.0
    log_norm: float = 0.0  # log|G_n x0|
    stream: Tuple[int, int, int] = (0, 0, 0)

    @classmethod
    def start(cls, d: int, x0=None, stream: Tuple[int, int, int] = (0, 0, 0)) -> "PathState":
        x0 = np.full(d, 1.0 / d) if x0 is None else np.asarray(x0, dtype=float)
        return cls(n=0, V=np.zeros(d), direction=x0, stream=stream)

    @property
    def value(self) -> np.ndarray:
        return self.V * math.exp(self.log_scale)

    @property
    def log_level(self) -> float:
        total = self.V.sum()
        return math.log(total) + self.log_scale if total > 0 else -math.inf


# ============== Tilting kernel ==============

@dataclass(frozen=True, eq=False)
class TiltKernel:
    """
    Kernel q(w, k) = p_k |A_k w|^s h(A_k.w) / Z(w), h(x) = sum_j mu_j <x, y_j>^s.

    For passage times A_k = M_k^T and mu = nu_s (h = r*_s); for forward
    products A_k = M_k and mu = nu*_s (h = r_s).
    """
    s: float
    mats: np.ndarray
    log_probs: np.ndarray
    nodes: np.ndarray
    measure: np.ndarray

    @classmethod
    def for_passages(cls, law: MatrixQLaw, solution: SpectralSolution) -> "TiltKernel":
        return cls(solution.s, law.transposed, np.log(law.probs), solution.grid.points, solution.nu)

    @classmethod
    def for_products(cls, law: MatrixQLaw, solution: SpectralSolution) -> "TiltKernel":
        return cls(solution.s, law.matrices, np.log(law.probs), solution.grid.points, solution.nu_star)

    def log_h(self, x: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.power(x @ self.nodes.T, self.s) @ self.measure)

    def step(self, uniforms: np.ndarray, w: np.ndarray):
        """Draw atoms for directions w; returns (index, log-weight increment, new direction, log|A w|)."""
        r, d = w.shape
        images = np.einsum("kij,rj->rki", self.mats, w)
        c = images.sum(axis=2)
        dirs = images / c[:, :, None]
        log_c = np.log(c)
        log_h = self.log_h(dirs.reshape(-1, d)).reshape(r, -1)
        log_q = self.log_probs[None, :] + self.s * log_c + log_h
        log_z = logsumexp(log_q, axis=1)
        q = np.exp(log_q - log_z[:, None])
        idx = np.minimum((np.cumsum(q, axis=1) < uniforms[:, None]).sum(axis=1), q.shape[1] - 1)
        rows = np.arange(r)
        increment = log_z - self.s * log_c[rows, idx] - log_h[rows, idx]
        return idx, increment, dirs[rows, idx], log_c[rows, idx]


# ============== Batches ==============

@dataclass
class PassageBatch:
    """Column store of passage records in block order."""
    tau: np.ndarray
    censored: np.ndarray
    overshoot: np.ndarray
    direction: np.ndarray
    log_weight: np.ndarray
    lineage: np.ndarray
    u: float = 0.0
    s: float = 0.0

    def __len__(self) -> int:
        return self.tau.size

    @property
    def weight(self) -> np.ndarray:
        return np.exp(self.log_weight)

    @classmethod
    def concat(cls, parts: List["PassageBatch"], u: float, s: float) -> "PassageBatch":
        return cls(
            tau=np.concatenate([p.tau for p in parts]),
            censored=np.concatenate([p.censored for p in parts]),
            overshoot=np.concatenate([p.overshoot for p in parts]),
            direction=np.concatenate([p.direction for p in parts]),
            log_weight=np.concatenate([p.log_weight for p in parts]),
            lineage=np.concatenate([p.lineage for p in parts]),
            u=u,
            s=s,
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "replicate": np.arange(len(self)),
            "tau": self.tau,
            "censored": self.censored,
            "weight": self.weight,
            "overshoot": self.overshoot,
        })
        for j in range(self.direction.shape[1]):
            frame[f"direction_{j}"] = self.direction[:, j]
        return frame

    def records(self) -> List[PassageSample]:
        return [
            PassageSample(
                tau=int(self.tau[i]),
                censored=bool(self.censored[i]),
                direction_at_passage=self.direction[i].tolist(),
                overshoot=float(self.overshoot[i]),
                weight=float(math.exp(self.log_weight[i])),
                seed_lineage=tuple(int(v) for v in self.lineage[i]),
            )
            for i in range(len(self))
        ]


@dataclass
class SharedNoisePassages:
    """Passage times of two laws driven by one noise sequence, replicate by replicate."""
    first: PassageBatch
    second: PassageBatch

    def correlation(self) -> float:
        both = ~(self.first.censored | self.second.censored)
        if both.sum() < 2:
            return math.nan
        a, b = self.first.tau[both], self.second.tau[both]
        if a.std() == 0 or b.std() == 0:
            return math.nan
        return float(np.corrcoef(a, b)[0, 1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "replicate": np.arange(len(self.first)),
            "tau": self.first.tau,
            "censored": self.first.censored,
            "tau_other": self.second.tau,
            "censored_other": self.second.censored,
        })


@dataclass
class ProductBatch:
    log_norm: np.ndarray
    log_inner: Optional[np.ndarray]
    log_weight: np.ndarray


@dataclass
class ForwardTrace:
    """log(weight * |V*_n|^s) and the direction of V*_n for n = 1..n_max (rows)."""
    log_terms: np.ndarray
    directions: np.ndarray
    s: float = 0.0


# ============== Block workers ==============

def _passage_block(law: MatrixQLaw, u: float, level_vec: np.ndarray, max_steps: int,
                   tilt: Optional[TiltKernel], seed: int, block: int, size: int) -> PassageBatch:
    rng = block_generator(seed, block)
    d = law.d
    pi = np.broadcast_to(np.eye(d), (size, d, d)).copy()
    log_scale = np.zeros(size)
    v = np.zeros((size, d))
    alive = np.ones(size, dtype=bool)
    tau = np.full(size, max_steps, dtype=np.int64)
    overshoot = np.zeros(size)
    direction = np.zeros((size, d))
    log_w = np.zeros(size)
    w = np.broadcast_to(level_vec / level_vec.sum(), (size, d)).copy()

    for n in range(1, max_steps + 1):
        live = np.flatnonzero(alive)
        if live.size == 0:
            break
        if tilt is None:
            mats, vecs = law.draw(rng, size)
            mats, vecs = mats[live], vecs[live]
        else:
            uniforms = rng.random(size)[live]
            idx, inc, w_new, _ = tilt.step(uniforms, w[live])
            mats, vecs = law.matrices[idx], law.vectors[idx]
            log_w[live] += inc
            w[live] = w_new

        v[live] += np.exp(log_scale[live])[:, None] * np.einsum("rij,rj->ri", pi[live], vecs)
        level = v[live] @ level_vec
        crossed = level > u
        hit = live[crossed]
        tau[hit] = n
        overshoot[hit] = level[crossed] - u
        direction[hit] = v[hit] / v[hit].sum(axis=1, keepdims=True)
        alive[hit] = False

        still = live[~crossed]
        prod = pi[still] @ mats[~crossed]
        c = prod.sum(axis=1).max(axis=1)
        out = (c > settings.RESCALE_HIGH) | (c < settings.RESCALE_LOW)
        prod[out] /= c[out][:, None, None]
        log_scale[still[out]] += np.log(c[out])
        pi[still] = prod

    censored = alive.copy()
    if censored.any():
        rest = np.flatnonzero(censored)
        totals = v[rest].sum(axis=1, keepdims=True)
        safe = np.where(totals > 0, totals, 1.0)
        direction[rest] = np.where(totals > 0, v[rest] / safe, 1.0 / d)
    return PassageBatch(tau, censored, overshoot, direction, log_w, lineage(seed, block, size))


def _forward_block(law: MatrixQLaw, n: int, seed: int, block: int, size: int) -> np.ndarray:
    rng = block_generator(seed, block)
    v = np.zeros((size, law.d))
    for _ in range(n):
        mats, vecs = law.draw(rng, size)
        v = np.einsum("rij,rj->ri", mats, v) + vecs
    return v


def _product_block(law: MatrixQLaw, n: int, x: np.ndarray, y: Optional[np.ndarray],
                   tilt: Optional[TiltKernel], seed: int, block: int, size: int) -> ProductBatch:
    """log|M_n ... M_1 x| (equal in law to log|Pi_n x|), plainly or under the forward tilt."""
    rng = block_generator(seed, block)
    dirs = np.broadcast_to(x / x.sum(), (size, law.d)).copy()
    log_norm = np.full(size, math.log(x.sum()))
    log_w = np.zeros(size)
    for _ in range(n):
        if tilt is None:
            mats, _ = law.draw(rng, size)
            images = np.einsum("rij,rj->ri", mats, dirs)
            c = images.sum(axis=1)
            dirs = images / c[:, None]
            log_norm += np.log(c)
        else:
            idx, inc, dirs, log_c = tilt.step(rng.random(size), dirs)
            log_w += inc
            log_norm += log_c
    log_inner = None
    if y is not None:
        with np.errstate(divide="ignore"):
            log_inner = log_norm + np.log(dirs @ y)
    return ProductBatch(log_norm, log_inner, log_w)


def _forward_trace_block(law: MatrixQLaw, n_max: int, tilt: TiltKernel,
                         seed: int, block: int, size: int) -> ForwardTrace:
    rng = block_generator(seed, block)
    d = law.d
    log_terms = np.empty((n_max, size))
    directions = np.empty((n_max, size, d))
    log_w = np.zeros(size)
    _, v = law.draw(rng, size)
    log_scale = np.zeros(size)

    for n in range(1, n_max + 1):
        if n > 1:
            totals = v.sum(axis=1)
            dirs = np.where(totals[:, None] > 0, v / np.where(totals > 0, totals, 1.0)[:, None], 1.0 / d)
            idx, inc, _, _ = tilt.step(rng.random(size), dirs)
            log_w += inc
            v = np.einsum("rij,rj->ri", law.matrices[idx], v) + law.vectors[idx] * np.exp(-log_scale)[:, None]
        totals = v.sum(axis=1)
        big = totals > OVERFLOW_LEVEL
        v[big] /= totals[big][:, None]
        log_scale[big] += np.log(totals[big])
        totals = v.sum(axis=1)
        with np.errstate(divide="ignore"):
            log_terms[n - 1] = log_w + tilt.s * (np.log(totals) + log_scale)
        directions[n - 1] = np.where(totals[:, None] > 0, v / np.where(totals > 0, totals, 1.0)[:, None], 1.0 / d)
    return ForwardTrace(log_terms, directions, tilt.s)


# ============== Service ==============

class SimulationService:

    def forward_step(self, state: PathState, M, Q) -> PathState:
        """V <- M V + Q, direction <- M.direction, log|G_n x0| accumulated."""
        m = np.atleast_2d(np.asarray(M, dtype=float))
        q = np.atleast_1d(np.asarray(Q, dtype=float))
        model_service.op_norm(m)
        model_service.vec_norm(q)
        v = m @ state.V + q * math.exp(-state.log_scale)
        log_scale = state.log_scale
        total = v.sum()
        if total > OVERFLOW_LEVEL:
            v = v / total
            log_scale += math.log(total)
        image_norm = float((m @ state.direction).sum())
        direction = model_service.project(m, state.direction)
        return PathState(
            n=state.n + 1,
            V=v,
            direction=direction,
            log_scale=log_scale,
            log_norm=state.log_norm + math.log(image_norm),
            stream=state.stream,
        )

    def default_max_steps(self, u: float, model: Optional[RateModel]) -> int:
        if model is not None and model.rho is not None and u > 1:
            return max(1, math.ceil(settings.CENSOR_FACTOR * model.rho * math.log(u)))
        return settings.MAX_STEPS_FALLBACK

    def _level_vector(self, law: MatrixQLaw, y) -> np.ndarray:
        if y is None:
            return np.ones(law.d)
        vec = np.asarray(y, dtype=float)
        if vec.shape != (law.d,) or np.any(vec < 0) or vec.sum() <= 0:
            raise InputError(f"direction y must be a nonnegative nonzero {law.d}-vector, got {vec.tolist()}")
        return vec

    def simulate_passages(
        self,
        law: MatrixQLaw,
        u: float,
        samples: int,
        seed: int,
        max_steps: Optional[int] = None,
        y=None,
        s: float = 0.0,
        solution: Optional[SpectralSolution] = None,
        model: Optional[RateModel] = None,
        workers: int = 1,
    ) -> PassageBatch:
        """
        First passage times of |V_n| (or <y, V_n>) over u for `samples` replicates.

        s != 0 tilts the matrix increments with the conjugate eigen-pair at s;
        weights are exact likelihood ratios evaluated at the stopping time.
        """
        if u <= 0:
            raise InputError(f"threshold u must be positive, got {u}")
        max_steps = max_steps or self.default_max_steps(u, model)
        if max_steps < 1:
            raise InputError("max_steps must be at least 1")
        level_vec = self._level_vector(law, y)

        tilt = None
        if s != 0.0:
            spectral_service.require_finite(law)
            if solution is None or solution.s != s:
                solution = model.solution(s) if model is not None else spectral_service.transfer_fixed_point(law, s)
            tilt = TiltKernel.for_passages(law, solution)

        tasks = [(law, u, level_vec, max_steps, tilt, seed, block, size)
                 for block, size in block_layout(samples, settings.BLOCK_SIZE)]
        batch = PassageBatch.concat(run_blocks(_passage_block, tasks, workers), u=u, s=s)

        n_censored = int(batch.censored.sum())
        if n_censored:
            logger.warning("%d of %d replicates censored at max_steps=%d (u=%.6g)",
                           n_censored, samples, max_steps, u)
        return batch

    def _check_shared_noise(self, law: MatrixQLaw, other: MatrixQLaw) -> None:
        if law.d != other.d:
            raise InputError(f"laws {law.name} and {other.name} differ in dimension ({law.d} vs {other.d})")
        if law.finite_support and other.finite_support:
            if law.n_atoms == other.n_atoms and np.array_equal(law.probs, other.probs):
                return
        elif isinstance(law.sampler, GaussianGarchSampler) and isinstance(other.sampler, GaussianGarchSampler):
            return
        raise InputError(f"laws {law.name} and {other.name} are not driven by the same noise "
                         "(atom probabilities or noise kind differ)")

    def simulate_shared_noise(
        self,
        law: MatrixQLaw,
        other: MatrixQLaw,
        u: float,
        samples: int,
        seed: int,
        max_steps: Optional[int] = None,
        y=None,
        model: Optional[RateModel] = None,
        other_model: Optional[RateModel] = None,
        workers: int = 1,
    ) -> SharedNoisePassages:
        """
        Passage times of two laws over u under common random numbers.

        Both laws consume one uniform (atoms) or one normal (Gaussian GARCH)
        per replicate and step from the same stream, so atom k of `law` and
        atom k of `other` fire together.
        """
        self._check_shared_noise(law, other)
        max_steps = max_steps or max(self.default_max_steps(u, model), self.default_max_steps(u, other_model))
        first = self.simulate_passages(law, u, samples, seed, max_steps=max_steps, y=y, workers=workers)
        second = self.simulate_passages(other, u, samples, seed, max_steps=max_steps, y=y, workers=workers)
        return SharedNoisePassages(first, second)

    def simulate_tau(self, law: MatrixQLaw, u: float, max_steps: Optional[int] = None, seed: int = 0,
                     y=None, model: Optional[RateModel] = None) -> PassageSample:
        return self.simulate_passages(law, u, 1, seed, max_steps=max_steps, y=y, model=model).records()[0]

    def simulate_tau_tilted(self, law: MatrixQLaw, u: float, s: float, spectral: SpectralSolution,
                            max_steps: Optional[int] = None, seed: int = 0, y=None,
                            model: Optional[RateModel] = None) -> PassageSample:
        return self.simulate_passages(law, u, 1, seed, max_steps=max_steps, y=y, s=s,
                                      solution=spectral, model=model).records()[0]

    def sample_V(self, law: MatrixQLaw, n: int, samples: int, seed: int, workers: int = 1,
                 model: Optional[RateModel] = None) -> np.ndarray:
        """Draws of V*_n, equal in law to V_n."""
        if n < 1:
            raise InputError("n must be at least 1")
        if model is not None and model.drift >= 0:
            logger.warning("law %s is not contractive (Lambda'(0) = %.4g): V_n does not settle",
                           law.name, model.drift)
        tasks = [(law, n, seed, block, size) for block, size in block_layout(samples, settings.BLOCK_SIZE)]
        return np.concatenate(run_blocks(_forward_block, tasks, workers))

    def simulate_products(
        self,
        law: MatrixQLaw,
        n: int,
        samples: int,
        seed: int,
        x=None,
        y=None,
        s: float = 0.0,
        solution: Optional[SpectralSolution] = None,
        workers: int = 1,
    ) -> ProductBatch:
        """log|Pi_n x| and log<y, Pi_n x> draws with log-weights (zero when untilted)."""
        x = np.full(law.d, 1.0 / law.d) if x is None else np.asarray(x, dtype=float)
        y = None if y is None else self._level_vector(law, y)
        tilt = None
        if s != 0.0:
            spectral_service.require_finite(law)
            solution = solution if solution is not None and solution.s == s else \
                spectral_service.transfer_fixed_point(law, s)
            tilt = TiltKernel.for_products(law, solution)
        tasks = [(law, n, x, y, tilt, seed, block, size)
                 for block, size in block_layout(samples, settings.BLOCK_SIZE)]
        parts = run_blocks(_product_block, tasks, workers)
        return ProductBatch(
            log_norm=np.concatenate([p.log_norm for p in parts]),
            log_inner=None if y is None else np.concatenate([p.log_inner for p in parts]),
            log_weight=np.concatenate([p.log_weight for p in parts]),
        )

    def forward_trace(self, law: MatrixQLaw, solution: SpectralSolution, n_max: int, samples: int,
                      seed: int, workers: int = 1) -> ForwardTrace:
        """Tilted forward-process terms weight * |V*_n|^s for n = 1..n_max."""
        spectral_service.require_finite(law)
        tilt = TiltKernel.for_products(law, solution)
        tasks = [(law, n_max, tilt, seed, block, size)
                 for block, size in block_layout(samples, settings.BLOCK_SIZE)]
        parts = run_blocks(_forward_trace_block, tasks, workers)
        return ForwardTrace(
            log_terms=np.concatenate([p.log_terms for p in parts], axis=1),
            directions=np.concatenate([p.directions for p in parts], axis=1),
            s=solution.s,
        )


# Singleton instance
simulation_service = SimulationService()

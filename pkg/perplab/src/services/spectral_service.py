"""
Spectral Service - Transfer operators on the unit simplex.

Pipeline:
1. Discretize the simplex (SimplexGrid)
2. Assemble P_s = sum_k p_k |M_k x|^s (interpolation at M_k.x) as a sparse matrix
3. Power-iterate right/left eigenvectors; polish kappa with the two-sided Rayleigh quotient
4. Repeat on the transposed atoms for the conjugate eigenmeasure
5. Differentiate Lambda = log kappa, find alpha, calibrate a RateModel
"""

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.optimize import brentq
from scipy.spatial import cKDTree
from scipy.stats import qmc

from src.config import settings
from src.errors import (
    DegenerateActionError,
    InputError,
    InterpolationError,
    MomentRangeError,
    NoPositiveRootError,
    NonConvexityError,
    OutsideRegimeError,
    SpectralConvergenceError,
    SpectralMismatchError,
)
from src.schemas.law import MatrixQLaw
from src.schemas.results import KappaEstimate, SpectralRow
from src.services.model_service import model_service
from src.utils import numerics
from src.utils.parallel import run_blocks
from src.utils.rng import block_generator, block_layout

logger = logging.getLogger(__name__)

SIMPLEX_ATOL = 1e-9
SLOPE_MARGIN = 1e-9
DRIFT_TOL = 1e-9
MAX_DERIV_ORDER = 5  # Lambda derivatives the Cramer series uses


# ============== Simplex discretization ==============

@dataclass(eq=False)
class SimplexGrid:
    """Nodes on the positive unit simplex with positive quadrature weights summing to 1."""
    d: int
    points: np.ndarray
    weights: np.ndarray
    resolution: int
    method: str  # "point" | "linear" | "barycentric" | "nearest"

    @classmethod
    def build(cls, d: int, resolution: Optional[int] = None) -> "SimplexGrid":
        if d == 1:
            return cls(1, np.ones((1, 1)), np.ones(1), 1, "point")

        if d == 2:
            n = resolution or settings.GRID_RESOLUTION_D2
            t = np.arange(n + 1) / n
            points = np.column_stack([t, 1.0 - t])
            weights = np.full(n + 1, 1.0)
            weights[[0, -1]] = 0.5
            return cls(2, points, weights / weights.sum(), n, "linear")

        if d == 3:
            n = resolution or settings.GRID_RESOLUTION_D3
            ij = [(i, j) for i in range(n + 1) for j in range(n + 1 - i)]
            points = np.array([(i / n, j / n, (n - i - j) / n) for i, j in ij])
            return cls(3, points, np.full(len(points), 1.0 / len(points)), n, "barycentric")

        # Dirichlet(1,...,1) quasi-random nodes plus the vertices and the barycenter
        n = resolution or settings.GRID_NODES_HIGH_D
        u = qmc.Sobol(d=d, scramble=True, seed=0).random(n)
        e = -np.log(np.clip(u, 1e-12, 1.0))
        nodes = e / e.sum(axis=1, keepdims=True)
        points = np.vstack([np.eye(d), np.full((1, d), 1.0 / d), nodes])
        return cls(d, points, np.full(len(points), 1.0 / len(points)), n, "nearest")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def agreement_floor(self) -> float:
        """Relative primal vs conjugate kappa gap the discretization allows; shrinks with the mesh."""
        if self.method == "point":
            return 0.0
        rtol = settings.SPECTRAL_AGREEMENT_RTOL
        if self.method == "linear":
            return rtol * (settings.GRID_RESOLUTION_D2 / self.resolution) ** 2
        if self.method == "barycentric":
            return rtol * (settings.GRID_RESOLUTION_D3 / self.resolution) ** 2
        return rtol * (settings.GRID_NODES_HIGH_D / self.resolution) ** (1.0 / (self.d - 1))

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.points)

    @cached_property
    def _tri_index(self) -> np.ndarray:
        n = self.resolution
        index = -np.ones((n + 1, n + 1), dtype=np.int64)
        k = 0
        for i in range(n + 1):
            for j in range(n + 1 - i):
                index[i, j] = k
                k += 1
        return index

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_tree", None)
        state.pop("_tri_index", None)
        return state

    def locate(self, x: np.ndarray) -> sparse.csr_matrix:
        """Sparse (m, N) interpolation matrix: row i holds the node weights of direction x[i]."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = x.shape[0]
        if x.shape[1] != self.d or not np.all(np.isfinite(x)):
            raise InterpolationError(f"cannot locate directions of shape {x.shape} on a d={self.d} grid")
        if np.any(x < -SIMPLEX_ATOL) or np.any(np.abs(x.sum(axis=1) - 1.0) > 1e-6):
            raise InterpolationError("directions must lie on the unit simplex")

        if self.method == "point":
            return sparse.csr_matrix((np.ones(m), (np.arange(m), np.zeros(m, dtype=np.int64))), shape=(m, 1))

        if self.method == "linear":
            n = self.resolution
            pos = np.clip(x[:, 0], 0.0, 1.0) * n
            i = np.clip(np.floor(pos).astype(np.int64), 0, n - 1)
            frac = pos - i
            rows = np.repeat(np.arange(m), 2)
            cols = np.column_stack([i, i + 1]).ravel()
            vals = np.column_stack([1.0 - frac, frac]).ravel()
            return sparse.csr_matrix((vals, (rows, cols)), shape=(m, self.size))

        if self.method == "barycentric":
            return self._locate_triangular(x)

        _, nearest = self._tree.query(x)
        return sparse.csr_matrix((np.ones(m), (np.arange(m), nearest)), shape=(m, self.size))

    def _locate_triangular(self, x: np.ndarray) -> sparse.csr_matrix:
        """Barycentric weights on the regular triangulation of the d = 3 simplex."""
        n = self.resolution
        m = x.shape[0]
        ua = np.clip(x[:, 0], 0.0, 1.0) * n
        ub = np.clip(x[:, 1], 0.0, 1.0) * n
        i = np.clip(np.floor(ua).astype(np.int64), 0, n - 1)
        j = np.clip(np.floor(ub).astype(np.int64), 0, n - 1)

        # on the far edge both fractions vanish; step back into a valid cell
        over = i + j >= n
        shift_i = over & (i > 0)
        shift_j = over & ~shift_i
        i = i - shift_i
        j = j - shift_j
        fa = ua - i
        fb = ub - j

        upper = (fa + fb > 1.0) & (i + j <= n - 2)
        v0 = np.where(upper[:, None], np.column_stack([i + 1, j + 1]), np.column_stack([i, j]))
        w0 = np.where(upper, fa + fb - 1.0, 1.0 - fa - fb)
        w1 = np.where(upper, 1.0 - fb, fa)  # vertex (i+1, j)
        w2 = np.where(upper, 1.0 - fa, fb)  # vertex (i, j+1)

        idx = self._tri_index
        cols = np.column_stack([idx[v0[:, 0], v0[:, 1]], idx[i + 1, j], idx[i, j + 1]])
        vals = np.clip(np.column_stack([w0, w1, w2]), 0.0, None)
        vals /= vals.sum(axis=1, keepdims=True)
        if np.any(cols < 0):
            raise InterpolationError("direction fell outside the triangulated simplex")
        rows = np.repeat(np.arange(m), 3)
        return sparse.csr_matrix((vals.ravel(), (rows, cols.ravel())), shape=(m, self.size))

    def interpolate(self, values: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.locate(x) @ values


# ============== Transfer operator ==============

class TransferOperator:
    """
    Discretized P_s phi(x) = sum_k p_k |M_k x|^s phi(M_k.x).

    Interpolation matrices W_k and log|M_k x_j| are computed once; P_s is the
    sparse sum of diag(p_k |M_k x|^s) W_k.
    """

    def __init__(self, law: MatrixQLaw, grid: SimplexGrid, conjugate: bool = False):
        mats = law.transposed if conjugate else law.matrices
        images = np.einsum("kij,nj->kni", mats, grid.points)
        norms = images.sum(axis=2)
        if np.any(norms <= 0):
            k, j = np.argwhere(norms <= 0)[0]
            raise DegenerateActionError(f"atom {k} maps grid node {grid.points[j].tolist()} to 0")
        self.grid = grid
        self.conjugate = conjugate
        self.log_norms = np.log(norms)
        self.log_probs = np.log(law.probs)
        self.interp = [grid.locate(images[k] / norms[k][:, None]) for k in range(len(mats))]

    def matrix(self, s: float) -> sparse.csr_matrix:
        out = None
        for k, w in enumerate(self.interp):
            scaled = sparse.diags(np.exp(self.log_probs[k] + s * self.log_norms[k])) @ w
            out = scaled if out is None else out + scaled
        return out.tocsr()

    def power_iteration(
        self,
        s: float,
        tol: float,
        residual_tol: float,
        max_iter: int,
        r0: Optional[np.ndarray] = None,
        nu0: Optional[np.ndarray] = None,
    ) -> Tuple[float, np.ndarray, np.ndarray, float, int]:
        """Right eigenvector r, left eigenvector nu (probability) and kappa; residuals relative to kappa."""
        P = self.matrix(s)
        PT = P.T.tocsr()
        n = P.shape[0]
        r = np.ones(n) if r0 is None else r0 / r0.max()
        nu = np.full(n, 1.0 / n) if nu0 is None else nu0 / nu0.sum()
        kappa_prev = math.nan

        for it in range(1, max_iter + 1):
            pr = P @ r
            pn = PT @ nu
            kappa = float(nu @ pr) / float(nu @ r)
            res_r = float(np.abs(pr - kappa * r).max() / (kappa * r.max()))
            res_n = float(np.abs(pn - kappa * nu).sum() / (kappa * nu.sum()))
            residual = max(res_r, res_n)
            stalled = abs(kappa - kappa_prev) <= tol * kappa and residual <= math.sqrt(residual_tol)
            if residual <= residual_tol or stalled:
                return kappa, r / r.max(), nu / nu.sum(), res_r, it
            kappa_prev = kappa
            r = pr / pr.max()
            nu = pn / pn.sum()

        raise SpectralConvergenceError(
            f"power iteration at s={s:g} did not converge in {max_iter} iterations (residual {residual:.3g})"
        )


# ============== Solutions ==============

@dataclass(frozen=True, eq=False)
class SpectralSolution:
    """Eigen-objects of P_s and P*_s on a grid. r is normalized so that nu(r) = nu_r."""
    s: float
    kappa: float
    kappa_conjugate: float
    r: np.ndarray
    nu: np.ndarray
    nu_star: np.ndarray
    r_star: np.ndarray
    residual: float
    grid: SimplexGrid
    iterations: int = 0
    method: str = "power-iteration"
    nu_r: float = 1.0

    def r_at(self, x) -> np.ndarray:
        """r_s at arbitrary directions by grid interpolation."""
        return self.grid.interpolate(self.r, x)

    def r_star_at(self, x) -> np.ndarray:
        """r*_s(x) = sum_j nu_j <x, y_j>^s, evaluated exactly for each row of x."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.power(x @ self.grid.points.T, self.s) @ self.nu

    def rescaled(self, factor: float) -> "SpectralSolution":
        return replace(self, r=self.r * factor, nu_r=self.nu_r * factor)


@dataclass(frozen=True)
class AlphaSolution:
    alpha: float
    rho: float
    sigma_alpha: float
    lambda_at_alpha: float
    bracket: Tuple[float, float]


class PressureFunction:
    """Lambda(s) = log kappa(s) on a fixed grid, with kappa values cached per s."""

    def __init__(self, law: MatrixQLaw, grid: Optional[SimplexGrid] = None):
        spectral_service.require_finite(law)
        self.law = law
        self.grid = grid or SimplexGrid.build(law.d)
        self.operator = TransferOperator(law, self.grid)
        self._kappa: Dict[float, float] = {}
        self._derivs: Dict[Tuple[float, int], np.ndarray] = {}
        self._warm: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def kappa(self, s: float) -> float:
        s = float(s)
        if s not in self._kappa:
            spectral_service.check_moment_range(self.law, s)
            r0, nu0 = self._warm or (None, None)
            kappa, r, nu, _, _ = self.operator.power_iteration(
                s, settings.POWER_TOL, settings.POWER_RESIDUAL_TOL, settings.POWER_MAX_ITER, r0, nu0
            )
            self._warm = (r, nu)
            self._kappa[s] = kappa
        return self._kappa[s]

    def __call__(self, s: float) -> float:
        return math.log(self.kappa(s))

    def derivatives(self, s: float, order: int) -> np.ndarray:
        key = (float(s), order)
        if key not in self._derivs:
            self._derivs[key] = spectral_service.lambda_derivs(self, s, order)
        return self._derivs[key]


# ============== Rate model ==============

@dataclass(eq=False)
class RateModel:
    """
    Calibrated asymptotic engine of a finite-support law.

    regime is "kesten" (alpha > 0 exists), "transient" (Lambda'(0) > 0, alpha = 0,
    rho = 1/Lambda'(0)), "light" (Lambda < 0 on the computable range) or
    "critical" (Lambda'(0) = 0).
    """
    law: MatrixQLaw
    pressure: PressureFunction
    regime: str
    alpha: Optional[float]
    rho: Optional[float]
    sigma_alpha: Optional[float]
    drift: float
    s_grid: List[float] = field(default_factory=list)
    _solutions: Dict[float, SpectralSolution] = field(default_factory=dict, repr=False)
    _slopes: Dict[float, float] = field(default_factory=dict, repr=False)

    @property
    def grid(self) -> SimplexGrid:
        return self.pressure.grid

    @property
    def s_cap(self) -> float:
        cap = settings.S_MAX_DEFAULT
        if self.law.s_max is not None:
            cap = min(cap, self.law.s_max)
        return cap

    def Lambda(self, s: float) -> float:
        return self.pressure(s)

    def derivs(self, s: float, order: int = 5) -> np.ndarray:
        return self.pressure.derivatives(s, order)

    def sigma(self, s: float) -> float:
        return math.sqrt(max(self.derivs(s, 2)[2], 0.0))

    def solution(self, s: float) -> SpectralSolution:
        s = float(s)
        if s not in self._solutions:
            self._solutions[s] = spectral_service.transfer_fixed_point(self.law, s, self.grid)
        return self._solutions[s]

    def s_of_slope(self, q: float) -> float:
        """s with Lambda'(s) = q, by bracketed root finding (Lambda' is increasing)."""
        if q in self._slopes:
            return self._slopes[q]
        f = lambda s: self.derivs(s, 1)[1] - q
        top = 0.95 * self.s_cap
        bottom = -0.5 * settings.S_MAX_DEFAULT
        hi = min(2.0, top)
        while f(hi) <= SLOPE_MARGIN:
            if hi >= top:
                raise OutsideRegimeError(f"slope {q:.6g} is not below sup Lambda' on s <= {top:g}")
            hi = min(2 * hi, top)
        lo = -1.0
        while f(lo) >= -SLOPE_MARGIN:
            if lo <= bottom:
                raise OutsideRegimeError(f"slope {q:.6g} is not above inf Lambda' on s >= {bottom:g}")
            lo = max(2 * lo, bottom)
        s = brentq(f, lo, hi, xtol=1e-13, rtol=1e-14)
        self._slopes[q] = s
        return s

    def s_of_beta(self, beta: float) -> float:
        if beta <= 0:
            raise OutsideRegimeError(f"beta must be positive, got {beta}")
        return self.s_of_slope(1.0 / beta)

    @cached_property
    def lambda_table(self) -> pd.DataFrame:
        return spectral_service.lambda_table(self, self.s_grid)


# ============== Service ==============

class SpectralService:

    def require_finite(self, law: MatrixQLaw) -> None:
        if not law.finite_support:
            raise InputError(f"law {law.name} is sampler-only; this computation needs finite support")

    def check_moment_range(self, law: MatrixQLaw, s: float) -> None:
        if law.s_max is not None and s >= law.s_max:
            raise MomentRangeError(f"s={s:g} outside the declared moment range s < {law.s_max:g}")

    def transfer_fixed_point(
        self,
        law: MatrixQLaw,
        s: float,
        grid: Optional[SimplexGrid] = None,
        tol: Optional[float] = None,
        max_iter: Optional[int] = None,
    ) -> SpectralSolution:
        """
        Solve P_s r = kappa r, nu P_s = kappa nu and the conjugate problem on P*_s.

        r is normalized so that nu(r) = 1; r* is evaluated from nu exactly.
        """
        self.require_finite(law)
        self.check_moment_range(law, s)
        for k, m in enumerate(law.matrices):
            if not model_service.is_allowable(m):
                raise DegenerateActionError(f"atom {k} of law {law.name} is not allowable")

        grid = grid or SimplexGrid.build(law.d)
        tol = settings.POWER_TOL if tol is None else tol
        max_iter = settings.POWER_MAX_ITER if max_iter is None else max_iter
        res_tol = settings.POWER_RESIDUAL_TOL

        kappa, r, nu, residual, iters = TransferOperator(law, grid).power_iteration(s, tol, res_tol, max_iter)
        kappa_c, _, nu_star, _, _ = TransferOperator(law, grid, conjugate=True).power_iteration(
            s, tol, res_tol, max_iter
        )

        agreement = max(10 * tol, grid.agreement_floor)
        if abs(kappa - kappa_c) > agreement * kappa:
            raise SpectralMismatchError(
                f"kappa({s:g}) = {kappa:.12g} from P_s but {kappa_c:.12g} from P*_s"
            )

        r = r / float(nu @ r)
        solution = SpectralSolution(
            s=float(s), kappa=kappa, kappa_conjugate=kappa_c, r=r, nu=nu, nu_star=nu_star,
            r_star=np.zeros(0), residual=residual, grid=grid, iterations=iters,
        )
        solution = replace(solution, r_star=solution.r_star_at(grid.points))
        logger.debug("kappa(%g) = %.15g after %d iterations (residual %.3g)", s, kappa, iters, residual)
        return solution

    def r_star_eval(self, solution: SpectralSolution, y) -> float:
        """r*_s(y) = integral of <y, x>^s against nu_s."""
        y = np.asarray(y, dtype=float)
        if np.any(y < 0):
            raise InputError(f"direction has a negative entry: {y.tolist()}")
        return float(solution.r_star_at(y)[0])

    def lambda_derivs(self, pressure: PressureFunction, s: float, order: int = 2) -> np.ndarray:
        """(Lambda(s), Lambda'(s), ..., Lambda^(order)(s)) by Richardson-extrapolated central differences."""
        if not 0 <= order <= 5:
            raise ValueError("order must be between 0 and 5")
        h = settings.DERIV_BASE_STEP * max(1.0, abs(s))
        reach = 3 * h if order == 5 else 2 * h
        if pressure.law.s_max is not None and s + reach >= pressure.law.s_max:
            raise MomentRangeError(f"stencil around s={s:g} leaves the moment range s < {pressure.law.s_max:g}")

        out = np.empty(order + 1)
        out[0] = pressure(s)
        for k in range(1, order + 1):
            out[k] = numerics.derivative(pressure, s, h, k)
        if order >= 2 and out[2] < -settings.CONVEXITY_TOL:
            raise NonConvexityError(f"Lambda''({s:g}) = {out[2]:.3g} < 0")
        return out

    def solve_alpha(self, pressure: PressureFunction, bracket: Optional[Tuple[float, float]] = None) -> AlphaSolution:
        """Positive root of Lambda with Lambda'(alpha) > 0; the upper end doubles until a sign change."""
        lo, hi = bracket or (settings.ALPHA_BRACKET_LO, settings.ALPHA_BRACKET_HI)
        cap = settings.S_MAX_DEFAULT
        if pressure.law.s_max is not None:
            cap = min(cap, pressure.law.s_max * (1 - 1e-9))
            hi = min(hi, cap)

        if pressure(lo) >= 0:
            raise NoPositiveRootError(f"Lambda({lo:g}) >= 0: no negative drift at the lower bracket end")
        while pressure(hi) <= 0:
            if hi >= cap:
                raise NoPositiveRootError(f"Lambda < 0 on ({lo:g}, {hi:g}]: no positive root")
            hi = min(2 * hi, cap)

        alpha = brentq(pressure, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        derivs = pressure.derivatives(alpha, 2)
        if derivs[1] <= 0:
            raise NoPositiveRootError(f"Lambda'(alpha) = {derivs[1]:.3g} <= 0 at alpha = {alpha:.6g}")
        return AlphaSolution(
            alpha=alpha,
            rho=1.0 / derivs[1],
            sigma_alpha=math.sqrt(max(derivs[2], 0.0)),
            lambda_at_alpha=derivs[0],
            bracket=(lo, hi),
        )

    def calibrate(
        self,
        law: MatrixQLaw,
        grid: Optional[SimplexGrid] = None,
        s_grid: Optional[Sequence[float]] = None,
    ) -> RateModel:
        pressure = PressureFunction(law, grid)
        drift = float(pressure.derivatives(0.0, 2)[1])
        alpha = rho = sigma = None

        if drift < -DRIFT_TOL:
            try:
                root = self.solve_alpha(pressure)
                regime, alpha, rho, sigma = "kesten", root.alpha, root.rho, root.sigma_alpha
            except NoPositiveRootError:
                regime = "light"
        elif drift > DRIFT_TOL:
            regime, alpha, rho = "transient", 0.0, 1.0 / drift
            sigma = math.sqrt(max(pressure.derivatives(0.0, 2)[2], 0.0))
        else:
            regime = "critical"

        if s_grid is None:
            top = 2 * alpha + 1 if alpha else 4.0
            if law.s_max is not None:
                top = min(top, 0.9 * law.s_max)
            s_grid = np.linspace(0.0, top, settings.S_GRID_POINTS).tolist()

        logger.info("calibrated %s: regime=%s alpha=%s rho=%s sigma_alpha=%s",
                    law.name, regime, alpha, rho, sigma)
        return RateModel(law=law, pressure=pressure, regime=regime, alpha=alpha, rho=rho,
                         sigma_alpha=sigma, drift=drift, s_grid=list(s_grid))

    def lambda_table(self, model: RateModel, s_grid: Sequence[float], order: int = 2) -> pd.DataFrame:
        """(s, kappa, Lambda, d1..d{order}, residual) rows, order <= 5; checks discrete convexity."""
        if not 2 <= order <= MAX_DERIV_ORDER:
            raise InputError(f"derivative order must be between 2 and {MAX_DERIV_ORDER}, got {order}")
        rows = []
        for s in s_grid:
            d = model.derivs(s, order)
            row = {"s": float(s), "kappa": math.exp(d[0]), "lambda": d[0]}
            row.update({f"d{k}": d[k] for k in range(1, order + 1)})
            row["residual"] = model.solution(s).residual
            rows.append(row)
        table = pd.DataFrame(rows)
        if len(table) >= 3:
            lam = table["lambda"].to_numpy()
            ss = table["s"].to_numpy()
            slopes = np.diff(lam) / np.diff(ss)
            if np.any(np.diff(slopes) < -settings.CONVEXITY_TOL * np.maximum(1.0, np.abs(slopes[1:]))):
                raise NonConvexityError("Lambda is not convex on the s-grid")
        return table

    def spectral_rows(self, model: RateModel, s_grid: Sequence[float], order: int = 2) -> List[SpectralRow]:
        table = self.lambda_table(model, s_grid, order)
        higher = [f"d{k}" for k in range(3, order + 1)]
        return [SpectralRow(s=r.s, kappa=r.kappa, lam=r["lambda"], d1=r.d1, d2=r.d2, residual=r.residual,
                            **{key: r[key] for key in higher})
                for _, r in table.iterrows()]

    def kappa_mc(self, law: MatrixQLaw, s: float, n: int, samples: int, seed: int,
                 workers: int = 1) -> KappaEstimate:
        """(E ||Pi_n||^s)^(1/n) by Monte Carlo over renormalized products, accumulated in log domain."""
        if n < 1:
            raise InputError("n must be at least 1")
        self.check_moment_range(law, s)
        tasks = [(law, n, seed, block, size) for block, size in block_layout(samples, settings.BLOCK_SIZE)]
        log_norms = np.concatenate(run_blocks(_log_norm_block, tasks, workers))

        x = s * log_norms
        log_mean = numerics.log_mean_exp(x)
        estimate = math.exp(log_mean / n)
        # relative standard error of the sample mean, computed with a common shift
        scaled = np.exp(x - x.max())
        rel_se = scaled.std(ddof=1) / (scaled.mean() * math.sqrt(len(x))) if len(x) > 1 else math.inf
        return KappaEstimate(s=s, n=n, samples=samples, estimate=estimate,
                             std_error=estimate * rel_se / n, seed=seed)


def _log_norm_block(law: MatrixQLaw, n: int, seed: int, block: int, size: int) -> np.ndarray:
    """log ||M_1 ... M_n|| for one block of replicates, renormalizing at every step."""
    rng = block_generator(seed, block)
    prod = np.broadcast_to(np.eye(law.d), (size, law.d, law.d)).copy()
    log_norm = np.zeros(size)
    for _ in range(n):
        mats, _ = law.draw(rng, size)
        prod = prod @ mats
        c = prod.sum(axis=1).max(axis=1)
        prod /= c[:, None, None]
        log_norm += np.log(c)
    return log_norm


# Singleton instance
spectral_service = SpectralService()

"""
Oracle Service - Exact computations on finite-support laws by path enumeration.

Paths are expanded breadth-first, one level per step, carrying
(probability, V_n, Pi_n) for every atom word; children are ordered
path-major then atom, so every result is deterministic. Probabilities
are accumulated with compensated summation. Branches below the pruning
tolerance are dropped only when pruning is enabled, and their mass is
reported alongside the result.
"""

import logging
import math
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config import settings
from src.errors import BudgetExceededError, InputError
from src.schemas.law import MatrixQLaw
from src.schemas.results import Exceedance, PassageLaw, ProductTail, WValue
from src.services.spectral_service import SpectralSolution, spectral_service

logger = logging.getLogger(__name__)

TIE_RTOL = 1e-12


def _fsum(values: np.ndarray) -> float:
    return math.fsum(values.tolist())


class _Frontier:
    """Live paths of an enumeration."""

    def __init__(self, d: int):
        self.prob = np.ones(1)
        self.V = np.zeros((1, d))
        self.Pi = np.eye(d)[None, :, :]
        self.pruned = 0.0

    def __len__(self) -> int:
        return self.prob.size

    def keep(self, mask: np.ndarray) -> None:
        self.prob, self.V, self.Pi = self.prob[mask], self.V[mask], self.Pi[mask]

    def expand(self, law: MatrixQLaw, max_paths: int, prune_tol: float) -> None:
        k = law.n_atoms
        if len(self) * k > max_paths and prune_tol > 0:
            small = self.prob < prune_tol
            self.pruned += _fsum(self.prob[small])
            self.keep(~small)
        if len(self) * k > max_paths:
            raise BudgetExceededError(
                f"enumeration needs {len(self) * k} paths, budget is {max_paths}"
                + ("" if prune_tol > 0 else " (pruning disabled)")
            )
        p, d = len(self), law.d
        self.prob = (self.prob[:, None] * law.probs[None, :]).ravel()
        self.V = (self.V[:, None, :] + np.einsum("pij,kj->pki", self.Pi, law.vectors)).reshape(p * k, d)
        self.Pi = np.einsum("pij,kjl->pkil", self.Pi, law.matrices).reshape(p * k, d, d)


class OracleService:

    def _budget(self, max_paths: Optional[int], prune_tol: Optional[float]) -> Tuple[int, float]:
        return (settings.ORACLE_MAX_PATHS if max_paths is None else max_paths,
                settings.ORACLE_PRUNE_TOL if prune_tol is None else prune_tol)

    def feasible(self, law: MatrixQLaw, n: int, max_paths: Optional[int] = None) -> bool:
        """Whether all k^n atom words fit the path budget."""
        max_paths, _ = self._budget(max_paths, None)
        return law.finite_support and law.n_atoms ** n <= max_paths

    def levels(self, law: MatrixQLaw, n_max: int, max_paths: Optional[int] = None,
               prune_tol: Optional[float] = None) -> Iterator[Tuple[int, _Frontier]]:
        """Yield (n, frontier) for n = 1..n_max with every path alive."""
        spectral_service.require_finite(law)
        max_paths, prune_tol = self._budget(max_paths, prune_tol)
        frontier = _Frontier(law.d)
        for n in range(1, n_max + 1):
            frontier.expand(law, max_paths, prune_tol)
            yield n, frontier

    # ============== Passage times ==============

    def exact_passage_law(self, law: MatrixQLaw, u: float, n_max: int, y=None,
                          max_paths: Optional[int] = None, prune_tol: Optional[float] = None) -> PassageLaw:
        """P(tau_u = n) for n <= n_max and P(tau_u > n_max); absorbed paths leave the frontier."""
        level_vec = np.ones(law.d) if y is None else np.asarray(y, dtype=float)
        pmf: List[Tuple[int, float]] = []
        frontier = None
        for n, frontier in self.levels(law, n_max, max_paths, prune_tol):
            crossed = frontier.V @ level_vec > u
            pmf.append((n, _fsum(frontier.prob[crossed])))
            frontier.keep(~crossed)
        tail = _fsum(frontier.prob) if frontier is not None else 1.0
        pruned = frontier.pruned if frontier is not None else 0.0
        return PassageLaw(u=u, n_max=n_max, pmf=pmf, tail=tail, pruned_mass=pruned)

    def passage_law_frame(self, result: PassageLaw) -> pd.DataFrame:
        frame = pd.DataFrame(result.pmf, columns=["n", "probability"])
        frame["cumulative"] = frame["probability"].cumsum()
        return frame

    # ============== Moments ==============

    def matrix_moment_trace(self, law: MatrixQLaw, s_values: Sequence[float], n_max: int,
                            max_paths: Optional[int] = None) -> np.ndarray:
        """E||Pi_n||^s for n = 1..n_max (rows) and each s (columns)."""
        out = np.empty((n_max, len(s_values)))
        for n, frontier in self.levels(law, n_max, max_paths, prune_tol=0.0):
            norms = frontier.Pi.sum(axis=1).max(axis=1)
            for j, s in enumerate(s_values):
                out[n - 1, j] = _fsum(frontier.prob * np.power(norms, s))
        return out

    def exact_matrix_moment(self, law: MatrixQLaw, s: float, n: int, max_paths: Optional[int] = None) -> float:
        """E||Pi_n||^s."""
        return float(self.matrix_moment_trace(law, [s], n, max_paths)[-1, 0])

    def W_trace(self, law: MatrixQLaw, spectral: SpectralSolution, n_max: int,
                max_paths: Optional[int] = None, prune_tol: Optional[float] = None) -> List[WValue]:
        """E[|V_n|^s r_s(V_n/|V_n|)] / kappa(s)^n for n = 1..n_max, r_s by grid interpolation."""
        s = spectral.s
        out = []
        for n, frontier in self.levels(law, n_max, max_paths, prune_tol):
            norms = frontier.V.sum(axis=1)
            positive = norms > 0
            r_vals = np.zeros(len(frontier))
            if positive.any():
                r_vals[positive] = spectral.r_at(frontier.V[positive] / norms[positive, None])
            with np.errstate(divide="ignore"):
                powered = np.where(positive, np.power(np.where(positive, norms, 1.0), s), 0.0)
            scale = math.exp(-n * math.log(spectral.kappa))
            out.append(WValue(
                s=s,
                n=n,
                w=_fsum(frontier.prob * powered * r_vals) * scale,
                moment_ratio=_fsum(frontier.prob * powered) * scale,
                pruned_mass=frontier.pruned,
            ))
        return out

    def exact_W(self, law: MatrixQLaw, spectral: SpectralSolution, s: float, n: int,
                max_paths: Optional[int] = None) -> WValue:
        if abs(s - spectral.s) > 1e-15:
            raise InputError(f"spectral solution is for s={spectral.s:g}, not s={s:g}")
        return self.W_trace(law, spectral, n, max_paths)[-1]

    # ============== Tails ==============

    def exact_exceedance(self, law: MatrixQLaw, u: float, n: int,
                         ys: Optional[Union[Mapping[str, Sequence[float]], Sequence[Sequence[float]]]] = None,
                         max_paths: Optional[int] = None) -> Exceedance:
        """P(|V_n| > u) and P(<y, V_n> > u) for each requested y."""
        if ys is None:
            ys = {}
        elif not isinstance(ys, Mapping):
            ys = {f"y{i}": y for i, y in enumerate(ys)}
        frontier = None
        for _, frontier in self.levels(law, n, max_paths, prune_tol=0.0):
            pass
        directional: Dict[str, float] = {}
        for label, y in ys.items():
            directional[label] = _fsum(frontier.prob[frontier.V @ np.asarray(y, dtype=float) > u])
        return Exceedance(u=u, n=n, norm=_fsum(frontier.prob[frontier.V.sum(axis=1) > u]),
                          directional=directional)

    def exact_product_tail(self, law: MatrixQLaw, n: int, q: float, x=None, y=None,
                           max_paths: Optional[int] = None) -> ProductTail:
        """P(log|Pi_n x| >= n q) and P(log<y, Pi_n x> >= n q); ties within rounding count as >=."""
        x = np.full(law.d, 1.0 / law.d) if x is None else np.asarray(x, dtype=float)
        frontier = None
        for _, frontier in self.levels(law, n, max_paths, prune_tol=0.0):
            pass
        image = frontier.Pi @ x
        threshold = n * q - TIE_RTOL * max(1.0, abs(n * q))
        with np.errstate(divide="ignore"):
            norm_tail = _fsum(frontier.prob[np.log(image.sum(axis=1)) >= threshold])
            directional = None
            if y is not None:
                directional = _fsum(frontier.prob[np.log(image @ np.asarray(y, dtype=float)) >= threshold])
        return ProductTail(n=n, q=q, norm=norm_tail, directional=directional)


# Singleton instance
oracle_service = OracleService()

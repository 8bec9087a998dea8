"""
Numerical helpers shared by the services: finite-difference stencils with
Richardson extrapolation, plateau detection, and weighted estimators.
"""

import math
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

# Integer offsets of the central stencils: 5 points up to order 4, 7 for order 5.
STENCIL_HALF_WIDTH = {1: 2, 2: 2, 3: 2, 4: 2, 5: 3}
RICHARDSON_LEVELS = 3


@lru_cache(maxsize=None)
def stencil_weights(order: int, half_width: int) -> tuple[float, ...]:
    """Weights w_j with sum_j w_j f(x + j h) = h^order f^(order)(x) + O(h^p)."""
    offsets = np.arange(-half_width, half_width + 1, dtype=float)
    n = offsets.size
    vander = np.vander(offsets, n, increasing=True).T
    rhs = np.zeros(n)
    rhs[order] = math.factorial(order)
    return tuple(np.linalg.solve(vander, rhs))


def stencil_accuracy(order: int, half_width: int) -> int:
    """Leading error exponent of a symmetric central stencil (always even)."""
    p = 2 * half_width + 1 - order
    return p if p % 2 == 0 else p + 1


def stencil_points(s: float, h: float) -> np.ndarray:
    """The abscissae every derivative order draws from: s + j h / 2^r."""
    pts = {s + j * h / 2**r for r in range(RICHARDSON_LEVELS) for j in range(-3, 4)}
    return np.array(sorted(pts))


def derivative(f: Callable[[float], float], s: float, h: float, order: int) -> float:
    """Central difference of the given order, Richardson-extrapolated over two halvings."""
    half = STENCIL_HALF_WIDTH[order]
    weights = stencil_weights(order, half)
    levels = []
    for r in range(RICHARDSON_LEVELS):
        step = h / 2**r
        acc = math.fsum(w * f(s + j * step) for j, w in zip(range(-half, half + 1), weights))
        levels.append(acc / step**order)

    p = stencil_accuracy(order, half)
    while len(levels) > 1:
        factor = 2.0**p
        levels = [(factor * fine - coarse) / (factor - 1.0) for coarse, fine in zip(levels, levels[1:])]
        p += 2
    return levels[0]


def fractional_part(x: float, snap: float = 1e-9) -> float:
    """x - floor(x) in [0, 1), treating values within `snap` of an integer as integers."""
    nearest = round(x)
    if abs(x - nearest) <= snap * max(1.0, abs(x)):
        return 0.0
    return x - math.floor(x)


def log_mean_exp(log_values: np.ndarray) -> float:
    if log_values.size == 0:
        return -math.inf
    return float(logsumexp(log_values) - math.log(log_values.size))


def weighted_mean_se(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Unbiased importance-sampling mean of values * weights and its standard error."""
    terms = np.asarray(values, dtype=float) * np.asarray(weights, dtype=float)
    n = terms.size
    if n == 0:
        return math.nan, math.nan
    mean = float(terms.mean())
    se = float(terms.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


def self_normalized(values: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    """Ratio estimate sum(w f) / sum(w) with its delta-method standard error."""
    w = np.asarray(weights, dtype=float)
    f = np.asarray(values, dtype=float)
    total = w.sum()
    if total <= 0:
        return math.nan, math.nan
    est = float((w * f).sum() / total)
    se = float(math.sqrt(((w * (f - est)) ** 2).sum()) / total)
    return est, se


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    denom = (w**2).sum()
    return float(w.sum() ** 2 / denom) if denom > 0 else 0.0


def plateau(trace: Sequence[float], rtol: float, run: int) -> int | None:
    """Index where `run` successive values first agree within rtol, else None."""
    for i in range(run - 1, len(trace)):
        window = trace[i - run + 1:i + 1]
        ref = abs(window[-1])
        if ref > 0 and max(window) - min(window) <= rtol * ref:
            return i
    return None


def geometric_tail(trace: Sequence[float]) -> tuple[float, float]:
    """
    Extrapolate a nondecreasing sequence whose increments decay geometrically.

    Returns (tail, ratio): the estimated remaining increase past the last
    value and the fitted increment ratio. The tail is inf when increments
    do not decay.
    """
    if len(trace) < 3:
        return math.inf, math.nan
    d1 = trace[-1] - trace[-2]
    d0 = trace[-2] - trace[-3]
    if d1 <= 0:
        return 0.0, 0.0
    if d0 <= 0:
        return math.inf, math.nan
    ratio = d1 / d0
    if ratio >= 1:
        return math.inf, ratio
    return d1 * ratio / (1 - ratio), ratio

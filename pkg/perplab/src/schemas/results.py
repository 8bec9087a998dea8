from datetime import datetime, timezone
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field


# ============== Model Checks ==============

class ConditionReport(BaseModel):
    """Outcome of checking allowability, positivity, column ratio and non-arithmeticity."""
    allowable: bool
    non_allowable_atoms: List[int] = Field(default_factory=list)
    has_positive_product: bool
    witness_length: Optional[int] = None
    witness_atoms: List[int] = Field(default_factory=list, description="Atom indices of the positive product")
    witness_product: Optional[List[List[float]]] = None
    column_ratio_c: Optional[float] = None
    nonarith_heuristic: Literal["pass", "warn"]
    nonarith_evidence: List[float] = Field(default_factory=list, description="log dominant eigenvalues")
    moment_flags: Dict[str, str] = Field(default_factory=dict)
    heuristic: bool = False
    notes: List[str] = Field(default_factory=list)


# ============== Spectral ==============

class SpectralRow(BaseModel):
    s: float
    kappa: float
    lam: float = Field(serialization_alias="lambda")
    d1: float
    d2: float
    d3: Optional[float] = None
    d4: Optional[float] = None
    d5: Optional[float] = None
    residual: float


class KappaEstimate(BaseModel):
    """Monte Carlo estimate of (E ||Pi_n||^s)^(1/n)."""
    s: float
    n: int
    samples: int
    estimate: float
    std_error: float
    seed: int


# ============== Simulation ==============

class PassageSample(BaseModel):
    """One first-passage record."""
    tau: int
    censored: bool
    direction_at_passage: List[float]
    overshoot: float = Field(ge=0)
    weight: float = Field(gt=0)
    seed_lineage: Tuple[int, int, int] = Field(description="(seed, block, index in block)")


# ============== Oracle ==============

class PassageLaw(BaseModel):
    """Exact law of tau_u truncated at n_max."""
    u: float
    n_max: int
    pmf: List[Tuple[int, float]]
    tail: float = Field(description="P(tau_u > n_max)")
    pruned_mass: float = 0.0

    def cdf(self, n: int) -> float:
        return sum(p for k, p in self.pmf if k <= n)

    def prob(self, n: int) -> float:
        return dict(self.pmf).get(n, 0.0)

    def window(self, lo: float, hi: float) -> float:
        """P(lo < tau_u <= hi)."""
        return sum(p for k, p in self.pmf if lo < k <= hi)


class WValue(BaseModel):
    """E[|V_n|^s r_s(V_n/|V_n|)] / kappa(s)^n and the plain moment ratio E|V_n|^s / kappa(s)^n."""
    s: float
    n: int
    w: float
    moment_ratio: float
    pruned_mass: float = 0.0


class Exceedance(BaseModel):
    u: float
    n: int
    norm: float = Field(description="P(|V_n| > u)")
    directional: Dict[str, float] = Field(default_factory=dict, description="P(<y, V_n> > u) per label")


class ProductTail(BaseModel):
    n: int
    q: float
    norm: float = Field(description="P(log|Pi_n x| >= n q)")
    directional: Optional[float] = Field(default=None, description="P(log<y, Pi_n x> >= n q)")


# ============== Asymptotics ==============

class RatePoint(BaseModel):
    beta: float
    s_of_beta: float
    I: float
    I_prime: float
    gammas: List[float] = Field(description="Lambda derivatives of orders 1..5 at s_of_beta")


class ExpansionResult(BaseModel):
    beta: float
    l: float
    expansion: float
    direct: float
    h: float = Field(description="Quadratic and Cramer terms of the expansion")

    @property
    def mismatch(self) -> float:
        return abs(self.expansion - self.direct)


class LDPrediction(BaseModel):
    u: float
    log_u: float
    beta: float
    l: float
    s: float
    chi: float = Field(ge=0, lt=1)
    C: float = Field(gt=0)
    value: float
    variant: str
    rate_point: RatePoint
    exponent: float = Field(description="exponent of u used in value: I(beta), or its expansion when l > 0")
    exponent_direct: float = Field(description="I(beta - l) solved directly")
    value_direct: float
    factor: float = 1.0


class CLTPrediction(BaseModel):
    t: float
    probability: float
    center: float = Field(description="rho log u")
    scale: float = Field(description="sigma_alpha rho^(3/2) sqrt(log u)")
    unconditional: Optional[float] = None

    def standardize(self, n):
        return (n - self.center) / self.scale


class PrefactorEstimate(BaseModel):
    """Estimate of the large-deviation prefactor at s."""
    s: float
    estimator: Literal["oracle", "mc"]
    varkappa: float
    ci: Tuple[float, float]
    limit: float
    limit_trace: List[float]
    trace_errors: List[float] = Field(default_factory=list)
    plateau_reached: bool
    nu_r: float
    flags: List[str] = Field(default_factory=list)


class KestenEstimate(BaseModel):
    alpha: float
    constant: float
    ci: Tuple[float, float]
    slope: float = Field(description="Regression slope of log(u^alpha P(|V|>u)) against log u")
    slope_se: float
    plateau: bool
    u_grid: List[float]
    scaled_tail: List[float]


class HillEstimate(BaseModel):
    alpha: float
    std_error: float
    k: int
    threshold: float


# ============== Reports and Manifests ==============

class VerificationReport(BaseModel):
    """Per-theorem comparison of predicted and empirical quantities."""
    theorem: str
    law_name: str
    law_hash: str
    parameters: Dict[str, Any] = Field(default_factory=dict)
    predicted: Dict[str, Any] = Field(default_factory=dict)
    empirical: Dict[str, Any] = Field(default_factory=dict)
    statistics: Dict[str, Any] = Field(default_factory=dict)
    tolerances: Dict[str, Any] = Field(default_factory=dict)
    verdict: Literal["pass", "warn", "fail"]
    notes: List[str] = Field(default_factory=list)
    seeds: List[int] = Field(default_factory=list)
    runtime_seconds: float = 0.0
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


class ExperimentManifest(BaseModel):
    """Everything needed to re-run an experiment."""
    command: str
    law_path: str
    law_hash: str
    parameters: Dict[str, Any]
    seed: int
    workers: int
    tool_version: str
    outputs: List[str] = Field(default_factory=list)
    runtime_seconds: float = 0.0
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


VOLATILE_FIELDS = frozenset({"created_at", "runtime_seconds"})

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

PROB_ATOL_CONFIG = 1e-9


# ============== Law Configuration Files ==============

class LawAtom(BaseModel):
    """One joint atom (M, Q) with its probability."""
    M: List[List[float]]
    Q: List[float]
    p: float = Field(gt=0)


class Garch12Config(BaseModel):
    """Coefficients of a GARCH(1,2) volatility recursion and its squared-noise law."""
    a0: float
    a1: float
    b1: float
    b2: float
    z2_atoms: Optional[List[Tuple[float, float]]] = Field(
        default=None, description="Finite law of Z^2 as (value, probability) pairs"
    )
    noise: Literal["atoms", "gaussian"] = "atoms"

    @model_validator(mode="after")
    def _noise_present(self):
        if self.noise == "atoms":
            if not self.z2_atoms:
                raise ValueError("z2_atoms required when noise is 'atoms'")
            total = sum(p for _, p in self.z2_atoms)
            if abs(total - 1.0) > PROB_ATOL_CONFIG:
                raise ValueError(f"z2_atoms probabilities sum to {total}, expected 1")
        return self


def _check_mass(probs: List[float], what: str) -> None:
    total = sum(probs)
    if abs(total - 1.0) > PROB_ATOL_CONFIG:
        raise ValueError(f"{what} probabilities sum to {total}, expected 1")


class PerpetuityScenario(BaseModel):
    """One interest-rate scenario: per-currency discount factors and obligations."""
    discount: List[float]
    obligations: List[float]
    p: float = Field(gt=0)


class PerpetuityConfig(BaseModel):
    """Multi-currency pension perpetuity; `exchange` holds the off-diagonal capital shifts."""
    exchange: Optional[List[List[float]]] = None
    scenarios: List[PerpetuityScenario] = Field(min_length=1)

    @model_validator(mode="after")
    def _mass(self):
        _check_mass([sc.p for sc in self.scenarios], "scenario")
        return self


class BranchingEnvironment(BaseModel):
    """Quenched offspring means (row i: type-i parent) and expected immigration."""
    offspring: List[List[float]]
    immigration: List[float]
    p: float = Field(gt=0)


class BranchingConfig(BaseModel):
    environments: List[BranchingEnvironment] = Field(min_length=1)

    @model_validator(mode="after")
    def _mass(self):
        _check_mass([env.p for env in self.environments], "environment")
        return self


class SigmaPiEnvironment(BaseModel):
    """Growth factors per species, interaction effects and inflow of new mass."""
    growth: List[float]
    interaction: Optional[List[List[float]]] = None
    inflow: List[float]
    p: float = Field(gt=0)


class SigmaPiConfig(BaseModel):
    environments: List[SigmaPiEnvironment] = Field(min_length=1)

    @model_validator(mode="after")
    def _mass(self):
        _check_mass([env.p for env in self.environments], "environment")
        return self


BLOCK_KINDS = ("garch12", "perpetuity", "branching", "sigma_pi")  # kinds configured by a block of the same name


class LawConfig(BaseModel):
    """Law configuration file as stored under data/laws."""
    d: int = Field(ge=1)
    kind: Literal["atoms", "garch12", "scalar_atoms", "perpetuity", "branching", "sigma_pi"]
    name: str = "law"
    atoms: Optional[List[LawAtom]] = None
    garch12: Optional[Garch12Config] = None
    perpetuity: Optional[PerpetuityConfig] = None
    branching: Optional[BranchingConfig] = None
    sigma_pi: Optional[SigmaPiConfig] = None
    s_max: Optional[float] = Field(default=None, gt=0, description="Largest s with finite moments, if bounded")
    dependence: Literal["joint", "independent"] = "joint"

    @model_validator(mode="after")
    def _kind_fields(self):
        if self.kind in ("atoms", "scalar_atoms"):
            if not self.atoms:
                raise ValueError(f"kind '{self.kind}' requires a non-empty atoms list")
            if self.kind == "scalar_atoms" and self.d != 1:
                raise ValueError("scalar_atoms laws have d = 1")
            for i, atom in enumerate(self.atoms):
                if len(atom.M) != self.d or any(len(row) != self.d for row in atom.M):
                    raise ValueError(f"atoms[{i}].M is not {self.d}x{self.d}")
                if len(atom.Q) != self.d:
                    raise ValueError(f"atoms[{i}].Q does not have length {self.d}")
            total = sum(atom.p for atom in self.atoms)
            if abs(total - 1.0) > PROB_ATOL_CONFIG:
                raise ValueError(f"atom probabilities sum to {total}, expected 1")
        if self.kind in BLOCK_KINDS and getattr(self, self.kind) is None:
            raise ValueError(f"kind '{self.kind}' requires a {self.kind} block")
        if self.kind == "garch12" and self.d != 2:
            raise ValueError("garch12 laws have d = 2")
        return self

    def content_hash(self) -> str:
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ============== Domain Law ==============

Sampler = Callable[[np.random.Generator, int], Tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class MatrixQLaw:
    """
    Law of the i.i.d. pair (M, Q): nonnegative d x d matrices and d-vectors.

    Finite-support laws carry their atoms (matrices[k], vectors[k], probs[k]);
    M and Q are dependent through the joint atoms. Sampler-only laws carry
    a picklable callable drawing (M, Q) batches instead.
    """
    name: str
    d: int
    matrices: Optional[np.ndarray] = None
    vectors: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    sampler: Optional[Sampler] = field(default=None, repr=False)
    s_max: Optional[float] = None
    dependence: str = "joint"
    law_hash: str = ""

    @property
    def finite_support(self) -> bool:
        return self.matrices is not None

    @property
    def n_atoms(self) -> int:
        return 0 if self.matrices is None else self.matrices.shape[0]

    @cached_property
    def cum_probs(self) -> np.ndarray:
        cum = np.cumsum(self.probs)
        cum[-1] = 1.0
        return cum

    @cached_property
    def transposed(self) -> np.ndarray:
        """Atoms M_k^T, the matrices driving the conjugate operator."""
        return np.ascontiguousarray(np.transpose(self.matrices, (0, 2, 1)))

    def draw_indices(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Atom indices drawn by inverse cdf, one uniform per draw."""
        u = rng.random(size)
        return np.minimum(np.searchsorted(self.cum_probs, u, side="right"), self.n_atoms - 1)

    def draw(self, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
        """Draw `size` pairs: arrays of shape (size, d, d) and (size, d)."""
        if self.finite_support:
            idx = self.draw_indices(rng, size)
            return self.matrices[idx], self.vectors[idx]
        return self.sampler(rng, size)


class GaussianGarchSampler:
    """(M, Q) draws of a GARCH(1,2) law with standard normal innovations."""

    def __init__(self, a0: float, a1: float, b1: float, b2: float):
        self.a0, self.a1, self.b1, self.b2 = a0, a1, b1, b2

    def __call__(self, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
        z2 = rng.standard_normal(size) ** 2
        mats = np.zeros((size, 2, 2))
        mats[:, 0, 0] = self.b1 + self.a1 * z2
        mats[:, 0, 1] = self.b2
        mats[:, 1, 0] = 1.0
        vecs = np.zeros((size, 2))
        vecs[:, 0] = self.a0
        return mats, vecs


DirectionLike = Union[np.ndarray, List[float], Tuple[float, ...]]

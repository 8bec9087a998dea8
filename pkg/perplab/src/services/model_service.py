"""
Model Service - Nonnegative matrices, vectors and laws of (M, Q).

Norm conventions on the positive cone:
- |v| = sum of entries
- ||M|| = max column sum, iota(M) = min column sum
- M.x = Mx / |Mx| (projective action on the unit simplex)

Laws are built from atom lists, GARCH(1,2) coefficients, the perpetuity,
branching and Sigma-Pi growth scenarios, or JSON configs,
then checked for allowability, a strictly positive product, the column
ratio constant and (heuristically) non-arithmeticity.
"""

import hashlib
import json
import logging
from fractions import Fraction
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from src.config import settings
from src.errors import DegenerateActionError, DomainViolationError, InputError
from src.schemas.law import GaussianGarchSampler, LawConfig, MatrixQLaw
from src.schemas.results import ConditionReport

logger = logging.getLogger(__name__)

PROB_ATOL = 1e-12
NONARITH_MAX_DENOMINATOR = 64
NONARITH_MAX_PRODUCTS = 512
SPOT_CHECK_SAMPLES = 64


def _nonneg(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainViolationError(f"{what} has a negative entry: {arr.tolist()}")
    return arr


def _normalized(probs: Sequence[float]) -> List[float]:
    total = sum(probs)
    return [p / total for p in probs]


class ModelService:

    # ============== Norms and projective action ==============

    def vec_norm(self, v) -> float:
        """|v| = sum of entries of a nonnegative vector."""
        return float(_nonneg(v, "vector").sum())

    def op_norm(self, M) -> float:
        """Operator norm for |.|: the maximum column sum."""
        m = np.atleast_2d(_nonneg(M, "matrix"))
        return float(m.sum(axis=0).max())

    def iota(self, M) -> float:
        """inf over the simplex of |Mx|: the minimum column sum."""
        m = np.atleast_2d(_nonneg(M, "matrix"))
        return float(m.sum(axis=0).min())

    def project(self, M, x) -> np.ndarray:
        m = np.atleast_2d(_nonneg(M, "matrix"))
        xv = _nonneg(x, "direction")
        y = m @ xv
        norm = y.sum()
        if norm <= 0:
            raise DegenerateActionError(f"Mx = 0 for x = {xv.tolist()}")
        return y / norm

    def is_allowable(self, M) -> bool:
        """Every row and every column has a strictly positive entry."""
        pos = np.atleast_2d(np.asarray(M)) > 0
        return bool(pos.any(axis=0).all() and pos.any(axis=1).all())

    # ============== Law builders ==============

    def build_law_atoms(
        self,
        atoms: Iterable[Tuple[Sequence, Sequence, float]],
        name: str = "law",
        s_max: Optional[float] = None,
        law_hash: str = "",
    ) -> MatrixQLaw:
        """Finite-support law from joint (M, Q, p) atoms."""
        atoms = list(atoms)
        if not atoms:
            raise InputError("a law needs at least one atom")
        mats = np.array([np.atleast_2d(_nonneg(m, f"atom {i} M")) for i, (m, _, _) in enumerate(atoms)])
        vecs = np.array([np.atleast_1d(_nonneg(q, f"atom {i} Q")) for i, (_, q, _) in enumerate(atoms)])
        probs = np.array([p for _, _, p in atoms], dtype=float)

        d = mats.shape[1]
        if mats.shape[1:] != (d, d) or vecs.shape[1] != d:
            raise InputError(f"atom shapes disagree: M {mats.shape[1:]}, Q {vecs.shape[1:]}")
        if np.any(probs <= 0):
            raise InputError(f"atom probabilities must be positive: {probs.tolist()}")
        total = float(np.sum(probs))
        if abs(total - 1.0) > PROB_ATOL:
            raise InputError(f"probability mass {total:.12g} != 1")

        for arr in (mats, vecs, probs):
            arr.setflags(write=False)
        if not law_hash:
            digest = hashlib.sha256(mats.tobytes() + vecs.tobytes() + probs.tobytes())
            law_hash = digest.hexdigest()[:16]
        return MatrixQLaw(name=name, d=d, matrices=mats, vectors=vecs, probs=probs,
                          s_max=s_max, law_hash=law_hash)

    def build_law_scalar(self, atoms: Iterable[Tuple[float, float, float]], name: str = "scalar",
                         law_hash: str = "") -> MatrixQLaw:
        """d = 1 law from (m, q, p) triples."""
        return self.build_law_atoms((([[m]], [q], p) for m, q, p in atoms), name=name, law_hash=law_hash)

    def build_law_garch12(
        self,
        a0: float,
        a1: float,
        b1: float,
        b2: float,
        noise: Union[str, Sequence[Tuple[float, float]]],
        name: str = "garch12",
        law_hash: str = "",
    ) -> MatrixQLaw:
        """
        GARCH(1,2) volatility law: M = [[b1 + a1 Z^2, b2], [1, 0]], Q = (a0, 0).

        `noise` is either a finite law of Z^2 as (value, probability) pairs or
        "gaussian" for standard normal Z (sampler-only law).
        """
        if a0 <= 0 or b2 <= 0:
            raise InputError(f"GARCH(1,2) needs a0 > 0 and b2 > 0, got a0={a0}, b2={b2}")
        if a1 < 0 or b1 < 0:
            raise InputError(f"GARCH(1,2) needs a1 >= 0 and b1 >= 0, got a1={a1}, b1={b1}")
        if a1 + b1 + b2 >= 1:
            logger.warning("a1 + b1 + b2 = %.6g >= 1: volatility recursion is not stationary", a1 + b1 + b2)

        if isinstance(noise, str):
            if noise != "gaussian":
                raise InputError(f"unknown noise '{noise}'")
            if not law_hash:
                law_hash = hashlib.sha256(repr(("gaussian", a0, a1, b1, b2)).encode()).hexdigest()[:16]
            return MatrixQLaw(name=name, d=2, sampler=GaussianGarchSampler(a0, a1, b1, b2), law_hash=law_hash)

        atoms = []
        for z2, p in noise:
            if z2 < 0:
                raise DomainViolationError(f"Z^2 atom {z2} is negative")
            atoms.append(([[b1 + a1 * z2, b2], [1.0, 0.0]], [a0, 0.0], p))
        return self.build_law_atoms(atoms, name=name, law_hash=law_hash)

    def build_law_perpetuity(
        self,
        scenarios: Iterable[Tuple[Sequence[float], Sequence[float], float]],
        exchange: Optional[Sequence[Sequence[float]]] = None,
        name: str = "perpetuity",
        law_hash: str = "",
    ) -> MatrixQLaw:
        """
        Pension capital in d currencies: M = diag(a) (I + E), Q = obligations.

        Each scenario is (discount factors a, obligations, probability); a_i > 1
        stands for a negative interest rate. E holds the off-diagonal capital
        shifts between currencies, exchange rates included.
        """
        scenarios = list(scenarios)
        if not scenarios:
            raise InputError("a perpetuity law needs at least one scenario")
        d = len(scenarios[0][0])
        shift = np.zeros((d, d)) if exchange is None else _nonneg(exchange, "exchange")
        if shift.shape != (d, d):
            raise InputError(f"exchange matrix must be {d}x{d}, got shape {shift.shape}")
        if np.any(np.diag(shift) != 0):
            raise InputError("exchange matrix must have a zero diagonal")

        atoms = []
        for i, (discount, obligations, p) in enumerate(scenarios):
            a = _nonneg(discount, f"scenario {i} discount")
            if a.shape != (d,) or np.any(a <= 0):
                raise InputError(f"scenario {i}: discount factors must be {d} positive numbers")
            atoms.append((np.diag(a) @ (np.eye(d) + shift), obligations, p))
        return self.build_law_atoms(atoms, name=name, law_hash=law_hash)

    def build_law_branching(
        self,
        environments: Iterable[Tuple[Sequence[Sequence[float]], Sequence[float], float]],
        name: str = "branching",
        law_hash: str = "",
    ) -> MatrixQLaw:
        """
        Quenched mean of a d-type branching process with immigration.

        Environments are (offspring means, immigration means, probability), with
        row i of the offspring matrix holding the mean children of a type-i
        parent. The mean population is a forward process driven by the
        transposed offspring matrices, so M = offspring^T and Q = immigration.
        """
        atoms = [
            (_nonneg(offspring, f"environment {i} offspring").T, immigration, p)
            for i, (offspring, immigration, p) in enumerate(environments)
        ]
        return self.build_law_atoms(atoms, name=name, law_hash=law_hash)

    def build_law_sigma_pi(
        self,
        environments: Iterable[Tuple[Sequence[float], Optional[Sequence[Sequence[float]]], Sequence[float], float]],
        name: str = "sigma_pi",
        law_hash: str = "",
    ) -> MatrixQLaw:
        """Biomass growth of d species: M = diag(growth) + interaction, Q = inflow."""
        atoms = []
        for i, (growth, interaction, inflow, p) in enumerate(environments):
            g = _nonneg(growth, f"environment {i} growth")
            coupling = np.zeros((g.size, g.size)) if interaction is None else \
                _nonneg(interaction, f"environment {i} interaction")
            if coupling.shape != (g.size, g.size):
                raise InputError(f"environment {i}: interaction must be {g.size}x{g.size}")
            atoms.append((np.diag(g) + coupling, inflow, p))
        return self.build_law_atoms(atoms, name=name, law_hash=law_hash)

    def law_from_config(self, config: LawConfig) -> MatrixQLaw:
        law_hash = config.content_hash()
        if config.kind == "garch12":
            g = config.garch12
            noise = "gaussian" if g.noise == "gaussian" else g.z2_atoms
            return self.build_law_garch12(g.a0, g.a1, g.b1, g.b2, noise, name=config.name, law_hash=law_hash)
        if config.kind == "perpetuity":
            block = config.perpetuity
            probs = _normalized([sc.p for sc in block.scenarios])
            law = self.build_law_perpetuity(
                [(sc.discount, sc.obligations, p) for sc, p in zip(block.scenarios, probs)], block.exchange,
                name=config.name, law_hash=law_hash,
            )
        elif config.kind == "branching":
            envs = config.branching.environments
            probs = _normalized([env.p for env in envs])
            law = self.build_law_branching(
                [(env.offspring, env.immigration, p) for env, p in zip(envs, probs)],
                name=config.name, law_hash=law_hash,
            )
        elif config.kind == "sigma_pi":
            envs = config.sigma_pi.environments
            probs = _normalized([env.p for env in envs])
            law = self.build_law_sigma_pi(
                [(env.growth, env.interaction, env.inflow, p) for env, p in zip(envs, probs)],
                name=config.name, law_hash=law_hash,
            )
        else:
            total = sum(a.p for a in config.atoms)
            atoms = [(a.M, a.Q, a.p / total) for a in config.atoms]
            law = self.build_law_atoms(atoms, name=config.name, s_max=config.s_max, law_hash=law_hash)
            if config.dependence == "independent":
                logger.debug("law %s declares independent M and Q; atoms are used as given", config.name)
        if law.d != config.d:
            raise InputError(f"law {config.name} declares d = {config.d} but its matrices are {law.d}x{law.d}")
        return law

    def resolve_law_path(self, law: Union[str, Path]) -> Path:
        """A path to a JSON file, or the name of a bundled law."""
        path = Path(law)
        if path.exists():
            return path
        bundled = settings.DATA_DIR / "laws" / f"{law}.json"
        if bundled.exists():
            return bundled
        raise InputError(f"law file not found: {law}")

    def load_config(self, law: Union[str, Path]) -> Tuple[LawConfig, Path]:
        path = self.resolve_law_path(law)
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise InputError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e
        try:
            return LawConfig(**data), path
        except ValidationError as e:
            first = e.errors()[0]
            loc = ".".join(str(part) for part in first["loc"]) or "<root>"
            raise InputError(f"{path}: {loc}: {first['msg']}") from e

    def load_law(self, law: Union[str, Path]) -> MatrixQLaw:
        config, _ = self.load_config(law)
        return self.law_from_config(config)

    def bundled_laws(self) -> List[str]:
        return sorted(p.stem for p in (settings.DATA_DIR / "laws").glob("*.json"))

    # ============== Conditions ==============

    def check_conditions(self, law: MatrixQLaw, max_product_len: int = 8, seed: int = 0) -> ConditionReport:
        """
        Check allowability, a strictly positive product, the column ratio
        constant and the non-arithmeticity heuristic.

        Sampler-only laws are spot-checked on drawn matrices and the report
        is marked heuristic.
        """
        notes: List[str] = []
        if law.finite_support:
            mats = np.asarray(law.matrices)
            heuristic = False
        else:
            rng = np.random.default_rng(seed)
            mats, _ = law.draw(rng, SPOT_CHECK_SAMPLES)
            heuristic = True
            notes.append(f"sampler-only law: spot checks on {SPOT_CHECK_SAMPLES} draws")

        non_allowable = [i for i, m in enumerate(mats) if not self.is_allowable(m)]
        for i in non_allowable:
            logger.warning("atom %d of law %s is not allowable", i, law.name)

        witness = self._positive_product(mats, max_product_len)
        if witness is None:
            notes.append(f"no strictly positive product of length <= {max_product_len}")
            logger.warning("law %s: no strictly positive product within %d factors", law.name, max_product_len)

        ratio = self._column_ratio(mats)
        if ratio is None:
            notes.append("an atom has a zero entry in some column: column ratio condition not met atom-wise")

        evidence = self._log_perron_roots(mats, max_product_len)
        verdict = self._nonarith_verdict(evidence)
        if verdict == "warn":
            notes.append("log dominant eigenvalues look commensurable: the law may be arithmetic")

        if law.finite_support and law.s_max is None:
            moment_flags = {"all s": "finite (finite support)"}
        elif law.s_max is not None:
            moment_flags = {f"s < {law.s_max:g}": "declared finite", f"s >= {law.s_max:g}": "declared infinite"}
        else:
            moment_flags = {"all s": "not declared (sampler-only law)"}

        return ConditionReport(
            allowable=not non_allowable,
            non_allowable_atoms=non_allowable,
            has_positive_product=witness is not None,
            witness_length=len(witness) if witness else None,
            witness_atoms=list(witness) if witness else [],
            witness_product=self._product(mats, witness).tolist() if witness else None,
            column_ratio_c=ratio,
            nonarith_heuristic=verdict,
            nonarith_evidence=evidence,
            moment_flags=moment_flags,
            heuristic=heuristic,
            notes=notes,
        )

    def _product(self, mats: np.ndarray, indices: Sequence[int]) -> np.ndarray:
        out = np.eye(mats.shape[1])
        for i in indices:
            out = out @ mats[i]
        return out

    def _positive_product(self, mats: np.ndarray, max_len: int) -> Optional[Tuple[int, ...]]:
        """Shortest atom word whose product is strictly positive, by breadth-first search on sign patterns."""
        patterns = [(m > 0).astype(np.int64) for m in mats]
        frontier = [(p, (i,)) for i, p in enumerate(patterns)]
        seen = {p.tobytes() for p, _ in frontier}
        for length in range(1, max_len + 1):
            for pattern, word in frontier:
                if pattern.all():
                    return word
            if length == max_len:
                break
            nxt = []
            for pattern, word in frontier:
                for i, p in enumerate(patterns):
                    new = ((pattern @ p) > 0).astype(np.int64)
                    key = new.tobytes()
                    if key not in seen:
                        seen.add(key)
                        nxt.append((new, word + (i,)))
            frontier = nxt
            if not frontier:
                break
        return None

    def _column_ratio(self, mats: np.ndarray) -> Optional[float]:
        col_min = mats.min(axis=1)
        if np.any(col_min <= 0):
            return None
        return float((mats.max(axis=1) / col_min).max())

    def _log_perron_roots(self, mats: np.ndarray, max_len: int) -> List[float]:
        """log lambda_M over strictly positive products, shortest words first."""
        values: List[float] = []
        frontier = [np.asarray(m) for m in mats]
        count = 0
        for _ in range(min(max_len, 4)):
            nxt = []
            for prod in frontier:
                count += 1
                if np.all(prod > 0):
                    lam = float(np.max(np.abs(np.linalg.eigvals(prod))))
                    values.append(float(np.log(lam)))
                if count >= NONARITH_MAX_PRODUCTS:
                    break
                nxt.extend(prod @ m for m in mats)
            if count >= NONARITH_MAX_PRODUCTS:
                break
            frontier = nxt
        return sorted(set(round(v, 12) for v in values))

    def _nonarith_verdict(self, logs: List[float]) -> str:
        nonzero = [v for v in logs if abs(v) > 1e-12]
        if len(nonzero) < 2:
            return "warn"
        ref = nonzero[0]
        for v in nonzero[1:]:
            ratio = v / ref
            approx = Fraction(ratio).limit_denominator(NONARITH_MAX_DENOMINATOR)
            if abs(ratio - float(approx)) > 1e-9:
                return "pass"
        return "warn"


# Singleton instance
model_service = ModelService()

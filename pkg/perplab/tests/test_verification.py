"""
Tests for the verification checks and their statistics.
"""
import json
import math

import numpy as np
import pytest
from scipy.stats import norm

from src.errors import InputError
from src.config import settings
from src.schemas.results import VOLATILE_FIELDS, PrefactorEstimate
from src.services.model_service import model_service
from src.services.spectral_service import spectral_service
from src.services.verification_service import THEOREMS, verification_service


def _prefactor(s: float) -> PrefactorEstimate:
    return PrefactorEstimate(s=s, estimator="oracle", varkappa=0.5, ci=(0.4, 0.6), limit=1.0,
                             limit_trace=[1.0], plateau_reached=True, nu_r=1.0)


@pytest.fixture(scope="module")
def half_two_model(half_two_law):
    return spectral_service.calibrate(half_two_law)


@pytest.fixture(scope="module")
def deterministic_model(deterministic_law):
    return spectral_service.calibrate(deterministic_law)


# ============== Statistics ==============

def test_ks_point_mass():
    """Test that a point mass at 0 is at KS distance 1/2 from the standard normal."""
    assert verification_service.ks_statistic(np.zeros(50), norm.cdf) == pytest.approx(0.5)


def test_ks_quantile_grid():
    """Test that midpoint normal quantiles are within 1/(2N) of the normal law."""
    z = norm.ppf((np.arange(100) + 0.5) / 100)
    assert verification_service.ks_statistic(z, norm.cdf) <= 0.01


def test_weighted_ks_with_equal_weights():
    """Test that equal weights reproduce the unweighted statistic."""
    z = np.random.default_rng(0).standard_normal(500)
    plain = verification_service.ks_statistic(z, norm.cdf)
    weighted = verification_service.ks_statistic(z, norm.cdf, weights=np.full(500, 3.0))
    assert weighted == pytest.approx(plain, abs=1e-12)


def test_ks_needs_samples():
    """Test that an empty sample is an input error."""
    with pytest.raises(InputError):
        verification_service.ks_statistic(np.array([]), norm.cdf)


def test_hill_on_pareto():
    """Test that the Hill estimator recovers the Pareto tail index."""
    values = np.random.default_rng(1).random(200_000) ** (-1 / 0.7)
    estimate = verification_service.hill_estimate(values)
    assert estimate.k == 2000
    assert estimate.alpha == pytest.approx(0.7, rel=0.1)


def test_hill_rejects_bad_k():
    """Test that k must be smaller than the number of positive values."""
    with pytest.raises(InputError):
        verification_service.hill_estimate(np.arange(1.0, 6.0), k=5)


# ============== Inapplicable checks ==============

def test_kesten_inapplicable_without_root(half_two_law, half_two_model):
    """Test that the Kesten check warns when the law has no positive root."""
    report = verification_service.check_kesten(half_two_law, half_two_model, samples=100)
    assert report.verdict == "warn"
    assert report.notes[0].startswith("inapplicable")


def test_lln_inapplicable_in_light_regime():
    """Test that the LLN check warns when rho is undefined."""
    law = model_service.load_law("contracting_half")
    report = verification_service.check_lln(law, samples=100)
    assert report.verdict == "warn"
    assert "inapplicable" in report.notes[0]


def test_clt_inapplicable_for_transient_law(deterministic_law, deterministic_model):
    """Test that the CLT check warns outside the kesten regime."""
    report = verification_service.check_clt(deterministic_law, deterministic_model, samples=100)
    assert report.verdict == "warn"


def test_ld_and_local_inapplicable_for_critical_law(half_two_law, half_two_model):
    """Test that LD and local checks warn in the critical regime."""
    for check in (verification_service.check_ld, verification_service.check_local):
        report = check(half_two_law, half_two_model, samples=100)
        assert report.verdict == "warn"
        assert report.law_hash == half_two_law.law_hash


def test_matrix_ld_inapplicable_beyond_sup_slope(golden_law, golden_model):
    """Test that q = log 2 is beyond sup Lambda' for the golden-ratio law."""
    report = verification_service.check_matrix_ld(golden_law, golden_model, q=math.log(2))
    assert report.verdict == "warn"
    assert report.parameters["q"] == math.log(2)


# ============== Applicable checks ==============

def test_lln_passes_for_deterministic_growth(deterministic_law, deterministic_model):
    """Test that M = 2 a.s. has tau_u / log u inside the localization window."""
    report = verification_service.check_lln(deterministic_law, deterministic_model, log_u_grid=[5.0, 8.0],
                                            samples=200, seed=3)
    assert report.verdict == "pass"
    assert report.empirical["fraction_outside_window"] == [0.0, 0.0]
    assert report.empirical["mean_tau_over_log_u"] == pytest.approx([8 / 5, 12 / 8])
    assert report.seeds == [3, 4]


def test_kesten_report_structure(golden_law, golden_model):
    """Test that the Kesten report carries the Hill estimate and the burn-in length."""
    report = verification_service.check_kesten(golden_law, golden_model, samples=2000, seed=5)
    assert report.verdict in ("pass", "fail")
    assert report.parameters["n"] == math.ceil(30.0 / (math.log(2) / 2))
    assert report.predicted["alpha"] == pytest.approx(golden_model.alpha)
    assert "hill" in report.empirical
    assert len(report.parameters["u_grid"]) == 4


def test_ld_uses_exact_enumeration(golden_law, golden_model):
    """Test that small thresholds are checked against the exact passage law."""
    beta = golden_model.rho / 2
    report = verification_service.check_ld(golden_law, golden_model, prefactor=_prefactor(golden_model.s_of_beta(beta)),
                                           log_u_grid=[4.0, 6.0, 8.0])
    rows = report.empirical["rows"]
    assert [r["method"] for r in rows] == ["oracle"] * 3
    assert [r["n"] for r in rows] == [math.floor(beta * v + 1e-9) for v in (4.0, 6.0, 8.0)]
    assert all(0.0 <= r["estimate"] <= 1.0 for r in rows)
    assert report.verdict in ("pass", "fail")
    assert report.seeds == []


def test_ld_rejects_empty_horizon(golden_law, golden_model):
    """Test that (beta - l) log u < 1 is refused."""
    s = golden_model.s_of_beta(golden_model.rho / 2)
    with pytest.raises(InputError):
        verification_service.check_ld(golden_law, golden_model, prefactor=_prefactor(s), log_u_grid=[0.5, 1.0])


def test_local_report(golden_law, golden_model):
    """Test that the local check reports window ratios against the local factor."""
    beta = golden_model.rho / 2
    s = golden_model.s_of_beta(beta)
    report = verification_service.check_local(golden_law, golden_model, prefactor=_prefactor(s),
                                              log_u_grid=[4.0, 6.0], a=-2.0, m=1)
    lam = golden_model.Lambda(s)
    assert report.predicted["factor"] == pytest.approx(math.exp(-2 * lam) * math.expm1(lam))
    assert len(report.statistics["relative_errors"]) == 2


def test_clt_notes_arithmetic_warning(golden_law, golden_model):
    """Test that the CLT check runs on the golden-ratio law and flags possible lattice effects."""
    report = verification_service.check_clt(golden_law, golden_model, log_u_grid=[4.0, 6.0], samples=500, seed=2)
    assert any("non-arithmeticity" in note for note in report.notes)
    assert all(0.0 <= k <= 1.0 for k in report.empirical["ks"])
    assert report.verdict in ("pass", "fail")


def test_matrix_ld_exact_rows(golden_law, golden_model):
    """Test that enumerable n use the exact product tail."""
    report = verification_service.check_matrix_ld(golden_law, golden_model, n_grid=[6, 10])
    rows = report.empirical["rows"]
    assert [r["method"] for r in rows] == ["oracle", "oracle"]
    assert all(r["prediction"] > 0 for r in rows)
    assert report.parameters["s"] == pytest.approx(1.0, abs=1e-7)


def test_run_checks_order_and_unknown(half_two_law, half_two_model):
    """Test that checks run in the fixed order and unknown names are refused."""
    reports = verification_service.run_checks(half_two_law, ["matrixld", "kesten"], model=half_two_model,
                                              samples=100, grids={"matrixld": [4, 6]})
    assert [r.theorem for r in reports] == ["kesten", "matrixld"]
    with pytest.raises(InputError):
        verification_service.run_checks(half_two_law, ["bogus"], model=half_two_model)
    assert set(THEOREMS) == {"kesten", "lln", "clt", "ld", "local", "matrixld"}


def _stable_dump(report) -> str:
    return json.dumps(report.model_dump(mode="json", exclude=set(VOLATILE_FIELDS)), sort_keys=True)


def test_report_does_not_depend_on_worker_count(golden_law, golden_model):
    """Test that a report is identical for one and two workers apart from timing fields."""
    kwargs = {"log_u_grid": [4.0, 6.0], "samples": 5000, "seed": 7}
    single = verification_service.check_lln(golden_law, golden_model, workers=1, **kwargs)
    double = verification_service.check_lln(golden_law, golden_model, workers=2, **kwargs)
    assert _stable_dump(single) == _stable_dump(double)
    assert "workers" not in single.model_dump()


def test_run_checks_all_on_kesten_law(golden_law, golden_model, monkeypatch):
    """Test that every check runs end to end on a kesten law and reports a definite verdict."""
    monkeypatch.setattr(settings, "ORACLE_MAX_PATHS", 2**14)
    grids = {"lln": [4.0, 6.0], "clt": [4.0, 6.0], "ld": [4.0, 6.0, 8.0], "local": [4.0, 6.0],
             "matrixld": [6, 10]}
    reports = verification_service.run_checks(golden_law, list(THEOREMS), model=golden_model,
                                              samples=500, seed=1, grids=grids)
    assert [r.theorem for r in reports] == list(THEOREMS)
    for report in reports:
        assert report.law_hash == golden_law.law_hash
        assert report.verdict in ("pass", "warn", "fail")
        assert not any(note.startswith("inapplicable") for note in report.notes)
    ld = reports[THEOREMS.index("ld")]
    assert ld.predicted["varkappa"] > 0
    assert [r["method"] for r in ld.empirical["rows"]] == ["oracle"] * 3

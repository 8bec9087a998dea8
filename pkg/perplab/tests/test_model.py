"""
Tests for norms, projective action, law builders and condition checks.
"""
import json

import numpy as np
import pytest

from src.errors import DegenerateActionError, DomainViolationError, InputError
from src.services.model_service import model_service
from src.services.spectral_service import spectral_service


def test_norms_use_column_sums():
    """Test that the operator norm and iota are the max and min column sums."""
    m = [[1.0, 2.0], [3.0, 4.0]]
    assert model_service.op_norm(m) == 6.0
    assert model_service.iota(m) == 4.0
    assert model_service.vec_norm([0.25, 0.75, 1.0]) == 2.0


def test_negative_entries_are_rejected():
    """Test that a negative entry raises a domain violation."""
    with pytest.raises(DomainViolationError):
        model_service.vec_norm([1.0, -0.5])
    with pytest.raises(DomainViolationError):
        model_service.op_norm([[1.0, -1.0], [0.0, 1.0]])


def test_project_normalizes_image():
    """Test that the projective action returns Mx / |Mx|."""
    out = model_service.project([[1.0, 2.0], [3.0, 4.0]], [0.5, 0.5])
    np.testing.assert_allclose(out, [0.3, 0.7])
    assert out.sum() == pytest.approx(1.0)


def test_project_degenerate_action():
    """Test that Mx = 0 raises DegenerateActionError."""
    with pytest.raises(DegenerateActionError):
        model_service.project([[0.0, 0.0], [0.0, 1.0]], [1.0, 0.0])


def test_allowable_matrices():
    """Test that allowability needs a positive entry in every row and column."""
    assert model_service.is_allowable([[0.0, 1.0], [1.0, 0.0]])
    assert not model_service.is_allowable([[1.0, 1.0], [0.0, 0.0]])


def test_build_law_rejects_bad_mass():
    """Test that probabilities must sum to one."""
    with pytest.raises(InputError):
        model_service.build_law_scalar([(2.0, 1.0, 0.5), (0.25, 1.0, 0.4)])


def test_build_law_hash_is_stable():
    """Test that identical atoms produce identical hashes."""
    a = model_service.build_law_scalar([(2.0, 1.0, 0.5), (0.25, 1.0, 0.5)])
    b = model_service.build_law_scalar([(2.0, 1.0, 0.5), (0.25, 1.0, 0.5)])
    c = model_service.build_law_scalar([(2.0, 1.0, 0.5), (0.5, 1.0, 0.5)])
    assert a.law_hash == b.law_hash
    assert a.law_hash != c.law_hash


def test_law_arrays_are_read_only(golden_law):
    """Test that law atoms cannot be mutated."""
    with pytest.raises(ValueError):
        golden_law.matrices[0, 0, 0] = 5.0


def test_bundled_laws_load():
    """Test that every bundled law loads and validates."""
    names = model_service.bundled_laws()
    assert {"golden_ratio", "half_two", "deterministic_two", "contracting_half", "d2_mixed", "garch12",
            "garch12_alt", "perpetuity_two_currency", "branching_two_type", "sigma_pi_two_species"} <= set(names)
    for name in names:
        law = model_service.load_law(name)
        assert law.finite_support
        assert law.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_garch_atoms(tmp_path):
    """Test that the GARCH(1,2) law has M = [[b1 + a1 z2, b2], [1, 0]] and Q = (a0, 0)."""
    law = model_service.build_law_garch12(0.1, 0.3, 0.4, 0.2, [(1.0, 0.5), (4.0, 0.5)])
    np.testing.assert_allclose(law.matrices[0], [[0.7, 0.2], [1.0, 0.0]])
    np.testing.assert_allclose(law.matrices[1], [[1.6, 0.2], [1.0, 0.0]])
    np.testing.assert_allclose(law.vectors[0], [0.1, 0.0])


def test_garch_requires_positive_a0_b2():
    """Test that a0 = 0 or b2 = 0 is rejected while a1 = 0 is allowed."""
    with pytest.raises(InputError):
        model_service.build_law_garch12(0.0, 0.3, 0.4, 0.2, [(1.0, 1.0)])
    with pytest.raises(InputError):
        model_service.build_law_garch12(0.1, 0.3, 0.4, 0.0, [(1.0, 1.0)])
    law = model_service.build_law_garch12(0.1, 0.0, 0.4, 0.2, [(1.0, 1.0)])
    assert law.n_atoms == 1


def test_gaussian_garch_is_sampler_only():
    """Test that Gaussian noise yields a sampler-only law with valid draws."""
    law = model_service.build_law_garch12(0.1, 0.3, 0.4, 0.2, "gaussian")
    assert not law.finite_support
    mats, vecs = law.draw(np.random.default_rng(1), 16)
    assert mats.shape == (16, 2, 2) and vecs.shape == (16, 2)
    assert np.all(mats[:, 0, 0] >= 0.4)


def test_malformed_config_reports_location(tmp_path):
    """Test that a validation error names the offending field."""
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({
        "d": 1, "kind": "scalar_atoms",
        "atoms": [{"M": [[2.0]], "Q": [1.0], "p": -0.5}, {"M": [[0.5]], "Q": [1.0], "p": 1.5}],
    }))
    with pytest.raises(InputError, match=r"atoms\.0\.p"):
        model_service.load_law(path)


def test_invalid_json_is_input_error(tmp_path):
    """Test that unparsable JSON becomes an InputError."""
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(InputError):
        model_service.load_law(path)


def test_conditions_golden(golden_law):
    """Test that the golden-ratio law is allowable, positive and flagged as possibly arithmetic."""
    report = model_service.check_conditions(golden_law)
    assert report.allowable
    assert report.has_positive_product
    assert report.witness_length == 1
    assert report.nonarith_heuristic == "warn"


def test_conditions_garch_needs_two_factors():
    """Test that the GARCH(1,2) law reaches a positive product at length two."""
    law = model_service.load_law("garch12")
    report = model_service.check_conditions(law)
    assert report.allowable
    assert report.has_positive_product
    assert report.witness_length == 2
    assert report.column_ratio_c is None


def test_conditions_sampler_only_are_heuristic():
    """Test that sampler-only laws get spot checks marked heuristic."""
    law = model_service.build_law_garch12(0.1, 0.3, 0.4, 0.2, "gaussian")
    report = model_service.check_conditions(law)
    assert report.heuristic
    assert report.allowable


def _assert_calibrated_kesten(law):
    report = model_service.check_conditions(law)
    assert report.allowable
    assert report.has_positive_product
    model = spectral_service.calibrate(law)
    assert model.regime == "kesten"
    assert model.alpha > 0 and model.rho > 0
    assert model.pressure(model.alpha) == pytest.approx(0.0, abs=1e-8)


def test_perpetuity_builder():
    """Test that the perpetuity law has M = diag(a)(I + E) and is calibrated in the kesten regime."""
    law = model_service.build_law_perpetuity(
        [([1.1, 1.05], [1.0, 0.5], 0.3), ([0.75, 0.8], [1.0, 0.8], 0.7)],
        exchange=[[0.0, 0.1], [0.1, 0.0]],
    )
    np.testing.assert_allclose(law.matrices[0], [[1.1, 0.11], [0.105, 1.05]])
    np.testing.assert_allclose(law.vectors[1], [1.0, 0.8])
    _assert_calibrated_kesten(law)


def test_perpetuity_builder_rejects_bad_exchange():
    """Test that a nonzero diagonal or a non-positive discount is refused."""
    with pytest.raises(InputError):
        model_service.build_law_perpetuity([([1.1, 1.0], [1.0, 1.0], 1.0)], exchange=[[0.1, 0.1], [0.1, 0.0]])
    with pytest.raises(InputError):
        model_service.build_law_perpetuity([([0.0, 1.0], [1.0, 1.0], 1.0)])


def test_branching_builder():
    """Test that the branching law transposes the offspring means and is calibrated in the kesten regime."""
    offspring = [[1.2, 0.3], [0.2, 1.0]]
    law = model_service.build_law_branching(
        [(offspring, [1.0, 0.5], 0.4), ([[0.5, 0.1], [0.1, 0.6]], [0.5, 0.2], 0.6)]
    )
    np.testing.assert_allclose(law.matrices[0], np.transpose(offspring))
    np.testing.assert_allclose(law.vectors[0], [1.0, 0.5])
    _assert_calibrated_kesten(law)


def test_sigma_pi_builder():
    """Test that the Sigma-Pi law adds interaction to diagonal growth and is calibrated in the kesten regime."""
    coupling = [[0.0, 0.05], [0.05, 0.0]]
    law = model_service.build_law_sigma_pi(
        [([1.5, 1.3], coupling, [1.0, 1.0], 0.25), ([0.6, 0.7], coupling, [0.5, 0.2], 0.75)]
    )
    np.testing.assert_allclose(law.matrices[0], [[1.5, 0.05], [0.05, 1.3]])
    _assert_calibrated_kesten(law)


def test_sigma_pi_without_interaction_is_not_allowable_when_growth_vanishes():
    """Test that a zero growth factor without interaction leaves an empty row."""
    law = model_service.build_law_sigma_pi([([1.5, 0.0], None, [1.0, 1.0], 1.0)])
    assert not model_service.check_conditions(law).allowable


@pytest.mark.parametrize("name,kind", [
    ("perpetuity_two_currency", "perpetuity"),
    ("branching_two_type", "branching"),
    ("sigma_pi_two_species", "sigma_pi"),
])
def test_bundled_scenarios_calibrate(name, kind):
    """Test that each bundled scenario law loads through its own block and is calibrated in the kesten regime."""
    config, _ = model_service.load_config(name)
    assert config.kind == kind
    law = model_service.law_from_config(config)
    assert law.name == name and law.d == 2
    _assert_calibrated_kesten(law)


def test_scenario_block_is_required(tmp_path):
    """Test that kind 'branching' without a branching block is rejected."""
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"d": 2, "kind": "branching"}))
    with pytest.raises(InputError, match="branching block"):
        model_service.load_law(path)


def test_scenario_dimension_must_match(tmp_path):
    """Test that a scenario law whose vectors disagree with d is rejected."""
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({
        "d": 3, "kind": "sigma_pi",
        "sigma_pi": {"environments": [{"growth": [1.5, 0.6], "inflow": [1.0, 1.0], "p": 1.0}]},
    }))
    with pytest.raises(InputError):
        model_service.load_law(path)

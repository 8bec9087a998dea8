"""
Tests for exact enumeration: passage laws, moments, W_n, exceedances and product tails.
"""
import numpy as np
import pytest

from src.errors import BudgetExceededError, InputError
from src.services.model_service import model_service
from src.services.oracle_service import oracle_service
from src.services.spectral_service import spectral_service


def test_passage_law_half_two(half_two_law):
    """Test that {2, 1/2} with u = 3 has P(tau = 3) = 1/2 and P(tau > 3) = 1/2."""
    result = oracle_service.exact_passage_law(half_two_law, 3.0, 3)
    assert result.prob(1) == 0.0
    assert result.prob(2) == 0.0
    assert result.prob(3) == 0.5
    assert result.tail == 0.5
    assert result.cdf(3) + result.tail == 1.0


def test_passage_law_deterministic(deterministic_law):
    """Test that M = 2, Q = 1 and u = 10 give tau = 4 with probability one."""
    result = oracle_service.exact_passage_law(deterministic_law, 10.0, 6)
    assert result.prob(4) == 1.0
    assert result.cdf(3) == 0.0
    assert result.tail == 0.0


def test_passage_law_small_threshold(golden_law):
    """Test that u below |Q| gives P(tau = 1) = 1."""
    result = oracle_service.exact_passage_law(golden_law, 0.5, 4)
    assert result.prob(1) == 1.0
    assert result.window(1, 4) == 0.0


def test_passage_law_conserves_mass(golden_law):
    """Test that the pmf and the tail sum to one."""
    result = oracle_service.exact_passage_law(golden_law, 30.0, 14)
    assert result.cdf(14) + result.tail == pytest.approx(1.0, abs=1e-15)
    frame = oracle_service.passage_law_frame(result)
    assert list(frame.columns) == ["n", "probability", "cumulative"]
    assert frame["cumulative"].iloc[-1] == pytest.approx(result.cdf(14))


def test_passage_law_directional(d2_law):
    """Test that thresholds on <y, V_n> use the given direction."""
    result = oracle_service.exact_passage_law(d2_law, 0.7, 1, y=[1.0, 0.0])
    assert result.prob(1) == 0.5


def test_golden_moment():
    """Test that E||Pi_2|| = 1.265625 for the golden-ratio law."""
    law = model_service.load_law("golden_ratio")
    assert oracle_service.exact_matrix_moment(law, 1.0, 2) == pytest.approx(1.265625, abs=1e-15)


def test_all_ones_moment():
    """Test that the all-ones 2 x 2 matrix has ||Pi_3|| = 8."""
    law = model_service.build_law_atoms([([[1.0, 1.0], [1.0, 1.0]], [1.0, 1.0], 1.0)])
    assert oracle_service.exact_matrix_moment(law, 1.0, 3) == 8.0


def test_moment_trace_matches_kappa(golden_law):
    """Test that E||Pi_n||^s = kappa(s)^n for scalar laws."""
    trace = oracle_service.matrix_moment_trace(golden_law, [0.5, 1.0, 2.0], 6)
    assert trace.shape == (6, 3)
    for j, s in enumerate([0.5, 1.0, 2.0]):
        kappa = (2.0**s + 4.0**-s) / 2
        np.testing.assert_allclose(trace[:, j], kappa ** np.arange(1, 7), rtol=1e-13)


def test_exceedance(half_two_law, d2_law):
    """Test that P(|V_2| > 2.9) = 1/2 and directional exceedances are labelled."""
    result = oracle_service.exact_exceedance(half_two_law, 2.9, 2)
    assert result.norm == 0.5
    directional = oracle_service.exact_exceedance(d2_law, 0.7, 1, ys=[[1.0, 0.0], [0.0, 1.0]])
    assert directional.directional == {"y0": 0.5, "y1": 0.5}
    assert directional.norm == 1.0


def test_product_tail_counts_ties(half_two_law):
    """Test that products equal to exp(n q) count towards the tail."""
    result = oracle_service.exact_product_tail(half_two_law, 2, 0.0)
    assert result.norm == 0.75
    assert result.directional is None


def test_product_tail_directional(d2_law):
    """Test that the directional product tail never exceeds the norm tail."""
    result = oracle_service.exact_product_tail(d2_law, 4, -0.2, x=[0.5, 0.5], y=[1.0, 0.0])
    assert result.directional is not None
    assert result.directional <= result.norm


def test_w_trace_scalar(golden_law):
    """Test that W_n equals E|V_n|^s / kappa^n when r is constant."""
    solution = spectral_service.transfer_fixed_point(golden_law, 1.0)
    trace = oracle_service.W_trace(golden_law, solution, 3)
    assert [w.n for w in trace] == [1, 2, 3]
    assert trace[0].w == pytest.approx(1.0 / 1.125, rel=1e-13)
    assert trace[1].w == pytest.approx((1 + 1.125) / 1.125**2, rel=1e-13)
    for w in trace:
        assert w.w == pytest.approx(w.moment_ratio, rel=1e-13)


def test_w_scales_with_normalization(d2_law, d2_model):
    """Test that rescaling r scales W and leaves the moment ratio unchanged."""
    solution = d2_model.solution(1.0)
    base = oracle_service.exact_W(d2_law, solution, 1.0, 5)
    scaled = oracle_service.exact_W(d2_law, solution.rescaled(7.0), 1.0, 5)
    assert scaled.w == pytest.approx(7.0 * base.w, rel=1e-12)
    assert scaled.moment_ratio == base.moment_ratio


def test_exact_w_requires_matching_s(golden_law):
    """Test that exact_W refuses a solution computed at another s."""
    solution = spectral_service.transfer_fixed_point(golden_law, 1.0)
    with pytest.raises(InputError):
        oracle_service.exact_W(golden_law, solution, 1.5, 2)


def test_budget_is_enforced(golden_law):
    """Test that enumeration beyond the path budget raises without pruning."""
    with pytest.raises(BudgetExceededError):
        oracle_service.exact_passage_law(golden_law, 1e9, 4, max_paths=8)


def test_pruning_reports_mass():
    """Test that pruned branches are reported and the remaining mass is exact."""
    law = model_service.build_law_scalar([(2.0, 1.0, 0.9), (0.5, 1.0, 0.1)])
    result = oracle_service.exact_passage_law(law, 1e6, 3, max_paths=4, prune_tol=0.1)
    assert result.pruned_mass == pytest.approx(0.19, abs=1e-15)
    assert result.tail == pytest.approx(0.81, abs=1e-15)


def test_feasibility(golden_law):
    """Test that the default budget covers 2^22 paths and no more."""
    assert oracle_service.feasible(golden_law, 22)
    assert not oracle_service.feasible(golden_law, 23)
    assert oracle_service.feasible(golden_law, 3, max_paths=8)


def test_sampler_only_law_is_refused():
    """Test that enumeration needs finite support."""
    law = model_service.build_law_garch12(0.1, 0.3, 0.4, 0.2, "gaussian")
    assert not oracle_service.feasible(law, 1)
    with pytest.raises(InputError):
        oracle_service.exact_passage_law(law, 1.0, 2)

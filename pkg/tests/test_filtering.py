import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from concept_guard.errors import (
    DegeneratePrompt,
    InvalidDimensions,
    InvalidIndex,
    InvalidParameter,
)
from concept_guard.filtering import (
    ConceptSubspace,
    PromptEmbedding,
    ProximityReport,
    TriggerMask,
    blend,
    concept_distances,
    detect_triggers,
    input_space_basis,
    masked_pooled,
    project_tokens,
    round_half_away,
    select_for_timestep,
    self_validation_threshold,
)
from concept_guard.linalg import Projector

from oracles import explicit_projector, loo_detection_slow, pooled_mean

RNG = np.random.default_rng(20240812)

TEN_SIGMOID_ONE = 7.310585786300049  # 10 / (1 + e^-1)


def make_prompt(matrix, valid=None):
    matrix = np.asarray(matrix, dtype=np.float64)
    labels = tuple(f"t{i}" for i in range(matrix.shape[0]))
    if valid is None:
        valid = np.ones(matrix.shape[0], dtype=bool)
    return PromptEmbedding(labels, matrix, valid)


def worked_example():
    """Three tokens in the plane, concept along the first axis; the first
    token carries all the concept content."""
    prompt = make_prompt([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    subspace = ConceptSubspace.from_basis(np.array([[1.0], [0.0]]), labels=("axis",))
    return prompt, subspace


class TestPromptEmbedding:
    def test_requires_valid_token(self):
        with pytest.raises(DegeneratePrompt):
            make_prompt(np.ones((2, 3)), valid=[False, False])

    def test_shape_checks(self):
        with pytest.raises(InvalidDimensions):
            PromptEmbedding(("a",), np.ones((2, 3)), np.ones(2, dtype=bool))
        with pytest.raises(InvalidDimensions):
            make_prompt(np.ones((2, 3)), valid=[True, True, True])

    def test_matrix_locked(self):
        prompt = make_prompt(np.ones((2, 3)))
        with pytest.raises(ValueError):
            prompt.matrix[0, 0] = 5.0

    def test_boundary_removal(self):
        prompt = make_prompt(RNG.standard_normal((5, 4)))
        trimmed = prompt.without_boundary_tokens()
        assert list(trimmed.valid) == [False, True, True, True, False]
        with pytest.raises(DegeneratePrompt):
            make_prompt(np.ones((2, 3))).without_boundary_tokens()


class TestMaskedPooled:
    def test_worked_values(self):
        prompt, _ = worked_example()
        np.testing.assert_allclose(masked_pooled(prompt, 0), [0.0, 1.0])
        np.testing.assert_allclose(masked_pooled(prompt, 1), [0.5, 0.5])
        np.testing.assert_allclose(masked_pooled(prompt, 2), [0.5, 0.5])

    def test_matches_mean_oracle(self):
        matrix = RNG.standard_normal((7, 5))
        valid = np.array([True, True, False, True, True, False, True])
        prompt = make_prompt(matrix, valid)
        for i in np.flatnonzero(valid):
            rows = [matrix[j] for j in np.flatnonzero(valid) if j != i]
            np.testing.assert_allclose(masked_pooled(prompt, int(i)), pooled_mean(rows), atol=1e-12)

    def test_rejects_padding_and_out_of_range(self):
        prompt = make_prompt(np.ones((3, 2)), valid=[True, False, True])
        with pytest.raises(InvalidIndex):
            masked_pooled(prompt, 1)
        with pytest.raises(InvalidIndex):
            masked_pooled(prompt, 3)

    def test_single_valid_token(self):
        prompt = make_prompt(np.ones((3, 2)), valid=[True, False, False])
        with pytest.raises(DegeneratePrompt):
            masked_pooled(prompt, 0)


class TestInputSpaceBasis:
    def test_columns_match_masked_pooled(self):
        matrix = RNG.standard_normal((6, 4))
        valid = np.array([True, False, True, True, False, True])
        prompt = make_prompt(matrix, valid)
        basis = input_space_basis(prompt)
        assert basis.shape == (4, 4)
        for col, i in enumerate(np.flatnonzero(valid)):
            np.testing.assert_array_equal(basis[:, col], masked_pooled(prompt, int(i)))

    def test_needs_two_valid(self):
        with pytest.raises(DegeneratePrompt):
            input_space_basis(make_prompt(np.ones((2, 2)), valid=[True, False]))


class TestConceptDistances:
    def test_worked_example(self):
        prompt, subspace = worked_example()
        report = concept_distances(prompt, subspace)
        np.testing.assert_allclose(report.distances, [1.0, 0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(report.loo_means, [0.5, 0.75, 0.75], atol=1e-15)

    def test_no_concepts_uses_raw_norms(self):
        matrix = RNG.standard_normal((4, 6))
        prompt = make_prompt(matrix)
        report = concept_distances(prompt, ConceptSubspace.empty(6))
        for i in range(4):
            np.testing.assert_allclose(
                report.distances[i], np.linalg.norm(masked_pooled(prompt, i)), atol=1e-12
            )

    def test_padding_rows_zeroed(self):
        matrix = RNG.standard_normal((4, 3))
        prompt = make_prompt(matrix, valid=[True, False, True, True])
        report = concept_distances(prompt, ConceptSubspace.empty(3))
        assert report.distances[1] == 0.0
        assert report.loo_means[1] == 0.0

    def test_dimension_mismatch(self):
        prompt, _ = worked_example()
        with pytest.raises(InvalidDimensions):
            concept_distances(prompt, ConceptSubspace.empty(5))


class TestDetectTriggers:
    def test_worked_example(self):
        prompt, subspace = worked_example()
        mask = detect_triggers(concept_distances(prompt, subspace), alpha=0.01)
        assert list(mask.flags) == [True, False, False]

    def test_matches_slow_rule(self):
        for _ in range(25):
            distances = RNG.uniform(0.0, 2.0, size=int(RNG.integers(2, 10)))
            report = ProximityReport.from_distances(distances)
            alpha = float(RNG.uniform(0.0, 0.5))
            mask = detect_triggers(report, alpha)
            assert list(mask.flags) == loo_detection_slow(distances, alpha)

    def test_tie_not_flagged(self):
        # equal distances give distance == (1 + 0) * mean exactly; strict
        # comparison keeps everything unflagged
        report = ProximityReport.from_distances([1.0, 1.0, 1.0])
        assert detect_triggers(report, alpha=0.0).count == 0

    def test_huge_alpha_flags_nothing(self):
        prompt, subspace = worked_example()
        mask = detect_triggers(concept_distances(prompt, subspace), alpha=1e9)
        assert mask.count == 0

    def test_padding_never_flagged(self):
        report = ProximityReport.from_distances([5.0, 0.1, 0.1, 0.1], valid=[False, True, True, True])
        assert not detect_triggers(report, alpha=0.0).flags[0]

    def test_negative_alpha_rejected(self):
        report = ProximityReport.from_distances([1.0, 2.0])
        with pytest.raises(InvalidParameter):
            detect_triggers(report, alpha=-0.1)

    def test_scale_invariance(self):
        matrix = RNG.standard_normal((6, 8))
        basis = RNG.standard_normal((8, 2))
        subspace = ConceptSubspace.from_basis(basis)
        base_mask = detect_triggers(concept_distances(make_prompt(matrix), subspace))
        for c in (1e-3, 0.5, 7.0, 1e4):
            scaled_mask = detect_triggers(concept_distances(make_prompt(c * matrix), subspace))
            assert list(scaled_mask.flags) == list(base_mask.flags)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(0.0, 100.0), min_size=2, max_size=12),
    st.floats(0.0, 2.0),
    st.floats(0.0, 2.0),
)
def test_detection_monotone_in_alpha(distances, a1, a2):
    lo, hi = sorted((a1, a2))
    report = ProximityReport.from_distances(distances)
    flags_lo = detect_triggers(report, lo).flags
    flags_hi = detect_triggers(report, hi).flags
    assert not np.any(flags_hi & ~flags_lo)


class TestProjectTokens:
    def test_rows_match_two_stage_oracle(self):
        matrix = RNG.standard_normal((5, 9))
        prompt = make_prompt(matrix)
        concept = RNG.standard_normal((9, 2))
        subspace = ConceptSubspace.from_basis(concept)
        basis = input_space_basis(prompt)
        projected = project_tokens(prompt, basis, subspace)
        p_concept = explicit_projector(concept)
        p_input = explicit_projector(basis)
        for i in range(5):
            expected = p_input @ (matrix[i] - p_concept @ matrix[i])
            np.testing.assert_allclose(projected[i], expected, rtol=0, atol=1e-9)

    def test_empty_subspace_keeps_input_projection_only(self):
        matrix = RNG.standard_normal((4, 6))
        prompt = make_prompt(matrix)
        basis = input_space_basis(prompt)
        projected = project_tokens(prompt, basis, ConceptSubspace.empty(6))
        p_input = explicit_projector(basis)
        np.testing.assert_allclose(projected, matrix @ p_input.T, atol=1e-9)

    def test_identical_tokens_rank_one_basis(self):
        v = RNG.standard_normal(5)
        matrix = np.tile(v, (4, 1))
        prompt = make_prompt(matrix)
        basis = input_space_basis(prompt)
        assert Projector(basis).rank == 1
        projected = project_tokens(prompt, basis, ConceptSubspace.empty(5))
        np.testing.assert_allclose(projected, matrix, atol=1e-10)

    def test_dimension_checks(self):
        prompt, subspace = worked_example()
        with pytest.raises(InvalidDimensions):
            project_tokens(prompt, np.ones((3, 2)), subspace)


class TestBlend:
    def test_projected_mode(self):
        prompt, subspace = worked_example()
        basis = input_space_basis(prompt)
        projected = project_tokens(prompt, basis, subspace)
        mask = detect_triggers(concept_distances(prompt, subspace))
        safe = blend(prompt, projected, mask, "projected")
        np.testing.assert_array_equal(safe[0], projected[0])
        np.testing.assert_array_equal(safe[1:], prompt.matrix[1:])

    def test_null_mode_default_zeros(self):
        prompt, subspace = worked_example()
        projected = project_tokens(prompt, input_space_basis(prompt), subspace)
        mask = detect_triggers(concept_distances(prompt, subspace))
        safe = blend(prompt, projected, mask, "null")
        np.testing.assert_array_equal(safe[0], np.zeros(2))
        np.testing.assert_array_equal(safe[1:], prompt.matrix[1:])

    def test_null_mode_custom_row(self):
        prompt, subspace = worked_example()
        projected = project_tokens(prompt, input_space_basis(prompt), subspace)
        mask = detect_triggers(concept_distances(prompt, subspace))
        safe = blend(prompt, projected, mask, "null", null_embedding=[9.0, 9.0])
        np.testing.assert_array_equal(safe[0], [9.0, 9.0])

    def test_all_zero_mask_is_bitwise_original(self):
        matrix = RNG.standard_normal((4, 3))
        prompt = make_prompt(matrix)
        projected = RNG.standard_normal((4, 3))
        safe = blend(prompt, projected, TriggerMask(np.zeros(4, dtype=bool)))
        assert np.array_equal(safe, prompt.matrix)

    def test_padding_rows_survive(self):
        matrix = RNG.standard_normal((4, 3))
        prompt = make_prompt(matrix, valid=[True, False, True, True])
        projected = RNG.standard_normal((4, 3))
        # padding can never be flagged by detect_triggers; enforce the same here
        mask = TriggerMask([True, False, True, False])
        safe = blend(prompt, projected, mask)
        np.testing.assert_array_equal(safe[1], prompt.matrix[1])

    def test_bad_mode(self):
        prompt, _ = worked_example()
        with pytest.raises(InvalidParameter):
            blend(prompt, prompt.matrix, TriggerMask(np.zeros(3, dtype=bool)), mode="average")


class TestSelfValidationThreshold:
    def test_identical_projection_gives_half_gamma(self):
        matrix = RNG.standard_normal((4, 5))
        prompt = make_prompt(matrix)
        t_prime = self_validation_threshold(prompt, matrix.copy(), gamma=10.0)
        assert abs(t_prime - 5.0) <= 1e-12

    def test_orthogonal_projection(self):
        prompt = make_prompt([[1.0, 0.0], [1.0, 0.0]])
        projected = np.array([[0.0, 1.0], [0.0, 1.0]])
        t_prime = self_validation_threshold(prompt, projected, gamma=10.0)
        assert abs(t_prime - TEN_SIGMOID_ONE) <= 1e-12

    def test_gamma_zero(self):
        matrix = RNG.standard_normal((3, 4))
        prompt = make_prompt(matrix)
        assert self_validation_threshold(prompt, RNG.standard_normal((3, 4)), gamma=0.0) == 0.0

    def test_negative_gamma_rejected(self):
        prompt = make_prompt(np.ones((2, 2)))
        with pytest.raises(InvalidParameter):
            self_validation_threshold(prompt, np.ones((2, 2)), gamma=-1.0)

    def test_zero_pool_degenerate(self):
        prompt = make_prompt([[1.0, 0.0], [-1.0, 0.0]])
        with pytest.raises(DegeneratePrompt):
            self_validation_threshold(prompt, np.ones((2, 2)), gamma=10.0)
        prompt = make_prompt(np.ones((2, 2)))
        with pytest.raises(DegeneratePrompt):
            self_validation_threshold(prompt, np.zeros((2, 2)), gamma=10.0)

    def test_monotone_in_dissimilarity(self):
        # rotate the pooled direction progressively away; t' must not decrease
        prompt = make_prompt([[1.0, 0.0], [1.0, 0.0]])
        last = -1.0
        for angle in np.linspace(0.0, math.pi, 30):
            projected = np.tile([math.cos(angle), math.sin(angle)], (2, 1))
            t_prime = self_validation_threshold(prompt, projected, gamma=10.0)
            assert t_prime >= last - 1e-12
            last = t_prime

    def test_range(self):
        for _ in range(20):
            matrix = RNG.standard_normal((5, 6))
            projected = RNG.standard_normal((5, 6))
            t_prime = self_validation_threshold(make_prompt(matrix), projected, gamma=10.0)
            assert 10.0 * (1.0 / (1.0 + math.exp(0.0))) * 0.0 <= t_prime
            assert t_prime <= 10.0 * (1.0 / (1.0 + math.exp(-2.0))) + 1e-12


class TestRounding:
    def test_half_away_from_zero(self):
        assert round_half_away(0.5) == 1
        assert round_half_away(1.5) == 2
        assert round_half_away(2.5) == 3
        assert round_half_away(-0.5) == -1
        assert round_half_away(-2.5) == -3
        assert round_half_away(7.3105857863) == 7
        assert round_half_away(5.0) == 5

    def test_select_boundary_inclusive(self):
        safe = object()
        orig = object()
        assert select_for_timestep(5, 5.0, safe, orig) is safe
        assert select_for_timestep(6, 5.0, safe, orig) is orig
        assert select_for_timestep(0, 0.4, safe, orig) is safe
        assert select_for_timestep(1, 0.4, safe, orig) is orig
        # t' = 5.5 rounds away from zero to 6
        assert select_for_timestep(6, 5.5, safe, orig) is safe

import itertools

import numpy as np
import pytest

from treeseq.autodiff import Tape
from treeseq.errors import DomainError
from treeseq.logmath import NEG_INF
from treeseq.marginal import (
    EmissionGrid,
    marginal_log_likelihood,
    marginal_log_likelihood_nodes,
    marginal_log_likelihood_streaming,
    prefix_marginals,
)
from treeseq.prior import compute_split_field, tree_probability_pi
from treeseq.topology import build_topology, enumerate_internal_trees
from treeseq.verify import brute_marginal, random_emission_log_probs, random_split_field


def random_grid(topo, n_tokens, rng):
    return EmissionGrid(-rng.exponential(1.0, size=(topo.vertex_count, n_tokens)))


class TestEmissionGrid:
    def test_positive_log_probability_rejected(self):
        with pytest.raises(DomainError):
            EmissionGrid(np.array([[0.1, -1.0]]))

    def test_gather_from_vocabulary_table(self):
        rng = np.random.default_rng(0)
        topo = build_topology(1)
        lp = random_emission_log_probs(topo, 4, rng)
        grid = EmissionGrid.from_token_log_probs(lp, [2, 0, 2])
        assert grid.log_probs.shape == (3, 3)
        assert np.array_equal(grid.log_probs[:, 0], lp[:, 2])
        assert grid.token_ids == (2, 0, 2)

    def test_out_of_vocabulary_token_rejected(self):
        topo = build_topology(1)
        lp = np.full((topo.vertex_count, 2), -1.0)
        with pytest.raises(DomainError):
            EmissionGrid.from_token_log_probs(lp, [2])


class TestMarginalLogLikelihood:
    def test_single_token_forces_the_root_only_tree(self):
        rng = np.random.default_rng(1)
        for depth in (0, 1, 3):
            topo = build_topology(depth)
            field = random_split_field(topo, rng)
            grid = random_grid(topo, 1, rng)
            table = marginal_log_likelihood(field, grid, 1)
            expected = grid.log_probs[0, 0] + field.log_l[0]
            assert np.isclose(table.log_marginal, expected, atol=1e-12)

    def test_depth_two_three_tokens_sums_the_two_trees(self):
        rng = np.random.default_rng(2)
        topo = build_topology(2)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 3, rng)
        by_hand = np.logaddexp(
            *[
                tree_probability_pi(field, tree)
                + sum(grid.log_probs[v - 1, n] for n, v in enumerate(tree.leaf_vertices))
                for tree in enumerate_internal_trees(topo, 3)
            ]
        )
        got = marginal_log_likelihood(field, grid, 3).log_marginal
        assert np.isclose(got, by_hand, atol=1e-12)

    @pytest.mark.parametrize("depth", [1, 2, 3])
    def test_matches_brute_force_over_enumerated_trees(self, depth):
        rng = np.random.default_rng(depth + 10)
        topo = build_topology(depth)
        for n_tokens in range(1, min(topo.max_leaves(), 8) + 1):
            for _ in range(5):
                field = random_split_field(topo, rng)
                grid = random_grid(topo, n_tokens, rng)
                got = marginal_log_likelihood(field, grid, n_tokens).log_marginal
                want = brute_marginal(field, grid, n_tokens)
                assert abs(got - want) < 1e-9

    def test_sequences_longer_than_leaf_capacity_have_probability_zero(self):
        rng = np.random.default_rng(3)
        topo = build_topology(2)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 5, rng)
        assert marginal_log_likelihood(field, grid, 5).log_marginal == NEG_INF

    def test_zero_tokens_rejected(self):
        rng = np.random.default_rng(4)
        topo = build_topology(1)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 1, rng)
        with pytest.raises(DomainError):
            marginal_log_likelihood(field, grid, 0)

    def test_emissions_narrower_than_sequence_rejected(self):
        rng = np.random.default_rng(5)
        topo = build_topology(1)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 2, rng)
        with pytest.raises(DomainError):
            marginal_log_likelihood(field, grid, 3)

    def test_first_column_supported_exactly_on_left_boundary(self):
        rng = np.random.default_rng(6)
        topo = build_topology(3)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 4, rng)
        table = marginal_log_likelihood(field, grid, 4)
        finite = np.isfinite(table.log_table[:, 0])
        on_boundary = np.zeros(topo.vertex_count, dtype=bool)
        on_boundary[topo.bl_pos] = True
        assert np.array_equal(finite, on_boundary)

    def test_reached_mask_matches_finite_cells_for_interior_fields(self):
        rng = np.random.default_rng(7)
        topo = build_topology(3)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 6, rng)
        table = marginal_log_likelihood(field, grid, 6)
        assert np.array_equal(table.reached_mask, np.isfinite(table.log_table))

    def test_streaming_variant_matches_full_table(self):
        rng = np.random.default_rng(8)
        topo = build_topology(3)
        for n_tokens in (1, 3, 7):
            field = random_split_field(topo, rng)
            grid = random_grid(topo, n_tokens, rng)
            full = marginal_log_likelihood(field, grid, n_tokens).log_marginal
            assert marginal_log_likelihood_streaming(field, grid, n_tokens) == full


class TestPrefixMarginals:
    def test_first_entry_is_the_single_token_marginal(self):
        rng = np.random.default_rng(9)
        topo = build_topology(2)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 3, rng)
        table = marginal_log_likelihood(field, grid, 3)
        prefixes = prefix_marginals(table)
        assert np.isclose(prefixes[0], grid.log_probs[0, 0] + field.log_l[0], atol=1e-12)

    def test_last_entry_equals_log_marginal(self):
        rng = np.random.default_rng(10)
        topo = build_topology(3)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 5, rng)
        table = marginal_log_likelihood(field, grid, 5)
        assert prefix_marginals(table)[-1] == table.log_marginal

    def test_entries_match_brute_force_prefix_sums(self):
        rng = np.random.default_rng(11)
        topo = build_topology(3)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 6, rng)
        table = marginal_log_likelihood(field, grid, 6)
        prefixes = prefix_marginals(table)
        for n in range(1, 7):
            want = brute_marginal(field, EmissionGrid(grid.log_probs[:, :n]), n)
            assert abs(prefixes[n - 1] - want) < 1e-9

    def test_prefix_marginals_never_increase(self):
        rng = np.random.default_rng(12)
        topo = build_topology(3)
        field = random_split_field(topo, rng)
        grid = random_grid(topo, 8, rng)
        table = marginal_log_likelihood(field, grid, 8)
        prefixes = prefix_marginals(table)
        assert np.all(np.diff(prefixes) <= 1e-12)


class TestTotalProbability:
    def test_model_free_sequence_probabilities_sum_to_one(self):
        # Bottom-level stop probabilities clamped to 1 and emission rows that
        # are proper distributions: summing the marginal over every sequence
        # of every feasible length must exhaust the generative process.
        rng = np.random.default_rng(13)
        topo = build_topology(3)
        vocab = 3
        l = rng.uniform(0.1, 0.9, size=topo.vertex_count)
        l[topo.max_leaves() - 1 :] = 1.0
        field = compute_split_field(topo, np.log(l))
        lp = random_emission_log_probs(topo, vocab, rng)
        total = 0.0
        for n in range(1, topo.max_leaves() + 1):
            for tokens in itertools.product(range(vocab), repeat=n):
                grid = EmissionGrid.from_token_log_probs(lp, list(tokens))
                total += np.exp(marginal_log_likelihood_streaming(field, grid, n))
        assert abs(total - 1.0) < 1e-6


class TestMarginalNodes:
    def test_tape_twin_matches_numpy_dp_bit_for_bit(self):
        rng = np.random.default_rng(14)
        for depth in (1, 2, 3):
            topo = build_topology(depth)
            field = random_split_field(topo, rng)
            for n_tokens in (1, 2, topo.max_leaves()):
                grid = random_grid(topo, n_tokens, rng)
                want = marginal_log_likelihood(field, grid, n_tokens).log_marginal
                tape = Tape()
                node = marginal_log_likelihood_nodes(
                    tape,
                    topo,
                    tape.const(field.log_m),
                    tape.const(grid.log_probs),
                    n_tokens,
                )
                assert float(node.value) == want

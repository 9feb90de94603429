import numpy as np
import pytest

from treeseq.decode import (
    best_tree_given_tokens,
    decode_joint,
    rescore_joint,
    rescore_tree,
)
from treeseq.errors import DecodeError, DomainError
from treeseq.marginal import EmissionGrid, marginal_log_likelihood
from treeseq.prior import compute_split_field
from treeseq.topology import build_topology
from treeseq.verify import (
    brute_best_joint,
    brute_best_tree,
    random_emission_log_probs,
    random_split_field,
)


class TestDecodeJoint:
    def test_depth_zero_emits_the_best_root_token(self):
        topo = build_topology(0)
        field = compute_split_field(topo, np.log([0.6]))
        lp = np.log(np.array([[0.2, 0.5, 0.3]]))
        result = decode_joint(field, lp)
        assert result.tokens == (1,)
        assert result.tree.leaf_vertices == (1,)
        assert np.isclose(result.log_joint, np.log(0.6) + np.log(0.5))

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_exhaustive_argmax_at_depth_two(self, seed):
        rng = np.random.default_rng(seed)
        topo = build_topology(2)
        field = random_split_field(topo, rng)
        lp = random_emission_log_probs(topo, 3, rng)
        result = decode_joint(field, lp)
        tokens, leaves, score = brute_best_joint(field, lp, topo.max_leaves())
        assert result.tokens == tokens
        assert result.tree.leaf_vertices == leaves
        assert abs(result.log_joint - score) < 1e-12

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_exhaustive_argmax_at_depth_three(self, seed):
        rng = np.random.default_rng(100 + seed)
        topo = build_topology(3)
        field = random_split_field(topo, rng)
        lp = random_emission_log_probs(topo, 3, rng)
        result = decode_joint(field, lp)
        tokens, leaves, score = brute_best_joint(field, lp, topo.max_leaves())
        assert result.tokens == tokens
        assert result.tree.leaf_vertices == leaves
        assert abs(result.log_joint - score) < 1e-12

    @pytest.mark.parametrize("seed", range(6))
    def test_early_stop_never_misses_a_longer_better_sequence(self, seed):
        rng = np.random.default_rng(200 + seed)
        topo = build_topology(3)
        field = random_split_field(topo, rng)
        lp = random_emission_log_probs(topo, 4, rng)
        stopped = decode_joint(field, lp)
        extended = decode_joint(field, lp, max_len=topo.max_leaves() + 10)
        assert stopped.tokens == extended.tokens
        assert stopped.log_joint == extended.log_joint

    def test_rescoring_identity_is_exact(self):
        rng = np.random.default_rng(15)
        topo = build_topology(3)
        for _ in range(10):
            field = random_split_field(topo, rng)
            lp = random_emission_log_probs(topo, 5, rng)
            result = decode_joint(field, lp)
            assert rescore_joint(field, lp, result) == result.log_joint

    def test_deterministic_under_exact_ties(self):
        topo = build_topology(2)
        field = compute_split_field(topo, np.log(np.full(topo.vertex_count, 0.5)))
        lp = np.full((topo.vertex_count, 3), np.log(1.0 / 3.0))
        first = decode_joint(field, lp)
        second = decode_joint(field, lp)
        assert first == second
        # Lowest token id and the shortest walk win under full symmetry.
        assert first.tokens == (0,)
        assert first.tree.leaf_vertices == (1,)

    def test_all_zero_split_probabilities_cannot_decode(self):
        topo = build_topology(1)
        with np.errstate(divide="ignore"):
            field = compute_split_field(topo, np.full(topo.vertex_count, -np.inf))
        lp = random_emission_log_probs(topo, 2, np.random.default_rng(0))
        with pytest.raises(DecodeError):
            decode_joint(field, lp)

    def test_bad_shapes_rejected(self):
        topo = build_topology(1)
        field = random_split_field(topo, np.random.default_rng(0))
        with pytest.raises(DomainError):
            decode_joint(field, np.zeros((1, 3)))
        with pytest.raises(DomainError):
            decode_joint(field, np.zeros((topo.vertex_count, 3)), max_len=0)


class TestBestTreeGivenTokens:
    def test_single_token_yields_the_root_tree(self):
        rng = np.random.default_rng(16)
        topo = build_topology(2)
        field = random_split_field(topo, rng)
        grid = EmissionGrid(-rng.exponential(1.0, size=(topo.vertex_count, 1)))
        result = best_tree_given_tokens(field, grid, 1)
        assert result.tree.leaf_vertices == (1,)
        assert np.isclose(result.log_joint, grid.log_probs[0, 0] + field.log_l[0])

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_exhaustive_argmax_over_trees(self, seed):
        rng = np.random.default_rng(300 + seed)
        topo = build_topology(4)
        field = random_split_field(topo, rng)
        n_tokens = int(rng.integers(1, 7))
        grid = EmissionGrid(-rng.exponential(1.0, size=(topo.vertex_count, n_tokens)))
        result = best_tree_given_tokens(field, grid, n_tokens)
        leaves, score = brute_best_tree(field, grid, n_tokens)
        assert result.tree.leaf_vertices == leaves
        assert abs(result.log_joint - score) < 1e-12

    def test_map_tree_never_beats_the_marginal(self):
        rng = np.random.default_rng(17)
        topo = build_topology(3)
        for _ in range(10):
            field = random_split_field(topo, rng)
            n_tokens = int(rng.integers(1, 9))
            grid = EmissionGrid(-rng.exponential(1.0, size=(topo.vertex_count, n_tokens)))
            result = best_tree_given_tokens(field, grid, n_tokens)
            marginal = marginal_log_likelihood(field, grid, n_tokens).log_marginal
            assert result.log_joint <= marginal + 1e-12

    def test_rescoring_identity_is_exact(self):
        rng = np.random.default_rng(18)
        topo = build_topology(3)
        for _ in range(10):
            field = random_split_field(topo, rng)
            n_tokens = int(rng.integers(1, 9))
            grid = EmissionGrid(-rng.exponential(1.0, size=(topo.vertex_count, n_tokens)))
            result = best_tree_given_tokens(field, grid, n_tokens)
            assert rescore_tree(field, grid, result) == result.log_joint

    def test_token_ids_carried_through_when_known(self):
        rng = np.random.default_rng(19)
        topo = build_topology(2)
        field = random_split_field(topo, rng)
        lp = random_emission_log_probs(topo, 4, rng)
        grid = EmissionGrid.from_token_log_probs(lp, [3, 1, 2])
        result = best_tree_given_tokens(field, grid, 3)
        assert result.tokens == (3, 1, 2)
        assert len(result.tokens) == result.tree.n_leaves

    def test_too_many_tokens_rejected(self):
        rng = np.random.default_rng(20)
        topo = build_topology(2)
        field = random_split_field(topo, rng)
        grid = EmissionGrid(-rng.exponential(1.0, size=(topo.vertex_count, 5)))
        with pytest.raises(DomainError):
            best_tree_given_tokens(field, grid, 5)

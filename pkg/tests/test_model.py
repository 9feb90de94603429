import os

import numpy as np
import pytest

from treeseq.autodiff import Tape, check_gradients
from treeseq.errors import DomainError
from treeseq.marginal import EmissionGrid, marginal_log_likelihood
from treeseq.model import (
    ModelConfig,
    TreeSeqModel,
    load_checkpoint,
    save_checkpoint,
)


def small_config(**overrides):
    base = dict(
        depth=3, dim=8, src_vocab_size=6, tgt_vocab_size=5,
        emission_mode="mlp", context_mode="mean_mlp", seed=0,
    )
    base.update(overrides)
    return ModelConfig(**base)


class TestModelConfig:
    def test_odd_dimension_rejected(self):
        with pytest.raises(DomainError):
            small_config(dim=7)

    def test_unknown_modes_rejected(self):
        with pytest.raises(DomainError):
            small_config(emission_mode="transformer")
        with pytest.raises(DomainError):
            small_config(context_mode="attention")

    def test_round_trips_through_dict(self):
        config = small_config(emission_mode="lexical_attention", seed=9)
        assert ModelConfig.from_dict(config.to_dict()) == config


class TestProductionSplit:
    def test_closed_gates_pass_the_parent_through(self):
        model = TreeSeqModel(small_config())
        model.params["prod_b3"].values[:] = -50.0  # sigmoid -> 0
        tape = Tape()
        parent = tape.const(np.random.default_rng(0).normal(size=(3, 8)))
        context = tape.const(np.zeros((1, 8)))
        left, right = model.production_split(tape, parent, context)
        np.testing.assert_allclose(left.value, parent.value, atol=1e-12)
        np.testing.assert_allclose(right.value, parent.value, atol=1e-12)

    def test_open_gates_emit_tanh_range_children(self):
        model = TreeSeqModel(small_config())
        model.params["prod_b3"].values[:] = 50.0  # sigmoid -> 1
        tape = Tape()
        parent = tape.const(np.random.default_rng(1).normal(size=(4, 8)) * 3)
        context = tape.const(np.zeros((1, 8)))
        left, right = model.production_split(tape, parent, context)
        for child in (left, right):
            assert child.value.shape == (4, 8)
            assert np.all(child.value > -1.0) and np.all(child.value < 1.0)

    def test_gradient_check_through_one_application(self):
        model = TreeSeqModel(small_config())
        rng = np.random.default_rng(2)
        parent_values = rng.normal(size=(2, 8))
        context_values = rng.normal(size=(1, 8))

        def build():
            tape = Tape()
            left, right = model.production_split(
                tape, tape.const(parent_values), tape.const(context_values)
            )
            return tape, tape.logsumexp(tape.concat([left, right], axis=0))

        names = ("prod_w1", "prod_u1", "prod_b1", "prod_w2", "prod_b2", "prod_w3", "prod_b3")
        report = check_gradients(
            build, [model.params[n] for n in names], step=1e-5, tolerance=1e-6
        )
        assert report.ok, report


class TestExpand:
    def test_depth_zero_keeps_only_the_root(self):
        model = TreeSeqModel(small_config(depth=0, context_mode="none"))
        tape = Tape()
        embeddings = model.expand(tape, tape.param(model.params["root_embed"]))
        assert embeddings.vertices.value.shape == (1, 8)

    def test_depth_three_yields_fifteen_vertices(self):
        model = TreeSeqModel(small_config(context_mode="none"))
        tape = Tape()
        embeddings = model.expand(tape, tape.param(model.params["root_embed"]))
        assert embeddings.vertices.value.shape == (15, 8)

    def test_children_sit_at_heap_positions(self):
        model = TreeSeqModel(small_config(context_mode="none"))
        tape = Tape()
        root = tape.param(model.params["root_embed"])
        embeddings = model.expand(tape, root)
        context = tape.const(np.zeros((1, 8)))
        left, right = model.production_split(tape, root, context)
        np.testing.assert_array_equal(embeddings.vertices.value[1], left.value[0])
        np.testing.assert_array_equal(embeddings.vertices.value[2], right.value[0])

    def test_deterministic_for_a_fixed_seed(self):
        def run():
            model = TreeSeqModel(small_config(seed=5))
            tape = Tape()
            fp = model.forward(tape, src_ids=(1, 2, 3))
            return fp.embeddings.vertices.value.copy()

        assert np.array_equal(run(), run())

    def test_prefix_of_deeper_expansion_matches_shallow_expansion(self):
        # Top-down locality: the first 2**depth - 1 vertices of a depth-D
        # expansion equal the full depth-(D-1) expansion.
        shallow = TreeSeqModel(small_config(depth=2, context_mode="none"))
        deep = TreeSeqModel(small_config(depth=3, context_mode="none"))
        for name, p in shallow.params.items():
            deep.params[name].values[...] = p.values
        t1, t2 = Tape(), Tape()
        shallow_h = shallow.expand(t1, t1.param(shallow.params["root_embed"]))
        deep_h = deep.expand(t2, t2.param(deep.params["root_embed"]))
        np.testing.assert_array_equal(
            deep_h.vertices.value[:7], shallow_h.vertices.value
        )


class TestHeads:
    def test_emission_rows_are_distributions(self):
        model = TreeSeqModel(small_config())
        tape = Tape()
        fp = model.forward(tape, src_ids=(0, 1, 2))
        sums = np.exp(fp.heads.emission_log_probs.value).sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_split_and_stop_probabilities_are_complementary(self):
        model = TreeSeqModel(small_config())
        tape = Tape()
        fp = model.forward(tape, src_ids=(0, 1, 2))
        total = np.exp(fp.heads.log_l.value) + np.exp(fp.heads.log_one_minus_l.value)
        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_lexical_attention_single_source_token_fixes_the_distribution(self):
        # One key makes the attention a point mass, so every vertex emits the
        # same mapped-output distribution regardless of its embedding.
        model = TreeSeqModel(small_config(emission_mode="lexical_attention"))
        tape = Tape()
        fp = model.forward(tape, src_ids=(3,))
        lp = fp.heads.emission_log_probs.value
        np.testing.assert_allclose(lp, np.broadcast_to(lp[0], lp.shape), atol=1e-12)

    def test_lexical_attention_without_source_rejected(self):
        model = TreeSeqModel(small_config(emission_mode="lexical_attention"))
        tape = Tape()
        with pytest.raises(DomainError):
            model.forward(tape, src_ids=())


class TestEncodeContext:
    def test_mean_pooling_is_permutation_invariant(self):
        model = TreeSeqModel(small_config())
        t1, t2 = Tape(), Tape()
        a = model.encode_context(t1, (1, 2, 3, 3)).value
        b = model.encode_context(t2, (3, 1, 3, 2)).value
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_single_token_is_the_mlp_of_its_embedding(self):
        model = TreeSeqModel(small_config())
        tape = Tape()
        got = model.encode_context(tape, (4,)).value
        e = model.params["src_embed"].values[4][None, :]
        h = np.maximum(
            e @ model.params["enc_w1"].values.T + model.params["enc_b1"].values, 0.0
        )
        want = h @ model.params["enc_w2"].values.T + model.params["enc_b2"].values
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_empty_source_rejected(self):
        model = TreeSeqModel(small_config())
        with pytest.raises(DomainError):
            model.encode_context(Tape(), ())

    def test_gradient_check_through_the_encoder(self):
        model = TreeSeqModel(small_config())

        def build():
            tape = Tape()
            return tape, tape.logsumexp(model.encode_context(tape, (0, 2, 5)))

        names = ("src_embed", "enc_w1", "enc_b1", "enc_w2", "enc_b2")
        report = check_gradients(
            build, [model.params[n] for n in names], step=1e-5, tolerance=1e-6
        )
        assert report.ok, report


class TestEndToEnd:
    @pytest.mark.parametrize(
        "emission_mode,context_mode",
        [("mlp", "mean_mlp"), ("mlp", "none"), ("lexical_attention", "mean_mlp")],
    )
    def test_gradients_match_finite_differences(self, emission_mode, context_mode):
        model = TreeSeqModel(
            small_config(emission_mode=emission_mode, context_mode=context_mode)
        )
        src = (1, 4, 2)
        tgt = (0, 3, 1, 2)

        def build():
            tape = Tape()
            loss = tape.neg(model.sequence_log_marginal(tape, src, tgt))
            return tape, loss

        # Step 1e-6 keeps the probe window clear of relu kinks; the coarser
        # spec-level step is exercised by the acceptance suite.
        report = check_gradients(
            build, model.parameters(), step=1e-6, tolerance=1e-4, max_coords_per_param=6
        )
        assert report.ok, (emission_mode, context_mode, report)

    def test_training_path_and_inference_path_agree_exactly(self):
        model = TreeSeqModel(small_config())
        src, tgt = (2, 0, 5), (1, 1, 4, 0, 2)
        tape = Tape()
        node = model.sequence_log_marginal(tape, src, tgt)
        field, emission_lp = model.infer(src)
        grid = EmissionGrid.from_token_log_probs(emission_lp, tgt)
        table = marginal_log_likelihood(field, grid, len(tgt))
        assert float(node.value) == table.log_marginal


class TestCheckpoint:
    def test_round_trip_is_bit_exact(self, tmp_path):
        model = TreeSeqModel(small_config(emission_mode="lexical_attention", seed=3))
        model.src_vocab_sha = "a" * 64
        model.tgt_vocab_sha = "b" * 64
        path = os.path.join(tmp_path, "model.ckpt")
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert loaded.config == model.config
        assert loaded.src_vocab_sha == model.src_vocab_sha
        assert loaded.tgt_vocab_sha == model.tgt_vocab_sha
        assert set(loaded.params) == set(model.params)
        for name, p in model.params.items():
            assert np.array_equal(loaded.params[name].values, p.values)

    def test_garbage_file_rejected(self, tmp_path):
        path = os.path.join(tmp_path, "bad.ckpt")
        with open(path, "wb") as fh:
            fh.write(b"not a checkpoint")
        with pytest.raises(DomainError):
            load_checkpoint(path)

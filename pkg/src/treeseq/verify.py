"""Self-contained oracle checks runnable from the command line.

Each check pits a fast implementation against a brute-force reference built
on the internal-tree enumerator, or against finite differences. They are the
same cross-checks the test suite pins down, packaged for quick field runs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, check_gradients
from .decode import best_tree_given_tokens, decode_joint
from .logmath import NEG_INF, logsumexp
from .marginal import EmissionGrid, marginal_log_likelihood
from .model import ModelConfig, TreeSeqModel
from .prior import SplitField, compute_split_field, tree_probability_pi
from .topology import CompleteTreeTopology, build_topology, enumerate_internal_trees


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_split_field(
    topology: CompleteTreeTopology, rng: np.random.Generator
) -> SplitField:
    l = rng.uniform(0.02, 0.98, size=topology.vertex_count)
    return compute_split_field(topology, np.log(l), np.log1p(-l))


def random_emission_log_probs(
    topology: CompleteTreeTopology, vocab: int, rng: np.random.Generator
) -> np.ndarray:
    logits = rng.normal(size=(topology.vertex_count, vocab))
    return logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))


def brute_marginal(field: SplitField, emissions: EmissionGrid, n_tokens: int) -> float:
    """Sum over enumerated trees of prior times emissions: the DP's oracle."""
    scores = []
    for tree in enumerate_internal_trees(field.topology, n_tokens):
        prior = tree_probability_pi(field, tree)
        emitted = sum(
            float(emissions.log_probs[v - 1, n]) for n, v in enumerate(tree.leaf_vertices)
        )
        scores.append(prior + emitted)
    return logsumexp(np.asarray(scores)) if scores else NEG_INF


def brute_best_joint(
    field: SplitField, token_log_probs: np.ndarray, max_len: int
) -> tuple[tuple[int, ...], tuple[int, ...], float]:
    """Exhaustive argmax over (sequence, tree) pairs up to ``max_len`` tokens.

    Returns (tokens, leaf vertices, score); iterates every token assignment
    explicitly rather than reusing per-leaf maxima, to stay independent of
    the decoder's shortcuts.
    """
    vocab = token_log_probs.shape[1]
    best = (None, None, NEG_INF)
    for n in range(1, max_len + 1):
        for tree in enumerate_internal_trees(field.topology, n):
            prior = tree_probability_pi(field, tree)
            for assignment in itertools.product(range(vocab), repeat=n):
                score = prior + sum(
                    float(token_log_probs[v - 1, t])
                    for v, t in zip(tree.leaf_vertices, assignment)
                )
                if score > best[2]:
                    best = (assignment, tree.leaf_vertices, score)
    return best


def brute_best_tree(
    field: SplitField, emissions: EmissionGrid, n_tokens: int
) -> tuple[tuple[int, ...], float]:
    """Exhaustive argmax over trees for a fixed sentence."""
    best_leaves, best_score = None, NEG_INF
    for tree in enumerate_internal_trees(field.topology, n_tokens):
        score = tree_probability_pi(field, tree) + sum(
            float(emissions.log_probs[v - 1, n]) for n, v in enumerate(tree.leaf_vertices)
        )
        if score > best_score:
            best_leaves, best_score = tree.leaf_vertices, score
    return best_leaves, best_score


# ------------------------------------------------------------------ checks
def check_successive_leaves(max_depth: int = 4) -> CheckResult:
    worst = ""
    for depth in range(max_depth + 1):
        topo = build_topology(depth)
        harvested = set()
        for n in range(1, topo.max_leaves() + 1):
            for tree in enumerate_internal_trees(topo, n):
                leaves = tree.leaf_vertices
                harvested.update(zip(leaves, leaves[1:]))
        if harvested != set(topo.transitions):
            worst = f"depth {depth}: constructed S != harvested pairs"
            break
    return CheckResult("successive-leaves vs enumeration", not worst, worst or f"depths 0..{max_depth}")


def check_prior_normalization(max_depth: int = 4, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst_gap = 0.0
    for depth in range(1, max_depth + 1):
        topo = build_topology(depth)
        l = rng.uniform(0.05, 0.95, size=topo.vertex_count)
        l[topo.max_leaves() - 1 :] = 1.0  # bottom level must stop
        field = compute_split_field(topo, np.log(l))
        total = 0.0
        for n in range(1, topo.max_leaves() + 1):
            for tree in enumerate_internal_trees(topo, n):
                total += np.exp(tree_probability_pi(field, tree))
        worst_gap = max(worst_gap, abs(total - 1.0))
    return CheckResult(
        "prior normalization with bottom-level stop", worst_gap < 1e-9, f"max |sum-1| = {worst_gap:.2e}"
    )


def check_marginal_oracle(
    max_depth: int = 4, instances: int = 20, seed: int = 0
) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for depth in range(1, max_depth + 1):
        topo = build_topology(depth)
        for n_tokens in range(1, min(topo.max_leaves(), 8) + 1):
            for _ in range(instances):
                field = random_split_field(topo, rng)
                grid = EmissionGrid(
                    -rng.exponential(1.0, size=(topo.vertex_count, n_tokens))
                )
                got = marginal_log_likelihood(field, grid, n_tokens).log_marginal
                want = brute_marginal(field, grid, n_tokens)
                worst = max(worst, abs(got - want))
    return CheckResult("marginal DP vs brute force", worst < 1e-9, f"max |gap| = {worst:.2e}")


def check_decoder_oracle(instances: int = 10, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    topo = build_topology(3)
    for _ in range(instances):
        field = random_split_field(topo, rng)
        lp = random_emission_log_probs(topo, 3, rng)
        result = decode_joint(field, lp)
        tokens, leaves, score = brute_best_joint(field, lp, topo.max_leaves())
        if result.tokens != tokens or result.tree.leaf_vertices != leaves:
            return CheckResult("joint decode vs brute force", False, "argmax mismatch")
        if abs(result.log_joint - score) > 1e-9:
            return CheckResult("joint decode vs brute force", False, "score mismatch")
    return CheckResult("joint decode vs brute force", True, f"{instances} instances, depth 3")


def check_gradient_fidelity(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    config = ModelConfig(
        depth=3, dim=8, src_vocab_size=6, tgt_vocab_size=5, seed=seed
    )
    model = TreeSeqModel(config)
    src = tuple(rng.integers(0, config.src_vocab_size, size=4).tolist())
    tgt = tuple(rng.integers(0, config.tgt_vocab_size, size=5).tolist())

    def build():
        tape = Tape()
        loss = tape.neg(model.sequence_log_marginal(tape, src, tgt))
        return tape, loss

    report = check_gradients(
        build, model.parameters(), step=1e-5, tolerance=1e-4, max_coords_per_param=4
    )
    return CheckResult(
        "end-to-end gradient vs finite differences",
        report.ok,
        f"max rel err = {report.max_relative_error:.2e}",
    )


def run_all(max_depth: int = 4, seed: int = 0) -> list[CheckResult]:
    return [
        check_successive_leaves(max_depth),
        check_prior_normalization(max_depth, seed),
        check_marginal_oracle(min(max_depth, 4), instances=10, seed=seed),
        check_decoder_oracle(instances=10, seed=seed),
        check_gradient_fidelity(seed),
    ]

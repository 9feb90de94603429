"""Stick-breaking prior over internal trees.

Each vertex carries a stop probability l (emit a token here) versus 1 - l
(split into two children). A tree's probability is the product of l over its
leaves and (1 - l) over its internal vertices. The memoized per-vertex value
m(v) folds the ancestor (1 - l) factors into the leaves, halving the log of
the parent's running value at every level, so that the same tree probability
is recovered as the product of m over the leaves alone. Everything is kept
in the log domain; the fractional powers become exact halvings there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .topology import CompleteTreeTopology, InternalTree

_LOG_TOL = 1e-12  # slack for log-probabilities that should be <= 0


@dataclass(frozen=True, eq=False)
class SplitField:
    """Per-vertex log split probabilities and their memoized leaf values."""

    topology: CompleteTreeTopology
    log_l: np.ndarray
    log_one_minus_l: np.ndarray
    log_m: np.ndarray
    log_m_tilde: np.ndarray


def compute_split_field(
    topology: CompleteTreeTopology,
    log_l: np.ndarray,
    log_one_minus_l: "np.ndarray | None" = None,
) -> SplitField:
    """Fill the memoized leaf values top-down, level by level.

    ``log_one_minus_l`` may be supplied when both components come from a
    normalized two-way softmax; otherwise it is derived as log(1 - l).
    """
    m = topology.vertex_count
    log_l = np.asarray(log_l, dtype=np.float64)
    if log_l.shape != (m,):
        raise DomainError(f"log_l must have shape ({m},), got {log_l.shape}")
    if np.any(log_l > _LOG_TOL):
        raise DomainError("log_l has entries > 0; split probabilities must be <= 1")
    log_l = np.minimum(log_l, 0.0)
    if log_one_minus_l is None:
        with np.errstate(divide="ignore"):
            log_one_minus_l = np.log1p(-np.exp(log_l))
    else:
        log_one_minus_l = np.asarray(log_one_minus_l, dtype=np.float64)
        if log_one_minus_l.shape != (m,):
            raise DomainError(f"log_one_minus_l must have shape ({m},)")
        if np.any(log_one_minus_l > _LOG_TOL):
            raise DomainError("log_one_minus_l has entries > 0")
        log_one_minus_l = np.minimum(log_one_minus_l, 0.0)

    log_m = np.empty(m)
    log_m_tilde = np.empty(m)
    # The (virtual) parent of the root carries value 1, so its halved log is 0.
    log_m[0] = log_l[0]
    log_m_tilde[0] = log_one_minus_l[0]
    for level in range(1, topology.depth + 1):
        lo, hi = 2**level - 1, 2 ** (level + 1) - 1
        parent_halved = 0.5 * np.repeat(log_m_tilde[2 ** (level - 1) - 1 : lo], 2)
        log_m[lo:hi] = parent_halved + log_l[lo:hi]
        log_m_tilde[lo:hi] = parent_halved + log_one_minus_l[lo:hi]

    field = SplitField(
        topology=topology,
        log_l=log_l,
        log_one_minus_l=log_one_minus_l,
        log_m=log_m,
        log_m_tilde=log_m_tilde,
    )
    for arr in (field.log_l, field.log_one_minus_l, field.log_m, field.log_m_tilde):
        arr.setflags(write=False)
    return field


def _check_tree(field: SplitField, tree: InternalTree) -> None:
    if 1 not in tree.member_vertices:
        raise DomainError("tree is not rooted at the topology root")
    if max(tree.member_vertices) > field.topology.vertex_count:
        raise DomainError("tree has vertices outside this topology")


def tree_probability_pi(field: SplitField, tree: InternalTree) -> float:
    """Log prior of a tree by the recursive stop/split product from the root."""
    _check_tree(field, tree)
    members = tree.member_vertices

    def rec(v: int) -> float:
        if 2 * v in members:
            return float(field.log_one_minus_l[v - 1]) + rec(2 * v) + rec(2 * v + 1)
        return float(field.log_l[v - 1])

    return rec(1)


def tree_probability_from_m(field: SplitField, tree: InternalTree) -> float:
    """Log prior of a tree as the sum of memoized log m over its leaves."""
    _check_tree(field, tree)
    return float(sum(field.log_m[v - 1] for v in tree.leaf_vertices))


def split_field_nodes(tape, topology: CompleteTreeTopology, log_l, log_one_minus_l):
    """Differentiable twin of ``compute_split_field``.

    Takes tape nodes holding the per-vertex log split probabilities and
    returns (log_m, log_m_tilde) nodes in heap order. Matches the numpy
    version bit for bit: the same halvings and adds in the same order.
    """
    m_levels = [tape.gather_rows(log_l, np.asarray([0]))]
    tilde_levels = [tape.gather_rows(log_one_minus_l, np.asarray([0]))]
    for level in range(1, topology.depth + 1):
        lo, hi = 2**level - 1, 2 ** (level + 1) - 1
        positions = np.arange(lo, hi)
        parent_halved = tape.gather_rows(
            tape.halve(tilde_levels[-1]), np.repeat(np.arange(2 ** (level - 1)), 2)
        )
        m_levels.append(tape.add(parent_halved, tape.gather_rows(log_l, positions)))
        tilde_levels.append(
            tape.add(parent_halved, tape.gather_rows(log_one_minus_l, positions))
        )
    if topology.depth == 0:
        return m_levels[0], tilde_levels[0]
    return tape.concat(m_levels, axis=0), tape.concat(tilde_levels, axis=0)

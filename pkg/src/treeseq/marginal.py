"""Exact sequence likelihood by dynamic programming over leaf walks.

The table cell M(v, n) accumulates, over every internal tree whose n-th leaf
is v, the product of emission and memoized prior values for the first n
tokens. Column 1 lives on the left boundary; advancing a column sums over
the incoming successive-leaf transitions; the sequence marginal is the sum
of the final column over the right boundary. Cells with no incomplete tree
ending there hold -inf exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .logmath import NEG_INF, logsumexp, segment_logsumexp
from .prior import SplitField
from .topology import CompleteTreeTopology

_LOG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EmissionGrid:
    """Per-vertex, per-position token log probabilities for one sequence.

    ``token_ids`` records which vocabulary entries the columns were gathered
    for, when known; grids built directly from positional scores leave it None.
    """

    log_probs: np.ndarray  # (vertex_count, n_tokens)
    token_ids: "tuple[int, ...] | None" = None

    @classmethod
    def from_token_log_probs(
        cls, per_vertex_log_probs: np.ndarray, token_ids: "np.ndarray | list[int] | tuple[int, ...]"
    ) -> "EmissionGrid":
        """Gather the observed tokens' columns out of an (M, vocab) table."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.ndim != 1 or token_ids.size == 0:
            raise DomainError("token_ids must be a non-empty 1-D sequence")
        if token_ids.min() < 0 or token_ids.max() >= per_vertex_log_probs.shape[1]:
            raise DomainError("token id outside the emission table's vocabulary")
        return cls(
            log_probs=np.asarray(per_vertex_log_probs, dtype=np.float64)[:, token_ids],
            token_ids=tuple(int(t) for t in token_ids),
        )

    def __post_init__(self) -> None:
        grid = np.asarray(self.log_probs, dtype=np.float64)
        if grid.ndim != 2:
            raise DomainError(f"emission grid must be 2-D, got shape {grid.shape}")
        if np.any(grid > _LOG_TOL):
            raise DomainError("emission grid has log probabilities > 0")
        object.__setattr__(self, "log_probs", np.minimum(grid, 0.0))

    @property
    def n_tokens(self) -> int:
        return self.log_probs.shape[1]


@dataclass(frozen=True, eq=False)
class MarginalTable:
    """Full DP table plus the sequence log marginal."""

    topology: CompleteTreeTopology
    log_table: np.ndarray  # (vertex_count, n_tokens)
    reached_mask: np.ndarray  # bool, structural reachability of each cell
    log_marginal: float


def marginal_log_likelihood(
    field: SplitField, emissions: EmissionGrid, n_tokens: int
) -> MarginalTable:
    """Run the prefix DP and return the filled table.

    Sequences longer than the maximum leaf count come back with probability
    zero (log marginal -inf) rather than raising: the generative process
    simply cannot produce them.
    """
    topo = field.topology
    m = topo.vertex_count
    if n_tokens < 1:
        raise DomainError(f"n_tokens must be positive, got {n_tokens}")
    if emissions.log_probs.shape[0] != m or emissions.n_tokens < n_tokens:
        raise DomainError(
            f"emissions of shape {emissions.log_probs.shape} do not cover "
            f"{m} vertices x {n_tokens} tokens"
        )
    e = emissions.log_probs

    table = np.full((m, n_tokens), NEG_INF)
    reached = np.zeros((m, n_tokens), dtype=bool)
    col = np.full(m, NEG_INF)
    col[topo.bl_pos] = e[topo.bl_pos, 0] + field.log_m[topo.bl_pos]
    table[:, 0] = col
    reached[topo.bl_pos, 0] = True
    for n in range(1, n_tokens):
        summed = segment_logsumexp(col[topo.in_src], topo.in_ptr, topo.in_dst)
        col = e[:, n] + field.log_m + summed
        table[:, n] = col
        prev_reached = reached[:, n - 1]
        hits = np.zeros(m, dtype=np.int64)
        np.add.at(hits, topo.in_dst, prev_reached[topo.in_src].astype(np.int64))
        reached[:, n] = hits > 0

    log_marginal = logsumexp(col[topo.br_pos])
    table.setflags(write=False)
    reached.setflags(write=False)
    return MarginalTable(
        topology=topo, log_table=table, reached_mask=reached, log_marginal=log_marginal
    )


def marginal_log_likelihood_streaming(
    field: SplitField, emissions: EmissionGrid, n_tokens: int
) -> float:
    """Rolling-column variant: the scalar log marginal without the table."""
    topo = field.topology
    if n_tokens < 1:
        raise DomainError(f"n_tokens must be positive, got {n_tokens}")
    if emissions.log_probs.shape[0] != topo.vertex_count or emissions.n_tokens < n_tokens:
        raise DomainError("emissions do not cover the requested sequence")
    e = emissions.log_probs
    col = np.full(topo.vertex_count, NEG_INF)
    col[topo.bl_pos] = e[topo.bl_pos, 0] + field.log_m[topo.bl_pos]
    for n in range(1, n_tokens):
        summed = segment_logsumexp(col[topo.in_src], topo.in_ptr, topo.in_dst)
        col = e[:, n] + field.log_m + summed
    return logsumexp(col[topo.br_pos])


def prefix_marginals(table: MarginalTable) -> np.ndarray:
    """Log marginal of every prefix length: right-boundary sum per column."""
    br = table.topology.br_pos
    return np.asarray(
        [logsumexp(table.log_table[br, n]) for n in range(table.log_table.shape[1])]
    )


def marginal_log_likelihood_nodes(tape, topology, log_m, emission_grid, n_tokens: int):
    """Differentiable twin of ``marginal_log_likelihood``.

    ``log_m`` and ``emission_grid`` are tape nodes ((M,) and (M, n_tokens));
    returns the scalar log-marginal node. Unreachable cells stay at -inf
    inside the column nodes and receive exactly zero adjoint weight, so no
    gradient flows through structural zeros.
    """
    if n_tokens < 1:
        raise DomainError(f"n_tokens must be positive, got {n_tokens}")
    col = tape.keep_only(tape.add(tape.take_col(emission_grid, 0), log_m), topology.bl_pos)
    for n in range(1, n_tokens):
        carried = tape.incoming_logsumexp(col, topology)
        col = tape.add(tape.add(tape.take_col(emission_grid, n), log_m), carried)
    return tape.logsumexp_at(col, topology.br_pos)

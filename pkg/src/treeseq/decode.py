"""Max-product decoding over sequences and trees.

``decode_joint`` maximizes over token sequence and tree simultaneously: the
per-vertex best token score replaces the observed emission, sums become
maxima with back-pointers, and the search stops once no frontier value can
beat the best complete walk found so far (every further step multiplies by
factors <= 1). ``best_tree_given_tokens`` is the same recursion with the
tokens pinned, yielding the MAP tree for an observed sentence.

Ties resolve deterministically: lowest vertex, then lowest token id, and
among equal-scoring lengths the shortest is kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, DomainError
from .logmath import NEG_INF, segment_max_argmax
from .marginal import EmissionGrid
from .prior import SplitField
from .topology import InternalTree, internal_tree_from_leaves


@dataclass(frozen=True)
class DecodeResult:
    tokens: tuple[int, ...]
    tree: InternalTree
    log_joint: float


def decode_joint(
    field: SplitField,
    token_log_probs: np.ndarray,
    max_len: "int | None" = None,
) -> DecodeResult:
    """Highest-probability (sequence, tree) pair under the model.

    ``token_log_probs`` is the (vertex_count, vocab) emission table;
    ``max_len`` is a safety cap on top of the natural stopping criterion and
    defaults to the structural maximum 2**depth.
    """
    topo = field.topology
    m = topo.vertex_count
    token_log_probs = np.asarray(token_log_probs, dtype=np.float64)
    if token_log_probs.ndim != 2 or token_log_probs.shape[0] != m:
        raise DomainError(
            f"token_log_probs must be ({m}, vocab), got {token_log_probs.shape}"
        )
    if max_len is None:
        max_len = topo.max_leaves()
    if max_len < 1:
        raise DomainError(f"max_len must be positive, got {max_len}")

    best_token = np.argmax(token_log_probs, axis=1)
    best_token_score = token_log_probs[np.arange(m), best_token]
    # Column weight: best emission times leaf value, fixed across columns.
    weight = best_token_score + field.log_m

    col = np.full(m, NEG_INF)
    col[topo.bl_pos] = weight[topo.bl_pos]
    back: list[np.ndarray] = [np.full(m, -1, dtype=np.int64)]

    best_score = NEG_INF
    best_len = 0
    best_vertex_pos = -1
    n = 1
    while True:
        frontier = col[topo.br_pos]
        top = int(np.argmax(frontier))
        if frontier[top] > best_score:
            best_score = float(frontier[top])
            best_len = n
            best_vertex_pos = int(topo.br_pos[top])
        if n >= max_len:
            break
        col_max = float(np.max(col))
        # Values only shrink, so once the whole frontier is below the best
        # complete walk, no longer sequence can win.
        if col_max == NEG_INF or col_max < best_score:
            break
        carried, arg = segment_max_argmax(col[topo.in_src], topo.in_ptr, topo.in_src)
        col = weight + carried
        back.append(arg)
        n += 1

    if best_score == NEG_INF:
        raise DecodeError("no finite-probability full tree within the length cap")

    positions = [best_vertex_pos]
    for step in range(best_len - 1, 0, -1):
        positions.append(int(back[step][positions[-1]]))
    positions.reverse()
    tokens = tuple(int(best_token[p]) for p in positions)
    tree = internal_tree_from_leaves(topo, [p + 1 for p in positions])
    return DecodeResult(tokens=tokens, tree=tree, log_joint=best_score)


def best_tree_given_tokens(
    field: SplitField, emissions: EmissionGrid, n_tokens: int
) -> DecodeResult:
    """MAP tree for an observed sentence: max-product with tokens fixed."""
    topo = field.topology
    m = topo.vertex_count
    if n_tokens < 1:
        raise DomainError(f"n_tokens must be positive, got {n_tokens}")
    if n_tokens > topo.max_leaves():
        raise DomainError(
            f"{n_tokens} tokens cannot fit on a depth-{topo.depth} tree "
            f"(maximum {topo.max_leaves()} leaves)"
        )
    if emissions.log_probs.shape[0] != m or emissions.n_tokens < n_tokens:
        raise DomainError("emissions do not cover the requested sequence")
    e = emissions.log_probs

    col = np.full(m, NEG_INF)
    col[topo.bl_pos] = e[topo.bl_pos, 0] + field.log_m[topo.bl_pos]
    back: list[np.ndarray] = [np.full(m, -1, dtype=np.int64)]
    for n in range(1, n_tokens):
        carried, arg = segment_max_argmax(col[topo.in_src], topo.in_ptr, topo.in_src)
        col = e[:, n] + field.log_m + carried
        back.append(arg)

    frontier = col[topo.br_pos]
    top = int(np.argmax(frontier))
    if frontier[top] == NEG_INF:
        raise DecodeError("the sentence has probability zero under this field")
    positions = [int(topo.br_pos[top])]
    for step in range(n_tokens - 1, 0, -1):
        positions.append(int(back[step][positions[-1]]))
    positions.reverse()
    tree = internal_tree_from_leaves(topo, [p + 1 for p in positions])
    if emissions.token_ids is not None:
        tokens = emissions.token_ids[:n_tokens]
    else:
        tokens = (-1,) * n_tokens  # grid built without vocabulary ids
    return DecodeResult(tokens=tokens, tree=tree, log_joint=float(frontier[top]))


def rescore_joint(
    field: SplitField, token_log_probs: np.ndarray, result: DecodeResult
) -> float:
    """Prior plus emissions of a decoded pair, folded exactly as the DP folds.

    Matching the DP's association order makes the identity with
    ``result.log_joint`` hold bit for bit, not just within tolerance.
    """
    acc = 0.0
    for token, vertex in zip(result.tokens, result.tree.leaf_vertices):
        acc = (token_log_probs[vertex - 1, token] + field.log_m[vertex - 1]) + acc
    return float(acc)


def rescore_tree(field: SplitField, emissions: EmissionGrid, result: DecodeResult) -> float:
    """Same as ``rescore_joint`` for a fixed observed sentence."""
    acc = 0.0
    for n, vertex in enumerate(result.tree.leaf_vertices):
        acc = (emissions.log_probs[vertex - 1, n] + field.log_m[vertex - 1]) + acc
    return float(acc)

"""Static structure of the depth-D complete binary tree.

Vertices are the integers 1..M (M = 2**(depth+1) - 1) in level order: the
root is 1 and vertex v has children 2v and 2v+1. Figures elsewhere label
vertices by in-order position instead (left subtree, root, right subtree);
``display_index`` / ``vertex_from_display`` convert between the two.

An *internal tree* is a full binary tree (every vertex has 0 or 2 children)
rooted at vertex 1 and embedded in the complete tree. Token sequences are
read off its leaves, left to right. The transition set S holds every pair of
vertices that can appear as consecutive leaves of some internal tree; walks
along S from the left boundary to the right boundary are in bijection with
internal trees, which is what the sequence DP exploits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, DomainError

MAX_DEPTH = 14  # 2**(14+1) - 1 = 32767 vertices; memory doubles per level


@dataclass(frozen=True, eq=False)
class CompleteTreeTopology:
    """Immutable scaffold shared by every operation in the package."""

    depth: int
    vertex_count: int
    left_boundary: tuple[int, ...]
    right_boundary: tuple[int, ...]
    transitions: frozenset[tuple[int, int]]
    incoming: tuple[tuple[int, ...], ...]
    # 0-based array-position views of the above, used by the numeric kernels.
    bl_pos: np.ndarray
    br_pos: np.ndarray
    in_ptr: np.ndarray  # CSR offsets into in_src, one segment per vertex
    in_src: np.ndarray  # predecessor positions, ascending within a segment
    in_dst: np.ndarray  # destination position per in_src entry
    display_of: np.ndarray  # in-order label per position
    vertex_of_display: np.ndarray  # inverse mapping, index = label - 1

    def parent(self, v: int) -> int:
        self.validate_vertex(v)
        if v == 1:
            raise DomainError("the root has no parent")
        return v // 2

    def left_child(self, v: int) -> int:
        self.validate_vertex(v)
        if self.is_leaf(v):
            raise DomainError(f"vertex {v} is a leaf of the complete tree")
        return 2 * v

    def right_child(self, v: int) -> int:
        self.validate_vertex(v)
        if self.is_leaf(v):
            raise DomainError(f"vertex {v} is a leaf of the complete tree")
        return 2 * v + 1

    def is_leaf(self, v: int) -> bool:
        self.validate_vertex(v)
        return 2 * v > self.vertex_count

    def level(self, v: int) -> int:
        self.validate_vertex(v)
        return v.bit_length() - 1

    def max_leaves(self) -> int:
        return 2**self.depth

    def display_index(self, v: int) -> int:
        """In-order label of vertex v (figure-style numbering)."""
        self.validate_vertex(v)
        return int(self.display_of[v - 1])

    def vertex_from_display(self, label: int) -> int:
        if not 1 <= label <= self.vertex_count:
            raise DomainError(f"display label {label} outside 1..{self.vertex_count}")
        return int(self.vertex_of_display[label - 1])

    def validate_vertex(self, v: int) -> None:
        if not isinstance(v, (int, np.integer)) or not 1 <= v <= self.vertex_count:
            raise DomainError(f"vertex {v!r} outside 1..{self.vertex_count}")


@dataclass(frozen=True)
class InternalTree:
    """A full binary tree embedded in the complete tree, as leaf walk + vertex set."""

    leaf_vertices: tuple[int, ...]
    member_vertices: frozenset[int]

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_vertices)


def build_topology(depth: int, max_depth: int = MAX_DEPTH) -> CompleteTreeTopology:
    """Construct the complete tree of the given depth with its transition set.

    S is built by the recursive rule S(v) = S(left) u S(right) u
    (right boundary of left subtree x left boundary of right subtree).
    """
    if not isinstance(depth, (int, np.integer)) or depth < 0:
        raise DomainError(f"depth must be a non-negative integer, got {depth!r}")
    if depth > max_depth:
        raise CapacityError(
            f"depth {depth} exceeds the configured maximum {max_depth} "
            f"({2 ** (depth + 1) - 1} vertices)"
        )
    m = 2 ** (depth + 1) - 1

    pairs, bl, br = _successive_leaves(1, m)

    incoming_lists: list[list[int]] = [[] for _ in range(m)]
    for u, v in pairs:
        incoming_lists[v - 1].append(u)
    incoming = tuple(tuple(sorted(lst)) for lst in incoming_lists)

    counts = np.fromiter((len(lst) for lst in incoming), dtype=np.int64, count=m)
    in_ptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(counts, out=in_ptr[1:])
    in_src = np.fromiter(
        (u - 1 for lst in incoming for u in lst), dtype=np.int64, count=int(in_ptr[-1])
    )
    in_dst = np.repeat(np.arange(m, dtype=np.int64), counts)

    order = _inorder(m)
    display_of = np.empty(m, dtype=np.int64)
    display_of[order - 1] = np.arange(1, m + 1)
    vertex_of_display = order

    topo = CompleteTreeTopology(
        depth=int(depth),
        vertex_count=m,
        left_boundary=tuple(bl),
        right_boundary=tuple(br),
        transitions=frozenset(pairs),
        incoming=incoming,
        bl_pos=np.asarray([v - 1 for v in bl], dtype=np.int64),
        br_pos=np.asarray([v - 1 for v in br], dtype=np.int64),
        in_ptr=in_ptr,
        in_src=in_src,
        in_dst=in_dst,
        display_of=display_of,
        vertex_of_display=vertex_of_display,
    )
    for arr in (topo.bl_pos, topo.br_pos, topo.in_ptr, topo.in_src, topo.in_dst,
                topo.display_of, topo.vertex_of_display):
        arr.setflags(write=False)
    return topo


def _successive_leaves(v: int, m: int) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    if 2 * v > m:
        return [], [v], [v]
    s_left, bl_left, br_left = _successive_leaves(2 * v, m)
    s_right, bl_right, br_right = _successive_leaves(2 * v + 1, m)
    crossing = [(a, b) for a in br_left for b in bl_right]
    return s_left + s_right + crossing, [v] + bl_left, [v] + br_right


def _inorder(m: int) -> np.ndarray:
    out: list[int] = []
    stack: list[int] = []
    v = 1
    while stack or v <= m:
        while v <= m:
            stack.append(v)
            v = 2 * v
        v = stack.pop()
        out.append(v)
        v = 2 * v + 1
    return np.asarray(out, dtype=np.int64)


def internal_tree_from_leaves(
    topology: CompleteTreeTopology, leaves: "list[int] | tuple[int, ...]"
) -> InternalTree:
    """Build and validate the internal tree whose leaf set is ``leaves``.

    The members are the ancestor closure of the leaves; the result is checked
    to be a full binary tree whose leaf set is exactly the input.
    """
    if not leaves:
        raise DomainError("an internal tree needs at least one leaf")
    members: set[int] = set()
    for v in leaves:
        topology.validate_vertex(v)
        w = int(v)
        while w >= 1 and w not in members:
            members.add(w)
            w //= 2
    zero_children = []
    for v in members:
        n_children = (2 * v in members) + (2 * v + 1 in members)
        if n_children == 1:
            raise DomainError(
                f"leaf set {tuple(leaves)} does not close to a full binary tree "
                f"(vertex {v} would have one child)"
            )
        if n_children == 0:
            zero_children.append(v)
    if set(zero_children) != {int(v) for v in leaves}:
        raise DomainError(f"leaf set {tuple(leaves)} contains a non-leaf vertex")
    ordered = tuple(sorted((int(v) for v in leaves), key=lambda v: topology.display_of[v - 1]))
    return InternalTree(leaf_vertices=ordered, member_vertices=frozenset(members))


def enumerate_internal_trees(
    topology: CompleteTreeTopology, n_leaves: int
) -> list[InternalTree]:
    """Every internal tree with exactly ``n_leaves`` leaves, by brute force.

    This is the correctness oracle for the transition set and both DPs; it is
    exponential and intended for small depths only.
    """
    if n_leaves < 1:
        raise DomainError(f"n_leaves must be positive, got {n_leaves}")
    trees = []
    for leaf_list in _leaf_lists(1, n_leaves, topology.depth):
        members: set[int] = set()
        for v in leaf_list:
            w = v
            while w >= 1 and w not in members:
                members.add(w)
                w //= 2
        trees.append(InternalTree(leaf_vertices=leaf_list, member_vertices=frozenset(members)))
    return trees


def _leaf_lists(v: int, n: int, depth_left: int) -> list[tuple[int, ...]]:
    if n == 1:
        return [(v,)]
    if depth_left == 0 or n > 2**depth_left:
        return []
    out: list[tuple[int, ...]] = []
    for k in range(1, n):
        left_lists = _leaf_lists(2 * v, k, depth_left - 1)
        if not left_lists:
            continue
        right_lists = _leaf_lists(2 * v + 1, n - k, depth_left - 1)
        for left in left_lists:
            for right in right_lists:
                out.append(left + right)
    return out


def leaf_path_to_root(topology: CompleteTreeTopology, v: int) -> list[int]:
    """Vertices from v up to the root, inclusive."""
    topology.validate_vertex(v)
    path = [int(v)]
    while path[-1] != 1:
        path.append(path[-1] // 2)
    return path


def render_tree(tree: InternalTree, leaf_labels: "list[str] | tuple[str, ...]") -> str:
    """Bracketed text form of a tree: leaves as "[label]", pairs as "[l r]"."""
    if len(leaf_labels) != tree.n_leaves:
        raise DomainError(
            f"{len(leaf_labels)} labels for a tree with {tree.n_leaves} leaves"
        )
    for label in leaf_labels:
        if not label or any(c in "[]" or c.isspace() for c in label):
            raise DomainError(f"label {label!r} not representable in bracket notation")
    labels = iter(leaf_labels)

    def rec(v: int) -> str:
        if 2 * v in tree.member_vertices:
            return f"[{rec(2 * v)} {rec(2 * v + 1)}]"
        return f"[{next(labels)}]"

    return rec(1)


def parse_rendered(text: str) -> "str | tuple":
    """Parse bracket notation back into nested (left, right) pairs of labels."""
    tokens = text.replace("[", " [ ").replace("]", " ] ").split()
    pos = 0

    def rec() -> "str | tuple":
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != "[":
            raise DomainError(f"expected '[' at token {pos} of {text!r}")
        pos += 1
        if pos < len(tokens) and tokens[pos] not in "[]":
            label = tokens[pos]
            pos += 1
            node: "str | tuple" = label
        else:
            left = rec()
            right = rec()
            node = (left, right)
        if pos >= len(tokens) or tokens[pos] != "]":
            raise DomainError(f"expected ']' at token {pos} of {text!r}")
        pos += 1
        return node

    node = rec()
    if pos != len(tokens):
        raise DomainError(f"trailing content in {text!r}")
    return node


def tree_from_parsed(
    topology: CompleteTreeTopology, parsed: "str | tuple"
) -> tuple[InternalTree, list[str]]:
    """Embed a parsed bracket structure at the topology root.

    Returns the internal tree plus its leaf labels in left-to-right order.
    """
    leaves: list[int] = []
    labels: list[str] = []

    def rec(v: int, node: "str | tuple") -> None:
        if isinstance(node, str):
            leaves.append(v)
            labels.append(node)
            return
        if 2 * v + 1 > topology.vertex_count:
            raise DomainError("parsed tree is deeper than the topology")
        rec(2 * v, node[0])
        rec(2 * v + 1, node[1])

    rec(1, parsed)
    return internal_tree_from_leaves(topology, leaves), labels

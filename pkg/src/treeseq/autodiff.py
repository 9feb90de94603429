"""Minimal reverse-mode differentiation over float64 numpy arrays.

A ``Tape`` records one op per node with cached forward values and a
vector-Jacobian closure; ``backward`` walks the records in reverse and
accumulates into ``Parameter.grad``. Everything is float64: the sequence DP
multiplies long chains of sub-unit factors and float32 does not survive
finite-difference checks.

Log-domain reductions treat -inf as an exact zero-probability sentinel:
their adjoints give such entries weight zero, so no gradient (and no NaN)
ever flows through a structurally impossible cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .logmath import NEG_INF

_LAYERNORM_EPS = 1e-5


class Parameter:
    """Named trainable tensor with a persistent gradient accumulator."""

    def __init__(self, name: str, values: np.ndarray):
        self.name = name
        self.values = np.array(values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.values.shape})"


class Node:
    """One recorded value. ``vjp(g)`` returns the gradients of the parents."""

    __slots__ = ("value", "parents", "vjp", "grad")

    def __init__(self, value, parents=(), vjp=None):
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    @property
    def shape(self):
        return self.value.shape


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tape:
    """Append-only op record; construction order is the topological order."""

    def __init__(self):
        self._nodes: list[Node] = []
        self._param_nodes: dict[int, tuple[Parameter, Node]] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def _push(self, value, parents=(), vjp=None) -> Node:
        node = Node(np.asarray(value, dtype=np.float64), parents, vjp)
        self._nodes.append(node)
        return node

    # ------------------------------------------------------------- leaves
    def const(self, x) -> Node:
        return self._push(x)

    def param(self, p: Parameter) -> Node:
        found = self._param_nodes.get(id(p))
        if found is not None:
            return found[1]
        node = self._push(p.values)
        self._param_nodes[id(p)] = (p, node)
        return node

    # ---------------------------------------------------------- arithmetic
    def add(self, a: Node, b: Node) -> Node:
        return self._push(
            a.value + b.value,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    def sub(self, a: Node, b: Node) -> Node:
        return self._push(
            a.value - b.value,
            (a, b),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        )

    def mul(self, a: Node, b: Node) -> Node:
        return self._push(
            a.value * b.value,
            (a, b),
            lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
        )

    def neg(self, a: Node) -> Node:
        return self._push(-a.value, (a,), lambda g: (-g,))

    def scale(self, a: Node, factor: float) -> Node:
        return self._push(a.value * factor, (a,), lambda g: (g * factor,))

    def halve(self, a: Node) -> Node:
        return self.scale(a, 0.5)

    def matmul(self, a: Node, b: Node) -> Node:
        if a.value.ndim != 2 or b.value.ndim != 2:
            raise DomainError("matmul expects 2-D operands")
        return self._push(
            a.value @ b.value,
            (a, b),
            lambda g: (g @ b.value.T, a.value.T @ g),
        )

    def affine(self, x: Node, w: Node, b: Node) -> Node:
        """x @ w.T + b with w stored (out_features, in_features)."""
        if x.value.ndim != 2:
            raise DomainError("affine expects a 2-D input")
        if x.value.shape[1] != w.value.shape[1]:
            raise DomainError(
                f"affine shape mismatch: input {x.value.shape} vs weight {w.value.shape}"
            )
        return self._push(
            x.value @ w.value.T + b.value,
            (x, w, b),
            lambda g: (g @ w.value, g.T @ x.value, g.sum(axis=0)),
        )

    def transpose(self, a: Node) -> Node:
        return self._push(a.value.T, (a,), lambda g: (g.T,))

    def reshape(self, a: Node, shape: tuple[int, ...]) -> Node:
        return self._push(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))

    # --------------------------------------------------------- activations
    def relu(self, a: Node) -> Node:
        mask = a.value > 0
        return self._push(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))

    def tanh(self, a: Node) -> Node:
        out = np.tanh(a.value)
        return self._push(out, (a,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self, a: Node) -> Node:
        out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
        return self._push(out, (a,), lambda g: (g * out * (1.0 - out),))

    def layernorm(self, a: Node) -> Node:
        """Row normalization to zero mean / unit variance, no learned affine."""
        mu = a.value.mean(axis=-1, keepdims=True)
        centered = a.value - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + _LAYERNORM_EPS)
        xhat = centered * inv

        def vjp(g):
            gm = g.mean(axis=-1, keepdims=True)
            gxm = (g * xhat).mean(axis=-1, keepdims=True)
            return (inv * (g - gm - xhat * gxm),)

        return self._push(xhat, (a,), vjp)

    def softmax(self, a: Node) -> Node:
        shifted = a.value - a.value.max(axis=-1, keepdims=True)
        expd = np.exp(shifted)
        out = expd / expd.sum(axis=-1, keepdims=True)
        return self._push(
            out, (a,), lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
        )

    def log_softmax(self, a: Node) -> Node:
        shifted = a.value - a.value.max(axis=-1, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

        def vjp(g):
            return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

        return self._push(out, (a,), vjp)

    # ------------------------------------------------------- log reductions
    def logsumexp(self, a: Node) -> Node:
        """Scalar logsumexp over the whole array, -inf aware."""
        top = float(np.max(a.value)) if a.value.size else NEG_INF
        if top == NEG_INF:
            out = NEG_INF
        else:
            out = top + float(np.log(np.sum(np.exp(a.value - top))))

        def vjp(g):
            if out == NEG_INF:
                return (np.zeros_like(a.value),)
            return (float(g) * np.exp(a.value - out),)

        return self._push(out, (a,), vjp)

    def logsumexp_at(self, a: Node, positions: np.ndarray) -> Node:
        """Scalar logsumexp of the selected entries of a 1-D array."""
        vals = a.value[positions]
        top = float(np.max(vals))
        out = NEG_INF if top == NEG_INF else top + float(np.log(np.sum(np.exp(vals - top))))

        def vjp(g):
            dz = np.zeros_like(a.value)
            if out != NEG_INF:
                dz[positions] = float(g) * np.exp(vals - out)
            return (dz,)

        return self._push(out, (a,), vjp)

    def incoming_logsumexp(self, a: Node, topology) -> Node:
        """Per-vertex logsumexp of the predecessor entries along the
        successive-leaf transitions (the DP column advance)."""
        from .logmath import segment_logsumexp

        out = segment_logsumexp(a.value[topology.in_src], topology.in_ptr, topology.in_dst)

        def vjp(g):
            dz = np.zeros_like(a.value)
            out_per_edge = out[topology.in_dst]
            finite = out_per_edge != NEG_INF
            if finite.any():
                src = topology.in_src[finite]
                w = np.exp(a.value[src] - out_per_edge[finite])
                np.add.at(dz, src, g[topology.in_dst[finite]] * w)
            return (dz,)

        return self._push(out, (a,), vjp)

    def keep_only(self, a: Node, positions: np.ndarray) -> Node:
        """Copy the selected entries of a 1-D array; everything else is -inf."""
        out = np.full(a.value.shape, NEG_INF)
        out[positions] = a.value[positions]

        def vjp(g):
            dz = np.zeros_like(a.value)
            dz[positions] = g[positions]
            return (dz,)

        return self._push(out, (a,), vjp)

    # ------------------------------------------------------------ indexing
    def gather_rows(self, a: Node, indices: np.ndarray) -> Node:
        indices = np.asarray(indices, dtype=np.int64)

        def vjp(g):
            dz = np.zeros_like(a.value)
            np.add.at(dz, indices, g)
            return (dz,)

        return self._push(a.value[indices], (a,), vjp)

    def gather_cols(self, a: Node, indices: np.ndarray) -> Node:
        indices = np.asarray(indices, dtype=np.int64)

        def vjp(g):
            dz = np.zeros_like(a.value)
            np.add.at(dz.T, indices, g.T)
            return (dz,)

        return self._push(a.value[:, indices], (a,), vjp)

    def take_col(self, a: Node, j: int) -> Node:
        def vjp(g):
            dz = np.zeros_like(a.value)
            dz[:, j] = g
            return (dz,)

        return self._push(a.value[:, j].copy(), (a,), vjp)

    def slice_cols(self, a: Node, start: int, stop: int) -> Node:
        def vjp(g):
            dz = np.zeros_like(a.value)
            dz[:, start:stop] = g
            return (dz,)

        return self._push(a.value[:, start:stop].copy(), (a,), vjp)

    def concat(self, parts: "list[Node]", axis: int = 0) -> Node:
        sizes = [p.value.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)

        def vjp(g):
            return tuple(
                np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                for i in range(len(parts))
            )

        return self._push(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)

    def mean_rows(self, a: Node) -> Node:
        n = a.value.shape[0]
        return self._push(
            a.value.mean(axis=0, keepdims=True),
            (a,),
            lambda g: (np.repeat(g / n, n, axis=0),),
        )

    def blend(self, gate: Node, a: Node, b: Node) -> Node:
        """gate * a + (1 - gate) * b, elementwise; b may broadcast."""
        out = gate.value * a.value + (1.0 - gate.value) * b.value
        return self._push(
            out,
            (gate, a, b),
            lambda g: (
                _unbroadcast(g * (a.value - b.value), gate.shape),
                _unbroadcast(g * gate.value, a.shape),
                _unbroadcast(g * (1.0 - gate.value), b.shape),
            ),
        )

    # ------------------------------------------------------------ backward
    def backward(self, loss: Node) -> None:
        """Accumulate d(loss)/d(param) into every touched Parameter's grad."""
        if loss.value.ndim != 0:
            raise DomainError("backward expects a scalar loss node")
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self._nodes):
            if node.grad is None or node.vjp is None:
                continue
            for parent, grad in zip(node.parents, node.vjp(node.grad)):
                if grad is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += grad
        for p, node in self._param_nodes.values():
            if node.grad is not None:
                p.grad += node.grad


@dataclass
class GradCheckReport:
    """Outcome of a finite-difference comparison."""

    max_relative_error: float
    worst_parameter: str
    worst_coordinate: tuple[int, ...]
    per_parameter: dict[str, float] = field(default_factory=dict)
    tolerance: "float | None" = None

    @property
    def ok(self) -> bool:
        return self.tolerance is None or self.max_relative_error < self.tolerance


def check_gradients(
    build_loss,
    params: "list[Parameter]",
    step: float = 1e-5,
    tolerance: "float | None" = None,
    max_coords_per_param: int = 10,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``build_loss`` must be a deterministic zero-argument callable returning a
    ``(tape, loss_node)`` pair built from the current parameter values. Up to
    ``max_coords_per_param`` coordinates per tensor are probed. The relative
    error denominator is floored at 1e-3 so that near-zero gradients are
    judged on the absolute scale where finite differences are trustworthy.
    """
    rng = np.random.default_rng(seed)
    for p in params:
        p.zero_grad()
    tape, loss = build_loss()
    tape.backward(loss)
    analytic = {p.name: p.grad.copy() for p in params}

    def loss_value() -> float:
        _, node = build_loss()
        return float(node.value)

    report = GradCheckReport(
        max_relative_error=0.0, worst_parameter="", worst_coordinate=(), tolerance=tolerance
    )
    for p in params:
        n_coords = min(max_coords_per_param, p.size)
        flat_choices = rng.choice(p.size, size=n_coords, replace=False)
        worst = 0.0
        for flat in flat_choices:
            coord = np.unravel_index(int(flat), p.values.shape)
            original = p.values[coord]
            p.values[coord] = original + step
            up = loss_value()
            p.values[coord] = original - step
            down = loss_value()
            p.values[coord] = original
            fd = (up - down) / (2.0 * step)
            an = analytic[p.name][coord]
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-3)
            if rel > worst:
                worst = rel
            if rel > report.max_relative_error:
                report.max_relative_error = rel
                report.worst_parameter = p.name
                report.worst_coordinate = tuple(int(c) for c in coord)
        report.per_parameter[p.name] = worst
    return report

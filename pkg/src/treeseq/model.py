"""Recursive decoder network producing split and emission scores per vertex.

A root embedding is split top-down by a gated two-layer production function,
doubling the set of hidden states at every level until the configured depth.
Two heads read every vertex embedding: a two-way log-softmax giving the
split/stop probabilities, and an emission head giving a distribution over
the target vocabulary. The emission head is either an MLP or lexical
attention, where each vertex queries the a-contextual source token
embeddings and mixes per-source-token output vectors, which lets the model
learn direct input-to-output token mappings.

Conditioning on a source sequence goes through ``encode_context``: the mean
of the source embeddings through a two-layer MLP serves as both the root
embedding and the (broadcast) context vector. In lexical-attention mode the
production context is instead recomputed per vertex by attending over the
source embeddings.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Node, Parameter, Tape
from .errors import DomainError
from .marginal import marginal_log_likelihood_nodes
from .prior import SplitField, compute_split_field, split_field_nodes
from .topology import MAX_DEPTH, CompleteTreeTopology, build_topology

EMISSION_MODES = ("mlp", "lexical_attention")
CONTEXT_MODES = ("none", "mean_mlp")

CHECKPOINT_MAGIC = b"TSEQCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    depth: int
    dim: int
    src_vocab_size: int
    tgt_vocab_size: int
    emission_mode: str = "mlp"
    context_mode: str = "mean_mlp"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.depth < 0 or self.depth > MAX_DEPTH:
            raise DomainError(f"depth must be in 0..{MAX_DEPTH}, got {self.depth}")
        if self.dim <= 0 or self.dim % 2 != 0:
            raise DomainError(f"dim must be a positive even integer, got {self.dim}")
        if self.src_vocab_size < 1 or self.tgt_vocab_size < 1:
            raise DomainError("vocabulary sizes must be positive")
        if self.emission_mode not in EMISSION_MODES:
            raise DomainError(f"emission_mode must be one of {EMISSION_MODES}")
        if self.context_mode not in CONTEXT_MODES:
            raise DomainError(f"context_mode must be one of {CONTEXT_MODES}")

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "dim": self.dim,
            "src_vocab_size": self.src_vocab_size,
            "tgt_vocab_size": self.tgt_vocab_size,
            "emission_mode": self.emission_mode,
            "context_mode": self.context_mode,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


@dataclass
class VertexEmbeddings:
    """Per-vertex hidden states (M, dim) and the contexts used to produce them."""

    vertices: Node
    contexts: Node  # (M, dim) in lexical-attention mode, (1, dim) otherwise


@dataclass
class HeadOutputs:
    log_l: Node
    log_one_minus_l: Node
    emission_log_probs: Node


@dataclass
class ForwardPass:
    embeddings: VertexEmbeddings
    heads: HeadOutputs
    log_m: Node
    log_m_tilde: Node


def _init_params(config: ModelConfig) -> dict[str, Parameter]:
    rng = np.random.default_rng(config.seed)
    d = config.dim

    def uniform(name: str, shape: tuple[int, ...], fan_in: int) -> Parameter:
        bound = 1.0 / np.sqrt(fan_in)
        return Parameter(name, rng.uniform(-bound, bound, size=shape))

    def zeros(name: str, shape: tuple[int, ...]) -> Parameter:
        return Parameter(name, np.zeros(shape))

    params: dict[str, Parameter] = {}

    def put(p: Parameter) -> None:
        params[p.name] = p

    needs_src = config.context_mode == "mean_mlp" or config.emission_mode == "lexical_attention"
    if needs_src:
        put(uniform("src_embed", (config.src_vocab_size, d), d))
    if config.context_mode == "mean_mlp":
        put(uniform("enc_w1", (d, d), d))
        put(zeros("enc_b1", (d,)))
        put(uniform("enc_w2", (d, d), d))
        put(zeros("enc_b2", (d,)))
    else:
        put(uniform("root_embed", (1, d), d))
    put(uniform("prod_w1", (2 * d, d), d))
    put(uniform("prod_u1", (2 * d, d), d))
    put(zeros("prod_b1", (2 * d,)))
    put(uniform("prod_w2", (2 * d, 2 * d), 2 * d))
    put(zeros("prod_b2", (2 * d,)))
    put(uniform("prod_w3", (2 * d, 2 * d), 2 * d))
    put(zeros("prod_b3", (2 * d,)))
    put(uniform("leaf_w", (2, d), d))
    put(zeros("leaf_b", (2,)))
    if config.emission_mode == "mlp":
        put(uniform("emit_w1", (d, d), d))
        put(zeros("emit_b1", (d,)))
        put(uniform("emit_w2", (config.tgt_vocab_size, d), d))
        put(zeros("emit_b2", (config.tgt_vocab_size,)))
    else:
        put(uniform("la_values", (config.src_vocab_size, d), d))
        put(uniform("la_out_w", (config.tgt_vocab_size, d), d))
        put(zeros("la_out_b", (config.tgt_vocab_size,)))
    return params


class TreeSeqModel:
    """Bundle of config, topology, and parameters with the forward passes."""

    def __init__(
        self,
        config: ModelConfig,
        topology: "CompleteTreeTopology | None" = None,
        params: "dict[str, Parameter] | None" = None,
    ):
        self.config = config
        self.topology = topology if topology is not None else build_topology(config.depth)
        if self.topology.depth != config.depth:
            raise DomainError("topology depth does not match the model config")
        self.params = params if params is not None else _init_params(config)
        self.src_vocab_sha: str = ""
        self.tgt_vocab_sha: str = ""

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # ----------------------------------------------------------- components
    def production_split(self, tape: Tape, h_parent: Node, context: Node) -> tuple[Node, Node]:
        """Split a batch of parent embeddings (P, d) into left/right children."""
        d = self.config.dim
        p = self.params
        pre = tape.add(
            tape.affine(h_parent, tape.param(p["prod_w1"]), tape.param(p["prod_b1"])),
            tape.matmul(context, tape.transpose(tape.param(p["prod_u1"]))),
        )
        hidden = tape.relu(pre)
        candidates = tape.tanh(
            tape.layernorm(
                tape.affine(hidden, tape.param(p["prod_w2"]), tape.param(p["prod_b2"]))
            )
        )
        gates = tape.sigmoid(
            tape.affine(hidden, tape.param(p["prod_w3"]), tape.param(p["prod_b3"]))
        )
        left = tape.blend(
            tape.slice_cols(gates, 0, d), tape.slice_cols(candidates, 0, d), h_parent
        )
        right = tape.blend(
            tape.slice_cols(gates, d, 2 * d), tape.slice_cols(candidates, d, 2 * d), h_parent
        )
        return left, right

    def encode_context(self, tape: Tape, src_ids: "list[int] | tuple[int, ...]") -> Node:
        """Mean source embedding through a two-layer MLP; (1, d) output."""
        if self.config.context_mode != "mean_mlp":
            raise DomainError("encode_context requires context_mode='mean_mlp'")
        if src_ids is None or len(src_ids) == 0:
            raise DomainError("cannot encode an empty source sequence")
        p = self.params
        embedded = tape.gather_rows(tape.param(p["src_embed"]), np.asarray(src_ids))
        pooled = tape.mean_rows(embedded)
        hidden = tape.relu(
            tape.affine(pooled, tape.param(p["enc_w1"]), tape.param(p["enc_b1"]))
        )
        return tape.affine(hidden, tape.param(p["enc_w2"]), tape.param(p["enc_b2"]))

    def _source_keys(self, tape: Tape, src_ids) -> Node:
        return tape.gather_rows(tape.param(self.params["src_embed"]), np.asarray(src_ids))

    def _attention_weights(self, tape: Tape, queries: Node, keys: Node) -> Node:
        scores = tape.scale(
            tape.matmul(queries, tape.transpose(keys)), 1.0 / np.sqrt(self.config.dim)
        )
        return tape.softmax(scores)

    def expand(
        self,
        tape: Tape,
        root: Node,
        src_ids: "list[int] | tuple[int, ...] | None" = None,
        root_context: "Node | None" = None,
    ) -> VertexEmbeddings:
        """Apply the production function level by level down to the full depth."""
        lexical = self.config.emission_mode == "lexical_attention"
        if lexical:
            if src_ids is None or len(src_ids) == 0:
                raise DomainError("lexical attention needs a source sequence")
            keys = self._source_keys(tape, src_ids)
        if root_context is None:
            root_context = tape.const(np.zeros((1, self.config.dim)))

        levels = [root]
        context_levels = []
        current = root
        for level in range(self.config.depth):
            if lexical:
                context = tape.matmul(self._attention_weights(tape, current, keys), keys)
            else:
                context = root_context
            context_levels.append(context)
            left, right = self.production_split(tape, current, context)
            width = current.shape[0]
            interleave = np.empty(2 * width, dtype=np.int64)
            interleave[0::2] = np.arange(width)
            interleave[1::2] = np.arange(width) + width
            current = tape.gather_rows(tape.concat([left, right], axis=0), interleave)
            levels.append(current)

        vertices = levels[0] if self.config.depth == 0 else tape.concat(levels, axis=0)
        if lexical:
            # Bottom-level contexts are recorded too so contexts align with vertices.
            context_levels.append(
                tape.matmul(self._attention_weights(tape, current, keys), keys)
            )
            contexts = (
                context_levels[0]
                if self.config.depth == 0
                else tape.concat(context_levels, axis=0)
            )
        else:
            contexts = root_context
        return VertexEmbeddings(vertices=vertices, contexts=contexts)


    def heads(
        self,
        tape: Tape,
        embeddings: VertexEmbeddings,
        src_ids: "list[int] | tuple[int, ...] | None" = None,
    ) -> HeadOutputs:
        """Split head (two-way log-softmax: column 0 split, column 1 stop/leaf)
        and the emission head over the target vocabulary."""
        p = self.params
        h_all = embeddings.vertices
        leaf_scores = tape.log_softmax(
            tape.affine(h_all, tape.param(p["leaf_w"]), tape.param(p["leaf_b"]))
        )
        log_one_minus_l = tape.take_col(leaf_scores, 0)
        log_l = tape.take_col(leaf_scores, 1)

        if self.config.emission_mode == "mlp":
            hidden = tape.relu(
                tape.affine(h_all, tape.param(p["emit_w1"]), tape.param(p["emit_b1"]))
            )
            logits = tape.affine(hidden, tape.param(p["emit_w2"]), tape.param(p["emit_b2"]))
        else:
            if src_ids is None or len(src_ids) == 0:
                raise DomainError("lexical attention needs a source sequence")
            keys = self._source_keys(tape, src_ids)
            weights = self._attention_weights(tape, h_all, keys)
            mixed = tape.matmul(
                weights, tape.gather_rows(tape.param(p["la_values"]), np.asarray(src_ids))
            )
            logits = tape.affine(mixed, tape.param(p["la_out_w"]), tape.param(p["la_out_b"]))
        emission_log_probs = tape.log_softmax(logits)
        return HeadOutputs(
            log_l=log_l, log_one_minus_l=log_one_minus_l, emission_log_probs=emission_log_probs
        )

    # -------------------------------------------------------------- forward
    def forward(
        self, tape: Tape, src_ids: "list[int] | tuple[int, ...] | None" = None
    ) -> ForwardPass:
        if self.config.context_mode == "mean_mlp":
            if src_ids is None or len(src_ids) == 0:
                raise DomainError("context_mode='mean_mlp' needs a source sequence")
            root = self.encode_context(tape, src_ids)
            root_context = root
        else:
            root = tape.param(self.params["root_embed"])
            root_context = None
        embeddings = self.expand(tape, root, src_ids=src_ids, root_context=root_context)
        heads = self.heads(tape, embeddings, src_ids=src_ids)
        log_m, log_m_tilde = split_field_nodes(
            tape, self.topology, heads.log_l, heads.log_one_minus_l
        )
        return ForwardPass(
            embeddings=embeddings, heads=heads, log_m=log_m, log_m_tilde=log_m_tilde
        )

    def sequence_log_marginal(
        self,
        tape: Tape,
        src_ids: "list[int] | tuple[int, ...] | None",
        tgt_ids: "list[int] | tuple[int, ...]",
    ) -> Node:
        """Scalar node: log probability of the target sequence given the source."""
        if not tgt_ids:
            raise DomainError("target sequence must be non-empty")
        fp = self.forward(tape, src_ids)
        grid = tape.gather_cols(fp.heads.emission_log_probs, np.asarray(tgt_ids))
        return marginal_log_likelihood_nodes(
            tape, self.topology, fp.log_m, grid, len(tgt_ids)
        )

    def infer(
        self, src_ids: "list[int] | tuple[int, ...] | None" = None
    ) -> tuple[SplitField, np.ndarray]:
        """Inference-side scores: the split field plus the (M, vocab) emission
        table, as plain arrays identical to the training-path values."""
        tape = Tape()
        fp = self.forward(tape, src_ids)
        field = SplitField(
            topology=self.topology,
            log_l=fp.heads.log_l.value,
            log_one_minus_l=fp.heads.log_one_minus_l.value,
            log_m=fp.log_m.value,
            log_m_tilde=fp.log_m_tilde.value,
        )
        return field, fp.heads.emission_log_probs.value


# ------------------------------------------------------------- persistence
def vocab_sha256(tokens: "list[str] | tuple[str, ...]") -> str:
    return hashlib.sha256("\n".join(tokens).encode("utf-8")).hexdigest()


def save_checkpoint(model: TreeSeqModel, path: str) -> None:
    """Binary container: magic, version, JSON header, then named float64
    tensors (name, rank, dims, row-major little-endian data)."""
    names = list(model.params.keys())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "src_vocab_sha256": model.src_vocab_sha,
        "tgt_vocab_sha256": model.tgt_vocab_sha,
        "tensor_names": names,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in names:
            values = model.params[name].values
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", values.ndim))
            fh.write(struct.pack(f"<{values.ndim}Q", *values.shape))
            fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> TreeSeqModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DomainError(f"{path} is not a treeseq checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise DomainError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        model = TreeSeqModel(config)
        model.src_vocab_sha = header["src_vocab_sha256"]
        model.tgt_vocab_sha = header["tgt_vocab_sha256"]
        seen = []
        for _ in header["tensor_names"]:
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
            count = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(dims)
            if name not in model.params:
                raise DomainError(f"checkpoint tensor {name!r} unknown to this config")
            if model.params[name].shape != tuple(dims):
                raise DomainError(
                    f"checkpoint tensor {name!r} has shape {dims}, "
                    f"expected {model.params[name].shape}"
                )
            model.params[name].values[...] = data.astype(np.float64)
            seen.append(name)
        if set(seen) != set(model.params.keys()):
            missing = sorted(set(model.params.keys()) - set(seen))
            raise DomainError(f"checkpoint is missing tensors: {missing}")
    return model

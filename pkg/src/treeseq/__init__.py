"""treeseq: a generative sequence model over latent full binary trees.

Tokens are emitted at the leaves of a latent tree drawn from a stick-breaking
prior inside a fixed complete binary tree. The package provides exact
marginalization over all trees by dynamic programming on successive-leaf
transitions, joint max-product decoding of (sequence, tree) pairs, a small
reverse-mode tape for end-to-end gradient training of the recursive
production network, and a CLI for synthetic compositional tasks.
"""

from .decode import DecodeResult, best_tree_given_tokens, decode_joint
from .errors import (
    CapacityError,
    ConfigurationError,
    DecodeError,
    DomainError,
    TreeSeqError,
)
from .marginal import (
    EmissionGrid,
    MarginalTable,
    marginal_log_likelihood,
    marginal_log_likelihood_streaming,
    prefix_marginals,
)
from .model import ModelConfig, TreeSeqModel, load_checkpoint, save_checkpoint
from .prior import SplitField, compute_split_field, tree_probability_from_m, tree_probability_pi
from .topology import (
    CompleteTreeTopology,
    InternalTree,
    build_topology,
    enumerate_internal_trees,
    internal_tree_from_leaves,
    leaf_path_to_root,
    parse_rendered,
    render_tree,
    tree_from_parsed,
)
from .training import Corpus, TrainConfig, Vocab, evaluate, load_corpus, train

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "CompleteTreeTopology",
    "ConfigurationError",
    "Corpus",
    "DecodeError",
    "DecodeResult",
    "DomainError",
    "EmissionGrid",
    "InternalTree",
    "MarginalTable",
    "ModelConfig",
    "SplitField",
    "TrainConfig",
    "TreeSeqError",
    "TreeSeqModel",
    "Vocab",
    "best_tree_given_tokens",
    "build_topology",
    "compute_split_field",
    "decode_joint",
    "enumerate_internal_trees",
    "evaluate",
    "internal_tree_from_leaves",
    "leaf_path_to_root",
    "load_checkpoint",
    "load_corpus",
    "marginal_log_likelihood",
    "marginal_log_likelihood_streaming",
    "parse_rendered",
    "prefix_marginals",
    "render_tree",
    "save_checkpoint",
    "train",
    "tree_from_parsed",
    "tree_probability_from_m",
    "tree_probability_pi",
]

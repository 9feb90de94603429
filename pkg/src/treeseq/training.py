"""Maximum-likelihood training and evaluation.

Corpora are tab-separated token files; vocabularies are one token per line
with the unknown token reserved at id 0. The objective is the mean negative
log marginal over examples, each example contributing through its own tape
(sequences of different lengths never need padding). Metrics are written as
line-delimited ``key=value`` records: ``epoch=<int> split=<name> nll=<float>``
plus ``acc=<float>`` for evaluation records.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .autodiff import Parameter, Tape
from .decode import decode_joint
from .errors import ConfigurationError, DomainError
from .logmath import logsumexp
from .marginal import EmissionGrid, marginal_log_likelihood
from .model import ModelConfig, TreeSeqModel, save_checkpoint, vocab_sha256
from .prior import tree_probability_pi
from .topology import enumerate_internal_trees

UNK_TOKEN = "<unk>"

EVAL_MODES = ("full_sequence", "first_word")


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.tokens or self.tokens[0] != UNK_TOKEN:
            raise DomainError(f"vocabulary must reserve {UNK_TOKEN!r} at id 0")
        if len(set(self.tokens)) != len(self.tokens):
            raise DomainError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def build(cls, words) -> "Vocab":
        """Vocabulary over the distinct words, sorted for determinism."""
        distinct = sorted(set(words) - {UNK_TOKEN})
        return cls(tokens=(UNK_TOKEN, *distinct))

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = tuple(line.rstrip("\n") for line in fh if line.rstrip("\n"))
        return cls(tokens=tokens)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, words) -> tuple[int, ...]:
        index = self._index  # type: ignore[attr-defined]
        return tuple(index.get(w, 0) for w in words)

    def decode(self, ids) -> tuple[str, ...]:
        return tuple(self.tokens[i] for i in ids)

    def sha256(self) -> str:
        return vocab_sha256(self.tokens)


@dataclass(frozen=True)
class Corpus:
    examples: tuple[tuple[tuple[int, ...], tuple[int, ...]], ...]
    src_vocab: Vocab
    tgt_vocab: Vocab

    def __len__(self) -> int:
        return len(self.examples)


def load_corpus(path: str, src_vocab: Vocab, tgt_vocab: Vocab) -> Corpus:
    """Read "source tokens TAB target tokens" lines into id pairs."""
    examples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigurationError(
                    f"{path}:{lineno}: expected exactly one TAB separator"
                )
            src = src_vocab.encode(parts[0].split())
            tgt = tgt_vocab.encode(parts[1].split())
            if not tgt:
                raise ConfigurationError(f"{path}:{lineno}: empty target side")
            examples.append((src, tgt))
    return Corpus(examples=tuple(examples), src_vocab=src_vocab, tgt_vocab=tgt_vocab)


def save_corpus(path: str, pairs) -> None:
    """Write (source tokens, target tokens) string pairs to a corpus file."""
    with open(path, "w", encoding="utf-8") as fh:
        for src_tokens, tgt_tokens in pairs:
            fh.write(" ".join(src_tokens) + "\t" + " ".join(tgt_tokens) + "\n")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-3
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    clip_norm: float = 5.0
    eval_every: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if min(self.learning_rate, self.batch_size, self.epochs, self.clip_norm) <= 0:
            raise DomainError("train hyperparameters must be positive")
        if self.eval_every < 1:
            raise DomainError("eval_every must be >= 1")


class Adam:
    def __init__(self, params: list[Parameter], config: TrainConfig):
        self.params = params
        self.config = config
        self.step_count = 0
        self._m = [np.zeros_like(p.values) for p in params]
        self._v = [np.zeros_like(p.values) for p in params]

    def clip_gradients(self) -> float:
        total = 0.0
        for p in self.params:
            total += float(np.sum(p.grad * p.grad))
        norm = float(np.sqrt(total))
        limit = self.config.clip_norm
        if norm > limit:
            factor = limit / norm
            for p in self.params:
                p.grad *= factor
        return norm

    def step(self) -> None:
        c = self.config
        self.step_count += 1
        correction1 = 1.0 - c.beta1**self.step_count
        correction2 = 1.0 - c.beta2**self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            m *= c.beta1
            m += (1.0 - c.beta1) * p.grad
            v *= c.beta2
            v += (1.0 - c.beta2) * p.grad * p.grad
            p.values -= c.learning_rate * (m / correction1) / (
                np.sqrt(v / correction2) + c.adam_eps
            )


@dataclass
class TrainResult:
    model: TreeSeqModel
    metrics_lines: list[str]
    best_eval_nll: float
    elapsed_seconds: float


def example_nll(model: TreeSeqModel, src, tgt, scale: float = 1.0) -> float:
    """Backpropagate one example's scaled NLL; returns the unscaled NLL."""
    tape = Tape()
    log_marginal = model.sequence_log_marginal(tape, src, tgt)
    loss = tape.scale(tape.neg(log_marginal), scale)
    tape.backward(loss)
    return -float(log_marginal.value)


def corpus_nll(model: TreeSeqModel, corpus: Corpus, method: str = "dp") -> float:
    """Mean sequence NLL over a corpus.

    ``method="enumerate"`` sums over explicitly enumerated trees instead of
    running the DP; it exists so tests can pin the two against each other.
    """
    total = 0.0
    for src, tgt in corpus.examples:
        field, emission_lp = model.infer(src)
        if method == "dp":
            grid = EmissionGrid.from_token_log_probs(emission_lp, tgt)
            total -= marginal_log_likelihood(field, grid, len(tgt)).log_marginal
        elif method == "enumerate":
            scores = [
                tree_probability_pi(field, tree)
                + float(sum(emission_lp[v - 1, t] for v, t in zip(tree.leaf_vertices, tgt)))
                for tree in enumerate_internal_trees(model.topology, len(tgt))
            ]
            total -= logsumexp(np.asarray(scores)) if scores else float("-inf")
        else:
            raise DomainError(f"unknown nll method {method!r}")
    return total / len(corpus.examples)


def _check_corpus(corpus: Corpus, model_config: ModelConfig, name: str) -> None:
    max_leaves = 2**model_config.depth
    for i, (_, tgt) in enumerate(corpus.examples, start=1):
        if len(tgt) > max_leaves:
            raise ConfigurationError(
                f"{name} example {i}: target length {len(tgt)} exceeds the "
                f"{max_leaves}-leaf capacity of depth {model_config.depth}"
            )
    if len(corpus.src_vocab) != model_config.src_vocab_size:
        raise ConfigurationError(
            f"{name}: source vocabulary size {len(corpus.src_vocab)} does not "
            f"match the model's {model_config.src_vocab_size}"
        )
    if len(corpus.tgt_vocab) != model_config.tgt_vocab_size:
        raise ConfigurationError(
            f"{name}: target vocabulary size {len(corpus.tgt_vocab)} does not "
            f"match the model's {model_config.tgt_vocab_size}"
        )


def train(
    corpus: Corpus,
    model_config: ModelConfig,
    train_config: TrainConfig,
    eval_corpus: "Corpus | None" = None,
    checkpoint_path: "str | None" = None,
    metrics_path: "str | None" = None,
    log=None,
) -> TrainResult:
    """Minimize mean NLL with Adam; track the best model by evaluation NLL."""
    started = time.perf_counter()
    _check_corpus(corpus, model_config, "train corpus")
    if eval_corpus is not None:
        _check_corpus(eval_corpus, model_config, "eval corpus")

    model = TreeSeqModel(model_config)
    model.src_vocab_sha = corpus.src_vocab.sha256()
    model.tgt_vocab_sha = corpus.tgt_vocab.sha256()
    optimizer = Adam(model.parameters(), train_config)
    rng = np.random.default_rng(train_config.seed)
    metrics: list[str] = []
    best_eval_nll = float("inf")

    def emit(line: str) -> None:
        metrics.append(line)
        if log is not None:
            log(line)

    n = len(corpus.examples)
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(n)
        epoch_nll = 0.0
        for start in range(0, n, train_config.batch_size):
            batch = order[start : start + train_config.batch_size]
            model.zero_grad()
            for idx in batch:
                src, tgt = corpus.examples[idx]
                epoch_nll += example_nll(model, src, tgt, scale=1.0 / batch.size)
            optimizer.clip_gradients()
            optimizer.step()
        emit(f"epoch={epoch} split=train nll={epoch_nll / n!r}")

        if eval_corpus is not None and epoch % train_config.eval_every == 0:
            eval_nll = corpus_nll(model, eval_corpus)
            accuracy = evaluate(eval_corpus, model)
            emit(f"epoch={epoch} split=eval nll={eval_nll!r} acc={accuracy!r}")
            if eval_nll < best_eval_nll:
                best_eval_nll = eval_nll
                if checkpoint_path is not None:
                    save_checkpoint(model, checkpoint_path)
    if eval_corpus is None and checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path)

    if metrics_path is not None:
        with open(metrics_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(metrics) + "\n")
    return TrainResult(
        model=model,
        metrics_lines=metrics,
        best_eval_nll=best_eval_nll,
        elapsed_seconds=time.perf_counter() - started,
    )


def decode_corpus(
    corpus: Corpus, model: TreeSeqModel, jobs: int = 1
) -> list:
    """Joint-decode every source; order follows the corpus."""

    def one(example):
        src, _ = example
        field, emission_lp = model.infer(src)
        return decode_joint(field, emission_lp)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, corpus.examples))
    return [one(example) for example in corpus.examples]


def evaluate(
    corpus: Corpus, model: TreeSeqModel, mode: str = "full_sequence", jobs: int = 1
) -> float:
    """Exact-match rate (``full_sequence``) or first-token match (``first_word``)."""
    if mode not in EVAL_MODES:
        raise DomainError(f"mode must be one of {EVAL_MODES}, got {mode!r}")
    if model.src_vocab_sha and model.src_vocab_sha != corpus.src_vocab.sha256():
        raise ConfigurationError("corpus source vocabulary does not match the checkpoint")
    if model.tgt_vocab_sha and model.tgt_vocab_sha != corpus.tgt_vocab.sha256():
        raise ConfigurationError("corpus target vocabulary does not match the checkpoint")
    if not corpus.examples:
        raise ConfigurationError("cannot evaluate on an empty corpus")
    results = decode_corpus(corpus, model, jobs=jobs)
    hits = 0
    for (_, tgt), result in zip(corpus.examples, results):
        if mode == "full_sequence":
            hits += result.tokens == tuple(tgt)
        else:
            hits += bool(result.tokens) and result.tokens[0] == tgt[0]
    return hits / len(corpus.examples)

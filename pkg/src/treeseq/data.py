"""Synthetic corpus generators for compositional sequence-to-sequence tasks.

Two desk-scale task families:

* navigation commands ("mini-SCAN"): commands over walk/run/jump/look/turn
  with left/right, opposite/around, twice/thrice, and the connectors
  and/after, interpreted into action sequences;
* question formation: toy declaratives with an optional relative clause,
  either copied verbatim or turned into a question by fronting the main
  auxiliary. Relative clauses always carry a negated auxiliary so that every
  token bag maps to a unique sentence, and the generalization set is exactly
  the quest examples whose subject carries a relative clause (the cases where
  fronting the *first* auxiliary is wrong).

Generators are deterministic given a seed and emit (source tokens, target
tokens) string pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# --------------------------------------------------------------- mini-SCAN

_ACTIONS = {"walk": "WALK", "look": "LOOK", "run": "RUN", "jump": "JUMP"}
_TURNS = {"left": "LTURN", "right": "RTURN"}

SCAN_SPLITS = ("simple", "length", "jump")
QUESTION_SPLITS = ("iid", "gen")


def interpret_command(tokens) -> tuple[str, ...]:
    """Execute one navigation command; raises DomainError on malformed input."""
    tokens = tuple(tokens)
    for connector in ("and", "after"):
        if connector in tokens:
            at = tokens.index(connector)
            first, second = tokens[:at], tokens[at + 1 :]
            if connector in first or "and" in second or "after" in second:
                raise DomainError(f"more than one connector in {' '.join(tokens)!r}")
            left, right = _interpret_clause(first), _interpret_clause(second)
            return left + right if connector == "and" else right + left
    return _interpret_clause(tokens)


def _interpret_clause(tokens: tuple[str, ...]) -> tuple[str, ...]:
    if not tokens:
        raise DomainError("empty clause")
    repeat = 1
    if tokens[-1] == "twice":
        repeat, tokens = 2, tokens[:-1]
    elif tokens[-1] == "thrice":
        repeat, tokens = 3, tokens[:-1]
    return _interpret_verb_phrase(tokens) * repeat


def _interpret_verb_phrase(tokens: tuple[str, ...]) -> tuple[str, ...]:
    if len(tokens) == 1 and tokens[0] in _ACTIONS:
        return (_ACTIONS[tokens[0]],)
    if len(tokens) == 2 and tokens[1] in _TURNS:
        turn = (_TURNS[tokens[1]],)
        if tokens[0] == "turn":
            return turn
        if tokens[0] in _ACTIONS:
            return turn + (_ACTIONS[tokens[0]],)
    if len(tokens) == 3 and tokens[1] in ("opposite", "around") and tokens[2] in _TURNS:
        turn = (_TURNS[tokens[2]],)
        step = turn if tokens[0] == "turn" else turn + (_ACTIONS[tokens[0]],)
        if tokens[1] == "opposite":
            return turn + step
        return step * 4
    raise DomainError(f"cannot interpret verb phrase {' '.join(tokens)!r}")


def scan_clauses() -> list[tuple[str, ...]]:
    """All 102 single-clause commands."""
    phrases: list[tuple[str, ...]] = []
    for action in _ACTIONS:
        phrases.append((action,))
    for head in (*_ACTIONS, "turn"):
        for direction in _TURNS:
            phrases.append((head, direction))
            phrases.append((head, "opposite", direction))
            phrases.append((head, "around", direction))
    clauses = list(phrases)
    for phrase in phrases:
        clauses.append(phrase + ("twice",))
        clauses.append(phrase + ("thrice",))
    return clauses


def scan_commands(
    max_clauses: int = 2, canonical_clause_order: bool = True
) -> list[tuple[str, ...]]:
    """Enumerate commands with up to ``max_clauses`` clauses.

    With ``canonical_clause_order`` each unordered pair of distinct clauses
    appears once per connector instead of twice. Note that two-clause
    commands can still share a token multiset across different clause
    pairings ("walk and look left" / "look and walk left"); single-clause
    commands are uniquely determined by their bag of tokens.
    """
    if max_clauses not in (1, 2):
        raise DomainError("max_clauses must be 1 or 2")
    commands = list(scan_clauses())
    if max_clauses == 2:
        clauses = scan_clauses()
        for i, first in enumerate(clauses):
            for j, second in enumerate(clauses):
                if canonical_clause_order and j < i:
                    continue
                for connector in ("and", "after"):
                    commands.append(first + (connector,) + second)
    return commands


@dataclass(frozen=True)
class DataSplits:
    """Named lists of (source tokens, target tokens) pairs."""

    train: tuple
    test: tuple
    generalization: tuple = ()


def generate_scan(
    split: str = "simple",
    n_train: int = 500,
    n_test: int = 200,
    seed: int = 0,
    max_target_len: int = 32,
    max_clauses: int = 2,
    length_threshold: int = 8,
    sampling: str = "distinct",
) -> DataSplits:
    """Build a navigation-command corpus for one generalization split.

    simple: iid train/test over the filtered command pool, either over
            distinct commands (``sampling="distinct"``) or drawn with
            replacement from the pool (``sampling="replacement"``, the
            natural regime when the pool is smaller than the corpus).
    length: train on targets up to ``length_threshold`` actions, test on longer.
    jump:   "jump" appears only as a bare command in train; composed uses go
            to the test side.
    """
    if split not in SCAN_SPLITS:
        raise DomainError(f"split must be one of {SCAN_SPLITS}, got {split!r}")
    if sampling not in ("distinct", "replacement"):
        raise DomainError(f"sampling must be 'distinct' or 'replacement', got {sampling!r}")
    rng = np.random.default_rng(seed)
    pool = [
        (cmd, interpret_command(cmd))
        for cmd in scan_commands(max_clauses=max_clauses)
    ]
    pool = [(c, a) for c, a in pool if len(a) <= max_target_len]
    order = rng.permutation(len(pool))
    pool = [pool[i] for i in order]

    if split == "simple":
        if sampling == "replacement":
            train = [pool[i] for i in rng.integers(0, len(pool), size=n_train)]
            test = [pool[i] for i in rng.integers(0, len(pool), size=n_test)]
            return DataSplits(train=tuple(train), test=tuple(test))
        if len(pool) < n_train + n_test:
            raise DomainError(
                f"command pool ({len(pool)} after filtering) too small for "
                f"{n_train}+{n_test} examples"
            )
        train, test = pool[:n_train], pool[n_train : n_train + n_test]
    elif split == "length":
        short = [(c, a) for c, a in pool if len(a) <= length_threshold]
        longer = [(c, a) for c, a in pool if len(a) > length_threshold]
        train, test = short[:n_train], longer[:n_test]
    else:  # jump
        composed_jump = [(c, a) for c, a in pool if "jump" in c and len(c) > 1]
        other = [(c, a) for c, a in pool if "jump" not in c]
        train = other[: max(0, n_train - 1)] + [(("jump",), interpret_command(("jump",)))]
        test = composed_jump[:n_test]
    return DataSplits(train=tuple(train), test=tuple(test))


# ----------------------------------------------------- question formation

_DETS = ("the", "your", "our", "some")
_NOUNS = (("zebra", "zebras"), ("yak", "yaks"), ("unicorn", "unicorns"), ("raven", "ravens"))
_MAIN_VERBS = ("chuckle", "giggle", "read", "smile")
_RC_VERBS = ("dance", "swim", "wiggle")
_POS_AUX = ("does", "do")  # singular, plural
_NEG_AUX = ("doesn't", "don't")

DECL_MARKER = "DECL"
QUEST_MARKER = "QUEST"


def question_formation_pool() -> list[tuple[tuple[str, ...], tuple[str, ...], bool]]:
    """All (source, target, has_relative_clause) triples of the toy grammar."""
    items = []
    for det in _DETS:
        for noun_sg, noun_pl in _NOUNS:
            for plural in (False, True):
                noun = noun_pl if plural else noun_sg
                pos, neg = _POS_AUX[plural], _NEG_AUX[plural]
                for main_verb in _MAIN_VERBS:
                    for rc_verb in (None, *_RC_VERBS):
                        subject = (det, noun)
                        if rc_verb is not None:
                            subject = subject + ("that", neg, rc_verb)
                        sentence = subject + (pos, main_verb)
                        decl_src = sentence + (DECL_MARKER,)
                        decl_tgt = sentence + (".",)
                        quest_src = sentence + (QUEST_MARKER,)
                        quest_tgt = (pos,) + subject + (main_verb, "?")
                        has_rc = rc_verb is not None
                        items.append((decl_src, decl_tgt, has_rc))
                        items.append((quest_src, quest_tgt, has_rc))
    return items


def generate_question_formation(
    n_train: int = 400, n_test: int = 100, seed: int = 0
) -> DataSplits:
    """Question-formation corpus whose generalization set holds exactly the
    quest examples with a relative clause on the subject."""
    rng = np.random.default_rng(seed)
    pool = question_formation_pool()
    gen = [(s, t) for s, t, rc in pool if rc and s[-1] == QUEST_MARKER]
    rest = [(s, t) for s, t, rc in pool if not (rc and s[-1] == QUEST_MARKER)]
    order = rng.permutation(len(rest))
    rest = [rest[i] for i in order]
    if n_train + n_test > len(rest):
        raise DomainError(
            f"requested {n_train}+{n_test} examples but the pool has {len(rest)}"
        )
    return DataSplits(
        train=tuple(rest[:n_train]),
        test=tuple(rest[n_train : n_train + n_test]),
        generalization=tuple(gen),
    )

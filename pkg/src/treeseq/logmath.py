"""Log-domain arithmetic helpers.

All probabilities in this package are stored as natural logs, with -inf as
the exact representation of probability zero. Every reduction here treats
-inf entries as absent terms and never produces NaN from them.
"""

from __future__ import annotations

import numpy as np

NEG_INF = float("-inf")


def logsumexp(values: np.ndarray) -> float:
    """log(sum(exp(values))) over a 1-D array, -inf aware."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return NEG_INF
    top = float(np.max(values))
    if top == NEG_INF:
        return NEG_INF
    return top + float(np.log(np.sum(np.exp(values - top))))


def logaddexp(a: float, b: float) -> float:
    """Binary log-add that tolerates -inf on either side."""
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    return float(np.logaddexp(a, b))


def _segment_reduce_max(values: np.ndarray, ptr: np.ndarray) -> np.ndarray:
    """Per-segment max where segment i covers values[ptr[i]:ptr[i+1]].

    Empty segments yield -inf. np.maximum.reduceat needs the start index to
    be valid and returns a garbage single element for empty segments, so a
    -inf sentinel is appended and empty segments are masked afterwards.
    """
    n_seg = ptr.size - 1
    nonempty = ptr[1:] > ptr[:-1]
    if not nonempty.any():
        return np.full(n_seg, NEG_INF)
    ext = np.append(values, NEG_INF)
    seg_max = np.maximum.reduceat(ext, ptr[:-1])
    return np.where(nonempty, seg_max, NEG_INF)


def segment_logsumexp(values: np.ndarray, ptr: np.ndarray, seg_ids: np.ndarray) -> np.ndarray:
    """Per-segment logsumexp over a flat value array in CSR layout.

    ``seg_ids`` maps each value to its segment (must agree with ``ptr``);
    passing it avoids recomputing np.repeat on every call.
    """
    n_seg = ptr.size - 1
    seg_max = _segment_reduce_max(values, ptr)
    safe_max = np.where(np.isfinite(seg_max), seg_max, 0.0)
    shifted = np.exp(values - safe_max[seg_ids])
    sums = np.add.reduceat(np.append(shifted, 0.0), ptr[:-1])
    nonempty = ptr[1:] > ptr[:-1]
    sums = np.where(nonempty, sums, 0.0)
    out = np.full(n_seg, NEG_INF)
    pos = sums > 0.0
    out[pos] = safe_max[pos] + np.log(sums[pos])
    return out


def segment_max_argmax(
    values: np.ndarray, ptr: np.ndarray, payload: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment max plus the payload of the first maximal entry.

    Within a segment, ties resolve to the entry with the smallest payload
    (entries are stored sorted by payload, so "first" and "smallest" agree).
    Empty or all -inf segments yield (-inf, -1).
    """
    n_seg = ptr.size - 1
    seg_max = _segment_reduce_max(values, ptr)
    arg = np.full(n_seg, -1, dtype=np.int64)
    finite = np.isfinite(seg_max)
    if finite.any():
        is_best = values == seg_max[_repeat_ids(ptr)]
        cand = np.where(is_best, payload, np.iinfo(np.int64).max)
        best = np.minimum.reduceat(np.append(cand, np.iinfo(np.int64).max), ptr[:-1])
        arg[finite] = best[finite]
    return seg_max, arg


def _repeat_ids(ptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(ptr.size - 1), np.diff(ptr))

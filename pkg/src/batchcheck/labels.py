"""Influence-label algebra and shadow tensors.

A label records which users in a batch may have influenced a value. It is a
bit-packed 64-bit word:

    bits 48..63  flag set (bit 48 = RANDOM, remaining 15 bits reserved)
    bits 24..47  minimum influencing user label (all-ones = +inf sentinel)
    bits  0..23  maximum influencing user label (zero     = -inf sentinel)

User labels are integers in [1, 2**24 - 2]. The combine operation is flag
union plus field-wise min/max; its identity is the neutral label ``e`` =
(no flags, +inf, -inf), carried by constants such as model weights.

Shadow tensors are dense ``numpy.uint64`` arrays of packed labels with the
same shape as the data tensors they mirror; all operations here are
vectorized and deterministic.
"""

from __future__ import annotations

import enum
from typing import Iterable

import numpy as np

MAX_USER = 2**24 - 2

_MIN_SHIFT = 24
_FLAG_SHIFT = 48
_FIELD = 0xFFFFFF
MAX_MASK = np.uint64(_FIELD)
MIN_MASK = np.uint64(_FIELD << _MIN_SHIFT)
FLAG_MASK = np.uint64(0xFFFF << _FLAG_SHIFT)

MIN_SENTINEL = _FIELD  # +inf: larger than any real user label
MAX_SENTINEL = 0  # -inf: smaller than any real user label

RANDOM_FLAG = 1 << _FLAG_SHIFT

#: Neutral label e = (no flags, +inf, -inf).
NEUTRAL = (MIN_SENTINEL << _MIN_SHIFT) | MAX_SENTINEL

#: Random-but-not-user-dependent label ({RANDOM}, +inf, -inf).
RANDOM = RANDOM_FLAG | NEUTRAL


class LabelState(enum.Enum):
    NEUTRAL = "neutral"
    RANDOM_ONLY = "random_only"
    SINGLE_USER = "single_user"
    MULTI_USER = "multi_user"


def pack(flags: int, lo: int, hi: int) -> int:
    """Pack (flag bits, min field, max field) into a label word."""
    return (flags << _FLAG_SHIFT) | (lo << _MIN_SHIFT) | hi


def unpack(word: int) -> tuple[int, int, int]:
    """Inverse of :func:`pack`: returns (flags, min field, max field)."""
    word = int(word)
    return word >> _FLAG_SHIFT, (word >> _MIN_SHIFT) & _FIELD, word & _FIELD


def from_user(user: int) -> int:
    """Label of a value influenced by exactly one user (1-based index)."""
    if not 1 <= user <= MAX_USER:
        raise ValueError(f"user index {user} outside [1, {MAX_USER}]")
    return pack(0, user, user)


def combine(a, b):
    """Monoid operation: flag union, min of mins, max of maxes.

    Accepts scalar ints or uint64 arrays (broadcasting); the packed layout
    makes each component a masked bitwise-or / min / max on the raw words.
    """
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    flags = (a | b) & FLAG_MASK
    lo = np.minimum(a & MIN_MASK, b & MIN_MASK)
    hi = np.maximum(a & MAX_MASK, b & MAX_MASK)
    out = flags | lo | hi
    return int(out) if out.ndim == 0 else out


def classify(word: int) -> LabelState:
    """Map a label to one of the four value states.

    User dependence is read from the (min, max) fields only; flags are
    carried orthogonally (a RANDOM single-user value is still SINGLE_USER).
    """
    flags, lo, hi = unpack(int(word))
    if lo == MIN_SENTINEL and hi == MAX_SENTINEL:
        return LabelState.RANDOM_ONLY if flags else LabelState.NEUTRAL
    if lo == MIN_SENTINEL or hi == MAX_SENTINEL or lo > hi:
        raise ValueError(f"malformed label word {word:#018x}")
    return LabelState.SINGLE_USER if lo == hi else LabelState.MULTI_USER


def single_user(word: int) -> int | None:
    """The unique influencing user, or None unless classify is SINGLE_USER."""
    if classify(word) is LabelState.SINGLE_USER:
        return unpack(word)[1]
    return None


def render(word: int) -> str:
    """Debug form: "e", "R", "u3", "u1..4", with "[R]" flag suffix."""
    flags, lo, hi = unpack(int(word))
    state = classify(word)
    if state is LabelState.NEUTRAL:
        return "e"
    if state is LabelState.RANDOM_ONLY:
        return "R"
    base = f"u{lo}" if lo == hi else f"u{lo}..{hi}"
    return base + ("[R]" if flags & 1 else "")


# -- shadow tensor helpers (uint64 ndarrays of packed labels) --


def neutral_shadow(shape: Iterable[int]) -> np.ndarray:
    return np.full(tuple(shape), NEUTRAL, dtype=np.uint64)


def full_shadow(shape: Iterable[int], word: int) -> np.ndarray:
    return np.full(tuple(shape), word, dtype=np.uint64)


def reduce_labels(shadow: np.ndarray, axes=None, keepdims: bool = False):
    """Fold :func:`combine` over the given axes (all axes when None)."""
    shadow = np.asarray(shadow, dtype=np.uint64)
    if axes is not None:
        axes = tuple(int(a) % max(shadow.ndim, 1) for a in np.atleast_1d(axes))
    flags = np.bitwise_or.reduce(shadow & FLAG_MASK, axis=axes, keepdims=keepdims)
    lo = np.minimum.reduce(shadow & MIN_MASK, axis=axes, keepdims=keepdims)
    hi = np.maximum.reduce(shadow & MAX_MASK, axis=axes, keepdims=keepdims)
    out = flags | lo | hi
    return out


def fold(shadow: np.ndarray) -> int:
    """Combine every element of a shadow into a single label word."""
    if shadow.size == 0:
        return NEUTRAL
    return int(reduce_labels(shadow, axes=None))


def broadcast_combine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise combine after broadcasting (numpy/ONNX rules)."""
    out = combine(a, b)
    return np.asarray(out, dtype=np.uint64)


def states(shadow: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized classify: boolean masks (neutral, random_only, single, multi)."""
    shadow = np.asarray(shadow, dtype=np.uint64)
    flags = shadow & FLAG_MASK
    lo = (shadow >> np.uint64(_MIN_SHIFT)) & MAX_MASK
    hi = shadow & MAX_MASK
    no_user = (lo == MIN_SENTINEL) & (hi == MAX_SENTINEL)
    neutral = no_user & (flags == 0)
    random_only = no_user & (flags != 0)
    single = ~no_user & (lo == hi)
    multi = ~no_user & (lo < hi) & (hi != MAX_SENTINEL)
    return neutral, random_only, single, multi


def any_multi_user(shadow: np.ndarray) -> bool:
    return bool(states(shadow)[3].any())

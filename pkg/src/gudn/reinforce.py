"""Label reinforcement: expand a short label sequence to the encoder length.

A sample's label sequence is far shorter than its text, so feeding it
directly wastes most of the input on padding.  The two fill strategies below
repeat the label tokens until the sequence reaches the full input length:
ordered repetition cycles the sequence as-is; disordered repetition re-draws
a uniformly random permutation of the labels for every repeated block,
keeping each label's own tokens contiguous.
"""

from __future__ import annotations

import enum
import warnings
from random import Random
from typing import Sequence

from .corpus import CLS_ID, PAD_ID


class ReinforceMode(enum.Enum):
    NONE = "none"
    ORDERED = "ordered"
    DISORDERED = "disordered"

    @classmethod
    def from_str(cls, value: str) -> "ReinforceMode":
        try:
            return cls(value.lower())
        except ValueError:
            raise ValueError(
                f"unknown reinforce_mode {value!r}; expected one of "
                f"{[m.value for m in cls]}"
            ) from None


def pad_to(seq: Sequence[int], max_len: int) -> list[int]:
    """NONE mode: truncate to ``max_len`` keeping the head, right-pad with PAD."""
    out = list(seq[:max_len])
    out.extend([PAD_ID] * (max_len - len(out)))
    return out


def _pad_fill(max_len: int, why: str) -> list[int]:
    warnings.warn(f"label reinforcement fell back to padding: {why}", stacklevel=3)
    return pad_to([CLS_ID], max_len)


def reinforce_ordered(label_seq: Sequence[int], max_len: int) -> list[int]:
    """CLS followed by cyclic repetition of the label body, cut to ``max_len``."""
    if not label_seq or label_seq[0] != CLS_ID:
        raise ValueError("label_seq must be non-empty and begin with CLS")
    if max_len < len(label_seq):
        raise ValueError(f"max_len {max_len} shorter than label sequence {len(label_seq)}")
    body = list(label_seq[1:])
    if not body:
        return _pad_fill(max_len, "label sequence has no tokens beyond CLS")
    out = [CLS_ID]
    while len(out) < max_len:
        out.extend(body)
    return out[:max_len]


def reinforce_disordered(label_token_groups: Sequence[Sequence[int]], max_len: int,
                         rng: Random) -> list[int]:
    """CLS followed by repeated blocks, each a fresh permutation of the labels.

    Labels are permuted as whole units so multi-word labels stay intact; the
    multiset of tokens in every complete block equals the original label
    tokens.  Deterministic for a given ``rng`` state.
    """
    if not label_token_groups:
        raise ValueError("label_token_groups must be non-empty")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    groups = [list(g) for g in label_token_groups]
    if sum(len(g) for g in groups) == 0:
        return _pad_fill(max_len, "all label token groups are empty")
    out = [CLS_ID]
    order = list(range(len(groups)))
    while len(out) < max_len:
        rng.shuffle(order)
        for gi in order:
            out.extend(groups[gi])
    return out[:max_len]


def build_label_input(label_seq: Sequence[int], groups: Sequence[Sequence[int]],
                      mode: ReinforceMode, max_len: int, rng: Random) -> list[int]:
    """Dispatch one sample's label input for the chosen mode."""
    if mode is ReinforceMode.NONE:
        return pad_to(label_seq, max_len)
    if mode is ReinforceMode.ORDERED:
        # guard: a pathologically long label set is clipped before cycling
        return reinforce_ordered(list(label_seq)[:max_len], max_len)
    return reinforce_disordered(groups, max_len, rng)

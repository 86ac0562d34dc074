"""Levenshtein edit distance with operation counts, WER and CER."""

from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .errors import EmptyReferenceError


@dataclass(frozen=True)
class EditOps:
    distance: int
    substitutions: int
    insertions: int
    deletions: int


def edit_distance(reference: Sequence[Hashable], hypothesis: Sequence[Hashable]) -> EditOps:
    """Unit-cost Levenshtein distance and one optimal S/I/D decomposition.

    Insertions are tokens present only in the hypothesis, deletions tokens
    present only in the reference.
    """
    n, m = len(reference), len(hypothesis)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            change = cost[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1])
            cost[i, j] = min(change, cost[i - 1, j] + 1, cost[i, j - 1] + 1)

    subs = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (reference[i - 1] != hypothesis[j - 1]):
            subs += int(reference[i - 1] != hypothesis[j - 1])
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditOps(int(cost[n, m]), subs, ins, dels)


def word_errors(reference: str, hypothesis: str) -> EditOps:
    return edit_distance(reference.split(), hypothesis.split())


def wer(reference: str, hypothesis: str) -> float:
    """Word error rate (S + I + D) / N over whitespace-separated words.

    Raises:
        EmptyReferenceError: the reference has no words
    """
    words = reference.split()
    if not words:
        raise EmptyReferenceError("WER is undefined for an empty reference")
    return word_errors(reference, hypothesis).distance / len(words)


def cer(reference: str, hypothesis: str) -> float:
    if not reference:
        raise EmptyReferenceError("CER is undefined for an empty reference")
    return edit_distance(reference, hypothesis).distance / len(reference)


def corpus_wer(references: Sequence[str], hypotheses: Sequence[str]) -> float:
    """Total word edits over total reference words."""
    words = sum(len(r.split()) for r in references)
    if words == 0:
        raise EmptyReferenceError("WER is undefined for references without words")
    return sum(word_errors(r, h).distance for r, h in zip(references, hypotheses)) / words


def corpus_cer(references: Sequence[str], hypotheses: Sequence[str]) -> float:
    chars = sum(len(r) for r in references)
    if chars == 0:
        raise EmptyReferenceError("CER is undefined for empty references")
    return sum(edit_distance(r, h).distance for r, h in zip(references, hypotheses)) / chars

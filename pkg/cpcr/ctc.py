"""
Character vocabulary and the CTC loss.

Posteriors are [frames × (|vocab|+1)] log-probabilities with the blank at
index 0. The forward algorithm runs in log space over the blank-augmented
label (blank, l1, blank, l2, ..., blank); the gradient with respect to the
log-probabilities is minus the state occupancy from the forward-backward
pass.
"""

import logging
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .errors import CtcAlignmentError, ShapeError, VocabularyError
from .tensor import Tensor

logger = logging.getLogger(__name__)

BLANK = 0
BLANK_SYMBOL = "_"

# [frames × (|vocab|+1)] log-probabilities, rows log-sum-exp to 0
FramePosteriors = np.ndarray


class CharVocab:
    """Ordered character set; character i has class index i + 1, blank is 0."""

    def __init__(self, characters: Sequence[str]):
        characters = list(characters)
        if len(set(characters)) != len(characters):
            raise VocabularyError("vocabulary characters must be unique")
        if any(len(c) != 1 for c in characters):
            raise VocabularyError("vocabulary entries must be single characters")
        if BLANK_SYMBOL in characters:
            raise VocabularyError(f"{BLANK_SYMBOL!r} is reserved for the blank")
        self.characters = characters
        self._index = {c: i + 1 for i, c in enumerate(characters)}

    @classmethod
    def from_transcripts(cls, transcripts: Iterable[str]) -> "CharVocab":
        return cls(sorted(set("".join(transcripts))))

    @property
    def size(self) -> int:
        """Number of output classes, blank included."""
        return len(self.characters) + 1

    def __len__(self) -> int:
        return len(self.characters)

    def __eq__(self, other) -> bool:
        return isinstance(other, CharVocab) and self.characters == other.characters

    def __repr__(self) -> str:
        return f"CharVocab({''.join(self.characters)!r})"

    def covers(self, text: str) -> bool:
        return all(c in self._index for c in text)

    def encode(self, text: str) -> List[int]:
        try:
            return [self._index[c] for c in text]
        except KeyError as e:
            raise VocabularyError(f"character {e.args[0]!r} is not in the vocabulary") from e

    def decode(self, indices: Iterable[int]) -> str:
        return "".join(self.characters[i - 1] for i in indices if i != BLANK)

    def symbol(self, index: int) -> str:
        return BLANK_SYMBOL if index == BLANK else self.characters[index - 1]


def required_frames(targets: Sequence[int]) -> int:
    """Minimum T for a label: its length plus one blank between adjacent repeats."""
    repeats = sum(1 for a, b in zip(targets, targets[1:]) if a == b)
    return len(targets) + repeats


def _augment(targets: Sequence[int], blank: int) -> Tuple[np.ndarray, np.ndarray]:
    extended = np.full(2 * len(targets) + 1, blank, dtype=np.int64)
    extended[1::2] = targets
    skip = np.zeros(extended.size, dtype=bool)
    if extended.size > 2:
        skip[2:] = (extended[2:] != blank) & (extended[2:] != extended[:-2])
    return extended, skip


def ctc_forward(log_probs: np.ndarray, targets: Sequence[int], blank: int = BLANK) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of `targets` and the log-alpha table [T × S].

    An empty target is the all-blank path. Impossible labels give +inf.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2:
        raise ShapeError(f"posteriors must be [frames × classes], got shape {lp.shape}")
    frames = lp.shape[0]
    extended, skip = _augment(targets, blank)
    states = extended.size
    alpha = np.full((frames, states), -np.inf)
    alpha[0, 0] = lp[0, blank]
    if states > 1:
        alpha[0, 1] = lp[0, extended[1]]
    for t in range(1, frames):
        prev = alpha[t - 1]
        a = prev.copy()
        a[1:] = np.logaddexp(a[1:], prev[:-1])
        a[2:] = np.where(skip[2:], np.logaddexp(a[2:], prev[:-2]), a[2:])
        alpha[t] = a + lp[t, extended]
    if states == 1:
        loglik = alpha[-1, 0]
    else:
        loglik = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    nll = -float(loglik)
    return (nll if np.isfinite(nll) else float("inf")), alpha


def ctc_backward(log_probs: np.ndarray, targets: Sequence[int], blank: int = BLANK) -> np.ndarray:
    """Log-beta table [T × S]: probability of the remaining frames from state s at t."""
    lp = np.asarray(log_probs, dtype=np.float64)
    frames = lp.shape[0]
    extended, skip = _augment(targets, blank)
    states = extended.size
    beta = np.full((frames, states), -np.inf)
    beta[-1, -1] = 0.0
    if states > 1:
        beta[-1, -2] = 0.0
    for t in range(frames - 2, -1, -1):
        nxt = beta[t + 1] + lp[t + 1, extended]
        b = nxt.copy()
        b[:-1] = np.logaddexp(b[:-1], nxt[1:])
        b[:-2] = np.where(skip[2:], np.logaddexp(b[:-2], nxt[2:]), b[:-2])
        beta[t] = b
    return beta


def ctc_gradient(log_probs: np.ndarray, targets: Sequence[int], blank: int = BLANK) -> Tuple[float, np.ndarray]:
    """Loss and d(loss)/d(log_probs) = −(expected state occupancy per class)."""
    nll, alpha = ctc_forward(log_probs, targets, blank)
    if not np.isfinite(nll):
        return nll, np.zeros_like(np.asarray(log_probs, dtype=np.float64))
    beta = ctc_backward(log_probs, targets, blank)
    extended, _ = _augment(targets, blank)
    occupancy = np.exp(alpha + beta + nll)
    grad = np.zeros(np.shape(log_probs), dtype=np.float64)
    frames = grad.shape[0]
    np.add.at(grad, (np.arange(frames)[:, None], extended[None, :]), -occupancy)
    return nll, grad


def ctc_loss(posteriors: Tensor, targets: Sequence[int], blank: int = BLANK) -> Tensor:
    """Differentiable CTC negative log-likelihood of one utterance.

    Raises:
        CtcAlignmentError: the label cannot be aligned to the frames (too long
            for T, or every alignment has zero probability)
    """
    targets = list(targets)
    frames = posteriors.shape[0]
    needed = required_frames(targets)
    if needed > frames:
        raise CtcAlignmentError(f"label needs {needed} frames, posteriors have {frames}")
    nll, grad = ctc_gradient(posteriors.data, targets, blank)
    if not np.isfinite(nll):
        raise CtcAlignmentError("label has zero probability under the posteriors")
    dtype = posteriors.data.dtype
    return Tensor._from_op(np.array(nll, dtype=dtype), (posteriors,),
                           lambda g: (g * grad.astype(dtype),), "ctc_loss")


def collapse(path: Iterable[int], blank: int = BLANK) -> List[int]:
    """CTC collapse: merge adjacent repeats, then drop blanks."""
    out: List[int] = []
    previous = None
    for symbol in path:
        if symbol != previous and symbol != blank:
            out.append(int(symbol))
        previous = symbol
    return out


def is_normalized(log_probs: np.ndarray, tolerance: float = 1e-5) -> bool:
    rows = np.logaddexp.reduce(np.asarray(log_probs, dtype=np.float64), axis=1)
    return bool(np.all(np.abs(rows) <= tolerance))

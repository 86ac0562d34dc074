"""
Character n-gram language model with add-α smoothing.

Histories are left-padded with a begin marker; every string ends with an
end marker, which is part of the predicted outcome set (vocabulary plus
end). A history never seen in training falls back to the uniform
distribution over outcomes.
"""

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from .errors import EmptyCorpusError, VocabularyError

logger = logging.getLogger(__name__)

BEGIN = "\x02"
END = "\x03"


@dataclass
class CharNgramLm:
    order: int
    alpha: float
    vocabulary: List[str]
    counts: Dict[str, Dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        self._outcomes = set(self.vocabulary) | {END}
        self._totals = {h: sum(c.values()) for h, c in self.counts.items()}

    @property
    def num_outcomes(self) -> int:
        return len(self.vocabulary) + 1

    def history(self, text: str) -> str:
        """The last order-1 characters of BEGIN-padded text."""
        if self.order == 1:
            return ""
        padded = BEGIN * (self.order - 1) + text
        return padded[len(padded) - (self.order - 1):]

    def log_prob(self, text: str, symbol: str) -> float:
        """log P(symbol | text) where symbol is a character or END."""
        if symbol not in self._outcomes:
            raise VocabularyError(f"character {symbol!r} is not in the language model vocabulary")
        h = self.history(text)
        counts = self.counts.get(h)
        if counts is None:
            return -math.log(self.num_outcomes)
        return math.log((counts.get(symbol, 0) + self.alpha) / (self._totals[h] + self.alpha * self.num_outcomes))

    def conditional(self, text: str) -> Dict[str, float]:
        return {s: math.exp(self.log_prob(text, s)) for s in list(self.vocabulary) + [END]}

    def to_dict(self) -> Dict:
        return {"order": self.order, "alpha": self.alpha, "vocabulary": self.vocabulary, "counts": self.counts}

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "CharNgramLm":
        return cls(**json.loads(Path(path).read_text()))


def train_char_lm(transcripts: Iterable[str], order: int = 4, alpha: float = 0.1,
                  vocabulary: Optional[Iterable[str]] = None) -> CharNgramLm:
    """Count n-grams of every transcript.

    The outcome set is the transcript characters plus any extra `vocabulary`
    characters (a recognizer vocabulary), so every symbol a decoder proposes
    can be scored.

    Raises:
        EmptyCorpusError: no transcripts
        ValueError: order < 1 or alpha <= 0
    """
    if order < 1:
        raise ValueError(f"order must be at least 1, got {order}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    texts = list(transcripts)
    if not texts:
        raise EmptyCorpusError("cannot train a language model without transcripts")
    vocabulary = sorted(set("".join(texts)) | set(vocabulary or ()))
    counts: Dict[str, Counter] = defaultdict(Counter)
    lm = CharNgramLm(order, alpha, vocabulary)
    for text in texts:
        for i, symbol in enumerate(list(text) + [END]):
            counts[lm.history(text[:i])][symbol] += 1
    lm = CharNgramLm(order, alpha, vocabulary, {h: dict(c) for h, c in counts.items()})
    logger.debug(f"Trained {order}-gram character LM on {len(texts)} transcripts, {len(counts)} histories")
    return lm


def lm_score(lm: CharNgramLm, text: str) -> float:
    """Log-probability of `text` followed by the end marker."""
    total = sum(lm.log_prob(text[:i], c) for i, c in enumerate(text))
    return total + lm.log_prob(text, END)

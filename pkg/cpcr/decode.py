"""
CTC decoding: best-path (greedy) and prefix beam search.

Beam search keeps, per label prefix, the log-probability of all paths that
collapse to it and end in a blank (pb) or in its last character (pnb). With
a character LM every extension adds λ·log P_lm(c | prefix) + β. The returned
hypothesis is the best of the final beam and the best-path hypothesis,
rescored exactly as

    log P_ctc(prefix) + λ·log P_lm(prefix) + β·|prefix|

(the LM and bonus terms only when an LM is given).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .char_lm import CharNgramLm, lm_score
from .ctc import BLANK, CharVocab, collapse, ctc_forward

logger = logging.getLogger(__name__)

NEG_INF = -np.inf

Prefix = Tuple[int, ...]


@dataclass
class DecodeResult:
    """A decoded hypothesis.

    Attributes:
        hypothesis: Decoded text, vocabulary characters only
        score: Log-domain score (best-path log-probability for greedy decoding)
        labels: Class indices of the hypothesis
        trace: Per-frame argmax classes (greedy decoding only)
    """
    hypothesis: str
    score: float
    labels: List[int] = field(default_factory=list)
    trace: Optional[List[int]] = None


def greedy_ctc_decode(posteriors: np.ndarray, vocab: CharVocab) -> DecodeResult:
    lp = np.asarray(posteriors, dtype=np.float64)
    trace = np.argmax(lp, axis=1)
    labels = collapse(trace)
    score = float(lp[np.arange(lp.shape[0]), trace].sum())
    return DecodeResult(vocab.decode(labels), score, labels, [int(i) for i in trace])


def sequence_score(posteriors: np.ndarray, labels: Sequence[int], vocab: CharVocab,
                   lm: Optional[CharNgramLm] = None, lm_weight: float = 0.5, insertion_bonus: float = 0.1) -> float:
    """Exact rescoring: CTC log-likelihood plus the optional LM terms."""
    score = -ctc_forward(posteriors, labels)[0]
    if lm is not None:
        score += lm_weight * lm_score(lm, vocab.decode(labels)) + insertion_bonus * len(labels)
    return score


def _log_add(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


def _search(lp: np.ndarray, vocab: CharVocab, width: int, lm: Optional[CharNgramLm], lm_weight: float,
            insertion_bonus: float) -> Tuple[List[Prefix], bool]:
    """One beam pass. Returns the final beam (best first) and whether anything was pruned."""
    beams: Dict[Prefix, List[float]] = {(): [0.0, NEG_INF]}
    pruned = False
    classes = lp.shape[1]
    extension_cache: Dict[Prefix, np.ndarray] = {}

    def extension_bonus(prefix: Prefix) -> np.ndarray:
        if lm is None:
            return np.zeros(classes)
        if prefix not in extension_cache:
            text = vocab.decode(prefix)
            bonus = np.zeros(classes)
            for c in range(1, classes):
                bonus[c] = lm_weight * lm.log_prob(text, vocab.symbol(c)) + insertion_bonus
            extension_cache[prefix] = bonus
        return extension_cache[prefix]

    for t in range(lp.shape[0]):
        fresh: Dict[Prefix, List[float]] = {}

        def slot(prefix: Prefix) -> List[float]:
            if prefix not in fresh:
                fresh[prefix] = [NEG_INF, NEG_INF]
            return fresh[prefix]

        for prefix, (pb, pnb) in beams.items():
            total = _log_add(pb, pnb)
            entry = slot(prefix)
            entry[0] = _log_add(entry[0], total + lp[t, BLANK])
            last = prefix[-1] if prefix else None
            bonus = extension_bonus(prefix)
            for c in range(1, classes):
                p = lp[t, c]
                extended = slot(prefix + (c,))
                if c == last:
                    entry[1] = _log_add(entry[1], pnb + p)
                    extended[1] = _log_add(extended[1], pb + p + bonus[c])
                else:
                    extended[1] = _log_add(extended[1], total + p + bonus[c])

        ranked = sorted(fresh.items(), key=lambda item: (-_log_add(*item[1]), item[0]))
        if len(ranked) > width:
            pruned = True
        beams = dict(ranked[:width])
    return list(beams), pruned


def prefix_beam_search(posteriors: np.ndarray, vocab: CharVocab, beam: int = 8, lm: Optional[CharNgramLm] = None,
                       lm_weight: float = 0.5, insertion_bonus: float = 0.1) -> DecodeResult:
    """CTC prefix beam search with an optional character LM.

    Width 1 is best-path decoding. Candidates of every narrower beam are
    kept, so widening the beam never lowers the returned score; once a pass
    prunes nothing, wider passes would be identical and the search stops.
    Ties break toward the lexicographically smaller label sequence.
    """
    if beam < 1:
        raise ValueError(f"beam width must be at least 1, got {beam}")
    lp = np.asarray(posteriors, dtype=np.float64)
    greedy = greedy_ctc_decode(lp, vocab)
    if beam == 1:
        return greedy

    candidates = {tuple(greedy.labels)}
    for width in range(2, beam + 1):
        final, pruned = _search(lp, vocab, width, lm, lm_weight, insertion_bonus)
        candidates.update(final)
        if not pruned:
            break

    scored = sorted((-sequence_score(lp, c, vocab, lm, lm_weight, insertion_bonus), c) for c in candidates)
    best_score, best = scored[0]
    return DecodeResult(vocab.decode(best), -best_score, list(best))


def decode(posteriors: np.ndarray, vocab: CharVocab, beam: int = 1, lm: Optional[CharNgramLm] = None,
           lm_weight: float = 0.5, insertion_bonus: float = 0.1) -> DecodeResult:
    if beam == 1 and lm is None:
        return greedy_ctc_decode(posteriors, vocab)
    return prefix_beam_search(posteriors, vocab, beam, lm, lm_weight, insertion_bonus)

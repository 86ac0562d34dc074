"""
InfoNCE objective with within-utterance negatives.

For a context c_t and offset k the contrastive set holds the positive
z_{t+k} (slot 0) and N-1 distractors drawn uniformly, with replacement,
from the other frames of the same utterance. Each term is

    log( f_k(c_t, z_{t+k}) / ((1/N) Σ_j f_k(c_t, z_j)) )
        = log N − logsumexp_j(s_j − s_pos)

with logits s_j = c_tᵀ W_k z_j, so every term is at most log N.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from .cpc_model import ModelOutputs, PredictionScorer
from .errors import InfoNceError
from .tensor import Tensor, flip, index, logsumexp

logger = logging.getLogger(__name__)


@dataclass
class ContrastiveSet:
    """Frame indices of one contrastive set; the positive sits at `positive_slot`."""
    indices: np.ndarray
    positive_slot: int = 0

    @property
    def positive(self) -> int:
        return int(self.indices[self.positive_slot])

    @property
    def distractors(self) -> np.ndarray:
        return np.delete(self.indices, self.positive_slot)


def draw_distractors(num_frames: int, positives: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from {0..M-1} minus each row's positive, shape [len(positives) × count]."""
    if num_frames < 2:
        raise InfoNceError(f"need at least 2 frames to draw distractors, got {num_frames}")
    positives = np.asarray(positives).reshape(-1, 1)
    draws = rng.integers(0, num_frames - 1, size=(positives.shape[0], count))
    return draws + (draws >= positives)


def sample_negatives(num_frames: int, t: int, k: int, n: int, rng: np.random.Generator) -> ContrastiveSet:
    """Contrastive set for context frame t (0-based) and offset k."""
    positive = t + k
    if not 0 <= positive < num_frames:
        raise InfoNceError(f"t + k = {positive} lies outside the {num_frames} available frames")
    if n < 2:
        raise InfoNceError(f"contrastive sets need N >= 2, got {n}")
    distractors = draw_distractors(num_frames, np.array([positive]), n - 1, rng)[0]
    return ContrastiveSet(np.concatenate([[positive], distractors]), positive_slot=0)


def infonce_terms(logits: Tensor) -> Tensor:
    """Per-row InfoNCE values for logits [terms × N] with the positive in column 0."""
    n = logits.shape[1]
    log_n = float(np.log(np.asarray(n, dtype=logits.data.dtype)))
    shifted = logits - logits[:, :1]
    return log_n - logsumexp(shifted, axis=1)


@dataclass
class InfoNceResult:
    """Summed objective (to maximise) and its diagnostics.

    Attributes:
        objective: Sum of all terms, differentiable
        terms: Value of every (t, k) term
        correct: Number of terms whose positive logit is the strict maximum
    """
    objective: Tensor
    terms: np.ndarray
    correct: int

    @property
    def num_terms(self) -> int:
        return int(self.terms.size)

    @property
    def accuracy(self) -> float:
        return self.correct / self.num_terms


def infonce_loss(c: Tensor, z: Tensor, scorer: PredictionScorer, steps: int, negatives: int,
                 rng: np.random.Generator) -> InfoNceResult:
    """InfoNCE over all valid (t, k) pairs, k = 1..steps, of one utterance."""
    num_frames = z.shape[1]
    if num_frames <= steps:
        raise InfoNceError(f"utterance has {num_frames} frames, need more than {steps} prediction steps")
    if negatives < 2:
        raise InfoNceError(f"contrastive sets need N >= 2, got {negatives}")
    if c.shape[1] != num_frames:
        raise InfoNceError(f"{c.shape[1]} context frames for {num_frames} latent frames")
    objective = None
    terms: List[np.ndarray] = []
    correct = 0
    d_z = z.shape[0]
    for k in range(1, steps + 1):
        count = num_frames - k
        positives = np.arange(k, num_frames)
        candidates = np.concatenate(
            [positives[:, None], draw_distractors(num_frames, positives, negatives - 1, rng)], axis=1)
        predicted = scorer.predict(c[:, :count], k)
        gathered = index(z, (slice(None), candidates))
        logits = (predicted.reshape(d_z, count, 1) * gathered).sum(axis=0)
        values = infonce_terms(logits)
        total = values.sum()
        objective = total if objective is None else objective + total
        terms.append(values.data)
        correct += int(np.sum(logits.data[:, 0] > logits.data[:, 1:].max(axis=1)))
    return InfoNceResult(objective, np.concatenate(terms), correct)


def bidirectional_infonce(outputs: ModelOutputs, scorers: Dict[str, PredictionScorer], steps: int,
                          negatives: int, rng: np.random.Generator) -> Optional[InfoNceResult]:
    """Forward plus backward InfoNCE for one utterance.

    The backward direction predicts k frames into the time-reversed sequence
    with its own scorer; distractors come from the same z. Returns None when
    the utterance is too short for `steps` offsets.
    """
    if outputs.z.shape[1] <= steps:
        return None
    results = []
    for direction, c in outputs.contexts.items():
        if direction == "fwd":
            results.append(infonce_loss(c, outputs.z, scorers[direction], steps, negatives, rng))
        else:
            results.append(infonce_loss(flip(c, 1), flip(outputs.z, 1), scorers[direction], steps, negatives, rng))
    objective = results[0].objective
    for r in results[1:]:
        objective = objective + r.objective
    return InfoNceResult(objective, np.concatenate([r.terms for r in results]), sum(r.correct for r in results))

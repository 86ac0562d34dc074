"""
Bidirectional CPC pretraining and frozen feature extraction.

Each step samples a batch of utterances, normalises and crops them, runs the
shared encoder and both context networks, and maximises the summed forward
plus backward InfoNCE objective with Adam, global-norm clipping and a
polynomial learning rate decay.
"""

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from .audio import DEFAULT_CROP, AudioUtterance, normalize_utterance, random_crop
from .checkpoint import Checkpoint, save_checkpoint
from .corpus import derive_rng
from .cpc_model import ContextNetConfig, CpcModel, CpcModelConfig, EncoderConfig
from .errors import DivergenceError, EmptyCorpusError, InfoNceError, NonFiniteError
from .features import HOP_SECONDS, FeatureFrames
from .infonce import bidirectional_infonce
from .optim import AdamState, LrSchedule, adam_step, clip_global_norm
from .tensor import backward, no_grad
from .training_log import TrainingLog

logger = logging.getLogger(__name__)


@dataclass
class CpcConfig:
    """Pretraining hyperparameters.

    Attributes:
        prediction_steps: K, number of future offsets predicted
        negatives: N, size of each contrastive set (positive included)
        crop: Samples per training crop (149600 = 9.35 s)
        total_steps: Optimizer steps; also the length of the polynomial decay
        checkpoint_every: Steps between snapshots kept for divergence recovery
    """
    prediction_steps: int = 12
    negatives: int = 10
    crop: int = DEFAULT_CROP
    batch_size: int = 128
    learning_rate: float = 1e-4
    schedule: str = "polynomial"
    power: float = 2.0
    end_rate: float = 0.0
    clip_norm: float = 5.0
    total_steps: int = 1000
    seed: int = 0
    d_z: int = 64
    d_c: int = 64
    bidirectional: bool = True
    layer_norm: bool = True
    log_every: int = 10
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.prediction_steps < 1:
            raise ValueError("prediction_steps must be at least 1")
        if self.negatives < 2:
            raise ValueError("negatives must be at least 2")
        if self.batch_size < 1 or self.total_steps < 1 or self.crop < 1:
            raise ValueError("batch_size, total_steps and crop must be positive")

    def model_config(self) -> CpcModelConfig:
        return CpcModelConfig(
            encoder=EncoderConfig(channels=self.d_z, layer_norm=self.layer_norm),
            context=ContextNetConfig(channels=self.d_c, layer_norm=self.layer_norm),
            prediction_steps=self.prediction_steps,
            bidirectional=self.bidirectional,
        )

    def lr_schedule(self) -> LrSchedule:
        return LrSchedule(kind=self.schedule, base_rate=self.learning_rate, power=self.power,
                          total_steps=self.total_steps, end_rate=self.end_rate)

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class ContrastiveEvaluation:
    accuracy: float
    objective: float
    num_terms: int
    utterances: int


def evaluate_contrastive(model: CpcModel, utterances: Sequence[AudioUtterance], negatives: int = 10,
                         seed: int = 0, crop: Optional[int] = None) -> ContrastiveEvaluation:
    """Held-out contrastive accuracy and mean per-utterance objective.

    Utterances too short for the model's prediction steps are skipped.
    """
    rng = derive_rng(seed, "contrastive-eval")
    scorers = {d: model.scorer(d) for d in model.config.directions}
    steps = model.config.prediction_steps
    correct, terms, used, objective = 0, 0, 0, 0.0
    with no_grad():
        for utterance in utterances:
            u = normalize_utterance(utterance)
            if crop is not None and u.length > crop:
                u = random_crop(u, crop, rng)
            result = bidirectional_infonce(model.forward(u.samples), scorers, steps, negatives, rng)
            if result is None:
                continue
            correct += result.correct
            terms += result.num_terms
            objective += result.objective.item()
            used += 1
    if used == 0:
        raise InfoNceError(f"no utterance is longer than {steps} frames")
    return ContrastiveEvaluation(correct / terms, objective / used, terms, used)


def pretrain(corpus: Sequence[AudioUtterance], config: CpcConfig,
             validation: Optional[Sequence[AudioUtterance]] = None, log: Optional[TrainingLog] = None,
             checkpoint_path: Optional[Union[str, Path]] = None) -> Checkpoint:
    """Train a CPC model and return its final checkpoint.

    Raises:
        EmptyCorpusError: corpus has no utterances
        InfoNceError: every utterance of a batch is too short
        DivergenceError: non-finite objective or gradient; carries the last
            good checkpoint
    """
    if not corpus:
        raise EmptyCorpusError("pretraining corpus is empty")
    model = CpcModel.initialise(config.model_config(), derive_rng(config.seed, "cpc-init"))
    rng = derive_rng(config.seed, "cpc-data")
    names = list(model.params)
    parameters = [model.params[n] for n in names]
    state = AdamState.for_parameters(model.params)
    schedule = config.lr_schedule()
    scorers = {d: model.scorer(d) for d in model.config.directions}
    normalized = [normalize_utterance(u) for u in corpus]
    last_good = model.to_checkpoint(state)
    logger.info(f"Pretraining on {len(corpus)} utterances for {config.total_steps} steps "
                f"({sum(p.data.size for p in parameters):,} parameters)")

    for step in range(config.total_steps):
        batch = rng.integers(0, len(normalized), size=config.batch_size)
        total, correct, terms, used = None, 0, 0, 0
        try:
            for i in batch:
                crop = random_crop(normalized[i], config.crop, rng)
                result = bidirectional_infonce(model.forward(crop.samples), scorers, config.prediction_steps,
                                               config.negatives, rng)
                if result is None:
                    continue
                total = result.objective if total is None else total + result.objective
                correct += result.correct
                terms += result.num_terms
                used += 1
            if total is None:
                raise InfoNceError(f"step {step}: every utterance is shorter than "
                                   f"{config.prediction_steps + 1} frames")
            objective = total.item()
            if not math.isfinite(objective):
                raise NonFiniteError(f"objective is {objective}")
            grads = dict(zip(names, backward(-total, parameters)))
        except NonFiniteError as e:
            logger.error(f"Pretraining diverged at step {step}: {e}")
            raise DivergenceError(f"pretraining diverged at step {step}: {e}", step, last_good) from e

        lr = schedule.rate(step)
        adam_step(model.params, clip_global_norm(grads, config.clip_norm), state, lr)

        done = step + 1
        if done % config.log_every == 0 or done == config.total_steps:
            entry = {"step": done, "objective": objective / used, "accuracy": correct / terms, "lr": lr}
            if validation:
                held_out = evaluate_contrastive(model, validation, config.negatives, config.seed, config.crop)
                entry["val_accuracy"] = held_out.accuracy
            logger.info(f"step {done}: objective {entry['objective']:.4f}, accuracy {entry['accuracy']:.3f}")
            if log is not None:
                log.record(**entry)
        if config.checkpoint_every and done % config.checkpoint_every == 0:
            last_good = model.to_checkpoint(state)
            if checkpoint_path is not None:
                save_checkpoint(last_good, checkpoint_path)

    final = model.to_checkpoint(state)
    if checkpoint_path is not None:
        save_checkpoint(final, checkpoint_path)
    return final


class CpcFeatureExtractor:
    """Frozen CPC features: concatenated context frames at a 10 ms hop."""

    def __init__(self, checkpoint: Checkpoint):
        self.model = CpcModel.from_checkpoint(checkpoint)

    @property
    def dim(self) -> int:
        return self.model.config.feature_dim

    def __call__(self, utterance: AudioUtterance) -> FeatureFrames:
        with no_grad():
            outputs = self.model.forward(normalize_utterance(utterance).samples)
            frames = np.array(outputs.features.data, dtype=np.float64)
        return FeatureFrames(frames, HOP_SECONDS, "cpc-context")


def extract_features(checkpoint: Checkpoint, utterance: AudioUtterance) -> FeatureFrames:
    return CpcFeatureExtractor(checkpoint)(utterance)


def random_cpc_checkpoint(config: CpcModelConfig, seed: int) -> Checkpoint:
    """A randomly initialised, untrained model used as a frozen baseline feature source."""
    return CpcModel.initialise(config, derive_rng(seed, "cpc-random")).to_checkpoint()

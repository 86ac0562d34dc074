"""
Supervised character recognizers over frozen features.

A feature source turns an utterance into standardised frames; only the head
parameters are trained, with CTC, Adam and global-norm clipping. Dev WER is
evaluated every `eval_every` epochs and training stops after `patience`
evaluations without improvement; the best-dev parameters are kept.
"""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from .audio import AudioUtterance
from .char_lm import CharNgramLm
from .checkpoint import Checkpoint, save_checkpoint
from .corpus import derive_rng
from .ctc import CharVocab, ctc_loss
from .decode import DecodeResult, decode
from .errors import (CheckpointError, CtcAlignmentError, DivergenceError, EmptyCorpusError, NonFiniteError,
                     ShapeError, VocabularyError)
from .features import N_FFT, N_MELS, FeatureFrames, log_filterbank, spectrogram, standardize
from .heads import HeadConfig, head_config_from_dict, head_forward, init_head, make_head_config
from .layers import Params
from .metrics import corpus_cer, corpus_wer, wer
from .optim import AdamState, LrSchedule, adam_step, clip_global_norm
from .pretrain import CpcFeatureExtractor
from .tensor import backward, no_grad
from .training_log import TrainingLog

logger = logging.getLogger(__name__)

FEATURE_SOURCES = ("frozen-cpc", "log-filterbank", "spectrogram", "frozen-random-cpc")

HEAD_DEFAULTS = {
    "ds2": {"clip_norm": 25.0, "schedule": "constant"},
    "tdnn": {"clip_norm": 5.0, "schedule": "polynomial"},
}


class FeatureSource:
    """Frozen feature extraction followed by per-utterance standardisation.

    Features are cached by utterance id; CPC sources never expose their
    parameters to a gradient path.
    """

    def __init__(self, kind: str, checkpoint: Optional[Checkpoint] = None):
        if kind not in FEATURE_SOURCES:
            raise ValueError(f"feature source must be one of {FEATURE_SOURCES}, got {kind!r}")
        if kind.endswith("cpc") and checkpoint is None:
            raise ValueError(f"feature source {kind} needs a CPC checkpoint")
        self.kind = kind
        self.checkpoint = checkpoint
        self._extract: Callable[[AudioUtterance], FeatureFrames]
        if kind == "log-filterbank":
            self._extract = log_filterbank
        elif kind == "spectrogram":
            self._extract = spectrogram
        else:
            self._extract = CpcFeatureExtractor(checkpoint)
        self._cache: Dict[str, np.ndarray] = {}

    @property
    def dim(self) -> int:
        if isinstance(self._extract, CpcFeatureExtractor):
            return self._extract.dim
        return N_MELS if self.kind == "log-filterbank" else N_FFT // 2 + 1

    def describe(self) -> Dict:
        description = {"kind": self.kind}
        if self.checkpoint is not None:
            description["checkpoint_sha256"] = hashlib.sha256(self.checkpoint.to_bytes()).hexdigest()
        return description

    def __call__(self, utterance: AudioUtterance) -> np.ndarray:
        key = utterance.utterance_id
        if key and key in self._cache:
            return self._cache[key]
        with no_grad():
            frames = standardize(self._extract(utterance)).frames
        if key:
            self._cache[key] = frames
        return frames


@dataclass
class AsrConfig:
    """Recognizer training settings.

    clip_norm and schedule default per head: DS2-small uses clip 25 with a
    constant rate, TDNN clip 5 with a power-2 polynomial decay.
    """
    head: str = "ds2"
    learning_rate: float = 2e-4
    clip_norm: Optional[float] = None
    schedule: Optional[str] = None
    power: float = 2.0
    batch_size: int = 8
    max_epochs: int = 200
    patience: int = 10
    eval_every: int = 1
    seed: int = 0
    head_options: Dict = field(default_factory=dict)

    def __post_init__(self):
        if self.head not in HEAD_DEFAULTS:
            raise ValueError(f"head must be one of {sorted(HEAD_DEFAULTS)}, got {self.head!r}")
        defaults = HEAD_DEFAULTS[self.head]
        if self.clip_norm is None:
            self.clip_norm = defaults["clip_norm"]
        if self.schedule is None:
            self.schedule = defaults["schedule"]
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1 or self.eval_every < 1:
            raise ValueError("batch_size, max_epochs, patience and eval_every must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)


class AsrModel:
    """A trained head with its vocabulary and feature-source description."""

    def __init__(self, head: HeadConfig, vocab: CharVocab, params: Params, features: Optional[Dict] = None):
        self.head = head
        self.vocab = vocab
        self.params = params
        self.features = features or {}

    def config(self) -> Dict:
        return {"kind": "asr", "head": self.head.to_dict(), "vocab": list(self.vocab.characters),
                "features": self.features}

    def to_checkpoint(self, optimizer: Optional[AdamState] = None) -> Checkpoint:
        return Checkpoint.from_params(self.config(), self.params, optimizer)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "AsrModel":
        config = checkpoint.config
        if config.get("kind") != "asr":
            raise CheckpointError(f"expected an asr checkpoint, got kind {config.get('kind')!r}")
        head = head_config_from_dict(config["head"])
        reference = init_head(head, np.random.default_rng(0))
        if list(reference) != list(checkpoint.tensors):
            raise CheckpointError("checkpoint tensors do not match the head configuration")
        return cls(head, CharVocab(config["vocab"]), checkpoint.to_params(), config.get("features"))

    def posteriors(self, frames: np.ndarray) -> np.ndarray:
        with no_grad():
            return np.array(head_forward(frames, self.head, self.params).data, dtype=np.float64)

    def transcribe(self, frames: np.ndarray, beam: int = 1, lm: Optional[CharNgramLm] = None,
                   lm_weight: float = 0.5, insertion_bonus: float = 0.1) -> DecodeResult:
        return decode(self.posteriors(frames), self.vocab, beam, lm, lm_weight, insertion_bonus)


@dataclass
class EvaluationResult:
    wer: float
    cer: float
    utterances: int
    records: List[Dict] = field(default_factory=list)


def evaluate_model(model: AsrModel, utterances: Sequence[AudioUtterance], features: FeatureSource, beam: int = 1,
                   lm: Optional[CharNgramLm] = None, lm_weight: float = 0.5,
                   insertion_bonus: float = 0.1) -> EvaluationResult:
    """Corpus WER/CER and per-utterance decode records {id, ref, hyp, wer, score}."""
    if not utterances:
        raise EmptyCorpusError("evaluation corpus is empty")
    if features.dim != model.head.input_dim:
        raise ShapeError(f"model expects {model.head.input_dim}-dim features, source {features.kind} gives {features.dim}")
    references, hypotheses, records = [], [], []
    for u in utterances:
        result = model.transcribe(features(u), beam, lm, lm_weight, insertion_bonus)
        references.append(u.transcript)
        hypotheses.append(result.hypothesis)
        records.append({"id": u.utterance_id, "ref": u.transcript, "hyp": result.hypothesis,
                        "wer": wer(u.transcript, result.hypothesis), "score": result.score})
    return EvaluationResult(corpus_wer(references, hypotheses), corpus_cer(references, hypotheses),
                            len(utterances), records)


@dataclass
class AsrTrainingResult:
    checkpoint: Checkpoint
    best_dev_wer: float
    epochs: int
    steps: int
    skipped: int


def _vocabulary(train: Sequence[AudioUtterance], dev: Sequence[AudioUtterance],
                vocab: Optional[CharVocab]) -> CharVocab:
    vocab = vocab or CharVocab.from_transcripts(u.transcript for u in train)
    for u in list(train) + list(dev):
        if not vocab.covers(u.transcript):
            raise VocabularyError(f"{u.utterance_id}: transcript {u.transcript!r} is not covered by {vocab}")
    return vocab


def train_asr(train: Sequence[AudioUtterance], dev: Sequence[AudioUtterance], features: FeatureSource,
              config: AsrConfig, vocab: Optional[CharVocab] = None, log: Optional[TrainingLog] = None,
              checkpoint_path: Optional[Union[str, Path]] = None) -> AsrTrainingResult:
    """Train a head on frozen features with CTC and dev-WER early stopping.

    Raises:
        EmptyCorpusError: train or dev corpus is empty
        VocabularyError: a transcript has characters outside the vocabulary
        DivergenceError: non-finite loss or gradient
    """
    if not train or not dev:
        raise EmptyCorpusError("train and dev corpora must both be non-empty")
    vocab = _vocabulary(train, dev, vocab)
    head = make_head_config(config.head, features.dim, vocab.size, **config.head_options)
    model = AsrModel(head, vocab, init_head(head, derive_rng(config.seed, "asr-init")), features.describe())
    names = list(model.params)
    parameters = [model.params[n] for n in names]
    state = AdamState.for_parameters(model.params)
    rng = derive_rng(config.seed, "asr-data")

    inputs = [features(u) for u in train]
    targets = [vocab.encode(u.transcript) for u in train]
    batches_per_epoch = math.ceil(len(train) / config.batch_size)
    schedule = LrSchedule(kind=config.schedule, base_rate=config.learning_rate, power=config.power,
                          total_steps=config.max_epochs * batches_per_epoch)
    logger.info(f"Training {head.kind} head on {len(train)} utterances of {features.kind} features "
                f"({sum(p.data.size for p in parameters):,} parameters)")

    best_wer, best_params, stale = math.inf, None, 0
    step, skipped, epoch = 0, 0, 0
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train))
        epoch_loss, epoch_count = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            total, count = None, 0
            try:
                for i in order[start:start + config.batch_size]:
                    try:
                        loss = ctc_loss(head_forward(inputs[i], head, model.params), targets[i])
                    except CtcAlignmentError as e:
                        skipped += 1
                        logger.debug(f"Skipping {train[i].utterance_id}: {e}")
                        continue
                    total = loss if total is None else total + loss
                    count += 1
                if total is None:
                    continue
                grads = dict(zip(names, backward(total / float(count), parameters)))
            except NonFiniteError as e:
                logger.error(f"ASR training diverged at step {step}: {e}")
                raise DivergenceError(f"ASR training diverged at step {step}: {e}", step,
                                      model.to_checkpoint(state)) from e
            lr = schedule.rate(step)
            adam_step(model.params, clip_global_norm(grads, config.clip_norm), state, lr)
            step += 1
            epoch_loss += total.item()
            epoch_count += count

        if epoch_count == 0:
            raise CtcAlignmentError("no training utterance can be aligned to its transcript")
        if epoch % config.eval_every != 0 and epoch != config.max_epochs:
            continue
        dev_wer = evaluate_model(model, dev, features).wer
        entry = {"epoch": epoch, "step": step, "loss": epoch_loss / epoch_count, "dev_wer": dev_wer,
                 "lr": schedule.rate(max(step - 1, 0)), "skipped": skipped}
        logger.info(f"epoch {epoch}: loss {entry['loss']:.4f}, dev WER {dev_wer:.3f}")
        if log is not None:
            log.record(**entry)
        if dev_wer < best_wer:
            best_wer, stale = dev_wer, 0
            best_params = {n: p.data.copy() for n, p in model.params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                logger.info(f"Dev WER has not improved for {stale} evaluations; stopping at epoch {epoch}")
                break

    if best_params is not None:
        for name, value in best_params.items():
            model.params[name].data = value
    checkpoint = model.to_checkpoint(state)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint, checkpoint_path)
    return AsrTrainingResult(checkpoint, best_wer, epoch, step, skipped)

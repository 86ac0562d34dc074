"""
Evaluation studies over frozen feature sources.

- transfer matrix: one head per (train corpus, feature source), evaluated on
  every eval corpus; cells where train and eval share language and domain
  are in-domain.
- multilingual: per language, the same head trained on baseline and on
  learned features; reports the relative WER reduction.
- sample efficiency: heads trained on fractions of the training set, scored
  with greedy and character-LM beam decoding.

Every study is a list of independent cells. Cells run serially or in a
process pool and come back in canonical order, so reports do not depend on
scheduling. A failing cell is logged and reported with status "failed".
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import Pool
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, TypeVar

from .asr_training import AsrConfig, AsrModel, FeatureSource, evaluate_model, train_asr
from .audio import AudioUtterance
from .char_lm import CharNgramLm, train_char_lm
from .corpus import Corpus, derive_rng
from .ctc import CharVocab
from .errors import VocabularyError
from .reports import ChartData

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


@dataclass
class DecodeOptions:
    beam: int = 1
    use_lm: bool = False
    lm_order: int = 4
    lm_alpha: float = 0.1
    lm_weight: float = 0.5
    insertion_bonus: float = 0.1

    def language_model(self, transcripts: Sequence[str],
                       vocabulary: Optional[Sequence[str]] = None) -> Optional[CharNgramLm]:
        if not self.use_lm:
            return None
        return train_char_lm(transcripts, self.lm_order, self.lm_alpha, vocabulary)


def run_cells(worker: Callable[[T], R], tasks: Sequence[T], jobs: int = 1) -> List[R]:
    """Map `worker` over tasks, in a process pool when jobs > 1; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    logger.info(f"Running {len(tasks)} cells on {min(jobs, len(tasks))} processes")
    with Pool(processes=min(jobs, len(tasks))) as pool:
        return pool.map(worker, tasks)


def select_fraction(utterances: Sequence[AudioUtterance], fraction: float, seed: int) -> List[AudioUtterance]:
    """floor(fraction·n) utterances, at least one, picked by a seeded shuffle.

    The selection keeps corpus order, and smaller fractions are subsets of
    larger ones for the same seed.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    count = max(1, math.floor(fraction * len(utterances) + 1e-9))
    chosen = derive_rng(seed, "fraction").permutation(len(utterances))[:count]
    return [utterances[i] for i in sorted(chosen)]


# ---- cells -----------------------------------------------------------------

@dataclass
class CellTask:
    """Train one head, then run each (utterances, decoding) evaluation."""
    train: Sequence[AudioUtterance]
    dev: Sequence[AudioUtterance]
    evaluations: List[Tuple[Sequence[AudioUtterance], DecodeOptions]]
    features: FeatureSource
    config: AsrConfig
    vocab: Optional[CharVocab] = None
    lm_text: List[str] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None
    label: str = ""


@dataclass
class CellOutcome:
    wer: Optional[float] = None
    cer: Optional[float] = None
    utterances: int = 0
    error: Optional[str] = None

    @property
    def status(self) -> str:
        return "ok" if self.error is None else "failed"


def _failure(e: Exception) -> str:
    return f"{type(e).__name__}: {e}"


def run_cell(task: CellTask) -> List[CellOutcome]:
    try:
        result = train_asr(task.train, task.dev, task.features, task.config, vocab=task.vocab,
                           checkpoint_path=task.checkpoint_path)
        model = AsrModel.from_checkpoint(result.checkpoint)
    except Exception as e:
        logger.error(f"Cell {task.label} failed during training: {e}")
        return [CellOutcome(utterances=len(u), error=_failure(e)) for u, _ in task.evaluations]

    outcomes = []
    for utterances, decoding in task.evaluations:
        try:
            lm = decoding.language_model(task.lm_text, model.vocab.characters)
            evaluation = evaluate_model(model, utterances, task.features, decoding.beam, lm, decoding.lm_weight,
                                        decoding.insertion_bonus)
            outcomes.append(CellOutcome(evaluation.wer, evaluation.cer, evaluation.utterances))
        except Exception as e:
            logger.error(f"Cell {task.label} failed during evaluation: {e}")
            outcomes.append(CellOutcome(utterances=len(utterances), error=_failure(e)))
    return outcomes


def _mean(values: Sequence[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


# ---- transfer matrix -------------------------------------------------------

@dataclass
class TransferCell:
    train_corpus: str
    eval_corpus: str
    features: str
    wer: Optional[float]
    cer: Optional[float]
    utterances: int
    in_domain: bool
    status: str = "ok"
    error: Optional[str] = None


@dataclass
class TransferReport:
    cells: List[TransferCell]
    name: str = "transfer_matrix"

    def cell(self, train_corpus: str, eval_corpus: str, features: str) -> TransferCell:
        for c in self.cells:
            if (c.train_corpus, c.eval_corpus, c.features) == (train_corpus, eval_corpus, features):
                return c
        raise KeyError((train_corpus, eval_corpus, features))

    def feature_labels(self) -> List[str]:
        return list(dict.fromkeys(c.features for c in self.cells))

    def summary(self) -> Dict[str, Dict[str, Optional[float]]]:
        """Per feature source: mean in-domain WER, mean off-diagonal WER and their difference."""
        summary = {}
        for label in self.feature_labels():
            ok = [c for c in self.cells if c.features == label and c.status == "ok"]
            in_domain = _mean([c.wer for c in ok if c.in_domain])
            off_domain = _mean([c.wer for c in ok if not c.in_domain])
            degradation = off_domain - in_domain if in_domain is not None and off_domain is not None else None
            summary[label] = {"in_domain_wer": in_domain, "off_domain_wer": off_domain, "degradation": degradation,
                              "failed": sum(c.status == "failed" for c in self.cells if c.features == label)}
        return summary

    def rows(self) -> List[Dict]:
        return [asdict(c) for c in self.cells]

    def to_dict(self) -> Dict:
        return {"cells": self.rows(), "summary": self.summary()}

    def chart(self) -> ChartData:
        categories = list(dict.fromkeys(f"{c.train_corpus} -> {c.eval_corpus}" for c in self.cells))
        series = {label: [None] * len(categories) for label in self.feature_labels()}
        for c in self.cells:
            if c.status == "ok":
                series[c.features][categories.index(f"{c.train_corpus} -> {c.eval_corpus}")] = c.wer
        return ChartData("WER by training and evaluation corpus", "WER", categories, series)


def shared_vocabulary(train_corpora: Sequence[Corpus], eval_corpora: Sequence[Corpus]) -> CharVocab:
    """Vocabulary of all training transcripts; every eval corpus must be covered.

    Raises:
        VocabularyError: an eval corpus uses characters no training corpus has
    """
    vocab = CharVocab.from_transcripts(t for c in train_corpora for t in c.transcripts)
    for corpus in eval_corpora:
        missing = sorted(set("".join(corpus.transcripts)) - set(vocab.characters))
        if missing:
            raise VocabularyError(f"vocabulary mismatch: {corpus.name} uses characters {missing} "
                                  f"absent from the training corpora")
    return vocab


def transfer_matrix(train_corpora: Sequence[Tuple[Corpus, Corpus]], eval_corpora: Sequence[Corpus],
                    features: Mapping[str, FeatureSource], config: AsrConfig,
                    decoding: Optional[DecodeOptions] = None, jobs: int = 1,
                    checkpoint_dir: Optional[Path] = None,
                    lm_text: Optional[Mapping[str, Sequence[str]]] = None) -> TransferReport:
    """Train one head per (train corpus, feature source) and evaluate it on every eval corpus.

    Args:
        train_corpora: (train, dev) pairs, one matrix row each
        eval_corpora: Matrix columns
        features: Feature sources keyed by report label
        checkpoint_dir: If given, each head is saved as <train>__<label>.ckpt
        lm_text: Character-LM text per train corpus name; defaults to the row's transcripts

    Raises:
        VocabularyError: corpora do not share a character vocabulary
    """
    decoding = decoding or DecodeOptions()
    vocab = shared_vocabulary([c for pair in train_corpora for c in pair], eval_corpora)
    tasks = []
    lm_text = lm_text or {}
    for train, dev in train_corpora:
        text = list(lm_text.get(train.name, train.transcripts))
        for label, source in features.items():
            path = None
            if checkpoint_dir is not None:
                Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
                path = Path(checkpoint_dir) / f"{train.name}__{label.replace('@', '-')}.ckpt"
            tasks.append(CellTask(train.utterances, dev.utterances,
                                  [(corpus.utterances, decoding) for corpus in eval_corpora], source, config,
                                  vocab, text, path, f"{train.name}/{label}"))

    logger.info(f"Transfer matrix: {len(train_corpora)} train x {len(eval_corpora)} eval x {len(features)} features")
    outcomes = run_cells(run_cell, tasks, jobs)
    cells = []
    task_outcomes = iter(outcomes)
    for train, _ in train_corpora:
        for label in features:
            for corpus, outcome in zip(eval_corpora, next(task_outcomes)):
                cells.append(TransferCell(train.name, corpus.name, label, outcome.wer, outcome.cer,
                                          outcome.utterances,
                                          (train.language, train.domain) == (corpus.language, corpus.domain),
                                          outcome.status, outcome.error))
    return TransferReport(cells)


# ---- multilingual ----------------------------------------------------------

@dataclass
class LanguageData:
    language: str
    train: Corpus
    dev: Corpus
    test: Corpus
    lm_text: Optional[List[str]] = None


@dataclass
class LanguageResult:
    language: str
    baseline_wer: Optional[float]
    learned_wer: Optional[float]
    relative_reduction: Optional[float]
    status: str = "ok"
    error: Optional[str] = None


def relative_reduction(baseline_wer: float, learned_wer: float) -> Optional[float]:
    """100·(baseline − learned)/baseline; negative when learned features are worse.

    With a zero baseline the reduction is 0 if both are zero and undefined
    (None) otherwise.
    """
    if baseline_wer == 0:
        return 0.0 if learned_wer == 0 else None
    return 100.0 * (baseline_wer - learned_wer) / baseline_wer


@dataclass
class MultilingualReport:
    baseline: str
    learned: str
    languages: List[LanguageResult]
    name: str = "multilingual"

    def mean_reduction(self) -> Optional[float]:
        return _mean([r.relative_reduction for r in self.languages
                      if r.status == "ok" and r.relative_reduction is not None])

    def rows(self) -> List[Dict]:
        return [asdict(r) for r in self.languages]

    def to_dict(self) -> Dict:
        return {"baseline": self.baseline, "learned": self.learned, "languages": self.rows(),
                "mean_relative_reduction": self.mean_reduction()}

    def chart(self) -> ChartData:
        values = [r.relative_reduction if r.status == "ok" else None for r in self.languages]
        return ChartData(f"Relative WER reduction of {self.learned} over {self.baseline}", "relative reduction (%)",
                         [r.language for r in self.languages], {"relative_reduction": values})


def multilingual_eval(languages: Sequence[LanguageData], baseline: Tuple[str, FeatureSource],
                      learned: Tuple[str, FeatureSource], config: AsrConfig,
                      decoding: Optional[DecodeOptions] = None, jobs: int = 1) -> MultilingualReport:
    """Per language, train identical heads on baseline and learned features and compare test WER.

    A failure in either head marks that language failed; other languages continue.

    Raises:
        ValueError: fewer than two languages
    """
    if len(languages) < 2:
        raise ValueError(f"the multilingual study needs at least 2 languages, got {len(languages)}")
    decoding = decoding or DecodeOptions()
    tasks = []
    for data in languages:
        transcripts = data.train.transcripts + data.dev.transcripts
        vocab = CharVocab.from_transcripts(transcripts)
        lm_text = data.lm_text if data.lm_text is not None else data.train.transcripts
        for label, source in (baseline, learned):
            tasks.append(CellTask(data.train.utterances, data.dev.utterances, [(data.test.utterances, decoding)],
                                  source, config, vocab, lm_text, label=f"{data.language}/{label}"))

    outcomes = run_cells(run_cell, tasks, jobs)
    results = []
    for i, data in enumerate(languages):
        base, mine = outcomes[2 * i][0], outcomes[2 * i + 1][0]
        errors = [o.error for o in (base, mine) if o.error is not None]
        if errors:
            results.append(LanguageResult(data.language, base.wer, mine.wer, None, "failed", "; ".join(errors)))
            continue
        reduction = relative_reduction(base.wer, mine.wer)
        logger.info(f"{data.language}: WER {base.wer:.3f} -> {mine.wer:.3f}")
        results.append(LanguageResult(data.language, base.wer, mine.wer, reduction))
    return MultilingualReport(baseline[0], learned[0], results)


# ---- sample efficiency -----------------------------------------------------

@dataclass
class EfficiencyResult:
    features: str
    fraction: float
    train_utterances: int
    wer_greedy: Optional[float]
    wer_lm: Optional[float]
    status: str = "ok"
    error: Optional[str] = None


@dataclass
class SampleEfficiencyReport:
    results: List[EfficiencyResult]
    name: str = "sample_efficiency"

    def rows(self) -> List[Dict]:
        return [asdict(r) for r in self.results]

    def to_dict(self) -> Dict:
        return {"results": self.rows()}

    def chart(self) -> ChartData:
        categories = [f"{r.features} {r.fraction:.0%}" for r in self.results]
        greedy = [r.wer_greedy for r in self.results]
        with_lm = [r.wer_lm for r in self.results]
        return ChartData("Test WER by training fraction", "WER", categories, {"greedy": greedy, "lm": with_lm})


def sample_efficiency(train: Corpus, dev: Corpus, test: Corpus, features: Mapping[str, FeatureSource],
                      fractions: Sequence[float], config: AsrConfig, decoding: Optional[DecodeOptions] = None,
                      seed: int = 0, jobs: int = 1) -> SampleEfficiencyReport:
    """Test WER of heads trained on each fraction of `train`, per feature source.

    The character LM is trained on the full training transcripts and used
    with `decoding.beam`; greedy decoding needs no LM.
    """
    decoding = decoding or DecodeOptions(beam=8)
    greedy = DecodeOptions(beam=1, use_lm=False)
    with_lm = replace(decoding, use_lm=True)
    vocab = CharVocab.from_transcripts(train.transcripts + dev.transcripts)
    tasks, keys = [], []
    for label, source in features.items():
        for fraction in fractions:
            subset = select_fraction(train.utterances, fraction, seed)
            tasks.append(CellTask(subset, dev.utterances, [(test.utterances, greedy), (test.utterances, with_lm)],
                                  source, config, vocab, train.transcripts, label=f"{label}/{fraction}"))
            keys.append((label, fraction, len(subset)))

    results = []
    for (label, fraction, count), (plain, lm) in zip(keys, run_cells(run_cell, tasks, jobs)):
        errors = [o.error for o in (plain, lm) if o.error is not None]
        status, error = ("failed", "; ".join(errors)) if errors else ("ok", None)
        results.append(EfficiencyResult(label, fraction, count, plain.wer, lm.wer, status, error))
    return SampleEfficiencyReport(results)

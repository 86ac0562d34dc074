#!/usr/bin/env python3
"""
Stage runner and command line.

    python -m cpcr <stage> --config run.json [--out DIR] [--seed N] [--jobs N]

Stages: datagen, pretrain, train-asr, evaluate, transfer-matrix,
multilingual, sample-efficiency. Every run writes resolved_config.json to
its output directory before anything else. Exit status is 0 on success,
1 on a configuration error and 2 on any other failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .asr_training import AsrModel, FeatureSource, evaluate_model, train_asr
from .audio import AudioUtterance
from .checkpoint import Checkpoint, load_checkpoint
from .config import ExperimentConfig, check_paths, load_config, parse_feature_label
from .corpus import Corpus, corpus_name, load_manifest, synth_corpus, write_corpora
from .cpc_model import CpcModel
from .env import load_environment, setup_logging
from .errors import CheckpointError, ConfigError
from .experiments import (DecodeOptions, LanguageData, multilingual_eval, sample_efficiency, select_fraction,
                          transfer_matrix)
from .pretrain import evaluate_contrastive, pretrain, random_cpc_checkpoint
from .reports import emit_report, print_report, write_json
from .training_log import TrainingLog

logger = logging.getLogger(__name__)

CORPUS_INDEX = "corpora.json"


def load_corpora(config: ExperimentConfig) -> Dict[str, Corpus]:
    """Corpora keyed by name, read from corpus.manifest_dir or synthesised from corpus.*."""
    manifest_dir = config["corpus.manifest_dir"]
    if manifest_dir is None:
        return {c.name: c for c in synth_corpus(config.corpus_spec())}
    root = Path(manifest_dir)
    index_path = root / CORPUS_INDEX
    if not index_path.exists():
        raise ConfigError("corpus.manifest_dir", f"{root} has no {CORPUS_INDEX} index")
    with open(index_path, "r") as f:
        index = json.load(f)
    return {name: load_manifest(root / relative) for name, relative in sorted(index.items())}


def _fresh_log(path: Path) -> TrainingLog:
    """A log that starts empty, so reruns into the same directory reproduce it."""
    path.unlink(missing_ok=True)
    return TrainingLog(path)


class Run:
    """Shared state of one stage: corpora, data selection and feature sources."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.out_dir = config.out_dir
        self._corpora: Optional[Dict[str, Corpus]] = None
        self._cpc: Dict[Optional[str], Checkpoint] = {}

    @property
    def corpora(self) -> Dict[str, Corpus]:
        if self._corpora is None:
            self._corpora = load_corpora(self.config)
        return self._corpora

    def languages(self) -> List[str]:
        return list(dict.fromkeys(c.language for c in self.corpora.values()))

    def domains(self) -> List[str]:
        return list(dict.fromkeys(c.domain for c in self.corpora.values()))

    @property
    def language(self) -> str:
        language = self.config["data.language"] or self.languages()[0]
        if language not in self.languages():
            raise ConfigError("data.language", f"no corpus for language {language!r}")
        return language

    @property
    def domain(self) -> str:
        domain = self.config["data.domain"] or self.domains()[0]
        if domain not in self.domains():
            raise ConfigError("data.domain", f"no corpus for domain {domain!r}")
        return domain

    def corpus(self, language: str, domain: str, split: str) -> Corpus:
        name = corpus_name(language, domain, split)
        if name not in self.corpora:
            raise ConfigError("corpus", f"no corpus named {name}")
        return self.corpora[name]

    def training_corpus(self, language: str, domain: str) -> Corpus:
        """The train split reduced to data.fraction."""
        train = self.corpus(language, domain, "train")
        return train.subset(select_fraction(train.utterances, self.config["data.fraction"], self.config.seed))

    def lm_text(self, language: str, domain: str) -> List[str]:
        """Character-LM text: every transcript of the full train split, whatever data.fraction is."""
        return self.corpus(language, domain, "train").transcripts

    def pool(self, pool: str, split: str) -> List[AudioUtterance]:
        """Pretraining utterances: every corpus of the split (diverse) or clean-domain corpora only."""
        corpora = [c for c in self.corpora.values() if c.split == split]
        if pool == "clean":
            corpora = [c for c in corpora if c.domain == "clean"]
            if not corpora:
                raise ConfigError("cpc.pool", "the clean pool needs a corpus in the 'clean' domain")
        return [u for c in corpora for u in c.utterances]

    def cpc_checkpoint(self, pool: Optional[str] = None) -> Checkpoint:
        """CPC model for frozen-cpc features.

        Without an explicit pool, cpc.checkpoint is used when set; otherwise
        the model is pretrained on the pool and saved as cpc-<pool>.ckpt.
        """
        if pool is None and self.config["cpc.checkpoint"] is not None:
            if None not in self._cpc:
                self._cpc[None] = load_checkpoint(self.config["cpc.checkpoint"])
            return self._cpc[None]
        if pool is not None and self.config["cpc.checkpoint"] is not None and pool not in self._cpc:
            logger.warning(f"cpc.checkpoint is ignored for frozen-cpc@{pool}; pretraining on the {pool} pool instead")
        pool = pool or self.config["cpc.pool"]
        if pool not in self._cpc:
            logger.info(f"Pretraining CPC on the {pool} pool")
            self._cpc[pool] = pretrain(self.pool(pool, "train"), self.config.cpc_config(),
                                       validation=self.pool(pool, "dev"),
                                       log=_fresh_log(self.out_dir / f"cpc-{pool}.jsonl"),
                                       checkpoint_path=self.out_dir / f"cpc-{pool}.ckpt")
        return self._cpc[pool]

    def feature_source(self, label: str, key: str = "features.source") -> FeatureSource:
        kind, pool = parse_feature_label(label, key)
        if kind == "frozen-cpc":
            return FeatureSource(kind, self.cpc_checkpoint(pool))
        if kind == "frozen-random-cpc":
            return FeatureSource(kind, random_cpc_checkpoint(self.config.cpc_config().model_config(), self.config.seed))
        return FeatureSource(kind)

    def decode_options(self) -> DecodeOptions:
        return DecodeOptions(**self.config.section("decode"))


def _write_decodes(records: Sequence[Dict], path: Path) -> Path:
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path


# ---- stages ----------------------------------------------------------------

def run_datagen(run: Run) -> Dict[str, Path]:
    root = run.out_dir / "corpora"
    write_corpora(list(run.corpora.values()), root)
    logger.info(f"Wrote {len(run.corpora)} corpora to {root}")
    return {"corpora": root / CORPUS_INDEX}


def run_pretrain(run: Run) -> Dict[str, Path]:
    pool = run.config["cpc.pool"]
    checkpoint = run.cpc_checkpoint(pool)
    held_out = evaluate_contrastive(CpcModel.from_checkpoint(checkpoint), run.pool(pool, "test"),
                                    run.config["cpc.negatives"], run.config.seed, run.config["cpc.crop"])
    metrics = write_json({"pool": pool, "test_accuracy": held_out.accuracy, "test_objective": held_out.objective,
                          "terms": held_out.num_terms, "utterances": held_out.utterances},
                         run.out_dir / "pretrain_metrics.json")
    logger.info(f"Held-out contrastive accuracy {held_out.accuracy:.3f}")
    return {"checkpoint": run.out_dir / f"cpc-{pool}.ckpt", "log": run.out_dir / f"cpc-{pool}.jsonl",
            "metrics": metrics}


def run_train_asr(run: Run) -> Dict[str, Path]:
    config = run.config
    language, domain = run.language, run.domain
    source = run.feature_source(config["features.source"])
    train = run.training_corpus(language, domain)
    test = run.corpus(language, domain, "test")
    checkpoint_path = run.out_dir / "asr.ckpt"
    result = train_asr(train.utterances, run.corpus(language, domain, "dev").utterances, source,
                       config.asr_config(), log=_fresh_log(run.out_dir / "asr_log.jsonl"),
                       checkpoint_path=checkpoint_path)
    decoding = run.decode_options()
    model = AsrModel.from_checkpoint(result.checkpoint)
    evaluation = evaluate_model(model, test.utterances, source, decoding.beam,
                                decoding.language_model(run.lm_text(language, domain), model.vocab.characters),
                                decoding.lm_weight,
                                decoding.insertion_bonus)
    metrics = write_json({"corpus": test.name, "wer": evaluation.wer, "cer": evaluation.cer,
                          "utterances": evaluation.utterances, "train_utterances": len(train),
                          "best_dev_wer": result.best_dev_wer, "epochs": result.epochs, "steps": result.steps,
                          "skipped": result.skipped, "features": source.describe()},
                         run.out_dir / "metrics.json")
    logger.info(f"{test.name}: WER {evaluation.wer:.3f}, CER {evaluation.cer:.3f}")
    return {"checkpoint": checkpoint_path, "log": run.out_dir / "asr_log.jsonl", "metrics": metrics,
            "decodes": _write_decodes(evaluation.records, run.out_dir / "decodes.jsonl")}


def run_evaluate(run: Run) -> Dict[str, Path]:
    config = run.config
    if config["asr.checkpoint"] is None:
        raise ConfigError("asr.checkpoint", "is required for the evaluate stage")
    kind, _ = parse_feature_label(config["features.source"])
    if kind == "frozen-cpc" and config["cpc.checkpoint"] is None:
        raise ConfigError("cpc.checkpoint", "is required to evaluate a model on frozen-cpc features")
    model = AsrModel.from_checkpoint(load_checkpoint(config["asr.checkpoint"]))
    source = run.feature_source(config["features.source"])
    if model.features and model.features != source.describe():
        raise CheckpointError(f"model was trained on {model.features}, not on {source.describe()}")
    language, domain = run.language, run.domain
    corpus = run.corpus(language, domain, config["evaluate.split"])
    decoding = run.decode_options()
    evaluation = evaluate_model(model, corpus.utterances, source, decoding.beam,
                                decoding.language_model(run.lm_text(language, domain), model.vocab.characters),
                                decoding.lm_weight, decoding.insertion_bonus)
    metrics = write_json({"corpus": corpus.name, "wer": evaluation.wer, "cer": evaluation.cer,
                          "utterances": evaluation.utterances, "features": source.describe()},
                         run.out_dir / "metrics.json")
    logger.info(f"{corpus.name}: WER {evaluation.wer:.3f}, CER {evaluation.cer:.3f}")
    return {"metrics": metrics, "decodes": _write_decodes(evaluation.records, run.out_dir / "decodes.jsonl")}


def run_transfer_matrix(run: Run) -> Dict[str, Path]:
    config = run.config
    language = run.language
    train_domains = config["transfer.train_domains"] or run.domains()
    eval_domains = config["transfer.eval_domains"] or run.domains()
    for key, domains in (("transfer.train_domains", train_domains), ("transfer.eval_domains", eval_domains)):
        unknown = [d for d in domains if d not in run.domains()]
        if unknown:
            raise ConfigError(key, f"no corpora for domains {unknown}")
    rows = [(run.training_corpus(language, d), run.corpus(language, d, "dev")) for d in train_domains]
    columns = [run.corpus(language, d, "test") for d in eval_domains]
    features = {label: run.feature_source(label, "transfer.features") for label in config["transfer.features"]}
    report = transfer_matrix(rows, columns, features, config.asr_config(), run.decode_options(),
                             jobs=config["jobs"], checkpoint_dir=run.out_dir / "models",
                             lm_text={train.name: run.lm_text(language, train.domain) for train, _ in rows})
    print_report(report)
    return emit_report(report, run.out_dir)


def run_multilingual(run: Run) -> Dict[str, Path]:
    config = run.config
    languages = run.languages()
    if len(languages) < 2:
        raise ConfigError("corpus.languages", f"the multilingual study needs at least 2 languages, got {len(languages)}")
    domain = run.domain
    data = [LanguageData(language, run.training_corpus(language, domain), run.corpus(language, domain, "dev"),
                         run.corpus(language, domain, "test"), run.lm_text(language, domain))
            for language in languages]
    baseline = config["multilingual.baseline"]
    learned = config["multilingual.learned"]
    report = multilingual_eval(data, (baseline, run.feature_source(baseline, "multilingual.baseline")),
                               (learned, run.feature_source(learned, "multilingual.learned")),
                               config.asr_config(), run.decode_options(), jobs=config["jobs"])
    print_report(report)
    if report.mean_reduction() is not None:
        logger.info(f"Mean relative WER reduction: {report.mean_reduction():.1f}%")
    return emit_report(report, run.out_dir)


def run_sample_efficiency(run: Run) -> Dict[str, Path]:
    config = run.config
    language, domain = run.language, run.domain
    features = {label: run.feature_source(label, "sample_efficiency.features")
                for label in config["sample_efficiency.features"]}
    decoding = replace(run.decode_options(), beam=config["sample_efficiency.beam"])
    report = sample_efficiency(run.corpus(language, domain, "train"), run.corpus(language, domain, "dev"),
                               run.corpus(language, domain, "test"), features,
                               config["sample_efficiency.fractions"],
                               config.asr_config(head=config["sample_efficiency.head"]), decoding,
                               seed=config.seed, jobs=config["jobs"])
    print_report(report)
    return emit_report(report, run.out_dir)


STAGE_RUNNERS = {
    "datagen": run_datagen,
    "pretrain": run_pretrain,
    "train-asr": run_train_asr,
    "evaluate": run_evaluate,
    "transfer-matrix": run_transfer_matrix,
    "multilingual": run_multilingual,
    "sample-efficiency": run_sample_efficiency,
}


def run(config: ExperimentConfig) -> Dict[str, Path]:
    """Run one stage and return its artifacts by name.

    Raises:
        ConfigError: invalid configuration or missing input path
    """
    check_paths(config)
    resolved = config.write()
    logger.info(f"Running stage {config.stage} with seed {config.seed} into {config.out_dir}")
    artifacts = STAGE_RUNNERS[config.stage](Run(config))
    return {"config": resolved, **artifacts}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpcr", description="Bidirectional CPC speech representation experiments")
    parser.add_argument("stage", help="Stage to run (datagen, pretrain, train-asr, evaluate, transfer-matrix, "
                                      "multilingual, sample-efficiency)")
    parser.add_argument("--config", type=Path, help="JSON experiment configuration")
    parser.add_argument("--out", help="Output directory (overrides out_dir)")
    parser.add_argument("--seed", type=int, help="Run seed (overrides seed)")
    parser.add_argument("--jobs", type=int, help="Parallel study cells (overrides jobs)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    load_environment()
    setup_logging()
    overrides = {"stage": args.stage, "seed": args.seed, "out_dir": args.out, "jobs": args.jobs}
    try:
        artifacts = run(load_config(args.config, overrides))
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return 1
    except Exception as e:
        logger.exception(f"Stage {args.stage} failed: {e}")
        return 2
    for name, path in artifacts.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

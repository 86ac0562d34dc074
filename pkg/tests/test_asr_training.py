#!/usr/bin/env python3

import shutil
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np

from cpcr.asr_training import AsrConfig, AsrModel, FeatureSource, evaluate_model, train_asr
from cpcr.audio import AudioUtterance
from cpcr.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from cpcr.ctc import CharVocab
from cpcr.errors import (CheckpointError, DigestMismatchError, DivergenceError, EmptyCorpusError, ShapeError,
                         VocabularyError)
from cpcr.heads import init_head
from cpcr.pretrain import CpcConfig, random_cpc_checkpoint
from cpcr.training_log import TrainingLog
from tests.test_utils import requires_slow_tests, tiny_corpora

SMALL_TDNN = {"kernels": [3] * 17, "width": 8, "hidden": 16}


def small_config(**overrides):
    values = dict(head="tdnn", head_options=dict(SMALL_TDNN), max_epochs=3, batch_size=4, learning_rate=1e-3,
                  patience=100)
    values.update(overrides)
    return AsrConfig(**values)


class TestAsrConfig(unittest.TestCase):
    def test_head_defaults(self):
        ds2 = AsrConfig(head="ds2")
        self.assertEqual((ds2.clip_norm, ds2.schedule, ds2.learning_rate), (25.0, "constant", 2e-4))
        tdnn = AsrConfig(head="tdnn")
        self.assertEqual((tdnn.clip_norm, tdnn.schedule), (5.0, "polynomial"))
        self.assertEqual((tdnn.patience, tdnn.max_epochs), (10, 200))

    def test_validation(self):
        with self.assertRaises(ValueError):
            AsrConfig(head="lstm")
        with self.assertRaises(ValueError):
            AsrConfig(patience=0)


class TestFeatureSource(unittest.TestCase):
    def test_dims_and_standardisation(self):
        u = AudioUtterance(np.random.default_rng(0).normal(size=3200), utterance_id="x")
        for kind, dim in (("log-filterbank", 40), ("spectrogram", 257)):
            source = FeatureSource(kind)
            frames = source(u)
            self.assertEqual(frames.shape[0], dim)
            self.assertEqual(source.dim, dim)
            np.testing.assert_allclose(frames.mean(axis=1), 0.0, atol=1e-8)

    def test_cpc_source_requires_checkpoint(self):
        with self.assertRaises(ValueError):
            FeatureSource("frozen-cpc")
        with self.assertRaises(ValueError):
            FeatureSource("mfcc")

    def test_cpc_source(self):
        checkpoint = random_cpc_checkpoint(CpcConfig(d_z=4, d_c=3).model_config(), seed=0)
        source = FeatureSource("frozen-random-cpc", checkpoint)
        frames = source(AudioUtterance(np.random.default_rng(1).normal(size=1600), utterance_id="y"))
        self.assertEqual(frames.shape, (6, 10))
        self.assertIn("checkpoint_sha256", source.describe())


class TestTrainAsr(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        corpora = tiny_corpora(utterances=10)
        cls.train = corpora["l0-clean-train"].utterances
        cls.dev = corpora["l0-clean-dev"].utterances
        cls.test = corpora["l0-clean-test"].utterances

    def setUp(self):
        self.dir = Path(tempfile.mkdtemp(prefix="cpcr-asr-"))

    def tearDown(self):
        shutil.rmtree(self.dir, ignore_errors=True)

    def test_deterministic(self):
        first_log, second_log = TrainingLog(), TrainingLog()
        first = train_asr(self.train, self.dev, FeatureSource("log-filterbank"), small_config(), log=first_log)
        second = train_asr(self.train, self.dev, FeatureSource("log-filterbank"), small_config(), log=second_log)
        self.assertEqual(first.checkpoint.to_bytes(), second.checkpoint.to_bytes())
        self.assertEqual(first_log.records, second_log.records)

    def test_log_records(self):
        log = TrainingLog(self.dir / "asr.jsonl")
        result = train_asr(self.train, self.dev, FeatureSource("log-filterbank"), small_config(), log=log)
        self.assertEqual([r["epoch"] for r in log.records], [1, 2, 3])
        for key in ("epoch", "step", "loss", "dev_wer", "lr"):
            self.assertIn(key, log.records[0])
        self.assertEqual(result.epochs, 3)
        self.assertEqual(result.steps, 3 * 2)
        self.assertEqual(result.best_dev_wer, min(log.values("dev_wer")))

    def test_early_stopping(self):
        """Test a frozen learning rate stops after `patience` evaluations without improvement"""
        result = train_asr(self.train, self.dev, FeatureSource("log-filterbank"),
                           small_config(learning_rate=0.0, max_epochs=50, patience=2))
        self.assertEqual(result.epochs, 3)

    def test_loss_decreases(self):
        log = TrainingLog()
        train_asr(self.train[:5], self.dev, FeatureSource("log-filterbank"),
                  small_config(max_epochs=30, batch_size=5, learning_rate=5e-3), log=log)
        losses = log.values("loss")
        self.assertLess(losses[-1], losses[0])

    def test_frozen_cpc_contract(self):
        """Test ASR training leaves the CPC checkpoint untouched and trains head parameters only"""
        checkpoint = random_cpc_checkpoint(CpcConfig(d_z=4, d_c=4).model_config(), seed=1)
        before = checkpoint.to_bytes()
        result = train_asr(self.train, self.dev, FeatureSource("frozen-cpc", checkpoint),
                           small_config(max_epochs=1))
        self.assertEqual(checkpoint.to_bytes(), before)
        names = list(result.checkpoint.tensors)
        self.assertFalse(any(n.startswith(("encoder.", "context_", "scorer_")) for n in names))
        self.assertEqual(result.checkpoint.config["head"]["input_dim"], 8)

    def test_too_short_utterances_are_skipped(self):
        short = AudioUtterance(np.random.default_rng(2).normal(size=800), utterance_id="short",
                               transcript=self.train[0].transcript.split()[0] * 20)
        vocab = CharVocab.from_transcripts(u.transcript for u in self.train)
        result = train_asr(list(self.train) + [short], self.dev, FeatureSource("log-filterbank"),
                           small_config(max_epochs=2), vocab=vocab)
        self.assertEqual(result.skipped, 2)

    def test_vocabulary_must_cover_dev(self):
        odd = AudioUtterance(self.dev[0].samples, utterance_id="odd", transcript="zz")
        with self.assertRaises(VocabularyError):
            train_asr(self.train, [odd], FeatureSource("log-filterbank"), small_config())

    def test_empty_corpora(self):
        with self.assertRaises(EmptyCorpusError):
            train_asr([], self.dev, FeatureSource("log-filterbank"), small_config())

    def test_overflow_in_forward_pass_is_divergence(self):
        def overflowing_head(head, rng):
            params = init_head(head, rng)
            weight = params["conv.0.weight"]
            weight.data[...] = np.finfo(weight.data.dtype).max
            return params

        with patch("cpcr.asr_training.init_head", side_effect=overflowing_head):
            with self.assertRaises(DivergenceError) as ctx:
                train_asr(self.train, self.dev, FeatureSource("log-filterbank"), small_config())
        self.assertEqual(ctx.exception.step, 0)
        self.assertIsInstance(ctx.exception.checkpoint, Checkpoint)
        self.assertEqual(ctx.exception.checkpoint.config["kind"], "asr")


class TestEvaluation(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        corpora = tiny_corpora(utterances=10)
        cls.train = corpora["l0-clean-train"].utterances
        cls.dev = corpora["l0-clean-dev"].utterances
        cls.result = train_asr(cls.train, cls.dev, FeatureSource("log-filterbank"), small_config(max_epochs=1))

    def test_records_and_determinism(self):
        model = AsrModel.from_checkpoint(self.result.checkpoint)
        first = evaluate_model(model, self.train, FeatureSource("log-filterbank"))
        second = evaluate_model(model, self.train, FeatureSource("log-filterbank"), beam=1)
        self.assertEqual(first.wer, second.wer)
        self.assertEqual(len(first.records), len(self.train))
        self.assertEqual(set(first.records[0]), {"id", "ref", "hyp", "wer", "score"})
        self.assertGreaterEqual(first.cer, 0.0)

    def test_beam_decoding_runs(self):
        model = AsrModel.from_checkpoint(self.result.checkpoint)
        result = evaluate_model(model, self.dev, FeatureSource("log-filterbank"), beam=3)
        self.assertEqual(result.utterances, len(self.dev))

    def test_feature_mismatch(self):
        model = AsrModel.from_checkpoint(self.result.checkpoint)
        with self.assertRaises(ShapeError):
            evaluate_model(model, self.dev, FeatureSource("spectrogram"))

    def test_checkpoint_kinds(self):
        cpc = random_cpc_checkpoint(CpcConfig(d_z=4, d_c=4).model_config(), seed=0)
        with self.assertRaises(CheckpointError):
            AsrModel.from_checkpoint(cpc)
        directory = Path(tempfile.mkdtemp(prefix="cpcr-kinds-"))
        try:
            path = save_checkpoint(cpc, directory / "cpc.ckpt")
            with self.assertRaises(DigestMismatchError):
                load_checkpoint(path, expected_config=self.result.checkpoint.config)
        finally:
            shutil.rmtree(directory, ignore_errors=True)


class TestLearning(unittest.TestCase):
    @requires_slow_tests
    def test_ds2_loss_halves_within_200_steps(self):
        corpora = tiny_corpora(utterances=10, seed=3)
        train = corpora["l0-clean-train"].utterances[:5]
        log = TrainingLog()
        train_asr(train, train, FeatureSource("log-filterbank"),
                  AsrConfig(head="ds2", batch_size=5, max_epochs=200, patience=200, learning_rate=2e-4), log=log)
        losses = log.values("loss")
        self.assertLessEqual(min(losses[-10:]), 0.5 * losses[0])


if __name__ == '__main__':
    unittest.main()

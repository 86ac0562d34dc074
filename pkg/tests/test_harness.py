#!/usr/bin/env python3

import io
import json
import shutil
import tempfile
import unittest
from contextlib import redirect_stdout
from pathlib import Path
from unittest.mock import patch

from cpcr.checkpoint import save_checkpoint
from cpcr.config import RESOLVED_CONFIG_NAME, load_config, resolve_config
from cpcr.harness import Run, main, run
from cpcr.pretrain import random_cpc_checkpoint

SMALL_TDNN = {"kernels": [3] * 17, "width": 8, "hidden": 16}


def tiny_run_config(out_dir: Path, stage: str, **extra) -> dict:
    config = {
        "stage": stage,
        "seed": 0,
        "out_dir": str(out_dir),
        "corpus": {"languages": [{"name": "l0", "inventory_size": 3}], "domains": ["clean"], "utterances": 10,
                   "words_range": [1, 2], "word_length_range": [1, 2]},
        "features.source": "log-filterbank",
        "asr": {"head": "tdnn", "max_epochs": 1, "batch_size": 8, "head_options": SMALL_TDNN},
        "cpc": {"d_z": 4, "d_c": 4, "prediction_steps": 2, "negatives": 4, "crop": 1600, "batch_size": 2,
                "total_steps": 2, "log_every": 1, "checkpoint_every": 1},
    }
    config.update(extra)
    return config


def files_under(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class HarnessTestCase(unittest.TestCase):
    def setUp(self):
        self.dir = Path(tempfile.mkdtemp(prefix="cpcr-harness-"))

    def tearDown(self):
        shutil.rmtree(self.dir, ignore_errors=True)

    def write_config(self, data: dict, name: str = "run.json") -> Path:
        path = self.dir / name
        path.write_text(json.dumps(data))
        return path

    def main(self, *argv) -> int:
        with redirect_stdout(io.StringIO()):
            return main(list(argv))


class TestCommandLine(HarnessTestCase):
    def test_unknown_stage_is_a_config_error(self):
        self.assertEqual(self.main("finetune", "--seed", "0", "--out", str(self.dir / "out")), 1)
        self.assertFalse((self.dir / "out" / RESOLVED_CONFIG_NAME).exists())

    def test_missing_seed(self):
        self.assertEqual(self.main("datagen", "--out", str(self.dir / "out")), 1)

    def test_missing_input_path(self):
        path = self.write_config(tiny_run_config(self.dir / "out", "evaluate",
                                                 **{"asr.checkpoint": "nowhere.ckpt"}))
        self.assertEqual(self.main("evaluate", "--config", str(path)), 1)

    def test_stage_failure_exit_status(self):
        broken = self.dir / "broken.ckpt"
        broken.write_bytes(b"not a checkpoint")
        path = self.write_config(tiny_run_config(self.dir / "out", "evaluate", **{"asr.checkpoint": str(broken)}))
        self.assertEqual(self.main("evaluate", "--config", str(path)), 2)

    def test_datagen_is_byte_identical(self):
        path = self.write_config(tiny_run_config(self.dir / "unused", "datagen"))
        self.assertEqual(self.main("datagen", "--config", str(path), "--out", str(self.dir / "a")), 0)
        self.assertEqual(self.main("datagen", "--config", str(path), "--out", str(self.dir / "b")), 0)
        first, second = files_under(self.dir / "a" / "corpora"), files_under(self.dir / "b" / "corpora")
        self.assertIn("corpora.json", first)
        self.assertEqual(first, second)
        resolved = json.loads((self.dir / "a" / RESOLVED_CONFIG_NAME).read_text())
        self.assertEqual(resolved["stage"], "datagen")
        self.assertEqual(resolved["out_dir"], str((self.dir / "a").resolve()))


class TestStages(HarnessTestCase):
    def test_train_asr_then_evaluate(self):
        out = self.dir / "asr"
        config = resolve_config(tiny_run_config(out, "train-asr", **{"data.fraction": 0.5}))
        artifacts = run(config)
        for name in ("config", "checkpoint", "log", "metrics", "decodes"):
            self.assertTrue(Path(artifacts[name]).exists(), name)
        metrics = json.loads((out / "metrics.json").read_text())
        self.assertEqual(metrics["train_utterances"], 4)
        self.assertEqual(metrics["corpus"], "l0-clean-test")
        self.assertEqual(load_config(out / RESOLVED_CONFIG_NAME), config)

        evaluation = resolve_config(tiny_run_config(self.dir / "eval", "evaluate",
                                                    **{"asr.checkpoint": str(out / "asr.ckpt")}))
        run(evaluation)
        again = json.loads((self.dir / "eval" / "metrics.json").read_text())
        self.assertEqual(again["wer"], metrics["wer"])
        self.assertEqual(again["cer"], metrics["cer"])

    def test_evaluate_rejects_other_features(self):
        out = self.dir / "asr"
        run(resolve_config(tiny_run_config(out, "train-asr")))
        path = self.write_config(tiny_run_config(self.dir / "eval", "evaluate",
                                                 **{"asr.checkpoint": str(out / "asr.ckpt"),
                                                    "features.source": "spectrogram"}))
        self.assertEqual(self.main("evaluate", "--config", str(path)), 2)

    def test_train_from_manifests(self):
        run(resolve_config(tiny_run_config(self.dir / "data", "datagen")))
        config = resolve_config(tiny_run_config(self.dir / "asr", "train-asr", **{
            "corpus.manifest_dir": str(self.dir / "data" / "corpora")}))
        run(config)
        self.assertTrue((self.dir / "asr" / "asr.ckpt").exists())

    def test_pretrain_stage(self):
        out = self.dir / "cpc"
        artifacts = run(resolve_config(tiny_run_config(out, "pretrain")))
        self.assertTrue((out / "cpc-diverse.ckpt").exists())
        log = [json.loads(line) for line in (out / "cpc-diverse.jsonl").read_text().splitlines()]
        self.assertEqual([r["step"] for r in log], [1, 2])
        metrics = json.loads(Path(artifacts["metrics"]).read_text())
        self.assertEqual(metrics["pool"], "diverse")
        self.assertGreaterEqual(metrics["test_accuracy"], 0.0)

    def test_random_cpc_features(self):
        out = self.dir / "random"
        run(resolve_config(tiny_run_config(out, "train-asr", **{"features.source": "frozen-random-cpc"})))
        metrics = json.loads((out / "metrics.json").read_text())
        self.assertEqual(metrics["features"]["kind"], "frozen-random-cpc")
        self.assertIn("checkpoint_sha256", metrics["features"])

    def test_transfer_cell_matches_evaluate_stage(self):
        shared = {"data.fraction": 0.5, "corpus.utterances": 20, "decode": {"beam": 2, "use_lm": True, "lm_order": 2}}
        out = self.dir / "transfer"
        run(resolve_config(tiny_run_config(out, "transfer-matrix", **shared,
                                           **{"transfer.features": ["log-filterbank"]})))
        cell = json.loads((out / "transfer_matrix.json").read_text())["cells"][0]
        model = out / "models" / "l0-clean-train__log-filterbank.ckpt"
        run(resolve_config(tiny_run_config(self.dir / "eval", "evaluate", **shared,
                                           **{"asr.checkpoint": str(model)})))
        metrics = json.loads((self.dir / "eval" / "metrics.json").read_text())
        self.assertEqual(metrics["corpus"], cell["eval_corpus"])
        self.assertEqual(metrics["wer"], cell["wer"])
        self.assertEqual(metrics["cer"], cell["cer"])

    def test_pool_label_bypasses_cpc_checkpoint_with_warning(self):
        raw = tiny_run_config(self.dir / "out", "train-asr")
        checkpoint = random_cpc_checkpoint(resolve_config(raw).cpc_config().model_config(), 0)
        save_checkpoint(checkpoint, self.dir / "cpc.ckpt")
        config = resolve_config(dict(raw, **{"cpc.checkpoint": str(self.dir / "cpc.ckpt")}))
        config.out_dir.mkdir(parents=True, exist_ok=True)
        stage = Run(config)
        with patch("cpcr.harness.pretrain", return_value="pretrained") as pretrain:
            self.assertEqual(stage.cpc_checkpoint().to_bytes(), checkpoint.to_bytes())
            pretrain.assert_not_called()
            with self.assertLogs("cpcr.harness", level="WARNING") as logs:
                self.assertEqual(stage.cpc_checkpoint("clean"), "pretrained")
        self.assertIn("cpc.checkpoint is ignored", logs.output[0])

    def test_multilingual_needs_two_languages(self):
        path = self.write_config(tiny_run_config(self.dir / "out", "multilingual"))
        self.assertEqual(self.main("multilingual", "--config", str(path)), 1)


if __name__ == '__main__':
    unittest.main()

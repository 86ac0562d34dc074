#!/usr/bin/env python3

import shutil
import tempfile
import unittest
from pathlib import Path

import numpy as np

from cpcr.checkpoint import (MAGIC, Checkpoint, config_digest, deserialize, load_checkpoint, save_checkpoint,
                             serialize)
from cpcr.errors import CheckpointError, CorruptCheckpointError, DigestMismatchError
from cpcr.optim import AdamState, adam_step
from cpcr.tensor import Tensor


def sample_checkpoint(with_optimizer=True):
    rng = np.random.default_rng(0)
    params = {"a.weight": Tensor(rng.normal(size=(3, 2)), requires_grad=True),
              "a.bias": Tensor(rng.normal(size=3), requires_grad=True),
              "scalar": Tensor(np.array([1.5]), requires_grad=True)}
    state = None
    if with_optimizer:
        state = AdamState.for_parameters(params)
        adam_step(params, {n: np.ones_like(p.data) for n, p in params.items()}, state, 0.01)
    return Checkpoint.from_params({"kind": "cpc", "width": 3, "nested": {"b": 1, "a": [1, 2]}}, params, state)


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.dir = Path(tempfile.mkdtemp(prefix="cpcr-ckpt-"))

    def tearDown(self):
        shutil.rmtree(self.dir, ignore_errors=True)

    def test_save_load_save_is_byte_identical(self):
        ckpt = sample_checkpoint()
        first = save_checkpoint(ckpt, self.dir / "a.ckpt").read_bytes()
        loaded = load_checkpoint(self.dir / "a.ckpt")
        second = save_checkpoint(loaded, self.dir / "b.ckpt").read_bytes()
        self.assertEqual(first, second)
        self.assertTrue(first.startswith(MAGIC))
        self.assertEqual(list(loaded.tensors), ["a.weight", "a.bias", "scalar"])
        self.assertEqual(loaded.optimizer.step, 1)
        np.testing.assert_array_equal(loaded.optimizer.first_moment["a.bias"], ckpt.optimizer.first_moment["a.bias"])

    def test_without_optimizer(self):
        ckpt = deserialize(serialize(sample_checkpoint(with_optimizer=False)))
        self.assertIsNone(ckpt.optimizer)
        self.assertEqual(ckpt.tensors["a.weight"].dtype, np.float32)

    def test_digest_ignores_key_order(self):
        self.assertEqual(config_digest({"a": 1, "b": 2}), config_digest({"b": 2, "a": 1}))
        self.assertNotEqual(config_digest({"a": 1}), config_digest({"a": 2}))

    def test_expected_config(self):
        ckpt = sample_checkpoint()
        path = save_checkpoint(ckpt, self.dir / "c.ckpt")
        load_checkpoint(path, expected_config={"nested": {"a": [1, 2], "b": 1}, "width": 3, "kind": "cpc"})
        with self.assertRaises(DigestMismatchError):
            load_checkpoint(path, expected_config={"kind": "cpc", "width": 4})

    def test_truncation_is_detected(self):
        data = serialize(sample_checkpoint())
        for cut in (2, 10, len(data) // 2, len(data) - 1):
            with self.assertRaises(CorruptCheckpointError):
                deserialize(data[:cut])

    def test_trailing_bytes_and_bad_magic(self):
        data = serialize(sample_checkpoint())
        with self.assertRaises(CorruptCheckpointError):
            deserialize(data + b"\x00")
        with self.assertRaises(CorruptCheckpointError):
            deserialize(b"XXXX" + data[4:])

    def test_unsupported_version(self):
        data = bytearray(serialize(sample_checkpoint()))
        data[4] = 9
        with self.assertRaises(CheckpointError):
            deserialize(bytes(data))

    def test_missing_file(self):
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.dir / "absent.ckpt")

    def test_to_params(self):
        params = sample_checkpoint().to_params(requires_grad=True)
        self.assertTrue(params["a.bias"].requires_grad)
        self.assertEqual(params["a.weight"].shape, (3, 2))


if __name__ == '__main__':
    unittest.main()

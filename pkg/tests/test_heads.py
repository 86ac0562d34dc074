#!/usr/bin/env python3

import math
import unittest

import numpy as np

from cpcr.errors import CheckpointError, ShapeError
from cpcr.features import FeatureFrames
from cpcr.heads import (Ds2SmallConfig, TdnnConfig, centred_padding, head_config_from_dict, head_forward,
                        init_head, make_head_config)
from cpcr.tensor import Tensor


def small_tdnn(input_dim=6, vocab_size=4):
    return TdnnConfig(input_dim=input_dim, vocab_size=vocab_size, kernels=(3,) * 17, width=4, hidden=8)


def small_ds2(input_dim=12, vocab_size=4):
    return Ds2SmallConfig(input_dim=input_dim, vocab_size=vocab_size, kernels=((3, 5), (3, 3)), channels=(2, 3),
                          gru_hidden=5)


def normalised_rows(posteriors: np.ndarray) -> np.ndarray:
    return np.logaddexp.reduce(posteriors.astype(np.float64), axis=1)


class TestConfigs(unittest.TestCase):
    def test_tdnn_layer_count(self):
        self.assertEqual(len(TdnnConfig(input_dim=4, vocab_size=3).kernels), 17)
        with self.assertRaises(ValueError):
            TdnnConfig(input_dim=4, vocab_size=3, kernels=(3,) * 16)

    def test_ds2_layer_count(self):
        with self.assertRaises(ValueError):
            Ds2SmallConfig(input_dim=4, vocab_size=3, kernels=((3, 3),), strides=((1, 1),), channels=(2,))

    def test_round_trip_through_dict(self):
        for config in (small_tdnn(), small_ds2()):
            again = head_config_from_dict(config.to_dict())
            self.assertEqual(again.to_dict(), config.to_dict())
        with self.assertRaises(CheckpointError):
            head_config_from_dict({"kind": "lstm"})
        with self.assertRaises(ValueError):
            make_head_config("lstm", 4, 3)

    def test_frequency_kernels_clamp(self):
        config = Ds2SmallConfig(input_dim=40, vocab_size=5)
        self.assertEqual(config.frequency_sizes(), (40, 20, 10))
        self.assertEqual(config.effective_kernels(), ((11, 40), (11, 20)))
        with self.assertLogs('cpcr.heads', level='WARNING'):
            params = init_head(config, np.random.default_rng(0))
        self.assertEqual(params["conv.0.weight"].shape, (8, 1, 11, 40))
        self.assertEqual(params["gru.w_ih"].shape, (3 * 64, 16 * 10))

    def test_large_feature_dims_use_full_kernels(self):
        config = Ds2SmallConfig(input_dim=257, vocab_size=5)
        self.assertEqual(config.effective_kernels(), ((11, 41), (11, 21)))

    def test_centred_padding(self):
        self.assertEqual(centred_padding(11), (5, 5))
        self.assertEqual(centred_padding(4), (1, 2))


class TestForward(unittest.TestCase):
    def test_tdnn_preserves_frames(self):
        config = small_tdnn()
        params = init_head(config, np.random.default_rng(1))
        out = head_forward(np.random.default_rng(2).normal(size=(6, 9)), config, params)
        self.assertEqual(out.shape, (9, 4))
        np.testing.assert_allclose(normalised_rows(out.data), 0.0, atol=1e-5)

    def test_ds2_halves_time(self):
        config = small_ds2()
        params = init_head(config, np.random.default_rng(3))
        for frames, expected in [(10, 5), (11, 6), (1, 1)]:
            out = head_forward(np.random.default_rng(frames).normal(size=(12, frames)), config, params)
            self.assertEqual(out.shape, (expected, 4))
            self.assertEqual(config.output_frames(frames), expected)
            np.testing.assert_allclose(normalised_rows(out.data), 0.0, atol=1e-5)

    def test_default_tdnn_on_filterbank_sized_input(self):
        config = TdnnConfig(input_dim=40, vocab_size=6)
        params = init_head(config, np.random.default_rng(4))
        features = FeatureFrames(np.random.default_rng(5).normal(size=(40, 12)))
        self.assertEqual(head_forward(features, config, params).shape, (12, 6))

    def test_zero_parameters_give_uniform(self):
        for config in (small_tdnn(), small_ds2()):
            params = init_head(config, np.random.default_rng(6))
            for p in params.values():
                p.data = np.zeros_like(p.data)
            out = head_forward(np.random.default_rng(7).normal(size=(config.input_dim, 8)), config, params)
            np.testing.assert_allclose(out.data, math.log(1 / 4), atol=1e-6)

    def test_dimension_mismatch(self):
        config = small_tdnn()
        params = init_head(config, np.random.default_rng(8))
        with self.assertRaises(ShapeError):
            head_forward(np.ones((5, 9)), config, params)

    def test_gradients_reach_every_parameter(self):
        config = small_ds2()
        params = init_head(config, np.random.default_rng(9))
        out = head_forward(Tensor(np.random.default_rng(10).normal(size=(12, 6))), config, params)
        out[:, 1].sum().backward()
        for name, p in params.items():
            self.assertIsNotNone(p.grad, name)


if __name__ == '__main__':
    unittest.main()

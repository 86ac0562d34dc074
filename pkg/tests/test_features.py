#!/usr/bin/env python3

import unittest

import numpy as np

from cpcr.audio import AudioUtterance
from cpcr.errors import ShapeError
from cpcr.features import (frame_signal, frame_spectrum, log_filterbank, mel_filterbank, num_frames,
                           power_spectrum, spectrogram, standardize)


class TestFraming(unittest.TestCase):
    def test_1600_samples_give_8_frames(self):
        feats = log_filterbank(AudioUtterance(np.random.default_rng(0).normal(size=1600)))
        self.assertEqual(feats.num_frames, 8)
        self.assertEqual(feats.dim, 40)
        self.assertAlmostEqual(feats.hop_seconds, 0.01)

    def test_frame_count_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            length = int(rng.integers(400, 5000))
            feats = log_filterbank(AudioUtterance(rng.normal(size=length)))
            self.assertEqual(feats.num_frames, 1 + (length - 400) // 160)
            self.assertEqual(num_frames(length), feats.num_frames)

    def test_too_short_rejected(self):
        with self.assertRaises(ShapeError):
            log_filterbank(AudioUtterance(np.ones(399)))

    def test_frames_are_hop_spaced(self):
        x = np.arange(1000, dtype=float)
        frames = frame_signal(x)
        np.testing.assert_array_equal(frames[:, 0], np.arange(0, 481, 160))


class TestSpectrum(unittest.TestCase):
    def test_matches_direct_dft(self):
        """Test the FFT against an O(n²) DFT of the windowed, zero-padded frame"""
        x = np.random.default_rng(2).normal(size=400)
        fast = frame_spectrum(x)[0]
        padded = np.zeros(512)
        padded[:400] = x * np.hanning(400)
        k = np.arange(257)[:, None]
        n = np.arange(512)[None, :]
        direct = (padded[None, :] * np.exp(-2j * np.pi * k * n / 512)).sum(axis=1)
        self.assertLessEqual(np.linalg.norm(fast - direct) / np.linalg.norm(direct), 1e-6)

    def test_parseval(self):
        x = np.random.default_rng(3).normal(size=400)
        power = power_spectrum(x)[0]
        full_energy = power[0] + power[-1] + 2.0 * power[1:-1].sum()
        time_energy = np.sum((x * np.hanning(400)) ** 2)
        self.assertAlmostEqual(full_energy / 512 / time_energy, 1.0, delta=1e-5)

    def test_spectrogram_shape(self):
        feats = spectrogram(AudioUtterance(np.random.default_rng(4).normal(size=2000)))
        self.assertEqual(feats.dim, 257)
        self.assertEqual(feats.kind, "spectrogram")
        self.assertTrue(np.isfinite(feats.frames).all())


class TestMelFilterbank(unittest.TestCase):
    def test_shape_and_peaks(self):
        bank = mel_filterbank()
        self.assertEqual(bank.shape, (40, 257))
        self.assertTrue(np.all(bank >= 0.0))
        self.assertTrue(np.all(bank.max(axis=1) <= 1.0))
        self.assertTrue(np.all(bank.max(axis=1) > 0.0))

    def test_1khz_tone_peaks_in_its_band(self):
        t = np.arange(16000) / 16000.0
        feats = log_filterbank(AudioUtterance(0.5 * np.sin(2 * np.pi * 1000.0 * t)))
        peak = int(np.argmax(feats.frames.mean(axis=1)))
        bank = mel_filterbank()
        # 1 kHz sits exactly on FFT bin 32
        self.assertEqual(peak, int(np.argmax(bank[:, 32])))
        self.assertEqual(peak, 13)
        self.assertGreater(bank[peak, 32], 0.0)


class TestStandardize(unittest.TestCase):
    def test_per_dimension_statistics(self):
        feats = log_filterbank(AudioUtterance(np.random.default_rng(5).normal(size=4000)))
        out = standardize(feats).frames
        np.testing.assert_allclose(out.mean(axis=1), np.zeros(40), atol=1e-9)
        np.testing.assert_allclose(out.var(axis=1), np.ones(40), atol=1e-3)


if __name__ == '__main__':
    unittest.main()

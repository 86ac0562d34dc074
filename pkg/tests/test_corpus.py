#!/usr/bin/env python3

import math
import tempfile
import unittest
from pathlib import Path

import numpy as np

from cpcr.corpus import (CorpusSpec, DomainSpec, LanguageSpec, derive_rng, load_manifest, lowpass_filter,
                         perturb, plan_utterance, render, split_indices, symbol_inventory, synth_corpus,
                         write_corpora, write_manifest)
from cpcr.errors import CorpusSpecError


def tiny_spec(domains=None, languages=None, utterances=6, seed=3):
    return CorpusSpec(
        languages=languages or [LanguageSpec("l0", inventory_size=3)],
        domains=domains or [DomainSpec("clean")],
        utterances=utterances,
        seed=seed,
    )


class TestCorpusSpec(unittest.TestCase):
    def test_inventory_smaller_than_two_rejected(self):
        with self.assertRaises(CorpusSpecError):
            tiny_spec(languages=[LanguageSpec("l0", inventory_size=1)])

    def test_nan_snr_rejected(self):
        with self.assertRaises(CorpusSpecError):
            tiny_spec(domains=[DomainSpec("bad", snr_db=float("nan"))])

    def test_from_dict_presets_and_inline(self):
        spec = CorpusSpec.from_dict({
            "languages": [{"name": "l0", "inventory_size": 4, "duration_range": [0.05, 0.1]}],
            "domains": ["clean", "telephone", {"name": "far", "snr_db": 10, "gain_range": [0.5, 1.0]}],
            "utterances": 10,
            "seed": 1,
        })
        self.assertEqual([d.name for d in spec.domains], ["clean", "telephone", "far"])
        self.assertEqual(spec.domains[1].lowpass_hz, 4000.0)
        self.assertEqual(spec.languages[0].duration_range, (0.05, 0.1))
        again = CorpusSpec.from_dict(spec.to_dict())
        self.assertEqual(again.to_dict(), spec.to_dict())

    def test_unknown_preset_rejected(self):
        with self.assertRaises(CorpusSpecError):
            CorpusSpec.from_dict({"languages": [{"name": "l0"}], "domains": ["underwater"]})


class TestSynthesis(unittest.TestCase):
    def test_clean_domain_equals_clean_concatenation(self):
        spec = tiny_spec()
        language = spec.languages[0]
        inventory = symbol_inventory(language, spec.seed)
        corpora = synth_corpus(spec)
        for corpus in corpora:
            for utterance in corpus.utterances:
                index = int(utterance.utterance_id.rsplit("-", 1)[1])
                plan = plan_utterance(language, inventory, spec, index)
                np.testing.assert_array_equal(utterance.samples, render(plan, inventory))
                self.assertEqual(utterance.transcript, plan.transcript)

    def test_same_spec_is_bit_identical(self):
        spec = tiny_spec(domains=[DomainSpec("noisy", snr_db=5.0, pitch_range=(0.9, 1.1))])
        first, second = synth_corpus(spec), synth_corpus(spec)
        for a, b in zip(first, second):
            self.assertEqual(a.name, b.name)
            for ua, ub in zip(a.utterances, b.utterances):
                self.assertEqual(ua.samples.tobytes(), ub.samples.tobytes())

    def test_measured_snr_matches_spec(self):
        spec = tiny_spec()
        language = spec.languages[0]
        inventory = symbol_inventory(language, spec.seed)
        for i in range(5):
            plan = plan_utterance(language, inventory, spec, i)
            signal, noise = perturb(plan, render(plan, inventory), inventory,
                                    DomainSpec("noisy", snr_db=5.0, gain_range=(0.5, 2.0)), derive_rng(0, i))
            measured = 10 * math.log10(np.mean(signal ** 2) / np.mean(noise ** 2))
            self.assertLessEqual(abs(measured - 5.0), 0.5)

    def test_domains_share_transcripts_and_splits(self):
        spec = tiny_spec(domains=[DomainSpec("clean"), DomainSpec("noisy", snr_db=5.0)], utterances=10)
        by_name = {c.name: c for c in synth_corpus(spec)}
        for split in ("train", "dev", "test"):
            clean, noisy = by_name[f"l0-clean-{split}"], by_name[f"l0-noisy-{split}"]
            self.assertEqual(clean.transcripts, noisy.transcripts)
            self.assertEqual(len(clean), len(noisy))
            for a, b in zip(clean.utterances, noisy.utterances):
                self.assertFalse(np.array_equal(a.samples, b.samples))

    def test_languages_have_disjoint_symbol_parameters(self):
        a = symbol_inventory(LanguageSpec("l0", inventory_size=6), 0)
        b = symbol_inventory(LanguageSpec("l1", inventory_size=6), 0)
        formants_a = {f for s in a for f in s.formants}
        formants_b = {f for s in b for f in s.formants}
        self.assertFalse(formants_a & formants_b)

    def test_transcripts_use_inventory_letters(self):
        spec = tiny_spec(languages=[LanguageSpec("l0", inventory_size=2)], utterances=20)
        for corpus in synth_corpus(spec):
            for transcript in corpus.transcripts:
                self.assertTrue(set(transcript) <= set("ab "))
                self.assertFalse(transcript.startswith(" ") or transcript.endswith(" "))


class TestLowpass(unittest.TestCase):
    def _tone_gain(self, freq):
        t = np.arange(8000) / 16000.0
        tone = np.sin(2 * np.pi * freq * t)
        filtered = lowpass_filter(tone, 4000.0)
        return np.sqrt(np.mean(filtered[500:-500] ** 2) / np.mean(tone[500:-500] ** 2))

    def test_passband_and_stopband(self):
        self.assertAlmostEqual(self._tone_gain(1000.0), 1.0, delta=0.05)
        self.assertLess(self._tone_gain(6000.0), 0.1)

    def test_zero_phase_and_length(self):
        t = np.arange(4000) / 16000.0
        tone = np.sin(2 * np.pi * 500.0 * t)
        filtered = lowpass_filter(tone, 4000.0)
        self.assertEqual(filtered.shape, tone.shape)
        np.testing.assert_allclose(filtered[500:-500], tone[500:-500], atol=0.01)

    def test_short_input(self):
        self.assertEqual(lowpass_filter(np.ones(20), 4000.0).shape, (20,))


class TestSplitsAndManifests(unittest.TestCase):
    def test_splits_partition_indices(self):
        splits = split_indices(20, (0.8, 0.1, 0.1), np.random.default_rng(0))
        self.assertEqual([len(splits[s]) for s in ("train", "dev", "test")], [16, 2, 2])
        self.assertEqual(sorted(sum(splits.values(), [])), list(range(20)))

    def test_manifest_round_trip(self):
        corpus = next(c for c in synth_corpus(tiny_spec(utterances=10)) if c.split == "train")
        with tempfile.TemporaryDirectory() as tmp:
            path = write_manifest(corpus, Path(tmp) / corpus.name)
            loaded = load_manifest(path)
        self.assertEqual(loaded.name, corpus.name)
        self.assertEqual([u.utterance_id for u in loaded.utterances], [u.utterance_id for u in corpus.utterances])
        self.assertEqual(loaded.transcripts, corpus.transcripts)
        for a, b in zip(loaded.utterances, corpus.utterances):
            self.assertLessEqual(np.max(np.abs(a.samples - b.samples)), 2.0 ** -15)

    def test_datagen_twice_is_byte_identical(self):
        spec = tiny_spec(domains=[DomainSpec("noisy", snr_db=5.0)])
        with tempfile.TemporaryDirectory() as tmp:
            first, second = Path(tmp) / "a", Path(tmp) / "b"
            first.mkdir()
            second.mkdir()
            write_corpora(synth_corpus(spec), first)
            write_corpora(synth_corpus(spec), second)
            files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
            self.assertTrue(files)
            for rel in files:
                self.assertEqual((first / rel).read_bytes(), (second / rel).read_bytes())


if __name__ == '__main__':
    unittest.main()

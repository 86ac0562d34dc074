"""
Synthetic multi-domain, multilingual speech corpora.

A "language" is an inventory of symbols, each rendered as a short tone
complex with its own formant frequencies, amplitudes, envelope and duration
range. A "domain" is a perturbation applied on top of the clean rendering:
gain, pitch scaling, low-pass filtering and additive Gaussian noise at an
exact SNR. Every (language, domain) pair shares transcripts and clean
components, so a domain change is the only difference between matched
corpora.

Usage:
    spec = CorpusSpec.from_dict(json.load(open('corpus.json')))
    corpora = synth_corpus(spec)
    write_corpora(corpora, Path('data'))
"""

import json
import logging
import math
import string
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.signal import filtfilt, firwin

from .audio import SAMPLE_RATE, AudioUtterance, read_wav, write_wav
from .errors import CorpusSpecError, EmptyCorpusError

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
SPACE_SECONDS = 0.04
EDGE_SILENCE_SECONDS = 0.05
PEAK_AMPLITUDE = 0.25
LOWPASS_TAPS = 63
SPACE = -1


def derive_rng(seed: int, *tags: Union[str, int]) -> np.random.Generator:
    """Independent generator for a (seed, tag...) path; string tags are hashed with CRC32."""
    entropy = [int(seed)] + [zlib.crc32(t.encode()) if isinstance(t, str) else int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class LanguageSpec:
    name: str
    inventory_size: int = 5
    duration_range: Tuple[float, float] = (0.06, 0.12)
    formant_range: Tuple[float, float] = (200.0, 7000.0)

    @property
    def letters(self) -> str:
        return string.ascii_lowercase[:self.inventory_size]


@dataclass
class DomainSpec:
    """Recording condition applied after clean rendering.

    Attributes:
        snr_db: Additive white noise level; inf means no noise
        lowpass_hz: Cutoff of a 63-tap Hamming FIR low-pass, None for no filter
        gain_range: Uniform range of the per-utterance gain
        pitch_range: Uniform range of the per-utterance formant scaling
    """
    name: str
    snr_db: float = math.inf
    lowpass_hz: Optional[float] = None
    gain_range: Tuple[float, float] = (1.0, 1.0)
    pitch_range: Tuple[float, float] = (1.0, 1.0)


DOMAIN_PRESETS: Dict[str, DomainSpec] = {
    "clean": DomainSpec("clean"),
    "noisy": DomainSpec("noisy", snr_db=5.0),
    "telephone": DomainSpec("telephone", lowpass_hz=4000.0),
}


@dataclass
class CorpusSpec:
    languages: List[LanguageSpec]
    domains: List[DomainSpec]
    utterances: int = 100
    words_range: Tuple[int, int] = (2, 4)
    word_length_range: Tuple[int, int] = (1, 3)
    split_fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.languages or not self.domains:
            raise CorpusSpecError("a corpus needs at least one language and one domain")
        for language in self.languages:
            if language.inventory_size < 2:
                raise CorpusSpecError(f"language {language.name!r}: inventory must hold at least 2 symbols")
            if language.inventory_size > len(string.ascii_lowercase):
                raise CorpusSpecError(f"language {language.name!r}: at most 26 symbols are supported")
            low, high = language.duration_range
            if not 0 < low <= high:
                raise CorpusSpecError(f"language {language.name!r}: durations must be positive")
            if not 0 < language.formant_range[0] < language.formant_range[1] < SAMPLE_RATE / 2:
                raise CorpusSpecError(f"language {language.name!r}: formants must lie inside (0, 8000) Hz")
        for domain in self.domains:
            if math.isnan(domain.snr_db) or domain.snr_db == -math.inf:
                raise CorpusSpecError(f"domain {domain.name!r}: SNR must be a number or +inf")
            if domain.lowpass_hz is not None and not 0 < domain.lowpass_hz < SAMPLE_RATE / 2:
                raise CorpusSpecError(f"domain {domain.name!r}: cutoff must lie inside (0, 8000) Hz")
        if self.utterances < 1:
            raise CorpusSpecError("utterances must be at least 1")
        if min(self.words_range) < 1 or min(self.word_length_range) < 1:
            raise CorpusSpecError("transcripts need at least one word of one symbol")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise CorpusSpecError("split fractions must be non-negative and sum to 1")

    @classmethod
    def from_dict(cls, data: Dict) -> "CorpusSpec":
        """Build from a config mapping; domains may be preset names or full mappings."""
        languages = [LanguageSpec(**_tuples(lang)) for lang in data.get("languages", [])]
        domains = []
        for domain in data.get("domains", []):
            if isinstance(domain, str):
                if domain not in DOMAIN_PRESETS:
                    raise CorpusSpecError(f"unknown domain preset {domain!r}")
                domains.append(DOMAIN_PRESETS[domain])
            else:
                domain = _tuples(domain)
                if domain.get("snr_db") is None:
                    domain["snr_db"] = math.inf
                domains.append(DomainSpec(**domain))
        rest = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()
                if k not in ("languages", "domains")}
        try:
            return cls(languages=languages, domains=domains, **rest)
        except TypeError as e:
            raise CorpusSpecError(str(e)) from e

    def to_dict(self) -> Dict:
        data = asdict(self)
        for domain in data["domains"]:
            if math.isinf(domain["snr_db"]):
                domain["snr_db"] = None
        return data


def _tuples(mapping: Dict) -> Dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in mapping.items()}


@dataclass(frozen=True)
class SymbolWaveform:
    formants: Tuple[float, ...]
    amplitudes: Tuple[float, ...]
    attack: float
    release: float
    duration_range: Tuple[float, float]


def symbol_inventory(language: LanguageSpec, seed: int) -> List[SymbolWaveform]:
    """Waveform parameters for each symbol of a language (a function of name and seed)."""
    rng = derive_rng(seed, "language", language.name)
    low_hz, high_hz = language.formant_range
    symbols = []
    for _ in range(language.inventory_size):
        count = int(rng.integers(2, 4))
        formants = tuple(float(f) for f in np.sort(rng.uniform(low_hz, high_hz, count)))
        amplitudes = tuple(float(a) for a in rng.uniform(0.3, 1.0, count))
        base = rng.uniform(*language.duration_range)
        symbols.append(SymbolWaveform(
            formants=formants,
            amplitudes=amplitudes,
            attack=float(rng.uniform(0.1, 0.3)),
            release=float(rng.uniform(0.1, 0.3)),
            duration_range=(float(base * 0.8), float(base * 1.2)),
        ))
    return symbols


@dataclass
class Segment:
    symbol: int
    length: int
    phases: Tuple[float, ...] = ()


@dataclass
class UtterancePlan:
    transcript: str
    segments: List[Segment] = field(default_factory=list)


def plan_utterance(language: LanguageSpec, inventory: Sequence[SymbolWaveform], spec: CorpusSpec,
                   index: int) -> UtterancePlan:
    rng = derive_rng(spec.seed, "plan", language.name, index)
    edge = int(round(EDGE_SILENCE_SECONDS * SAMPLE_RATE))
    space = int(round(SPACE_SECONDS * SAMPLE_RATE))
    segments = [Segment(SPACE, edge)]
    words = []
    for w in range(int(rng.integers(spec.words_range[0], spec.words_range[1] + 1))):
        if w:
            segments.append(Segment(SPACE, space))
        letters = []
        for _ in range(int(rng.integers(spec.word_length_range[0], spec.word_length_range[1] + 1))):
            symbol = int(rng.integers(language.inventory_size))
            waveform = inventory[symbol]
            length = int(round(rng.uniform(*waveform.duration_range) * SAMPLE_RATE))
            phases = tuple(float(p) for p in rng.uniform(0.0, 2 * math.pi, len(waveform.formants)))
            segments.append(Segment(symbol, length, phases))
            letters.append(language.letters[symbol])
        words.append("".join(letters))
    segments.append(Segment(SPACE, edge))
    return UtterancePlan(" ".join(words), segments)


def render(plan: UtterancePlan, inventory: Sequence[SymbolWaveform], pitch: float = 1.0) -> np.ndarray:
    """Concatenate the tone complexes of a plan; pitch scales every formant."""
    pieces = []
    for segment in plan.segments:
        if segment.symbol == SPACE:
            pieces.append(np.zeros(segment.length))
            continue
        waveform = inventory[segment.symbol]
        t = np.arange(segment.length) / SAMPLE_RATE
        tone = np.zeros(segment.length)
        for freq, amp, phase in zip(waveform.formants, waveform.amplitudes, segment.phases):
            tone += amp * np.sin(2 * math.pi * freq * pitch * t + phase)
        envelope = np.ones(segment.length)
        attack = max(1, int(waveform.attack * segment.length))
        release = max(1, int(waveform.release * segment.length))
        envelope[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
        envelope[segment.length - release:] = np.minimum(
            envelope[segment.length - release:], np.linspace(1.0, 0.0, release))
        pieces.append(PEAK_AMPLITUDE * tone * envelope / sum(waveform.amplitudes))
    return np.concatenate(pieces)


def lowpass_filter(samples: np.ndarray, cutoff_hz: float, taps: int = LOWPASS_TAPS) -> np.ndarray:
    """Hamming-window FIR low-pass applied forward and backward (zero phase, same length)."""
    kernel = firwin(taps, cutoff_hz, fs=SAMPLE_RATE, window="hamming")
    return filtfilt(kernel, [1.0], samples, padlen=min(3 * taps, samples.size - 1))


def add_noise(signal: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """White Gaussian noise scaled so that 10·log10(P_signal / P_noise) is exactly snr_db."""
    noise = rng.standard_normal(signal.size)
    signal_power = np.mean(signal ** 2)
    if signal_power == 0:
        return np.zeros_like(signal)
    noise *= math.sqrt(signal_power / (10.0 ** (snr_db / 10.0) * np.mean(noise ** 2)))
    return noise


def perturb(plan: UtterancePlan, clean: np.ndarray, inventory: Sequence[SymbolWaveform], domain: DomainSpec,
            rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Apply a domain to a clean rendering.

    Returns:
        (signal, noise): the perturbed signal before noise, and the added noise
    """
    gain = rng.uniform(*domain.gain_range)
    pitch = rng.uniform(*domain.pitch_range)
    signal = clean if pitch == 1.0 else render(plan, inventory, pitch)
    signal = gain * signal
    if domain.lowpass_hz is not None:
        signal = lowpass_filter(signal, domain.lowpass_hz)
    if math.isinf(domain.snr_db):
        return signal, np.zeros_like(signal)
    return signal, add_noise(signal, domain.snr_db, rng)


@dataclass(eq=False)
class Corpus:
    """The utterances of one (language, domain, split) triple, ordered by id."""
    name: str
    language: str
    domain: str
    split: str
    utterances: List[AudioUtterance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.utterances)

    @property
    def transcripts(self) -> List[str]:
        return [u.transcript for u in self.utterances]

    def subset(self, utterances: List[AudioUtterance]) -> "Corpus":
        return Corpus(self.name, self.language, self.domain, self.split, list(utterances))


def corpus_name(language: str, domain: str, split: str) -> str:
    return f"{language}-{domain}-{split}"


def split_indices(count: int, fractions: Tuple[float, float, float], rng: np.random.Generator) -> Dict[str, List[int]]:
    order = rng.permutation(count)
    n_train = int(math.floor(fractions[0] * count))
    n_dev = int(math.floor(fractions[1] * count))
    if count >= 3:
        n_train = max(1, min(n_train, count - 2))
        n_dev = max(1, min(n_dev, count - n_train - 1))
    bounds = {"train": order[:n_train], "dev": order[n_train:n_train + n_dev], "test": order[n_train + n_dev:]}
    return {split: sorted(int(i) for i in idx) for split, idx in bounds.items()}


def synth_corpus(spec: CorpusSpec) -> List[Corpus]:
    """Generate every (language, domain, split) corpus of a spec.

    Identical spec and seed regenerate bit-identical samples.
    """
    spec.validate()
    corpora = []
    for language in spec.languages:
        inventory = symbol_inventory(language, spec.seed)
        plans = [plan_utterance(language, inventory, spec, i) for i in range(spec.utterances)]
        cleans = [render(plan, inventory) for plan in plans]
        splits = split_indices(spec.utterances, spec.split_fractions, derive_rng(spec.seed, "split", language.name))
        for domain in spec.domains:
            rendered = []
            for i, (plan, clean) in enumerate(zip(plans, cleans)):
                signal, noise = perturb(plan, clean, inventory, domain,
                                        derive_rng(spec.seed, "domain", language.name, domain.name, i))
                rendered.append(AudioUtterance(
                    signal + noise,
                    utterance_id=f"{language.name}-{domain.name}-{i:05d}",
                    transcript=plan.transcript,
                    language=language.name,
                    domain=domain.name,
                ))
            for split in SPLITS:
                corpora.append(Corpus(corpus_name(language.name, domain.name, split), language.name, domain.name,
                                      split, [rendered[i] for i in splits[split]]))
        logger.info(f"Generated {spec.utterances} utterances x {len(spec.domains)} domains for {language.name}")
    return corpora


# ---- manifests -------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def write_manifest(corpus: Corpus, directory: Path) -> Path:
    """Write the WAV files of a corpus and its manifest; paths are relative to the manifest."""
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for utterance in corpus.utterances:
        wav_name = f"{utterance.utterance_id}.wav"
        write_wav(utterance, directory / wav_name)
        entries.append({
            "id": utterance.utterance_id,
            "path": wav_name,
            "transcript": utterance.transcript,
            "language": utterance.language,
            "domain": utterance.domain,
            "duration_seconds": utterance.duration_seconds,
        })
    manifest = {"name": corpus.name, "language": corpus.language, "domain": corpus.domain,
                "split": corpus.split, "utterances": entries}
    path = directory / MANIFEST_NAME
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def load_manifest(path: Union[str, Path]) -> Corpus:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path, "r") as f:
        manifest = json.load(f)
    utterances = [
        read_wav(path.parent / entry["path"], utterance_id=entry["id"], transcript=entry.get("transcript"),
                 language=entry.get("language", ""), domain=entry.get("domain", ""))
        for entry in manifest["utterances"]
    ]
    if not utterances:
        raise EmptyCorpusError(f"{path}: manifest lists no utterances")
    return Corpus(manifest["name"], manifest.get("language", ""), manifest.get("domain", ""),
                  manifest.get("split", ""), utterances)


def write_corpora(corpora: Sequence[Corpus], root: Path) -> Dict[str, str]:
    """Write each corpus to root/<name>/ and an index mapping names to manifest paths."""
    index = {}
    for corpus in corpora:
        index[corpus.name] = str(write_manifest(corpus, root / corpus.name).relative_to(root))
    with open(root / "corpora.json", "w") as f:
        json.dump(index, f, indent=2, sort_keys=True)
    return index

"""
Experiment configuration.

A run is described by one JSON document. Keys may be written flat
("cpc.prediction_steps": 12) or nested ({"cpc": {"prediction_steps": 12}});
both resolve to the same flat key-path map, filled from DEFAULTS and frozen
before the stage starts. The resolved map is written next to the run's
artifacts as resolved_config.json.
"""

import json
import logging
import math
from dataclasses import MISSING, fields
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple, Union

from .asr_training import FEATURE_SOURCES, AsrConfig
from .corpus import CorpusSpec
from .errors import ConfigError, CorpusSpecError
from .pretrain import CpcConfig

logger = logging.getLogger(__name__)

STAGES = ("datagen", "pretrain", "train-asr", "evaluate", "transfer-matrix", "multilingual", "sample-efficiency")
CPC_POOLS = ("diverse", "clean")
RESOLVED_CONFIG_NAME = "resolved_config.json"
PATH_KEYS = ("out_dir", "corpus.manifest_dir", "cpc.checkpoint", "asr.checkpoint")


def _dataclass_defaults(cls, prefix: str, skip: Tuple[str, ...] = ("seed",)) -> Dict[str, Any]:
    defaults = {}
    for f in fields(cls):
        if f.name in skip:
            continue
        value = f.default if f.default is not MISSING else f.default_factory()
        defaults[f"{prefix}.{f.name}"] = list(value) if isinstance(value, tuple) else value
    return defaults


DEFAULTS: Dict[str, Any] = {
    "stage": None,
    "seed": None,
    "out_dir": "runs/latest",
    "jobs": 1,
    "corpus.languages": [{"name": "l0", "inventory_size": 5}],
    "corpus.domains": ["clean", "noisy", "telephone"],
    "corpus.utterances": 200,
    "corpus.words_range": [2, 4],
    "corpus.word_length_range": [1, 3],
    "corpus.split_fractions": [0.8, 0.1, 0.1],
    "corpus.manifest_dir": None,
    "data.language": None,
    "data.domain": None,
    "data.fraction": 1.0,
    "features.source": "frozen-cpc",
    **_dataclass_defaults(CpcConfig, "cpc"),
    "cpc.pool": "diverse",
    "cpc.checkpoint": None,
    **_dataclass_defaults(AsrConfig, "asr"),
    "asr.checkpoint": None,
    "decode.beam": 1,
    "decode.use_lm": False,
    "decode.lm_order": 4,
    "decode.lm_alpha": 0.1,
    "decode.lm_weight": 0.5,
    "decode.insertion_bonus": 0.1,
    "evaluate.split": "test",
    "transfer.features": ["spectrogram", "frozen-cpc@clean", "frozen-cpc@diverse"],
    "transfer.train_domains": None,
    "transfer.eval_domains": None,
    "multilingual.baseline": "spectrogram",
    "multilingual.learned": "frozen-cpc@diverse",
    "sample_efficiency.features": ["frozen-cpc@diverse", "spectrogram"],
    "sample_efficiency.fractions": [0.1, 1.0],
    "sample_efficiency.head": "tdnn",
    "sample_efficiency.beam": 8,
}

# Types of keys whose default is None
OPTIONAL_TYPES: Dict[str, Tuple[type, ...]] = {
    "stage": (str,),
    "seed": (int,),
    "corpus.manifest_dir": (str,),
    "data.language": (str,),
    "data.domain": (str,),
    "cpc.checkpoint": (str,),
    "asr.checkpoint": (str,),
    "asr.clip_norm": (int, float),
    "asr.schedule": (str,),
    "transfer.train_domains": (list,),
    "transfer.eval_domains": (list,),
}


def _expected_types(key: str) -> Tuple[type, ...]:
    default = DEFAULTS[key]
    if default is None:
        return OPTIONAL_TYPES[key]
    if isinstance(default, bool):
        return (bool,)
    if isinstance(default, int):
        return (int,)
    if isinstance(default, float):
        return (int, float)
    return (type(default),)


def flatten(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Nested mappings to dotted key paths; mapping-valued defaults stay leaves."""
    flat = {}
    for key, value in data.items():
        path = f"{prefix}{key}"
        if isinstance(value, Mapping) and not isinstance(DEFAULTS.get(path), dict):
            flat.update(flatten(value, f"{path}."))
        else:
            flat[path] = value
    return flat


def parse_feature_label(label: str, key: str = "features.source") -> Tuple[str, Optional[str]]:
    """Split "frozen-cpc@clean" into (kind, pool); pool is None when not given."""
    kind, _, pool = label.partition("@")
    if kind not in FEATURE_SOURCES:
        raise ConfigError(key, f"unknown feature source {kind!r}, expected one of {FEATURE_SOURCES}")
    if pool and kind != "frozen-cpc":
        raise ConfigError(key, f"only frozen-cpc features take a pretraining pool, got {label!r}")
    if pool and pool not in CPC_POOLS:
        raise ConfigError(key, f"unknown pretraining pool {pool!r}, expected one of {CPC_POOLS}")
    return kind, pool or None


def _check_fraction(key: str, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0 < value <= 1 or math.isnan(value):
        raise ConfigError(key, f"fraction must lie in (0, 1], got {value!r}")


class ExperimentConfig:
    """Resolved, read-only flat configuration of one run."""

    def __init__(self, values: Mapping[str, Any]):
        self._values = dict(values)

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._values))

    def __eq__(self, other) -> bool:
        return isinstance(other, ExperimentConfig) and self._values == other._values

    def get(self, key: str, default: Any = None) -> Any:
        return self._values.get(key, default)

    @property
    def stage(self) -> str:
        return self._values["stage"]

    @property
    def seed(self) -> int:
        return self._values["seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self._values["out_dir"])

    def section(self, prefix: str) -> Dict[str, Any]:
        """Keys under `prefix.` with the prefix stripped."""
        start = f"{prefix}."
        return {k[len(start):]: v for k, v in self._values.items() if k.startswith(start)}

    def to_dict(self) -> Dict[str, Any]:
        return {k: self._values[k] for k in sorted(self._values)}

    def corpus_spec(self) -> CorpusSpec:
        return build_corpus_spec(self._values)

    def cpc_config(self) -> CpcConfig:
        options = {k: v for k, v in self.section("cpc").items() if k not in ("pool", "checkpoint")}
        return CpcConfig(seed=self.seed, **options)

    def asr_config(self, **overrides) -> AsrConfig:
        options = {k: v for k, v in self.section("asr").items() if k != "checkpoint"}
        options.update(overrides)
        return AsrConfig(seed=self.seed, **options)

    def write(self, directory: Optional[Union[str, Path]] = None) -> Path:
        directory = Path(directory) if directory is not None else self.out_dir
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / RESOLVED_CONFIG_NAME
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def validate(values: Mapping[str, Any]) -> None:
    """Check keys, types and ranges.

    Raises:
        ConfigError: naming the first offending key path
    """
    for key in sorted(values):
        if key not in DEFAULTS:
            raise ConfigError(key, "unknown configuration key")
    if values.get("stage") is None:
        raise ConfigError("stage", "is required")
    if values.get("seed") is None:
        raise ConfigError("seed", "is required")
    for key in sorted(values):
        value = values[key]
        if value is None:
            continue
        expected = _expected_types(key)
        if isinstance(value, bool) and bool not in expected:
            raise ConfigError(key, f"expected {'/'.join(t.__name__ for t in expected)}, got bool")
        if not isinstance(value, expected):
            raise ConfigError(key, f"expected {'/'.join(t.__name__ for t in expected)}, "
                                   f"got {type(value).__name__}")

    if values["stage"] not in STAGES:
        raise ConfigError("stage", f"unknown stage {values['stage']!r}, expected one of {STAGES}")
    if values["seed"] < 0:
        raise ConfigError("seed", f"must be non-negative, got {values['seed']}")
    if values["jobs"] < 1:
        raise ConfigError("jobs", f"must be at least 1, got {values['jobs']}")
    _check_fraction("data.fraction", values["data.fraction"])
    fractions = values["sample_efficiency.fractions"]
    if not fractions:
        raise ConfigError("sample_efficiency.fractions", "must list at least one fraction")
    for fraction in fractions:
        _check_fraction("sample_efficiency.fractions", fraction)
    if values["cpc.pool"] not in CPC_POOLS:
        raise ConfigError("cpc.pool", f"unknown pretraining pool {values['cpc.pool']!r}, expected one of {CPC_POOLS}")
    if values["evaluate.split"] not in ("train", "dev", "test"):
        raise ConfigError("evaluate.split", f"must be train, dev or test, got {values['evaluate.split']!r}")
    for key in ("decode.beam", "sample_efficiency.beam"):
        if values[key] < 1:
            raise ConfigError(key, f"beam width must be at least 1, got {values[key]}")

    parse_feature_label(values["features.source"], "features.source")
    parse_feature_label(values["multilingual.baseline"], "multilingual.baseline")
    parse_feature_label(values["multilingual.learned"], "multilingual.learned")
    for key in ("transfer.features", "sample_efficiency.features"):
        labels: List[str] = values[key]
        if not labels:
            raise ConfigError(key, "must list at least one feature source")
        if len(set(labels)) != len(labels):
            raise ConfigError(key, "feature sources must be unique")
        for label in labels:
            parse_feature_label(label, key)
    if values["sample_efficiency.head"] not in ("ds2", "tdnn"):
        raise ConfigError("sample_efficiency.head", f"must be ds2 or tdnn, got {values['sample_efficiency.head']!r}")

    if values["corpus.manifest_dir"] is None:
        try:
            build_corpus_spec(values)
        except (CorpusSpecError, TypeError, AttributeError) as e:
            raise ConfigError("corpus", str(e)) from e
    for prefix, cls, skip in (("cpc", CpcConfig, ("pool", "checkpoint")), ("asr", AsrConfig, ("checkpoint",))):
        options = {k[len(prefix) + 1:]: v for k, v in values.items()
                   if k.startswith(f"{prefix}.") and k[len(prefix) + 1:] not in skip}
        try:
            cls(seed=values["seed"], **options)
        except (ValueError, TypeError) as e:
            raise ConfigError(prefix, str(e)) from e


def build_corpus_spec(values: Mapping[str, Any]) -> CorpusSpec:
    """Synthetic corpus spec from the corpus.* keys; the run seed seeds the corpus."""
    section = {k[len("corpus."):]: v for k, v in values.items()
               if k.startswith("corpus.") and k != "corpus.manifest_dir"}
    return CorpusSpec.from_dict({**section, "seed": values["seed"]})


def _absolute_paths(values: Dict[str, Any], bases: Mapping[str, Path]) -> None:
    for key in PATH_KEYS:
        if values.get(key) is not None:
            values[key] = str((bases.get(key, Path(".")) / values[key]).resolve())


def resolve_config(raw: Mapping[str, Any], overrides: Optional[Mapping[str, Any]] = None,
                   base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Flatten, fill defaults, apply overrides (None values ignored) and validate.

    Relative paths from the document are resolved against `base_dir` (the
    config file's directory), override and default paths against the working
    directory, so the written copy can be re-run from anywhere.
    """
    values = dict(DEFAULTS)
    bases: Dict[str, Path] = {}
    for key, value in flatten(raw).items():
        values[key] = value
        if key in PATH_KEYS:
            bases[key] = base_dir or Path(".")
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
            bases.pop(key, None)
    validate(values)
    _absolute_paths(values, bases)
    return ExperimentConfig(values)


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Read a JSON config document and resolve it.

    Raises:
        ConfigError: unreadable or invalid document
    """
    raw: Dict[str, Any] = {}
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        try:
            with open(path, "r") as f:
                raw = json.load(f)
        except OSError as e:
            raise ConfigError("config", f"cannot read {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"{path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError("config", f"{path} must hold a JSON object")
        base_dir = path.parent
    config = resolve_config(raw, overrides, base_dir)
    logger.debug(f"Resolved configuration for stage {config.stage} with seed {config.seed}")
    return config


def check_paths(config: ExperimentConfig) -> None:
    """Referenced input paths must exist when the run starts."""
    for key in ("corpus.manifest_dir", "cpc.checkpoint", "asr.checkpoint"):
        value = config.get(key)
        if value is not None and not Path(value).exists():
            raise ConfigError(key, f"path {value} does not exist")

"""
Character recognizer heads on top of frozen feature frames.

Both heads map features [dim × M] to frame posteriors [T × (|vocab|+1)]
(log-softmax rows):

- DS2-small: two 2-d convolutions over (time, frequency), one unidirectional
  GRU, one output affine. The first convolution halves the time axis.
- TDNN: 17 1-d convolutions, one hidden fully connected layer and the output
  affine. Frame count is preserved.
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Dict, Tuple, Union

import numpy as np

from .errors import CheckpointError, ShapeError
from .features import FeatureFrames
from .layers import Params, conv1d, conv2d, init_gru, kaiming_uniform, linear, gru_sequence, parameter
from .tensor import Tensor, log_softmax, transpose

logger = logging.getLogger(__name__)

DS2_KERNELS = ((11, 41), (11, 21))
DS2_STRIDES = ((2, 2), (1, 2))
TDNN_KERNELS = (11, 11, 11, 11, 13, 13, 13, 17, 17, 17, 21, 21, 21, 25, 25, 25, 29)


def centred_padding(kernel: int) -> Tuple[int, int]:
    """Padding that keeps T_out = ceil(T / stride)."""
    left = (kernel - 1) // 2
    return left, kernel - 1 - left


@dataclass
class Ds2SmallConfig:
    """DeepSpeech2-small head.

    Kernels and strides are (time, frequency). Frequency kernels larger than
    the current feature axis are clamped to it.
    """
    input_dim: int
    vocab_size: int
    kernels: Tuple[Tuple[int, int], ...] = DS2_KERNELS
    strides: Tuple[Tuple[int, int], ...] = DS2_STRIDES
    channels: Tuple[int, int] = (8, 16)
    gru_hidden: int = 64

    def __post_init__(self):
        self.kernels = tuple(tuple(k) for k in self.kernels)
        self.strides = tuple(tuple(s) for s in self.strides)
        self.channels = tuple(self.channels)
        if len(self.kernels) != 2 or len(self.strides) != 2 or len(self.channels) != 2:
            raise ValueError("DS2-small has exactly two convolution layers")
        if self.input_dim < 1 or self.vocab_size < 2 or self.gru_hidden < 1:
            raise ValueError("input_dim, vocab_size and gru_hidden must be positive (vocab_size includes the blank)")

    @property
    def kind(self) -> str:
        return "ds2"

    def frequency_sizes(self) -> Tuple[int, int, int]:
        """Frequency-axis length at the input, after conv 1 and after conv 2."""
        f0 = self.input_dim
        f1 = math.ceil(f0 / self.strides[0][1])
        f2 = math.ceil(f1 / self.strides[1][1])
        return f0, f1, f2

    def effective_kernels(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        f0, f1, _ = self.frequency_sizes()
        (t1, k1), (t2, k2) = self.kernels
        return (t1, min(k1, f0)), (t2, min(k2, f1))

    def output_frames(self, frames: int) -> int:
        for (st, _) in self.strides:
            frames = math.ceil(frames / st)
        return frames

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["kind"] = self.kind
        return data


@dataclass
class TdnnConfig:
    """TDNN head: 17 convolutions, one hidden FC layer (ReLU), output affine."""
    input_dim: int
    vocab_size: int
    kernels: Tuple[int, ...] = TDNN_KERNELS
    width: int = 32
    hidden: int = 64

    def __post_init__(self):
        self.kernels = tuple(self.kernels)
        if len(self.kernels) != 17:
            raise ValueError(f"the TDNN head has exactly 17 convolution layers, got {len(self.kernels)}")
        if self.input_dim < 1 or self.vocab_size < 2 or self.width < 1 or self.hidden < 1:
            raise ValueError("input_dim, vocab_size, width and hidden must be positive")

    @property
    def kind(self) -> str:
        return "tdnn"

    def output_frames(self, frames: int) -> int:
        return frames

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["kind"] = self.kind
        return data


HeadConfig = Union[Ds2SmallConfig, TdnnConfig]


def head_config_from_dict(data: Dict) -> HeadConfig:
    fields = {k: v for k, v in data.items() if k != "kind"}
    kind = data.get("kind")
    if kind == "ds2":
        return Ds2SmallConfig(**fields)
    if kind == "tdnn":
        return TdnnConfig(**fields)
    raise CheckpointError(f"unknown head kind {kind!r}")


def make_head_config(kind: str, input_dim: int, vocab_size: int, **overrides) -> HeadConfig:
    if kind == "ds2":
        return Ds2SmallConfig(input_dim=input_dim, vocab_size=vocab_size, **overrides)
    if kind == "tdnn":
        return TdnnConfig(input_dim=input_dim, vocab_size=vocab_size, **overrides)
    raise ValueError(f"head must be 'ds2' or 'tdnn', got {kind!r}")


def _init_ds2(config: Ds2SmallConfig, rng: np.random.Generator) -> Params:
    params: Params = {}
    effective = config.effective_kernels()
    if effective != config.kernels:
        logger.warning(f"DS2 frequency kernels {[k[1] for k in config.kernels]} exceed the feature axis; "
                       f"clamped to {[k[1] for k in effective]}")
    in_channels = 1
    for i, ((kt, kf), out_channels) in enumerate(zip(effective, config.channels)):
        fan_in = in_channels * kt * kf
        params[f"conv.{i}.weight"] = parameter(kaiming_uniform(rng, (out_channels, in_channels, kt, kf), fan_in),
                                               f"conv.{i}.weight")
        params[f"conv.{i}.bias"] = parameter(np.zeros(out_channels), f"conv.{i}.bias")
        in_channels = out_channels
    gru_input = config.channels[1] * config.frequency_sizes()[2]
    params.update(init_gru(rng, gru_input, config.gru_hidden, "gru"))
    bound = 1.0 / math.sqrt(config.gru_hidden)
    params["out.weight"] = parameter(rng.uniform(-bound, bound, (config.vocab_size, config.gru_hidden)), "out.weight")
    params["out.bias"] = parameter(np.zeros(config.vocab_size), "out.bias")
    return params


def _init_tdnn(config: TdnnConfig, rng: np.random.Generator) -> Params:
    params: Params = {}
    in_channels = config.input_dim
    for i, kernel in enumerate(config.kernels):
        params[f"conv.{i}.weight"] = parameter(
            kaiming_uniform(rng, (config.width, in_channels, kernel), in_channels * kernel), f"conv.{i}.weight")
        params[f"conv.{i}.bias"] = parameter(np.zeros(config.width), f"conv.{i}.bias")
        in_channels = config.width
    params["fc.weight"] = parameter(kaiming_uniform(rng, (config.hidden, config.width), config.width), "fc.weight")
    params["fc.bias"] = parameter(np.zeros(config.hidden), "fc.bias")
    bound = 1.0 / math.sqrt(config.hidden)
    params["out.weight"] = parameter(rng.uniform(-bound, bound, (config.vocab_size, config.hidden)), "out.weight")
    params["out.bias"] = parameter(np.zeros(config.vocab_size), "out.bias")
    return params


def init_head(config: HeadConfig, rng: np.random.Generator) -> Params:
    if isinstance(config, Ds2SmallConfig):
        return _init_ds2(config, rng)
    return _init_tdnn(config, rng)


def _ds2_forward(x: Tensor, config: Ds2SmallConfig, params: Params) -> Tensor:
    dim, frames = x.shape
    h = transpose(x).reshape(1, frames, dim)
    for i, stride in enumerate(config.strides):
        kt, kf = params[f"conv.{i}.weight"].shape[2:]
        h = conv2d(h, params[f"conv.{i}.weight"], params[f"conv.{i}.bias"], stride=stride,
                   padding=(centred_padding(kt), centred_padding(kf))).relu()
    channels, t_out, f_out = h.shape
    h = transpose(h, (0, 2, 1)).reshape(channels * f_out, t_out)
    h = gru_sequence(h, params, "gru")
    return linear(h, params["out.weight"], params["out.bias"])


def _tdnn_forward(x: Tensor, config: TdnnConfig, params: Params) -> Tensor:
    h = x
    for i, kernel in enumerate(config.kernels):
        h = conv1d(h, params[f"conv.{i}.weight"], params[f"conv.{i}.bias"], padding=centred_padding(kernel)).relu()
    h = linear(h, params["fc.weight"], params["fc.bias"]).relu()
    return linear(h, params["out.weight"], params["out.bias"])


def head_forward(features: Union[FeatureFrames, np.ndarray, Tensor], config: HeadConfig, params: Params) -> Tensor:
    """Frame posteriors [T × vocab_size], log-softmax normalised per row.

    Raises:
        ShapeError: feature dimension differs from config.input_dim, or no frames
    """
    if isinstance(features, FeatureFrames):
        features = features.frames
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.data.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"head input must be [dim × frames] with at least one frame, got {x.shape}")
    if x.shape[0] != config.input_dim:
        raise ShapeError(f"{config.kind} head expects {config.input_dim}-dim features, got {x.shape[0]}")
    if isinstance(config, Ds2SmallConfig):
        logits = _ds2_forward(x, config, params)
    else:
        logits = _tdnn_forward(x, config, params)
    return log_softmax(transpose(logits), axis=1)

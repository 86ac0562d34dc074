"""
Bidirectional CPC model: a shared strided causal encoder, forward and
backward dense-skip causal context networks, and per-offset log-bilinear
prediction matrices.

Parameter names:
    encoder.{i}.weight / .bias / .gain / .shift
    context_{fwd,bwd}.{i}.proj / .weight / .bias / .gain / .shift
    scorer_{fwd,bwd}.{k}        (k = 1..K, each [d_c × d_z])
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .checkpoint import Checkpoint
from .errors import CheckpointError, ShapeError
from .layers import Params, causal_layer_norm, conv1d, conv1d_causal, kaiming_uniform, parameter
from .tensor import Tensor, concat, flip, matmul, transpose

logger = logging.getLogger(__name__)

ENCODER_KERNELS = (10, 8, 4, 4, 4, 1, 1)
ENCODER_STRIDES = (5, 4, 2, 2, 2, 1, 1)
HOP_SAMPLES = 160
CONTEXT_KERNELS = tuple(range(1, 14))
DIRECTIONS = ("fwd", "bwd")


@dataclass
class EncoderConfig:
    kernel_sizes: Tuple[int, ...] = ENCODER_KERNELS
    strides: Tuple[int, ...] = ENCODER_STRIDES
    channels: int = 64
    layer_norm: bool = True

    def __post_init__(self):
        self.kernel_sizes = tuple(self.kernel_sizes)
        self.strides = tuple(self.strides)
        if len(self.kernel_sizes) != 7 or len(self.strides) != 7:
            raise ValueError("the encoder has exactly 7 layers")
        if math.prod(self.strides) != HOP_SAMPLES:
            raise ValueError(f"encoder strides must multiply to {HOP_SAMPLES}, got {math.prod(self.strides)}")
        if self.channels < 1 or min(self.kernel_sizes) < 1:
            raise ValueError("encoder channels and kernels must be positive")

    @property
    def receptive_field(self) -> int:
        field_size, jump = 1, 1
        for kernel, stride in zip(self.kernel_sizes, self.strides):
            field_size += (kernel - 1) * jump
            jump *= stride
        return field_size


@dataclass
class ContextNetConfig:
    kernel_sizes: Tuple[int, ...] = CONTEXT_KERNELS
    channels: int = 64
    layer_norm: bool = True

    def __post_init__(self):
        self.kernel_sizes = tuple(self.kernel_sizes)
        if self.kernel_sizes != CONTEXT_KERNELS:
            raise ValueError("the context network has 13 layers with kernel sizes 1..13")
        if self.channels < 1:
            raise ValueError("context channels must be positive")


@dataclass
class CpcModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    context: ContextNetConfig = field(default_factory=ContextNetConfig)
    prediction_steps: int = 12
    bidirectional: bool = True

    def __post_init__(self):
        if self.prediction_steps < 1:
            raise ValueError("prediction_steps must be at least 1")

    @property
    def directions(self) -> Tuple[str, ...]:
        return DIRECTIONS if self.bidirectional else DIRECTIONS[:1]

    @property
    def feature_dim(self) -> int:
        return self.context.channels * len(self.directions)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["kind"] = "cpc"
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "CpcModelConfig":
        if data.get("kind", "cpc") != "cpc":
            raise CheckpointError(f"expected a cpc model config, got kind {data.get('kind')!r}")
        return cls(
            encoder=EncoderConfig(**data.get("encoder", {})),
            context=ContextNetConfig(**data.get("context", {})),
            prediction_steps=data.get("prediction_steps", 12),
            bidirectional=data.get("bidirectional", True),
        )


def init_cpc_params(config: CpcModelConfig, rng: np.random.Generator) -> Params:
    params: Params = {}

    def add(name, data):
        params[name] = parameter(data, name)

    enc = config.encoder
    in_channels = 1
    for i, kernel in enumerate(enc.kernel_sizes):
        add(f"encoder.{i}.weight", kaiming_uniform(rng, (enc.channels, in_channels, kernel), in_channels * kernel))
        add(f"encoder.{i}.bias", np.zeros(enc.channels))
        if enc.layer_norm:
            add(f"encoder.{i}.gain", np.ones(enc.channels))
            add(f"encoder.{i}.shift", np.zeros(enc.channels))
        in_channels = enc.channels

    d_z, d_c = enc.channels, config.context.channels
    for direction in config.directions:
        prefix = f"context_{direction}"
        for i, kernel in enumerate(config.context.kernel_sizes):
            width = d_z + i * d_c
            add(f"{prefix}.{i}.proj", kaiming_uniform(rng, (d_c, width, 1), width))
            add(f"{prefix}.{i}.weight", kaiming_uniform(rng, (d_c, d_c, kernel), d_c * kernel))
            add(f"{prefix}.{i}.bias", np.zeros(d_c))
            if config.context.layer_norm:
                add(f"{prefix}.{i}.gain", np.ones(d_c))
                add(f"{prefix}.{i}.shift", np.zeros(d_c))
    bound = 1.0 / math.sqrt(d_c * d_z)
    for direction in config.directions:
        for k in range(1, config.prediction_steps + 1):
            add(f"scorer_{direction}.{k}", rng.uniform(-bound, bound, (d_c, d_z)))
    return params


def encode(samples, config: EncoderConfig, params: Params) -> Tensor:
    """Map normalised samples (length L) to latent frames z, [d_z × ceil(L/160)]."""
    x = samples if isinstance(samples, Tensor) else Tensor(np.asarray(samples).reshape(1, -1))
    if x.data.ndim == 1:
        x = x.reshape(1, -1)
    for i, stride in enumerate(config.strides):
        x = conv1d_causal(x, params[f"encoder.{i}.weight"], params[f"encoder.{i}.bias"], stride=stride)
        if config.layer_norm:
            x = causal_layer_norm(x, params[f"encoder.{i}.gain"], params[f"encoder.{i}.shift"])
        x = x.relu()
    return x


def _causal_context(z: Tensor, config: ContextNetConfig, params: Params, prefix: str) -> Tensor:
    outputs: List[Tensor] = []
    for i, _ in enumerate(config.kernel_sizes):
        stacked = concat([z] + outputs, axis=0) if outputs else z
        h = conv1d(stacked, params[f"{prefix}.{i}.proj"])
        h = conv1d_causal(h, params[f"{prefix}.{i}.weight"], params[f"{prefix}.{i}.bias"])
        if config.layer_norm:
            h = causal_layer_norm(h, params[f"{prefix}.{i}.gain"], params[f"{prefix}.{i}.shift"])
        outputs.append(h.relu())
    return outputs[-1]


def contextualize(z: Tensor, direction: str, config: ContextNetConfig, params: Params) -> Tensor:
    """Context frames c_t, [d_c × M].

    The forward network sees z_1..z_t; the backward network runs the same
    causal stack on the time-reversed sequence and reverses its output, so it
    sees z_t..z_M.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    prefix = f"context_{direction}"
    if params[f"{prefix}.0.proj"].shape[1] != z.shape[0]:
        raise ShapeError(f"context network expects {params[f'{prefix}.0.proj'].shape[1]} input channels, got {z.shape[0]}")
    if direction == "fwd":
        return _causal_context(z, config, params, prefix)
    return flip(_causal_context(flip(z, 1), config, params, prefix), 1)


def concat_context(c_fwd: Tensor, c_bwd: Tensor) -> Tensor:
    if c_fwd.shape[1] != c_bwd.shape[1]:
        raise ShapeError(f"frame counts differ: {c_fwd.shape[1]} forward vs {c_bwd.shape[1]} backward")
    return concat([c_fwd, c_bwd], axis=0)


class PredictionScorer:
    """Log-bilinear scores s = c_tᵀ W_k z for offsets k = 1..K."""

    def __init__(self, matrices: Sequence[Tensor]):
        if not matrices:
            raise ValueError("a scorer needs at least one matrix")
        shape = matrices[0].shape
        if any(m.shape != shape for m in matrices):
            raise ShapeError("all scorer matrices must share one [d_c × d_z] shape")
        self.matrices = list(matrices)

    @classmethod
    def from_params(cls, params: Params, direction: str, steps: int) -> "PredictionScorer":
        return cls([params[f"scorer_{direction}.{k}"] for k in range(1, steps + 1)])

    @property
    def steps(self) -> int:
        return len(self.matrices)

    def predict(self, c: Tensor, k: int) -> Tensor:
        """W_kᵀ c, [d_z × frames]: the projection scored against candidate z."""
        return matmul(transpose(self.matrices[k - 1]), c)


@dataclass
class ModelOutputs:
    z: Tensor
    contexts: Dict[str, Tensor]

    @property
    def features(self) -> Tensor:
        if "bwd" in self.contexts:
            return concat_context(self.contexts["fwd"], self.contexts["bwd"])
        return self.contexts["fwd"]


class CpcModel:
    """A model configuration bound to its parameters."""

    def __init__(self, config: CpcModelConfig, params: Params):
        self.config = config
        self.params = params

    @classmethod
    def initialise(cls, config: CpcModelConfig, rng: np.random.Generator) -> "CpcModel":
        return cls(config, init_cpc_params(config, rng))

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint) -> "CpcModel":
        config = CpcModelConfig.from_dict(checkpoint.config)
        reference = init_cpc_params(config, np.random.default_rng(0))
        if list(reference) != list(checkpoint.tensors):
            raise CheckpointError("checkpoint tensors do not match the cpc model configuration")
        for name, value in checkpoint.tensors.items():
            if value.shape != reference[name].shape:
                raise CheckpointError(f"{name}: stored shape {value.shape}, config expects {reference[name].shape}")
        return cls(config, checkpoint.to_params())

    def to_checkpoint(self, optimizer=None) -> Checkpoint:
        return Checkpoint.from_params(self.config.to_dict(), self.params, optimizer)

    def forward(self, samples) -> ModelOutputs:
        z = encode(samples, self.config.encoder, self.params)
        contexts = {d: contextualize(z, d, self.config.context, self.params) for d in self.config.directions}
        return ModelOutputs(z, contexts)

    def scorer(self, direction: str) -> PredictionScorer:
        return PredictionScorer.from_params(self.params, direction, self.config.prediction_steps)

    def encoder_parameters(self) -> List[Tensor]:
        return [p for name, p in self.params.items() if name.startswith("encoder.")]

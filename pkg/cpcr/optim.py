"""
Adam, global-norm gradient clipping and the learning rate schedules used by
both pretraining and recognizer training.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .errors import NonFiniteError, ShapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)

CLIP_TOLERANCE = 1e-6


@dataclass
class AdamState:
    """Optimizer state for Adam.

    Attributes:
        first_moment: Per-parameter running mean of gradients
        second_moment: Per-parameter running mean of squared gradients
        step: Number of updates applied so far
    """
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_parameters(cls, params: Mapping[str, Tensor], **kwargs) -> "AdamState":
        state = cls(**kwargs)
        for name, p in params.items():
            state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        return state


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState, lr: float) -> None:
    """Apply one bias-corrected Adam update in place and advance the step counter."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient for {name}")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, g in grads.items():
        p = params[name]
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        p.data = (p.data - update).astype(p.data.dtype)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Dict[str, np.ndarray]:
    """Rescale all gradients together when their joint L2 norm exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm + CLIP_TOLERANCE:
        return dict(grads)
    scale = max_norm / norm
    return {name: (g * scale).astype(g.dtype) for name, g in grads.items()}


@dataclass
class LrSchedule:
    """Learning rate schedule.

    `constant` always emits the base rate; `polynomial` decays from the base
    rate to the end rate over total_steps with the given power.
    """
    kind: str = "constant"
    base_rate: float = 1e-4
    power: float = 2.0
    total_steps: int = 1
    end_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.base_rate < 0 or self.end_rate < 0:
            raise ValueError("learning rates must be non-negative")
        if self.end_rate > self.base_rate:
            raise ValueError("end rate may not exceed base rate")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")

    def rate(self, step: int) -> float:
        return schedule_rate(self, step)


def schedule_rate(schedule: LrSchedule, step: int) -> float:
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    if schedule.kind == "constant":
        return schedule.base_rate
    if step >= schedule.total_steps:
        return schedule.end_rate
    remaining = (1.0 - step / schedule.total_steps) ** schedule.power
    return schedule.base_rate * remaining + schedule.end_rate * (1.0 - remaining)

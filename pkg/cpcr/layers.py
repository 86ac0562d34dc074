"""
Differentiable building blocks on top of cpcr.tensor.

All sequence tensors are laid out channels-first: [channels × frames] for
1-d signals and [channels × height × width] for the 2-d convolutions of the
DeepSpeech2-style head.
"""

import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, concat, cumsum, index, matmul, sigmoid, tanh

LAYER_NORM_EPS = 1e-5

Params = Dict[str, Tensor]


def parameter(data: np.ndarray, name: str) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform fan-in scaled initialisation for ReLU stacks."""
    bound = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


def conv_out_length(length: int, kernel: int, stride: int, padding: Tuple[int, int]) -> int:
    return (length + padding[0] + padding[1] - kernel) // stride + 1


def conv1d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1,
           padding: Tuple[int, int] = (0, 0)) -> Tensor:
    """1-d convolution of x[C_in × T] with w[C_out × C_in × k].

    Zero padding of (left, right) frames is applied before the strided
    sliding window.
    """
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise ShapeError(f"conv1d expects [C×T] input and [O×C×k] weights, got {x.shape} and {w.shape}")
    c_out, c_in, kernel = w.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"conv1d input has {x.shape[0]} channels but weights expect {c_in}")
    if kernel < 1 or stride < 1:
        raise ShapeError(f"conv1d needs kernel >= 1 and stride >= 1, got {kernel} and {stride}")
    left, right = padding
    t_in = x.shape[1]
    t_out = conv_out_length(t_in, kernel, stride, padding)
    if t_out < 1:
        raise ShapeError(f"conv1d input of {t_in} frames is shorter than kernel {kernel}")
    xp = np.pad(x.data, ((0, 0), (left, right)))
    span = stride * (t_out - 1) + 1
    out = np.zeros((c_out, t_out), dtype=np.result_type(x.data, w.data))
    for j in range(kernel):
        out += w.data[:, :, j] @ xp[:, j:j + span:stride]
    if b is not None:
        out += b.data[:, None]

    def _backward(g):
        gw = np.zeros_like(w.data)
        gxp = np.zeros_like(xp)
        for j in range(kernel):
            gw[:, :, j] = g @ xp[:, j:j + span:stride].T
            gxp[:, j:j + span:stride] += w.data[:, :, j].T @ g
        grads = [gxp[:, left:left + t_in], gw]
        if b is not None:
            grads.append(g.sum(axis=1))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, _backward, "conv1d")


def conv1d_causal(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Causal convolution: left pad by kernel-1, T_out = ceil(T / stride)."""
    return conv1d(x, w, b, stride=stride, padding=(w.shape[2] - 1, 0))


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: Tuple[int, int] = (1, 1),
           padding: Tuple[Tuple[int, int], Tuple[int, int]] = ((0, 0), (0, 0))) -> Tensor:
    """2-d convolution of x[C × H × W] with w[O × C × kh × kw]."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(f"conv2d expects [C×H×W] input and [O×C×kh×kw] weights, got {x.shape} and {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d input has {x.shape[0]} channels but weights expect {c_in}")
    sh, sw = stride
    (top, bottom), (left, right) = padding
    h_in, w_in = x.shape[1], x.shape[2]
    h_out = conv_out_length(h_in, kh, sh, (top, bottom))
    w_out = conv_out_length(w_in, kw, sw, (left, right))
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv2d input {x.shape[1:]} is smaller than kernel {(kh, kw)}")
    xp = np.pad(x.data, ((0, 0), (top, bottom), (left, right)))
    span_h = sh * (h_out - 1) + 1
    span_w = sw * (w_out - 1) + 1
    out = np.zeros((c_out, h_out, w_out), dtype=np.result_type(x.data, w.data))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i:i + span_h:sh, j:j + span_w:sw]
            out += np.tensordot(w.data[:, :, i, j], patch, axes=([1], [0]))
    if b is not None:
        out += b.data[:, None, None]

    def _backward(g):
        gw = np.zeros_like(w.data)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, i:i + span_h:sh, j:j + span_w:sw]
                gw[:, :, i, j] = np.tensordot(g, patch, axes=([1, 2], [1, 2]))
                gxp[:, i:i + span_h:sh, j:j + span_w:sw] += np.tensordot(w.data[:, :, i, j], g, axes=([0], [0]))
        grads = [gxp[:, top:top + h_in, left:left + w_in], gw]
        if b is not None:
            grads.append(g.sum(axis=(1, 2)))
        return grads

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._from_op(out, parents, _backward, "conv2d")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """Frame-wise affine map: w[O × D] @ x[D × T] + b."""
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"linear expects {w.shape[1]} input features, got {x.shape[0]}")
    out = matmul(w, x)
    if b is not None:
        out = out + b.reshape(-1, 1)
    return out


def _affine(y: Tensor, gain: Optional[Tensor], shift: Optional[Tensor]) -> Tensor:
    if gain is not None:
        y = y * gain.reshape(-1, 1)
    if shift is not None:
        y = y + shift.reshape(-1, 1)
    return y


def layer_norm(x: Tensor, gain: Optional[Tensor] = None, shift: Optional[Tensor] = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalise x[C × T] jointly over channels and frames, then apply a per-channel affine."""
    centred = x - x.mean()
    variance = (centred * centred).mean()
    return _affine(centred * (variance + eps) ** -0.5, gain, shift)


def causal_layer_norm(x: Tensor, gain: Optional[Tensor] = None, shift: Optional[Tensor] = None,
                      eps: float = LAYER_NORM_EPS) -> Tensor:
    """Layer norm whose statistics at frame t cover channels and frames 1..t only."""
    channels, frames = x.shape
    counts = np.arange(1, frames + 1, dtype=x.data.dtype) * channels
    mu = cumsum(x.sum(axis=0), axis=0) / counts
    second = cumsum((x * x).sum(axis=0), axis=0) / counts
    variance = (second - mu * mu).relu()
    return _affine((x - mu.reshape(1, -1)) * (variance.reshape(1, -1) + eps) ** -0.5, gain, shift)


def gru_sequence(x: Tensor, params: Params, prefix: str = "gru") -> Tensor:
    """Unidirectional GRU over x[D × T] from a zero initial state.

    Gate layout in the stacked weights is (reset, update, candidate):
        r = σ(W_ir x + b_ir + W_hr h + b_hr)
        z = σ(W_iz x + b_iz + W_hz h + b_hz)
        n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
        h' = (1 − z) ⊙ n + z ⊙ h

    Returns:
        Tensor[H × T] of hidden states
    """
    w_ih = params[f"{prefix}.w_ih"]
    w_hh = params[f"{prefix}.w_hh"]
    b_ih = params[f"{prefix}.b_ih"]
    b_hh = params[f"{prefix}.b_hh"]
    hidden = w_hh.shape[1]
    if w_ih.shape != (3 * hidden, x.shape[0]) or w_hh.shape != (3 * hidden, hidden):
        raise ShapeError(f"GRU weights {w_ih.shape}/{w_hh.shape} do not fit input {x.shape[0]} and width {hidden}")
    gates_in = linear(x, w_ih, b_ih)
    h = Tensor(np.zeros((hidden, 1), dtype=x.data.dtype))
    states = []
    for t in range(x.shape[1]):
        gi = index(gates_in, (slice(None), slice(t, t + 1)))
        gh = linear(h, w_hh, b_hh)
        r = sigmoid(gi[:hidden] + gh[:hidden])
        z = sigmoid(gi[hidden:2 * hidden] + gh[hidden:2 * hidden])
        n = tanh(gi[2 * hidden:] + r * gh[2 * hidden:])
        h = (1.0 - z) * n + z * h
        states.append(h)
    return concat(states, axis=1)


def init_gru(rng: np.random.Generator, d_in: int, hidden: int, prefix: str = "gru") -> Params:
    bound = 1.0 / math.sqrt(hidden)
    return {
        f"{prefix}.w_ih": parameter(rng.uniform(-bound, bound, (3 * hidden, d_in)), f"{prefix}.w_ih"),
        f"{prefix}.w_hh": parameter(rng.uniform(-bound, bound, (3 * hidden, hidden)), f"{prefix}.w_hh"),
        f"{prefix}.b_ih": parameter(rng.uniform(-bound, bound, (3 * hidden,)), f"{prefix}.b_ih"),
        f"{prefix}.b_hh": parameter(rng.uniform(-bound, bound, (3 * hidden,)), f"{prefix}.b_hh"),
    }


def parameter_count(params: Params) -> int:
    return sum(p.data.size for p in params.values())


def trainable(params: Params) -> Sequence[Tensor]:
    return [p for p in params.values() if p.requires_grad]

"""Dense tanh networks with exact reverse-mode gradients and Adam.

All parameters of a network live in one flat float64 vector, laid out
layer-major with the weight matrix (row-major, shape ``(n_in, n_out)``)
followed by the bias of each layer. ``DenseNet.weights`` and
``DenseNet.biases`` are views into that vector, so optimizers and the
on-disk format work on the flat array directly.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .errors import ArchitectureError, NumericError, ShapeError

FORMAT_NAME = "polemb.densenet"
FORMAT_VERSION = 1


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def _check_sizes(layer_sizes) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ArchitectureError(f"invalid layer sizes {list(layer_sizes)!r}")
    return sizes


def _views(flat: np.ndarray, sizes: tuple[int, ...]):
    weights, biases = [], []
    offset = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = flat[offset : offset + n_in * n_out].reshape(n_in, n_out)
        offset += n_in * n_out
        b = flat[offset : offset + n_out]
        offset += n_out
        weights.append(w)
        biases.append(b)
    return weights, biases


class DenseNet:
    """Feedforward net: tanh on hidden layers, identity on the output."""

    hidden_activation = "tanh"
    output_activation = "identity"

    def __init__(self, layer_sizes: Sequence[int], params: np.ndarray | None = None):
        self.layer_sizes = _check_sizes(layer_sizes)
        n = param_count(self.layer_sizes)
        if params is None:
            params = np.zeros(n)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (n,):
            raise ShapeError(f"expected {n} parameters, got shape {params.shape}")
        self.params = params
        self.weights, self.biases = _views(self.params, self.layer_sizes)

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "DenseNet":
        return DenseNet(self.layer_sizes, self.params.copy())

    def __deepcopy__(self, memo):
        return self.copy()

    def __reduce__(self):
        return (DenseNet, (self.layer_sizes, self.params.copy()))

    def __repr__(self):
        return f"DenseNet({list(self.layer_sizes)}, n_params={self.n_params})"


@dataclass
class ForwardCache:
    layer_sizes: tuple[int, ...]
    # inputs to each layer; activations[0] is the network input
    activations: list[np.ndarray]
    batched: bool


@dataclass
class GradientBundle:
    """Gradients laid out like ``DenseNet.params``, plus the input gradient."""

    layer_sizes: tuple[int, ...]
    params: np.ndarray
    input: np.ndarray | None = None
    weights: list[np.ndarray] = field(init=False, repr=False)
    biases: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.weights, self.biases = _views(self.params, self.layer_sizes)


def mlp_init(layer_sizes: Sequence[int], seed: int) -> DenseNet:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases alike."""
    sizes = _check_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    net = DenseNet(sizes)
    for w, b in zip(net.weights, net.biases):
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
        b[...] = rng.uniform(-bound, bound, size=b.shape)
    return net


def mlp_forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate ``net`` on one input vector or on a batch of row vectors."""
    x = np.asarray(x, dtype=np.float64)
    batched = x.ndim == 2
    if x.ndim not in (1, 2) or x.shape[-1] != net.n_in:
        raise ShapeError(f"input shape {x.shape} does not match input size {net.n_in}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite network input")
    acts = [x]
    h = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        h = z if k == last else np.tanh(z)
        if k != last:
            acts.append(h)
    return h, ForwardCache(net.layer_sizes, acts, batched)


def mlp_backward(net: DenseNet, cache: ForwardCache, output_grad: np.ndarray) -> GradientBundle:
    """Backpropagate ``output_grad`` = dL/d(output). Batched caches sum parameter gradients."""
    if cache.layer_sizes != net.layer_sizes or len(cache.activations) != len(net.weights):
        raise ShapeError("forward cache does not belong to this network")
    g = np.asarray(output_grad, dtype=np.float64)
    expected = cache.activations[0].shape[:-1] + (net.n_out,)
    if g.shape != expected:
        raise ShapeError(f"output gradient shape {g.shape}, expected {expected}")
    grads = GradientBundle(net.layer_sizes, np.zeros(net.n_params))
    for k in range(len(net.weights) - 1, -1, -1):
        a = cache.activations[k]
        if cache.batched:
            grads.weights[k][...] = a.T @ g
            grads.biases[k][...] = g.sum(axis=0)
        else:
            grads.weights[k][...] = np.outer(a, g)
            grads.biases[k][...] = g
        g = g @ net.weights[k].T
        if k > 0:
            g = g * (1.0 - a * a)  # a = tanh(z) of the previous layer
    grads.input = g
    return grads


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_net(cls, net: DenseNet, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(net.n_params), np.zeros(net.n_params), 0, learning_rate, **kw)


def adam_step(net: DenseNet, grads, state: AdamState) -> tuple[DenseNet, AdamState]:
    """Bias-corrected Adam update, applied in place. ``grads`` is a bundle or a flat array."""
    g = grads.params if isinstance(grads, GradientBundle) else np.asarray(grads, dtype=np.float64)
    if g.shape != net.params.shape or state.m.shape != net.params.shape:
        raise ShapeError("gradient/optimizer state shape does not match network parameters")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    net.params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return net, state


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return z / np.sum(z, axis=-1, keepdims=True)


def categorical_log_prob(logits: np.ndarray, action_index: int) -> tuple[float, np.ndarray]:
    """log softmax(logits)[a] and its gradient onehot(a) - softmax(logits)."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= action_index < logits.shape[-1]:
        raise IndexError(f"action {action_index} out of range for {logits.shape[-1]} actions")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    lp = log_softmax(logits)
    grad = -np.exp(lp)
    grad[action_index] += 1.0
    return float(lp[action_index]), grad


def sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> int:
    p = softmax(logits)
    return int(min(np.searchsorted(np.cumsum(p), rng.random(), side="right"), p.size - 1))


# --- persistence -----------------------------------------------------------


def _header(net: DenseNet) -> bytes:
    rec = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "layer_sizes": list(net.layer_sizes),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "dtype": "<f8",
        "n_params": net.n_params,
    }
    return (json.dumps(rec, sort_keys=True) + "\n").encode()


def dump_net(net: DenseNet, fh: BinaryIO) -> None:
    fh.write(_header(net))
    fh.write(net.params.astype("<f8").tobytes())


def load_net_from(fh: BinaryIO) -> DenseNet:
    rec = json.loads(fh.readline().decode())
    if rec.get("format") != FORMAT_NAME or rec.get("version") != FORMAT_VERSION:
        raise ArchitectureError(f"unsupported model header {rec!r}")
    if rec["hidden_activation"] != "tanh" or rec["output_activation"] != "identity":
        raise ArchitectureError("unsupported activations in model header")
    n = rec["n_params"]
    params = np.frombuffer(fh.read(8 * n), dtype="<f8")
    if params.size != n:
        raise ShapeError("truncated model file")
    return DenseNet(rec["layer_sizes"], params.astype(np.float64))


def save_net(net: DenseNet, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        dump_net(net, fh)


def load_net(path: str | os.PathLike) -> DenseNet:
    with open(path, "rb") as fh:
        return load_net_from(fh)


def net_to_bytes(net: DenseNet) -> bytes:
    buf = io.BytesIO()
    dump_net(net, buf)
    return buf.getvalue()

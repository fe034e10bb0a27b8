"""Dense feed-forward networks with hand-written backpropagation and Adam.

Everything is float64 numpy. A network is a list of :class:`DenseLayer`;
``forward`` returns the output together with a cache that ``backward``
consumes. Parameters are only ever mutated through :func:`adam_step`, which
bumps the network version so that stale caches are detected.
"""
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError, DataError, DimensionError, ParameterError

ACTIVATIONS = ("identity", "relu", "sigmoid", "softmax")
_ACTIVATION_CODES = {name: code for code, name in enumerate(ACTIVATIONS)}

MAGIC = b"PUMAP1"


def _apply_activation(name, x):
    if name == "identity":
        return x
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "sigmoid":
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if name == "softmax":
        shifted = x - x.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        return ex / ex.sum(axis=1, keepdims=True)
    raise ParameterError(f"unknown activation {name!r}")


def _activation_backward(name, pre, out, grad):
    """Vector-Jacobian product of the activation at ``pre`` (output ``out``)."""
    if name == "identity":
        return grad
    if name == "relu":
        return grad * (pre > 0)
    if name == "sigmoid":
        return grad * out * (1.0 - out)
    if name == "softmax":
        return out * (grad - np.sum(grad * out, axis=1, keepdims=True))
    raise ParameterError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    """Affine map ``x @ weights + bias`` followed by an activation."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.float64, ndmin=2)
        self.bias = np.array(self.bias, dtype=np.float64).reshape(-1)
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise DimensionError(
                f"weights {self.weights.shape} and bias {self.bias.shape} are inconsistent"
            )

    @property
    def fan_in(self):
        return self.weights.shape[0]

    @property
    def fan_out(self):
        return self.weights.shape[1]

    @classmethod
    def glorot(cls, fan_in, fan_out, activation="identity", rng=None):
        rng = np.random.default_rng(rng)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        return cls(weights, np.zeros(fan_out), activation)


@dataclass
class ForwardCache:
    inputs: list
    pre_activations: list
    outputs: list
    version: int
    network_id: int


class Network:
    """A stack of dense layers.

    Parameters
    ----------
    layers : list of DenseLayer
        Consecutive layers must agree on fan_out/fan_in.
    """

    def __init__(self, layers):
        layers = list(layers)
        if not layers:
            raise ParameterError("a network needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise DimensionError(
                    f"layer fan_out {prev.fan_out} does not match next fan_in {nxt.fan_in}"
                )
        self.layers = layers
        self.version = 0

    @classmethod
    def mlp(cls, sizes, hidden_activation="relu", output_activation="identity", rng=None):
        """Glorot-initialised MLP with layer widths ``sizes`` (input first)."""
        if len(sizes) < 2:
            raise ParameterError("sizes needs an input and an output width")
        rng = np.random.default_rng(rng)
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = output_activation if i == len(sizes) - 2 else hidden_activation
            layers.append(DenseLayer.glorot(fan_in, fan_out, act, rng))
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].fan_in

    @property
    def output_dim(self):
        return self.layers[-1].fan_out

    def parameters(self):
        """Flat list of parameter arrays (weights, bias per layer)."""
        params = []
        for layer in self.layers:
            params.extend((layer.weights, layer.bias))
        return params

    def n_parameters(self):
        return sum(p.size for p in self.parameters())

    def copy(self):
        clone = Network(
            [DenseLayer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )
        return clone

    def forward(self, x, keep_cache=True):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(
                f"input has shape {x.shape}, network expects (n, {self.input_dim})"
            )
        inputs, pres, outs = [], [], []
        h = x
        for layer in self.layers:
            pre = h @ layer.weights + layer.bias
            out = _apply_activation(layer.activation, pre)
            if keep_cache:
                inputs.append(h)
                pres.append(pre)
                outs.append(out)
            h = out
        if not keep_cache:
            return h, None
        return h, ForwardCache(inputs, pres, outs, self.version, id(self))

    def predict(self, x):
        return self.forward(x, keep_cache=False)[0]

    def backward(self, cache, grad_output, input_grad=True):
        """Backpropagate ``grad_output`` (dL/d output).

        Returns ``(param_grads, grad_input)`` where ``param_grads`` lines up
        with :meth:`parameters`. ``input_grad=False`` skips the last product
        and returns ``None`` for ``grad_input``.
        """
        if cache is None or cache.network_id != id(self) or cache.version != self.version:
            raise ContractError("forward cache does not belong to the current network state")
        if len(cache.inputs) != len(self.layers):
            raise ContractError("forward cache has the wrong number of layers")
        grad = np.asarray(grad_output, dtype=np.float64)
        if grad.shape != cache.outputs[-1].shape:
            raise DimensionError(
                f"output gradient {grad.shape} does not match output {cache.outputs[-1].shape}"
            )
        grads = [None] * (2 * len(self.layers))
        for idx in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[idx]
            g_pre = _activation_backward(
                layer.activation, cache.pre_activations[idx], cache.outputs[idx], grad
            )
            grads[2 * idx] = cache.inputs[idx].T @ g_pre
            grads[2 * idx + 1] = g_pre.sum(axis=0)
            grad = g_pre @ layer.weights.T if (idx or input_grad) else None
        return grads, grad

    def mark_updated(self):
        self.version += 1

    def __repr__(self):
        widths = [self.input_dim] + [l.fan_out for l in self.layers]
        acts = ",".join(l.activation for l in self.layers)
        return f"Network({'->'.join(map(str, widths))}; {acts})"


def forward(model, x):
    """Functional alias for :meth:`Network.forward`."""
    return model.forward(x)


def backward(model, cache, grad_output):
    """Functional alias for :meth:`Network.backward`."""
    return model.backward(cache, grad_output)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
        return state


def adam_step(params, grads, state, learning_rate=None):
    """One bias-corrected Adam update, applied in place to ``params``.

    ``learning_rate`` overrides ``state.learning_rate`` for this step only
    (used for schedules).
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    lr = state.learning_rate if learning_rate is None else learning_rate
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1**state.step
    correction2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"parameter {p.shape} vs gradient {np.shape(g)}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return params, state


# -- persistence ---------------------------------------------------------------

_HEADER = struct.Struct("<6sI")
_LAYER = struct.Struct("<III")


def network_to_bytes(net):
    """Serialise to the PUMAP1 blob: header, layer table, then weights and biases."""
    parts = [_HEADER.pack(MAGIC, len(net.layers))]
    for layer in net.layers:
        parts.append(_LAYER.pack(layer.fan_in, layer.fan_out, _ACTIVATION_CODES[layer.activation]))
    for layer in net.layers:
        parts.append(layer.weights.astype("<f8").tobytes(order="C"))
        parts.append(layer.bias.astype("<f8").tobytes())
    return b"".join(parts)


def network_from_bytes(blob, offset=0):
    """Inverse of :func:`network_to_bytes`; returns ``(network, next_offset)``."""
    try:
        magic, n_layers = _HEADER.unpack_from(blob, offset)
    except struct.error as exc:
        raise DataError("truncated network blob") from exc
    if magic != MAGIC:
        raise DataError(f"bad magic {magic!r}, expected {MAGIC!r}")
    offset += _HEADER.size
    specs = []
    for _ in range(n_layers):
        fan_in, fan_out, code = _LAYER.unpack_from(blob, offset)
        if code >= len(ACTIVATIONS):
            raise DataError(f"unknown activation code {code}")
        specs.append((fan_in, fan_out, ACTIVATIONS[code]))
        offset += _LAYER.size
    layers = []
    for fan_in, fan_out, act in specs:
        n_w = fan_in * fan_out
        end = offset + 8 * (n_w + fan_out)
        if end > len(blob):
            raise DataError("truncated network blob")
        w = np.frombuffer(blob, dtype="<f8", count=n_w, offset=offset).reshape(fan_in, fan_out)
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=offset + 8 * n_w)
        layers.append(DenseLayer(w.astype(np.float64), b.astype(np.float64), act))
        offset = end
    return Network(layers), offset

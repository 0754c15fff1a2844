"""Fully-connected ReLU networks and exact forward inference."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

NeuronId = tuple[int, int]


class NetworkError(ValueError):
    pass


class InputShapeError(NetworkError):
    pass


@dataclass(frozen=True, eq=False)
class AffineLayer:
    weights: np.ndarray  # (out, in)
    biases: np.ndarray  # (out,)

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        b = np.array(self.biases, dtype=np.float64).reshape(-1)
        if w.ndim == 1 and b.size == 1:
            w = w.reshape(1, -1)
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1] if self.weights.ndim == 2 else 0

    @property
    def out_dim(self) -> int:
        return self.biases.shape[0]

    def __eq__(self, other):
        if not isinstance(other, AffineLayer):
            return NotImplemented
        return (
            self.weights.shape == other.weights.shape
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.biases, other.biases)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Network:
    """Stack of affine layers; every layer but the last is followed by ReLU.

    Hidden neurons are addressed by ``(layer, position)`` with layer 0 being the
    first hidden layer. They are also numbered consecutively (the "flat" index),
    which is what the Boolean abstraction uses as its variable numbering.
    """

    layers: tuple[AffineLayer, ...]
    input_dim: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_dim is None:
            dim = self.layers[0].in_dim if self.layers else 0
            object.__setattr__(self, "input_dim", dim)

    @classmethod
    def from_arrays(cls, weights, biases, input_dim: int | None = None) -> Network:
        return cls(tuple(AffineLayer(w, b) for w, b in zip(weights, biases)), input_dim)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim if self.layers else 0

    @property
    def hidden_layers(self) -> tuple[AffineLayer, ...]:
        return self.layers[:-1]

    @cached_property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(layer.out_dim for layer in self.hidden_layers)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        """Flat index of the first neuron of each hidden layer, plus the total."""
        return tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.hidden_sizes, dtype=int)]))

    @property
    def num_hidden(self) -> int:
        return self.offsets[-1]

    def flat_index(self, neuron: NeuronId) -> int:
        layer, pos = neuron
        if not 0 <= pos < self.hidden_sizes[layer]:
            raise IndexError(f"no neuron {neuron}")
        return self.offsets[layer] + pos

    def neuron_id(self, index: int) -> NeuronId:
        for layer in range(len(self.hidden_sizes)):
            if index < self.offsets[layer + 1]:
                return layer, index - self.offsets[layer]
        raise IndexError(f"no neuron with flat index {index}")

    def layer_slice(self, layer: int) -> slice:
        return slice(self.offsets[layer], self.offsets[layer + 1])

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.input_dim == other.input_dim and self.layers == other.layers

    __hash__ = None


def _check_input(net: Network, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (net.input_dim,):
        raise InputShapeError(f"expected input of length {net.input_dim}, got shape {x.shape}")
    return x


def infer(net: Network, x) -> np.ndarray:
    """Network output for ``x``; also accepts a batch of inputs with shape (..., input_dim)."""
    h = _check_input(net, x)
    for layer in net.hidden_layers:
        h = np.maximum(h @ layer.weights.T + layer.biases, 0.0)
    last = net.layers[-1]
    return h @ last.weights.T + last.biases


def pre_activations(net: Network, x) -> np.ndarray:
    """Concatenated hidden pre-activations, shape (..., num_hidden)."""
    h = _check_input(net, x)
    zs = []
    for layer in net.hidden_layers:
        z = h @ layer.weights.T + layer.biases
        zs.append(z)
        h = np.maximum(z, 0.0)
    if not zs:
        return np.zeros(h.shape[:-1] + (0,))
    return np.concatenate(zs, axis=-1)


def validate(net: Network) -> list[str]:
    """Structural problems with ``net``; an empty list means well-formed."""
    errors = []
    if not net.layers:
        return ["network has no layers"]
    width = net.input_dim
    if width is None or width <= 0:
        errors.append("input dimension must be positive")
    for i, layer in enumerate(net.layers):
        w, b = layer.weights, layer.biases
        if w.ndim != 2:
            errors.append(f"layer {i}: weights must be a matrix, got {w.ndim} dimensions")
            continue
        if w.shape[0] == 0 or b.shape[0] == 0:
            errors.append(f"layer {i}: empty layer")
        if w.shape[0] != b.shape[0]:
            errors.append(f"layer {i}: {w.shape[0]} weight rows but {b.shape[0]} biases")
        if width is not None and w.shape[1] != width:
            errors.append(f"layer {i}: weight matrix has {w.shape[1]} columns, previous layer has {width} outputs")
        for r, c in zip(*np.nonzero(~np.isfinite(w))):
            errors.append(f"layer {i}, neuron {r}: non-finite weight at column {c}")
        for r in np.flatnonzero(~np.isfinite(b)):
            errors.append(f"layer {i}, neuron {r}: non-finite bias")
        width = w.shape[0]
    return errors

"""Minimal multilayer perceptron: parameter layout, init, and forward pass.

Networks here are plain fully-connected stacks used as right-hand sides of
neural ODEs (``f_theta``) and as time-dependent controllers (``u_theta``).
Parameters live in a single flat float64 vector so that ensemble methods can
treat a network as a point in R^N.  All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MlpSpec",
    "param_count",
    "layer_shapes",
    "unflatten",
    "flatten",
    "mlp_init",
    "mlp_forward",
    "mlp_apply",
]

_ACTIVATIONS = ("tanh", "elu")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of a fully-connected network.

    ``layer_sizes`` runs (input dim, hidden dims ..., output dim).  The
    hidden activation applies to every hidden layer; the output layer is
    affine with no activation (vector fields are unbounded).
    """

    layer_sizes: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output dims")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be >= 1, got {sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]


def param_count(spec: MlpSpec) -> int:
    """Total number of weights and biases."""
    sizes = spec.layer_sizes
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(len(sizes) - 1))


def layer_shapes(spec: MlpSpec) -> list[tuple[tuple[int, int], int]]:
    """Per layer: ((out_dim, in_dim) weight shape, bias length)."""
    sizes = spec.layer_sizes
    return [((sizes[i + 1], sizes[i]), sizes[i + 1]) for i in range(len(sizes) - 1)]


def unflatten(spec: MlpSpec, theta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat parameter vector into per-layer (W, b) views.

    Layout, fixed for serialization portability: for each layer in order,
    the weight matrix of shape (out, in) flattened row-major, then the bias
    vector.  The returned arrays are views into ``theta``.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size != param_count(spec):
        raise ValueError(
            f"parameter vector has length {theta.size}, spec needs {param_count(spec)}"
        )
    layers = []
    k = 0
    for (w_shape, b_len) in layer_shapes(spec):
        w_size = w_shape[0] * w_shape[1]
        w = theta[k : k + w_size].reshape(w_shape)
        k += w_size
        b = theta[k : k + b_len]
        k += b_len
        layers.append((w, b))
    return layers


def flatten(spec: MlpSpec, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Inverse of :func:`unflatten`; exact round trip."""
    parts = []
    for (w, b), (w_shape, b_len) in zip(layers, layer_shapes(spec)):
        w = np.asarray(w, dtype=float)
        b = np.asarray(b, dtype=float)
        if w.shape != w_shape or b.shape != (b_len,):
            raise ValueError(f"layer shapes {w.shape}/{b.shape} do not match spec {w_shape}/{b_len}")
        parts.append(w.reshape(-1))
        parts.append(b)
    return np.concatenate(parts)


def mlp_init(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Draw a fresh flat parameter vector.

    Every weight and bias of a layer with fan-in k is i.i.d. uniform on
    (-sqrt(1/k), +sqrt(1/k)).  Reproducible: the same generator state yields
    bitwise-identical vectors.
    """
    parts = []
    for (w_shape, b_len) in layer_shapes(spec):
        bound = np.sqrt(1.0 / w_shape[1])
        parts.append(rng.uniform(-bound, bound, size=w_shape[0] * w_shape[1]))
        parts.append(rng.uniform(-bound, bound, size=b_len))
    return np.concatenate(parts)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(z)
    # ELU with alpha = 1: z for z >= 0, exp(z) - 1 below.  Clamp the expm1
    # argument so the discarded branch cannot overflow for large positive z.
    return np.where(z >= 0.0, z, np.expm1(np.minimum(z, 0.0)))


def mlp_apply(
    layers: list[tuple[np.ndarray, np.ndarray]], x: np.ndarray, activation: str
) -> np.ndarray:
    """Forward pass given pre-split (W, b) pairs; hot path for integrators."""
    h = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        h = w @ h + b
        if i != last:
            h = _activate(h, activation)
    return h


def mlp_forward(spec: MlpSpec, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Evaluate the network at input ``x`` (1-D, length = input dim)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.in_dim,):
        raise ValueError(f"input has shape {x.shape}, spec expects ({spec.in_dim},)")
    return mlp_apply(unflatten(spec, theta), x, spec.activation)

"""Dense MLP generator with hand-written reverse-mode gradients and Adam.

All arrays are float64 numpy arrays. A network maps a flat input row
``[latent | observation]`` to a flat output row that is reshaped to
``out_shape`` (usually ``(T_p, action_dim)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu",)


class DimensionError(ValueError):
    pass


@dataclass
class GeneratorNet:
    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    out_shape: tuple[int, int]
    activation: str = "relu"

    kind = "imle"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.layer_sizes) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("need one weight matrix and bias per layer transition")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            expect = (self.layer_sizes[k], self.layer_sizes[k + 1])
            if w.shape != expect:
                raise DimensionError(f"layer {k}: weight shape {w.shape}, expected {expect}")
            if b.shape != (self.layer_sizes[k + 1],):
                raise DimensionError(f"layer {k}: bias shape {b.shape}, expected {(expect[1],)}")
        if int(np.prod(self.out_shape)) != self.layer_sizes[-1]:
            raise DimensionError(
                f"output width {self.layer_sizes[-1]} does not match out_shape {self.out_shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def params(self) -> list[np.ndarray]:
        """Parameters in canonical order ``[W0, b0, W1, b1, ...]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def num_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self):
        return type(self)(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            tuple(self.out_shape),
            self.activation,
        )


def init_net(layer_sizes, out_shape, rng: np.random.Generator, cls=GeneratorNet) -> GeneratorNet:
    """Glorot-uniform weights, zero biases."""
    layer_sizes = [int(s) for s in layer_sizes]
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return cls(layer_sizes, weights, biases, tuple(out_shape))


def generator_layer_sizes(latent_dim: int, obs_dim: int, out_dim: int, hidden=(128, 128)) -> list[int]:
    return [latent_dim + obs_dim, *hidden, out_dim]


# -- batched core ------------------------------------------------------------

def forward_batch(net: GeneratorNet, x: np.ndarray, keep_cache: bool = False):
    """Run rows of ``x`` (shape [B, input_dim]) through the net.

    Returns the flat output [B, out_dim] and, if requested, the list of
    layer inputs needed by :func:`backward_batch`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(f"layer 0: input width {x.shape[-1]}, expected {net.input_dim}")
    cache = [x] if keep_cache else None
    h = x
    last = net.num_layers - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w
        h += b
        if k < last:
            np.maximum(h, 0.0, out=h)
            if keep_cache:
                cache.append(h)
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite network output")
    return h, cache


def backward_batch(net: GeneratorNet, cache: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients of ``sum(output * grad_out)`` over the batch, in ``params()`` order."""
    if grad_out.shape != (cache[0].shape[0], net.layer_sizes[-1]):
        raise DimensionError(
            f"layer {net.num_layers - 1}: output grad shape {grad_out.shape}, "
            f"expected {(cache[0].shape[0], net.layer_sizes[-1])}"
        )
    grads: list[np.ndarray] = [None] * (2 * net.num_layers)
    g = grad_out
    for k in range(net.num_layers - 1, -1, -1):
        h_in = cache[k]
        grads[2 * k] = h_in.T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        if k > 0:
            g = (g @ net.weights[k].T) * (h_in > 0.0)
    return grads


# -- single-sample API -------------------------------------------------------

def _input_row(net: GeneratorNet, z, y) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if z.size + y.size != net.input_dim:
        raise DimensionError(
            f"layer 0: latent ({z.size}) + observation ({y.size}) != input width {net.input_dim}"
        )
    return np.concatenate([z, y])[None, :]


def forward(net: GeneratorNet, z, y) -> np.ndarray:
    out, _ = forward_batch(net, _input_row(net, z, y))
    return out.reshape(net.out_shape)


def backward(net: GeneratorNet, z, y, output_grad) -> list[np.ndarray]:
    output_grad = np.asarray(output_grad, dtype=np.float64)
    if output_grad.size != net.layer_sizes[-1]:
        raise DimensionError(
            f"layer {net.num_layers - 1}: output grad has {output_grad.size} entries, "
            f"expected {net.layer_sizes[-1]}"
        )
    _, cache = forward_batch(net, _input_row(net, z, y), keep_cache=True)
    return backward_batch(net, cache, output_grad.reshape(1, -1))


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: GeneratorNet, **kw) -> AdamState:
        params = net.params()
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            **kw,
        )


def adam_step(net: GeneratorNet, grads: list[np.ndarray], state: AdamState):
    """Bias-corrected Adam update, applied to ``net`` in place."""
    params = net.params()
    if len(grads) != len(params):
        raise DimensionError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise DimensionError(f"parameter {i}: gradient shape {g.shape}, expected {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {i}")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps_stab)
    return net, state

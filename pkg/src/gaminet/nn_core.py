"""Small dense networks with hand-written reverse-mode gradients and Adam.

Two evaluation paths are provided.  ``subnet_forward``/``subnet_backward``
operate on a single :class:`Subnetwork` and are the reference path used for
prediction and explanation.  :class:`SubnetStack` holds many subnetworks of
identical shape as 3-d arrays so that a whole block of effects can be trained
with one batched matmul per layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")


class ShapeError(ValueError):
    pass


class CacheError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


def _act_inplace(z, kind):
    if kind == "relu":
        np.maximum(z, 0.0, out=z)
    elif kind == "tanh":
        np.tanh(z, out=z)
    return z


def _act_grad(a, upstream, kind):
    """Backprop through an activation given its output ``a``.

    relu'(z) is taken as 0 at z == 0, which is the same as testing a > 0.
    """
    if kind == "relu":
        return upstream * (a > 0.0)
    if kind == "tanh":
        return upstream * (1.0 - a * a)
    return upstream


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out_dim, in_dim)
    biases: np.ndarray  # (out_dim,)
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.biases.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"layer weights {self.weights.shape} incompatible with biases {self.biases.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class Subnetwork:
    layers: List[DenseLayer]
    input_arity: int = 1
    output_offset: float = 0.0

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    def check(self):
        if not self.layers:
            raise ShapeError("subnetwork has no layers")
        if self.layers[-1].out_dim != 1:
            raise ShapeError("last layer must have a single output")
        if self.layers[-1].activation != "identity":
            raise ShapeError("last layer activation must be identity")
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")

    def parameters(self) -> List[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.biases])
        return out

    def copy(self) -> "Subnetwork":
        return Subnetwork(
            [DenseLayer(l.weights.copy(), l.biases.copy(), l.activation) for l in self.layers],
            self.input_arity, float(self.output_offset))


def orthogonal_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal matrix from the QR factorization of a standard-normal draw.

    The sign of each column of Q is fixed by the sign of diag(R) so the result
    is a deterministic function of the generator state.
    """
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    return q if rows >= cols else q.T


def make_subnetwork(in_dim: int, hidden: Sequence[int], rng: np.random.Generator,
                    activation: str = "relu", input_arity: Optional[int] = None) -> Subnetwork:
    widths = [in_dim, *hidden, 1]
    layers = []
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        act = "identity" if i == len(widths) - 2 else activation
        layers.append(DenseLayer(orthogonal_init(b, a, rng), np.zeros(b), act))
    net = Subnetwork(layers, input_arity if input_arity is not None else in_dim)
    net.check()
    return net


def subnet_forward(net: Subnetwork, inputs):
    """Evaluate ``net`` on a batch; returns ``(outputs, cache)``."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"expected inputs of shape (batch, {net.in_dim}), got {x.shape}")
    acts = [x]
    a = x
    for layer in net.layers:
        a = _act_inplace(a @ layer.weights.T + layer.biases, layer.activation)
        acts.append(a)
    return acts[-1][:, 0] - net.output_offset, acts


def subnet_backward(net: Subnetwork, cache, upstream_grad):
    """Gradients of ``sum(upstream_grad * outputs)`` w.r.t. every parameter.

    Returned as a list aligned with ``net.parameters()``.
    """
    acts = cache
    g = np.asarray(upstream_grad, dtype=np.float64)
    if g.ndim != 1 or g.shape[0] != acts[0].shape[0] or len(acts) != len(net.layers) + 1:
        raise CacheError(
            f"upstream gradient of length {g.shape} does not match cached batch of {acts[0].shape[0]}")
    grads = [None] * (2 * len(net.layers))
    delta = g[:, None]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        dz = _act_grad(acts[i + 1], delta, layer.activation)
        grads[2 * i] = dz.T @ acts[i]
        grads[2 * i + 1] = dz.sum(axis=0)
        if i:
            delta = dz @ layer.weights
    return grads


class SubnetStack:
    """``S`` subnetworks with identical layer widths stored as stacked arrays.

    Weights are kept as ``(S, in, out)`` so a layer is ``a @ W + b`` with
    ``a`` of shape ``(S, batch, in)``.
    """

    def __init__(self, weights, biases, activations, offsets=None):
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        self.activations = list(activations)
        size = self.weights[0].shape[0]
        self.offsets = np.zeros(size) if offsets is None else np.asarray(offsets, dtype=np.float64).copy()

    @property
    def size(self) -> int:
        return self.weights[0].shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @classmethod
    def from_subnets(cls, nets: Sequence[Subnetwork]) -> "SubnetStack":
        if not nets:
            raise ValueError("cannot stack an empty list of subnetworks")
        depth = len(nets[0].layers)
        weights = [np.stack([n.layers[i].weights.T for n in nets]) for i in range(depth)]
        biases = [np.stack([n.layers[i].biases for n in nets]) for i in range(depth)]
        acts = [l.activation for l in nets[0].layers]
        return cls(weights, biases, acts, [n.output_offset for n in nets])

    def to_subnets(self, arity: Sequence[int]) -> List[Subnetwork]:
        nets = []
        for s in range(self.size):
            layers = [DenseLayer(w[s].T.copy(), b[s].copy(), act)
                      for w, b, act in zip(self.weights, self.biases, self.activations)]
            nets.append(Subnetwork(layers, int(arity[s]), float(self.offsets[s])))
        return nets

    def parameters(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x, keep_cache=True):
        """``x`` has shape ``(S, batch, in)``; returns ``(S, batch)`` outputs."""
        if x.ndim != 3 or x.shape[0] != self.size or x.shape[2] != self.in_dim:
            raise ShapeError(f"expected stacked inputs (S={self.size}, batch, {self.in_dim}), got {x.shape}")
        a = x
        acts = [x]
        for w, b, kind in zip(self.weights, self.biases, self.activations):
            if w.shape[1] == 1:
                z = a * w  # outer product; cheaper than a k=1 matmul
            else:
                z = np.matmul(a, w)
            z += b[:, None, :]
            a = _act_inplace(z, kind)
            if keep_cache:
                acts.append(a)
        out = a[:, :, 0] - self.offsets[:, None]
        return out, (acts if keep_cache else None)

    def backward(self, cache, upstream):
        """``upstream`` has shape ``(S, batch)``; gradients align with ``parameters()``."""
        acts = cache
        if len(acts) != len(self.weights) + 1 or upstream.shape != acts[0].shape[:2]:
            raise CacheError(f"upstream shape {upstream.shape} does not match cache {acts[0].shape[:2]}")
        grads = [None] * (2 * len(self.weights))
        delta = upstream[:, :, None]
        ones = np.ones((self.size, 1, upstream.shape[1]))
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            kind = self.activations[i]
            if i < last and kind == "relu":
                delta *= acts[i + 1] > 0.0  # delta is a fresh matmul result here
                dz = delta
            else:
                dz = _act_grad(acts[i + 1], delta, kind)
            grads[2 * i] = np.matmul(acts[i].transpose(0, 2, 1), dz)
            grads[2 * i + 1] = np.matmul(ones, dz)[:, 0, :]
            if i:
                if dz.shape[2] == 1:
                    delta = dz * self.weights[i][:, :, 0][:, None, :]
                else:
                    delta = np.matmul(dz, np.ascontiguousarray(self.weights[i].transpose(0, 2, 1)))
        return grads

    def select(self, keep: Sequence[int]) -> "SubnetStack":
        idx = np.asarray(keep, dtype=int)
        return SubnetStack([w[idx] for w in self.weights], [b[idx] for b in self.biases],
                           self.activations, self.offsets[idx])


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Optional[np.ndarray] = field(default=None, repr=False)
    second_moment: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def like(cls, params, **kw) -> "AdamState":
        state = cls(**kw)
        state.first_moment = np.zeros_like(params, dtype=np.float64)
        state.second_moment = np.zeros_like(params, dtype=np.float64)
        return state


def adam_step(state: AdamState, params, grads, name: str = "params"):
    """One bias-corrected Adam update, applied in place when ``params`` is an array.

    Returns ``(params, state)``.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError(f"{name}: params {params.shape} vs grads {grads.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericError(f"non-finite gradient in parameter block {name!r}")
    if state.first_moment is None:
        state.first_moment = np.zeros_like(params)
        state.second_moment = np.zeros_like(params)
    elif state.first_moment.shape != params.shape:
        raise ShapeError(f"{name}: optimizer state {state.first_moment.shape} vs params {params.shape}")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    m, v = state.first_moment, state.second_moment
    m *= b1
    m += (1.0 - b1) * grads
    v *= b2
    v += (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1 ** state.step_count)
    v_hat = v / (1.0 - b2 ** state.step_count)
    params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state

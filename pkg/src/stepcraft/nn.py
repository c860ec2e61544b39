"""Minimal MLP engine: forward pass, backprop to parameters and to inputs.

Everything is plain numpy in float64. Networks are treated as immutable
values during rollouts; parameter updates happen between rollout phases.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"STEPNN1"


class ShapeError(ValueError):
    """Raised when an input does not match the network's dimensions."""


@dataclass
class MlpNetwork:
    """Fully-connected network with tanh hidden layers and linear output.

    weights[k] has shape (out_k, in_k); biases[k] has shape (out_k,).
    Consecutive layers must chain: out_k == in_{k+1}.
    """

    weights: list
    biases: list

    def __post_init__(self):
        for k in range(len(self.weights) - 1):
            if self.weights[k].shape[0] != self.weights[k + 1].shape[1]:
                raise ShapeError(
                    f"layer {k} output size {self.weights[k].shape[0]} != "
                    f"layer {k + 1} input size {self.weights[k + 1].shape[1]}"
                )
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[0],):
                raise ShapeError(f"layer {k} bias shape {b.shape} != ({w.shape[0]},)")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def layer_sizes(self) -> list:
        return [self.input_dim] + [w.shape[0] for w in self.weights]

    def parameters(self) -> list:
        """Flat list of parameter arrays (weights then biases, layer order)."""
        return list(self.weights) + list(self.biases)

    def copy(self) -> "MlpNetwork":
        return MlpNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class GradientTape:
    """Parameter gradients mirroring an MlpNetwork's shapes, plus the
    gradient with respect to the input batch."""

    d_weights: list
    d_biases: list
    d_input: np.ndarray

    def parameter_grads(self) -> list:
        return list(self.d_weights) + list(self.d_biases)


def orthogonal(rows: int, cols: int, gain: float, rng: np.random.Generator) -> np.ndarray:
    """Orthogonal weight matrix scaled by gain (rows x cols, float64)."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def mlp(sizes, rng, hidden_gain: float = math.sqrt(2.0), output_gain: float = 1.0) -> MlpNetwork:
    """Build an MLP with orthogonal init and zero biases.

    sizes = [in, hidden..., out]. Hidden layers use hidden_gain, the output
    layer uses output_gain (0.01 for policy means, 1.0 for value heads).
    """
    weights, biases = [], []
    for k in range(len(sizes) - 1):
        gain = output_gain if k == len(sizes) - 2 else hidden_gain
        weights.append(orthogonal(sizes[k + 1], sizes[k], gain, rng))
        biases.append(np.zeros(sizes[k + 1]))
    return MlpNetwork(weights, biases)


def _check_batch(net: MlpNetwork, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2:
        raise ShapeError(f"expected a 2-D batch, got shape {batch.shape}")
    if batch.shape[1] != net.input_dim:
        raise ShapeError(
            f"batch has {batch.shape[1]} columns, network expects {net.input_dim}"
        )
    return batch


def forward(net: MlpNetwork, batch: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch (n, in) -> (n, out). Pure."""
    h = _check_batch(net, batch)
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if k != last:
            h = np.tanh(h)
    return h


def forward_one(net: MlpNetwork, x: np.ndarray) -> np.ndarray:
    """Evaluate a single input vector (in,) -> (out,)."""
    return forward(net, np.asarray(x, dtype=np.float64)[None, :])[0]


def _forward_cached(net: MlpNetwork, batch: np.ndarray):
    """Forward pass keeping post-activation values of every layer.

    Returns (activations, output): activations[0] is the input, then one
    entry per hidden layer (tanh applied).
    """
    acts = [batch]
    h = batch
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if k != last:
            h = np.tanh(h)
            acts.append(h)
    return acts, h


def input_gradient(net: MlpNetwork, x: np.ndarray, output_weighting: np.ndarray) -> np.ndarray:
    """Gradient of (weighting . output) with respect to the input vector.

    For a scalar critic pass weighting [1.0]. Matches central finite
    differences to first order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ShapeError(f"input shape {x.shape}, expected ({net.input_dim},)")
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("non-finite input")
    w_out = np.asarray(output_weighting, dtype=np.float64)
    if w_out.shape != (net.output_dim,):
        raise ShapeError(
            f"weighting shape {w_out.shape}, expected ({net.output_dim},)"
        )
    acts, _ = _forward_cached(net, x[None, :])
    # output layer is linear, so the backpropagated signal starts as w_out
    g = w_out[None, :]
    for k in range(len(net.weights) - 1, -1, -1):
        g = g @ net.weights[k]
        if k > 0:
            g = g * (1.0 - acts[k] ** 2)
    return g[0]


def parameter_gradient(net: MlpNetwork, batch: np.ndarray, loss_grad: np.ndarray) -> GradientTape:
    """Backprop loss_grad = dL/d(output) (n, out) to all parameters.

    Gradients are summed over the batch; passing dL/dY that already carries
    a 1/n factor yields the batch-mean gradient.
    """
    batch = _check_batch(net, batch)
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (batch.shape[0], net.output_dim):
        raise ShapeError(
            f"loss_grad shape {loss_grad.shape}, expected ({batch.shape[0]}, {net.output_dim})"
        )
    acts, _ = _forward_cached(net, batch)
    d_weights = [None] * len(net.weights)
    d_biases = [None] * len(net.weights)
    dz = loss_grad
    for k in range(len(net.weights) - 1, -1, -1):
        d_weights[k] = dz.T @ acts[k]
        d_biases[k] = dz.sum(axis=0)
        dz = dz @ net.weights[k]
        if k > 0:
            dz = dz * (1.0 - acts[k] ** 2)
    return GradientTape(d_weights, d_biases, dz)


# ---------------------------------------------------------------------------
# Diagonal-Gaussian policy head


@dataclass
class GaussianPolicyHead:
    """Stochastic policy: mean from an MLP, state-independent log-std."""

    mean_net: MlpNetwork
    log_std: np.ndarray

    def __post_init__(self):
        if self.log_std.shape != (self.mean_net.output_dim,):
            raise ShapeError(
                f"log_std shape {self.log_std.shape}, expected "
                f"({self.mean_net.output_dim},)"
            )

    @property
    def action_dim(self) -> int:
        return self.mean_net.output_dim


def policy_head(obs_dim: int, action_dim: int, rng, hidden=(128, 128),
                init_std: float = 0.5) -> GaussianPolicyHead:
    net = mlp([obs_dim, *hidden, action_dim], rng, output_gain=0.01)
    return GaussianPolicyHead(net, np.full(action_dim, math.log(init_std)))


def value_network(obs_dim: int, rng, hidden=(128, 128)) -> MlpNetwork:
    return mlp([obs_dim, *hidden, 1], rng, output_gain=1.0)


def gaussian_log_prob(actions: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density, batched over leading axis."""
    std = np.exp(log_std)
    z = (actions - mean) / std
    return -0.5 * np.sum(z ** 2, axis=-1) - np.sum(log_std) \
        - 0.5 * actions.shape[-1] * math.log(2.0 * math.pi)


def sample_action(head: GaussianPolicyHead, obs: np.ndarray, rng: np.random.Generator):
    """Draw one action for one observation; returns (action, log_prob)."""
    mean = forward_one(head.mean_net, obs)
    std = np.exp(head.log_std)
    action = mean + std * rng.standard_normal(head.action_dim)
    return action, float(gaussian_log_prob(action, mean, head.log_std))


def sample_actions(head: GaussianPolicyHead, obs_batch: np.ndarray, rng: np.random.Generator):
    """Batched sampling; returns (actions (n, a), log_probs (n,))."""
    mean = forward(head.mean_net, obs_batch)
    std = np.exp(head.log_std)
    actions = mean + std * rng.standard_normal(mean.shape)
    return actions, gaussian_log_prob(actions, mean, head.log_std)


def mean_action(head: GaussianPolicyHead, obs: np.ndarray) -> np.ndarray:
    """Deterministic (mean) action, used for evaluation rollouts."""
    return forward_one(head.mean_net, obs)


# ---------------------------------------------------------------------------
# Optimizer


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ShapeError(f"{len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g ** 2
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def clip_grad_norm(grads, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is <= max_norm."""
    total = math.sqrt(sum(float(np.sum(g ** 2)) for g in grads))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


# ---------------------------------------------------------------------------
# Checkpoint format
#
# Little-endian binary layout:
#   bytes 0..6   magic "STEPNN1"
#   uint32       layer count L
#   L x (uint32 in_dim, uint32 out_dim)
#   L x (float64 weights row-major out*in, float64 biases out)
#   uint32       log-std length (0 when absent)
#   float64 x n  log-std entries


def save_checkpoint(path, net: MlpNetwork, log_std: np.ndarray | None = None) -> None:
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", len(net.weights))]
    for w in net.weights:
        chunks.append(struct.pack("<II", w.shape[1], w.shape[0]))
    for w, b in zip(net.weights, net.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    if log_std is None:
        chunks.append(struct.pack("<I", 0))
    else:
        chunks.append(struct.pack("<I", log_std.shape[0]))
        chunks.append(np.ascontiguousarray(log_std, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    """Load a network checkpoint; returns (MlpNetwork, log_std | None)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:7] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC.decode()} checkpoint")
    off = 7
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    dims = []
    for _ in range(n_layers):
        d_in, d_out = struct.unpack_from("<II", data, off)
        dims.append((d_in, d_out))
        off += 8
    weights, biases = [], []
    for d_in, d_out in dims:
        w = np.frombuffer(data, dtype="<f8", count=d_in * d_out, offset=off).reshape(d_out, d_in)
        off += 8 * d_in * d_out
        b = np.frombuffer(data, dtype="<f8", count=d_out, offset=off)
        off += 8 * d_out
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    (n_std,) = struct.unpack_from("<I", data, off)
    off += 4
    log_std = None
    if n_std:
        log_std = np.frombuffer(data, dtype="<f8", count=n_std, offset=off).astype(np.float64)
    return MlpNetwork(weights, biases), log_std

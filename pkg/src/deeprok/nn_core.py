"""Fixed-topology tanh MLP Q-network on a flat weight vector.

The weight vector is flattened layer-major: for every affine layer the
weight matrix of shape ``(out, in)`` in row-major order, followed by its
bias of length ``out``. The EKF covariance indices are tied to this order,
so it must not change.

Hidden layers use ``tanh``; the output layer is linear.
"""

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._validation import as_float_matrix, as_float_vector, check_random_state

WEIGHTS_MAGIC = b"RKQNET01"


@dataclass(frozen=True)
class NetworkTopology:
    input_dim: int = 4
    hidden_dims: tuple = (20, 20)
    output_dim: int = 2
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        dims = self.layer_dims
        if any(d < 1 for d in dims):
            raise ValueError(f"all layer dimensions must be >= 1, got {dims}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self):
        return (int(self.input_dim), *self.hidden_dims, int(self.output_dim))

    @property
    def n_weights(self):
        dims = self.layer_dims
        return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))

    def slices(self):
        """Return ``[(w_slice, w_shape, b_slice), ...]`` per affine layer."""
        out = []
        pos = 0
        dims = self.layer_dims
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w = slice(pos, pos + fan_in * fan_out)
            pos += fan_in * fan_out
            b = slice(pos, pos + fan_out)
            pos += fan_out
            out.append((w, (fan_out, fan_in), b))
        return out


CARTPOLE_TOPOLOGY = NetworkTopology()


INIT_SCHEMES = ("uniform", "fan_in")


def init_network(topology=CARTPOLE_TOPOLOGY, seed=None, scale=0.05, scheme="uniform"):
    """Random initial weights.

    ``"uniform"`` draws every entry i.i.d. on ``[-scale, scale]``.
    ``"fan_in"`` draws each layer's ``W`` and ``b`` on ``[-c, c]`` with
    ``c = scale / sqrt(fan_in)`` (``scale=1`` is the common framework default).
    """
    if not scale >= 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"scheme must be one of {INIT_SCHEMES}, got {scheme!r}")
    rng = check_random_state(seed)
    if scheme == "uniform":
        return rng.uniform(-scale, scale, size=topology.n_weights)
    bound = np.empty(topology.n_weights)
    for w, (_, fan_in), b in topology.slices():
        bound[w] = bound[b] = scale / np.sqrt(fan_in)
    return rng.uniform(-bound, bound)


def unflatten(weights, topology=CARTPOLE_TOPOLOGY):
    """Split a flat vector into ``[(W, b), ...]`` views (no copies)."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (topology.n_weights,):
        raise ValueError(f"expected {topology.n_weights} weights, got shape {weights.shape}")
    return [(weights[w].reshape(shape), weights[b]) for w, shape, b in topology.slices()]


def flatten(layers):
    return np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in layers])


def _forward(layers, X):
    """Forward pass keeping every layer's activation (input included).

    Uses ``einsum`` rather than BLAS so each row's result does not depend
    on the batch it is evaluated in; the robust-vs-nominal target
    comparisons rely on this bit-for-bit.
    """
    acts = [X]
    h = X
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = np.einsum("ij,kj->ik", h, W) + b
        h = z if i == last else np.tanh(z)
        acts.append(h)
    return acts


def q_values_batch(weights, states, topology=CARTPOLE_TOPOLOGY):
    """Q-values for a batch of states, shape ``(m, output_dim)``."""
    layers = unflatten(weights, topology)
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != topology.input_dim:
        raise ValueError(f"states must have shape (m, {topology.input_dim}), got {states.shape}")
    return _forward(layers, states)[-1]


def q_values(weights, state, topology=CARTPOLE_TOPOLOGY):
    state = as_float_vector(state, topology.input_dim, "state")
    return q_values_batch(weights, state[None, :], topology)[0]


def _backward(layers, acts, dout):
    """Per-sample gradients of ``sum_k dout[:, k] * Q[:, k]``, shape ``(m, n)``."""
    m = dout.shape[0]
    pieces = []
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_in = acts[i]
        gW = delta[:, :, None] * h_in[:, None, :]
        pieces.append((gW.reshape(m, -1), delta))
        if i > 0:
            delta = (delta @ W) * (1.0 - h_in * h_in)
    pieces.reverse()
    return np.concatenate([np.concatenate([gW, gb], axis=1) for gW, gb in pieces], axis=1)


def _check_actions(actions, topology):
    actions = np.asarray(actions)
    if actions.ndim != 1 or not np.issubdtype(actions.dtype, np.integer):
        raise ValueError("actions must be a 1-D integer array")
    if actions.size and (actions.min() < 0 or actions.max() >= topology.output_dim):
        raise ValueError(f"action out of range [0, {topology.output_dim})")
    return actions


def q_and_gradient_batch(weights, states, actions, topology=CARTPOLE_TOPOLOGY):
    """Return ``Q(s_j, a_j)`` and the per-sample gradients ``(m, n)``."""
    layers = unflatten(weights, topology)
    states = as_float_matrix(states, topology.input_dim, "states")
    actions = _check_actions(actions, topology)
    if actions.shape[0] != states.shape[0]:
        raise ValueError("states and actions disagree on batch size")
    acts = _forward(layers, states)
    m = states.shape[0]
    dout = np.zeros((m, topology.output_dim))
    dout[np.arange(m), actions] = 1.0
    grads = _backward(layers, acts, dout)
    return acts[-1][np.arange(m), actions], grads


def q_gradient(weights, state, action, topology=CARTPOLE_TOPOLOGY):
    """Gradient of ``Q(state, action; weights)`` with respect to the flat weights."""
    state = as_float_vector(state, topology.input_dim, "state")
    if not 0 <= int(action) < topology.output_dim:
        raise ValueError(f"action {action} out of range [0, {topology.output_dim})")
    _, g = q_and_gradient_batch(weights, state[None, :], np.array([int(action)]), topology)
    return g[0]


def td_ascent_direction(weights, states, actions, targets, topology=CARTPOLE_TOPOLOGY):
    """TD errors and the batch-mean ascent direction ``mean_j delta_j * grad Q_j``.

    One forward and one backward pass; this is the negative gradient of
    ``0.5 * mean_j delta_j**2``. Returns ``(delta, direction)``.
    """
    layers = unflatten(weights, topology)
    states = np.asarray(states, dtype=np.float64)
    m = states.shape[0]
    rows = np.arange(m)
    acts = _forward(layers, states)
    delta_td = np.asarray(targets, dtype=np.float64) - acts[-1][rows, actions]
    dout = np.zeros((m, topology.output_dim))
    dout[rows, actions] = delta_td / m
    pieces = []
    delta = dout
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        h_in = acts[i]
        pieces.append((delta.T @ h_in, delta.sum(axis=0)))
        if i > 0:
            delta = (delta @ W) * (1.0 - h_in * h_in)
    pieces.reverse()
    return delta_td, flatten(pieces)


# --------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n, **kwargs):
        return cls(np.zeros(n), np.zeros(n), **kwargs)


def adam_step(adam, weights, gradient):
    """One bias-corrected Adam step along an ascent direction.

    ``gradient`` is the direction to move *towards* (``delta * grad Q`` for
    Q-fitting), so the scaled step is added to the weights. Inputs are not
    modified; new state and weights are returned.
    """
    g = np.asarray(gradient, dtype=np.float64)
    if g.shape != adam.first_moment.shape:
        raise ValueError(f"gradient shape {g.shape} != {adam.first_moment.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("gradient contains non-finite entries")
    t = adam.step_count + 1
    m = adam.beta1 * adam.first_moment + (1.0 - adam.beta1) * g
    v = adam.beta2 * adam.second_moment + (1.0 - adam.beta2) * (g * g)
    m_hat = m / (1.0 - adam.beta1 ** t)
    v_hat = v / (1.0 - adam.beta2 ** t)
    new_weights = weights + adam.alpha * m_hat / (np.sqrt(v_hat) + adam.epsilon)
    return replace(adam, first_moment=m, second_moment=v, step_count=t), new_weights


# ------------------------------------------------------------ serialization


def dumps_weights(weights, topology=CARTPOLE_TOPOLOGY):
    weights = as_float_vector(weights, topology.n_weights, "weights")
    dims = topology.layer_dims
    header = WEIGHTS_MAGIC + struct.pack(f"<I{len(dims)}I", len(dims) - 1, *dims)
    return header + weights.astype("<f8").tobytes()


def loads_weights(data):
    """Parse bytes written by :func:`dumps_weights`; returns ``(weights, topology)``."""
    if data[:8] != WEIGHTS_MAGIC:
        raise ValueError("not a weights file (bad magic)")
    (n_layers,) = struct.unpack_from("<I", data, 8)
    dims = struct.unpack_from(f"<{n_layers + 1}I", data, 12)
    topology = NetworkTopology(dims[0], dims[1:-1], dims[-1])
    offset = 12 + 4 * (n_layers + 1)
    expected = offset + 8 * topology.n_weights
    if len(data) != expected:
        raise ValueError(f"weights file has {len(data)} bytes, expected {expected}")
    weights = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)
    return weights, topology


def save_weights(path, weights, topology=CARTPOLE_TOPOLOGY):
    Path(path).write_bytes(dumps_weights(weights, topology))


def load_weights(path):
    return loads_weights(Path(path).read_bytes())

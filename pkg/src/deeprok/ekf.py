"""Extended Kalman Filter over network weights.

The weights follow a random walk ``theta_t = theta_{t-1} + v_t`` and each
target label is a scalar noisy observation of ``Q(s, a; theta_t)``,
linearized around the predicted mean. With ``q = grad Q`` at the predicted
mean the per-sample statistics are::

    S = q' P q + P_n          (innovation variance)
    K = P q / S               (Kalman gain)
    theta <- theta + K * delta
    P     <- P - K S K'

For a mini-batch the default ``"averaged"`` mode averages the per-sample
mean increments and covariance decrements; ``"sequential"`` conditions on
the samples one after the other (textbook EKF with a fixed linearization
point).
"""

import logging
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from ._validation import as_float_vector

logger = logging.getLogger(__name__)

EKF_MAGIC = b"RKEKF01\x00"
PSD_TOLERANCE = 1e-8
BATCH_MODES = ("averaged", "sequential")


@dataclass
class EkfState:
    """Posterior over the weights.

    ``evolution_noise`` holds the diagonal of ``P_v``.
    ``last_min_eigenvalue`` is diagnostic: the smallest eigenvalue of the
    covariance seen by the last checked update, before any flooring.
    """

    mean: np.ndarray
    covariance: np.ndarray
    evolution_noise: np.ndarray
    observation_noise: float
    last_min_eigenvalue: float = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        n = self.mean.shape[0]
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        if self.covariance.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n}, got {self.covariance.shape}")
        pv = np.asarray(self.evolution_noise, dtype=np.float64)
        if pv.ndim == 0:
            pv = np.full(n, float(pv))
        elif pv.ndim == 2:
            pv = np.diag(pv).copy()
        if pv.shape != (n,) or np.any(pv < 0):
            raise ValueError("evolution_noise must be a non-negative diagonal of length n")
        self.evolution_noise = pv
        if not self.observation_noise > 0:
            raise ValueError(f"observation_noise must be > 0, got {self.observation_noise}")

    @classmethod
    def from_prior(cls, mean, p0_scale=1.0, pv_scale=0.01, pn=0.001):
        """Isotropic prior ``P = p0_scale * I`` and ``P_v = pv_scale * I``."""
        n = len(mean)
        return cls(np.array(mean, dtype=np.float64), p0_scale * np.eye(n), pv_scale, pn)

    @property
    def n(self):
        return self.mean.shape[0]


def predict(state):
    """Time update: mean unchanged, ``P <- P + P_v``."""
    cov = state.covariance.copy()
    cov[np.diag_indices_from(cov)] += state.evolution_noise
    return replace(state, covariance=cov, mean=state.mean.copy())


def innovation_variance(state, gradient):
    q = as_float_vector(gradient, state.n, "gradient")
    return float(q @ state.covariance @ q + state.observation_noise)


def kalman_gain(state, gradient):
    q = as_float_vector(gradient, state.n, "gradient")
    pq = state.covariance @ q
    return pq / (q @ pq + state.observation_noise)


def floor_covariance(cov, tol=PSD_TOLERANCE):
    """Return ``(cov, min_eig)``; eigenvalues are clipped at 0 if ``min_eig < -tol``."""
    eigvals, eigvecs = np.linalg.eigh(cov)
    min_eig = float(eigvals[0])
    if min_eig < -tol:
        logger.warning("covariance min eigenvalue %.3e below tolerance, flooring", min_eig)
        cov = (eigvecs * np.clip(eigvals, 0.0, None)) @ eigvecs.T
        cov = 0.5 * (cov + cov.T)
    return cov, min_eig


def ekf_batch_update(state, gradients, innovations, *, mode="averaged", learning_rate=1.0,
                     check_psd=True):
    """Measurement update for a mini-batch of scalar observations.

    Parameters
    ----------
    state : EkfState
        Predicted state (after :func:`predict`).
    gradients : array of shape (m, n)
        ``grad Q(s_j, a_j)`` at the predicted mean.
    innovations : array of shape (m,)
        ``y_j - Q(s_j, a_j)`` at the predicted mean.
    mode : {"averaged", "sequential"}
    learning_rate : float
        Multiplies the mean increment; 1 gives the plain Kalman step.
    check_psd : bool
        Run the eigenvalue check (and floor if needed). Costs one
        symmetric eigendecomposition.
    """
    G = np.asarray(gradients, dtype=np.float64)
    if G.ndim == 1:
        G = G[None, :]
    delta = np.atleast_1d(np.asarray(innovations, dtype=np.float64))
    m = G.shape[0]
    if m == 0:
        raise ValueError("empty batch")
    if G.shape[1] != state.n or delta.shape != (m,):
        raise ValueError(f"batch shapes {G.shape}, {delta.shape} do not match n={state.n}")
    if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(G))):
        raise ValueError("non-finite gradient or innovation in batch")
    if mode not in BATCH_MODES:
        raise ValueError(f"mode must be one of {BATCH_MODES}, got {mode!r}")

    P = state.covariance
    pn = state.observation_noise
    if mode == "averaged":
        PG = P @ G.T
        S = np.einsum("ij,ji->i", G, PG) + pn
        K = PG / S
        mean = state.mean + learning_rate * (K @ delta) / m
        # sum_j K_j S_j K_j' / m as L L' (numpy takes the symmetric product path)
        L = K * np.sqrt(S / m)
        cov = P - L @ L.T
    else:
        mean = state.mean.copy()
        cov = P.copy()
        for q, d in zip(G, delta):
            pq = cov @ q
            s = q @ pq + pn
            innov = d - q @ (mean - state.mean)
            mean += learning_rate * pq * (innov / s)
            cov -= np.outer(pq, pq) / s
    cov = 0.5 * (cov + cov.T)
    min_eig = None
    if check_psd:
        cov, min_eig = floor_covariance(cov)
    return replace(state, mean=mean, covariance=cov, last_min_eigenvalue=min_eig)


def _prior_quadratic(cov, diff):
    """``diff' cov^{-1} diff`` by factorization; pseudo-inverse if singular."""
    try:
        c = sla.cho_factor(cov, lower=True, check_finite=False)
        return float(diff @ sla.cho_solve(c, diff, check_finite=False)), None
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(cov)
        logger.warning("covariance not positive definite (cond=%.3e); using pseudo-inverse", cond)
        sol = np.linalg.lstsq(cov, diff, rcond=None)[0]
        return float(diff @ sol), cond


def ekf_regularized_loss(state, theta, batch, observe=None, *, return_condition=False):
    """Regularized objective minimized by the Kalman update.

    ``0.5 / P_n * mean_j (y_j - h_j(theta))**2
    + 0.5 * (theta - mean)' P^{-1} (theta - mean)``

    ``state`` must be the predicted state. ``batch`` is ``(inputs, actions,
    targets)``; ``observe(theta, inputs, actions)`` returns the predictions
    and defaults to the Q-network. Meant for verification only.
    """
    inputs, actions, targets = batch
    if observe is None:
        from .nn_core import q_values_batch

        def observe(th, X, A):
            q = q_values_batch(th, X)
            return q[np.arange(q.shape[0]), np.asarray(A)]

    theta = as_float_vector(theta, state.n, "theta")
    resid = np.asarray(targets, dtype=np.float64) - observe(theta, inputs, actions)
    data = 0.5 / state.observation_noise * float(np.mean(resid ** 2))
    quad, cond = _prior_quadratic(state.covariance, theta - state.mean)
    loss = data + 0.5 * quad
    return (loss, cond) if return_condition else loss


def linearized_loss_argmin(state, gradients, innovations):
    """Exact minimizer of the regularized loss with linearized observations.

    Solves ``(P^{-1} + G'G / (m P_n)) d = G' delta / (m P_n)`` in the form
    ``(I + P G'G / (m P_n)) d = P G' delta / (m P_n)`` so ``P`` is never
    inverted. Returns ``mean + d``.
    """
    G = np.atleast_2d(np.asarray(gradients, dtype=np.float64))
    delta = np.atleast_1d(np.asarray(innovations, dtype=np.float64))
    c = 1.0 / (G.shape[0] * state.observation_noise)
    P = state.covariance
    A = np.eye(state.n) + c * (P @ G.T) @ G
    d = np.linalg.solve(A, c * (P @ (G.T @ delta)))
    return state.mean + d


# ------------------------------------------------------------ serialization


def dumps_ekf(state):
    n = state.n
    rows, cols = np.tril_indices(n)
    body = [
        EKF_MAGIC,
        struct.pack("<I", n),
        state.mean.astype("<f8").tobytes(),
        state.covariance[rows, cols].astype("<f8").tobytes(),
        state.evolution_noise.astype("<f8").tobytes(),
        struct.pack("<d", state.observation_noise),
    ]
    return b"".join(body)


def loads_ekf(data):
    if data[:8] != EKF_MAGIC:
        raise ValueError("not an EKF state file (bad magic)")
    (n,) = struct.unpack_from("<I", data, 8)
    n_tri = n * (n + 1) // 2
    expected = 12 + 8 * (n + n_tri + n + 1)
    if len(data) != expected:
        raise ValueError(f"EKF file has {len(data)} bytes, expected {expected}")
    vals = np.frombuffer(data, dtype="<f8", offset=12).astype(np.float64)
    mean = vals[:n]
    tri = vals[n:n + n_tri]
    pv = vals[n + n_tri:n + n_tri + n]
    pn = float(vals[-1])
    cov = np.zeros((n, n))
    rows, cols = np.tril_indices(n)
    cov[rows, cols] = tri
    cov[cols, rows] = tri
    return EkfState(mean, cov, pv, pn)


def save_ekf(path, state):
    Path(path).write_bytes(dumps_ekf(state))


def load_ekf(path):
    return loads_ekf(Path(path).read_bytes())

"""Embedded invariant checks run by ``deeprok selftest``.

Each check returns ``(name, passed, detail)``. They are small versions of
the test-suite oracles, cheap enough to run on any install.
"""

import numpy as np

from . import cartpole
from .ekf import EkfState, ekf_batch_update, kalman_gain
from .nn_core import CARTPOLE_TOPOLOGY, init_network, q_gradient, q_values


def check_gradients(n_triples=5, seed=0, h=1e-4, tol=1e-4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_triples):
        w = init_network(CARTPOLE_TOPOLOGY, rng, scale=0.5)
        s = rng.uniform(-1, 1, 4)
        a = int(rng.integers(2))
        g = q_gradient(w, s, a)
        fd = np.empty_like(w)
        for i in range(w.size):
            e = np.zeros_like(w)
            e[i] = h
            fd[i] = (q_values(w + e, s)[a] - q_values(w - e, s)[a]) / (2 * h)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    return "gradient vs central differences", bool(worst < tol), f"max relative error {worst:.2e}"


def _random_spd(rng, n):
    A = rng.normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


def check_gain_identities(n_instances=20, n=8, seed=1, tol=1e-10):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        P = _random_spd(rng, n)
        q = rng.normal(size=n)
        pn = float(rng.uniform(0.01, 2.0))
        st = EkfState(np.zeros(n), P, 0.0, pn)
        post_cov = np.linalg.inv(np.linalg.inv(P) + np.outer(q, q) / pn)
        K = kalman_gain(st, q)
        worst = max(worst, np.max(np.abs(K - post_cov @ q / pn)))
        upd = ekf_batch_update(st, q[None], [0.0], check_psd=False)
        worst = max(worst, np.max(np.abs(upd.covariance - post_cov)) / np.max(np.abs(post_cov)))
    return "Kalman gain / information-form identities", bool(worst < tol), f"max error {worst:.2e}"


def check_rls_oracle(n_samples=30, d=4, seed=2, tol=1e-8):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_samples, d))
    y = X @ rng.normal(size=d) + 0.1 * rng.normal(size=n_samples)
    pn = 0.01
    st = EkfState(np.zeros(d), np.eye(d), 0.0, pn)
    for x, t in zip(X, y):
        st = ekf_batch_update(st, x[None], [t - x @ st.mean], check_psd=False)
    cov = np.linalg.inv(np.eye(d) + X.T @ X / pn)
    mean = cov @ X.T @ y / pn
    err = max(np.max(np.abs(st.mean - mean)), np.max(np.abs(st.covariance - cov)))
    return "sequential filter vs Bayesian linear regression", bool(err < tol), f"max error {err:.2e}"


def check_mirror_symmetry(n_states=200, seed=3):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(n_states):
        s = rng.uniform(-0.2, 0.2, 4)
        a = int(rng.integers(2))
        n1, r1, t1 = cartpole.step_dynamics(s, a)
        n2, r2, t2 = cartpole.step_dynamics(-s, 1 - a)
        bad += not (np.array_equal(n1, -n2) and r1 == r2 and t1 == t2)
    return "dynamics mirror symmetry", bad == 0, f"{bad} mismatches in {n_states}"


CHECKS = (check_gradients, check_gain_identities, check_rls_oracle, check_mirror_symmetry)


def run_all():
    return [check() for check in CHECKS]

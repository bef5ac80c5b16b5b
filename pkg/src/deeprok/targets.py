"""Bellman target labels (nominal, robust, Double-DQN) and TD errors.

Batch functions work on stacked arrays and are what the training loops use;
the per-transition functions wrap them with a batch of one.
"""

from dataclasses import dataclass

import numpy as np

from .nn_core import CARTPOLE_TOPOLOGY, q_values, q_values_batch


@dataclass
class Transition:
    """One experience ``(s, a, r, s', terminal', candidates)``.

    ``candidate_states`` has shape ``(k, state_dim)`` and holds the next
    state under each model of the episode's uncertainty set;
    ``candidate_terminals`` flags which of them end the episode.
    """

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    next_terminal: bool
    candidate_states: np.ndarray
    candidate_terminals: np.ndarray

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64)
        self.next_state = np.asarray(self.next_state, dtype=np.float64)
        self.candidate_states = np.atleast_2d(np.asarray(self.candidate_states, dtype=np.float64))
        self.candidate_terminals = np.atleast_1d(np.asarray(self.candidate_terminals, dtype=bool))
        if self.candidate_states.shape[0] != self.candidate_terminals.shape[0]:
            raise ValueError("candidate states and terminal flags differ in length")
        if not np.isfinite(self.reward):
            raise ValueError("reward must be finite")


def check_gamma(gamma):
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    return gamma


def nominal_targets(rewards, next_states, next_terminals, target_weights, gamma,
                    topology=CARTPOLE_TOPOLOGY):
    """``r + gamma * max_a' Q(s', a'; target)``, bootstrapping 0 at terminals."""
    check_gamma(gamma)
    v = q_values_batch(target_weights, next_states, topology).max(axis=1)
    v = np.where(next_terminals, 0.0, v)
    return np.asarray(rewards, dtype=np.float64) + gamma * v


def robust_targets(rewards, candidate_states, candidate_terminals, target_weights, gamma,
                   topology=CARTPOLE_TOPOLOGY):
    """Worst case over candidate next states of the bootstrapped value.

    ``candidate_states`` has shape ``(m, k, state_dim)``. Every candidate is
    a point mass, so the minimum over transition models reduces to a minimum
    over the ``k`` candidate values.
    """
    check_gamma(gamma)
    candidate_states = np.asarray(candidate_states, dtype=np.float64)
    m, k, d = candidate_states.shape
    if k == 0:
        raise ValueError("robust target needs at least one candidate next state")
    v = q_values_batch(target_weights, candidate_states.reshape(m * k, d), topology)
    v = v.max(axis=1).reshape(m, k)
    v = np.where(candidate_terminals, 0.0, v)
    return np.asarray(rewards, dtype=np.float64) + gamma * v.min(axis=1)


def double_dqn_targets(rewards, next_states, next_terminals, online_weights, target_weights,
                       gamma, topology=CARTPOLE_TOPOLOGY):
    """Online network picks ``a'``, target network evaluates it."""
    check_gamma(gamma)
    a_star = q_values_batch(online_weights, next_states, topology).argmax(axis=1)
    q_t = q_values_batch(target_weights, next_states, topology)
    v = q_t[np.arange(q_t.shape[0]), a_star]
    v = np.where(next_terminals, 0.0, v)
    return np.asarray(rewards, dtype=np.float64) + gamma * v


def nominal_target(t, target_weights, gamma, topology=CARTPOLE_TOPOLOGY):
    return float(nominal_targets([t.reward], t.next_state[None, :], [t.next_terminal],
                                 target_weights, gamma, topology)[0])


def robust_target(t, target_weights, gamma, topology=CARTPOLE_TOPOLOGY):
    if t.candidate_states.shape[0] == 0:
        raise ValueError("robust target needs at least one candidate next state")
    return float(robust_targets([t.reward], t.candidate_states[None], t.candidate_terminals[None],
                                target_weights, gamma, topology)[0])


def double_dqn_target(t, online_weights, target_weights, gamma, topology=CARTPOLE_TOPOLOGY):
    return float(double_dqn_targets([t.reward], t.next_state[None, :], [t.next_terminal],
                                    online_weights, target_weights, gamma, topology)[0])


def td_error(target_value, weights, state, action, topology=CARTPOLE_TOPOLOGY):
    """``target - Q(state, action; weights)``."""
    return float(target_value - q_values(weights, state, topology)[int(action)])

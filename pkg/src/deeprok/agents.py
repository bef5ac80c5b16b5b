"""Training loops for Double-DQN, RTD-DQN and Deep-RoK on Cart-Pole.

All three share the same episode loop: epsilon-greedy rollouts under the
nominal physics, experience replay, one learning step per environment step
once the buffer is warm, and a hard target-network copy every
``target_sync_interval`` learning steps. They differ in the target label and
in the weight update:

* ``double_dqn`` -- Double-DQN target, Adam step.
* ``rtd_dqn``    -- robust target over the episode's uncertainty set, Adam step.
* ``deep_rok``   -- robust target, EKF update of the weight posterior.
"""

import logging
import time
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import cartpole
from ._validation import check_random_state, check_scalar
from .cartpole import CartPoleParams, ParamRanges, UncertaintySet
from .ekf import BATCH_MODES, EkfState, ekf_batch_update, predict
from .nn_core import (
    INIT_SCHEMES,
    AdamState,
    NetworkTopology,
    adam_step,
    init_network,
    q_and_gradient_batch,
    q_values,
    q_values_batch,
    td_ascent_direction,
)
from .targets import Transition, double_dqn_targets, robust_targets

logger = logging.getLogger(__name__)

AGENT_KINDS = ("double_dqn", "rtd_dqn", "deep_rok")


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 700
    batch_size: int = 10
    gamma: float = 0.9
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_episodes: int = 100
    target_sync_interval: int = 100
    replay_capacity: int = 10_000
    replay_min: int = 100
    adam_learning_rate: float = 0.001
    ekf_learning_rate: float = 1.0
    max_episode_steps: int = cartpole.MAX_EPISODE_STEPS
    init_scale: float = 1.0
    init_scheme: str = "fan_in"
    # reward stored for the transition that ends the episode by failure
    failure_reward: float = 0.0
    hidden_dims: tuple = (20, 20)
    # environment
    nominal: CartPoleParams = field(default_factory=CartPoleParams)
    ranges: ParamRanges = field(default_factory=ParamRanges)
    k_candidates: int = 5
    cross_product: bool = False
    # EKF
    p0_scale: float = 1.0
    pv_scale: float = 0.01
    pn: float = 0.001
    ekf_batch_mode: str = "averaged"
    psd_check_interval: int = 100
    seed: int = 0

    def validate(self):
        check_scalar(self.episodes, "episodes", min_val=0, integer=True)
        check_scalar(self.batch_size, "batch_size", min_val=1, integer=True)
        check_scalar(self.gamma, "gamma", min_val=0.0, max_val=1.0, include_max=False)
        check_scalar(self.epsilon_start, "epsilon_start", min_val=0.0, max_val=1.0)
        check_scalar(self.epsilon_end, "epsilon_end", min_val=0.0, max_val=1.0)
        check_scalar(self.epsilon_decay_episodes, "epsilon_decay_episodes", min_val=0,
                     integer=True)
        check_scalar(self.target_sync_interval, "target_sync_interval", min_val=1, integer=True)
        check_scalar(self.replay_capacity, "replay_capacity", min_val=1, integer=True)
        check_scalar(self.replay_min, "replay_min", min_val=self.batch_size, integer=True)
        if self.replay_min > self.replay_capacity:
            raise ValueError("replay_min must be <= replay_capacity")
        check_scalar(self.adam_learning_rate, "adam_learning_rate", min_val=0.0)
        check_scalar(self.ekf_learning_rate, "ekf_learning_rate", min_val=0.0)
        check_scalar(self.max_episode_steps, "max_episode_steps", min_val=1, integer=True)
        check_scalar(self.init_scale, "init_scale", min_val=0.0)
        check_scalar(self.failure_reward, "failure_reward")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"init_scheme must be one of {INIT_SCHEMES}")
        check_scalar(self.k_candidates, "k_candidates", min_val=1, integer=True)
        check_scalar(self.p0_scale, "p0_scale", min_val=0.0, include_min=False)
        check_scalar(self.pv_scale, "pv_scale", min_val=0.0)
        check_scalar(self.pn, "pn", min_val=0.0, include_min=False)
        check_scalar(self.psd_check_interval, "psd_check_interval", min_val=0, integer=True)
        check_scalar(self.seed, "seed", min_val=0, integer=True)
        if self.ekf_batch_mode not in BATCH_MODES:
            raise ValueError(f"ekf_batch_mode must be one of {BATCH_MODES}")
        if not self.ranges.contains(self.nominal):
            logger.info("nominal parameters lie outside the uncertainty ranges")
        self.topology  # noqa: B018  (raises on bad hidden_dims)
        return self

    @property
    def topology(self):
        return NetworkTopology(4, self.hidden_dims, 2)

    def epsilon(self, episode):
        """Linear decay from ``epsilon_start`` to ``epsilon_end`` (0-based episode)."""
        if self.epsilon_decay_episodes == 0:
            return self.epsilon_end
        frac = min(1.0, episode / self.epsilon_decay_episodes)
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)


# ----------------------------------------------------------------- replay

Batch = namedtuple("Batch", "states actions rewards next_states next_terminals "
                            "candidate_states candidate_terminals")


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions stored as stacked arrays."""

    def __init__(self, capacity):
        self.capacity = check_scalar(capacity, "capacity", min_val=1, integer=True)
        self._arrays = None
        self._next = 0
        self._size = 0
        self.episodes = np.zeros(capacity, dtype=np.int64)

    def __len__(self):
        return self._size

    def _allocate(self, t):
        d = t.state.shape[0]
        k = t.candidate_states.shape[0]
        c = self.capacity
        self._arrays = Batch(np.zeros((c, d)), np.zeros(c, dtype=np.int64), np.zeros(c),
                             np.zeros((c, d)), np.zeros(c, dtype=bool),
                             np.zeros((c, k, d)), np.zeros((c, k), dtype=bool))

    def push(self, t, episode=0):
        """Store ``t``, evicting the oldest entry when full."""
        if self._arrays is None:
            self._allocate(t)
        a = self._arrays
        i = self._next
        if t.candidate_states.shape != a.candidate_states.shape[1:]:
            raise ValueError("candidate set size changed within one buffer")
        a.states[i] = t.state
        a.actions[i] = t.action
        a.rewards[i] = t.reward
        a.next_states[i] = t.next_state
        a.next_terminals[i] = t.next_terminal
        a.candidate_states[i] = t.candidate_states
        a.candidate_terminals[i] = t.candidate_terminals
        self.episodes[i] = episode
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        return self

    def _indices(self, batch_size, rng):
        if batch_size > self._size:
            raise ValueError(f"cannot sample {batch_size} from a buffer of {self._size}")
        return rng.choice(self._size, size=batch_size, replace=False)

    def sample_batch(self, batch_size, rng):
        """Uniform draw without replacement, returned as stacked arrays."""
        idx = self._indices(batch_size, rng)
        return Batch(*(arr[idx] for arr in self._arrays))

    def sample(self, batch_size, rng):
        b = self.sample_batch(batch_size, rng)
        return [Transition(b.states[j], int(b.actions[j]), float(b.rewards[j]), b.next_states[j],
                           bool(b.next_terminals[j]), b.candidate_states[j],
                           b.candidate_terminals[j])
                for j in range(batch_size)]

    def contents(self):
        """Stored transitions, oldest first."""
        if self._size < self.capacity:
            order = range(self._size)
        else:
            order = [(self._next + j) % self.capacity for j in range(self.capacity)]
        a = self._arrays
        return [Transition(a.states[i], int(a.actions[i]), float(a.rewards[i]), a.next_states[i],
                           bool(a.next_terminals[i]), a.candidate_states[i],
                           a.candidate_terminals[i]) for i in order]


# ---------------------------------------------------------------- acting


def select_action(weights, state, epsilon, rng, topology=None):
    """Epsilon-greedy; greedy ties go to the lowest action index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    topology = topology or NetworkTopology()
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(topology.output_dim))
    return int(np.argmax(q_values(weights, state, topology)))


# ---------------------------------------------------------- learning steps


def gradient_fit_step(weights, adam, batch, targets, topology=None):
    """Adam step along ``mean_j (y_j - Q_j) grad Q_j``."""
    topology = topology or NetworkTopology()
    _, direction = td_ascent_direction(weights, batch.states, batch.actions, targets, topology)
    return adam_step(adam, weights, direction)


def train_step_rtd_dqn(weights, adam, buffer, target_weights, config, rng):
    topo = config.topology
    batch = buffer.sample_batch(config.batch_size, rng)
    y = robust_targets(batch.rewards, batch.candidate_states, batch.candidate_terminals,
                       target_weights, config.gamma, topo)
    adam, weights = gradient_fit_step(weights, adam, batch, y, topo)
    return weights, adam


def train_step_double_dqn(weights, adam, buffer, target_weights, config, rng):
    topo = config.topology
    batch = buffer.sample_batch(config.batch_size, rng)
    y = double_dqn_targets(batch.rewards, batch.next_states, batch.next_terminals, weights,
                           target_weights, config.gamma, topo)
    adam, weights = gradient_fit_step(weights, adam, batch, y, topo)
    return weights, adam


def train_step_deep_rok(ekf_state, buffer, target_weights, config, rng, check_psd=False):
    """Predict, then one EKF measurement update on a sampled mini-batch."""
    topo = config.topology
    pred = predict(ekf_state)
    batch = buffer.sample_batch(config.batch_size, rng)
    y = robust_targets(batch.rewards, batch.candidate_states, batch.candidate_terminals,
                       target_weights, config.gamma, topo)
    q, grads = q_and_gradient_batch(pred.mean, batch.states, batch.actions, topo)
    return ekf_batch_update(pred, grads, y - q, mode=config.ekf_batch_mode,
                            learning_rate=config.ekf_learning_rate, check_psd=check_psd)


# ------------------------------------------------------------ outer loop


@dataclass
class EpisodeLog:
    episode: int
    cumulative_reward: float
    epsilon: float
    learning_steps: int
    wall_ms: float


@dataclass
class TrainingResult:
    kind: str
    config: TrainConfig
    weights: np.ndarray
    ekf_state: EkfState = None
    log: list = field(default_factory=list)
    learning_steps: int = 0
    # (learning_step, min eigenvalue before flooring, asymmetry after update)
    covariance_health: list = field(default_factory=list)


def run_training(kind, config=None, rng=None, record_wall_time=False):
    """Train one agent from scratch; a pure function of ``(kind, config)``.

    ``rng`` defaults to a generator seeded with ``config.seed``. Wall-clock
    times are logged as 0 unless ``record_wall_time`` is set, so logs stay
    reproducible byte for byte.
    """
    if kind not in AGENT_KINDS:
        raise ValueError(f"unknown agent kind {kind!r}; expected one of {AGENT_KINDS}")
    config = (config or TrainConfig()).validate()
    rng = check_random_state(config.seed if rng is None else rng)
    topo = config.topology
    weights = init_network(topo, rng, config.init_scale, config.init_scheme)
    target = weights.copy()
    result = TrainingResult(kind, config, weights)

    adam = ekf = None
    if kind == "deep_rok":
        ekf = EkfState.from_prior(weights, config.p0_scale, config.pv_scale, config.pn)
    else:
        adam = AdamState.zeros(topo.n_weights, alpha=config.adam_learning_rate)

    robust = kind != "double_dqn"
    nominal_set = UncertaintySet.singleton(config.nominal)
    buffer = ReplayBuffer(config.replay_capacity)
    steps = 0

    for episode in range(config.episodes):
        t0 = time.perf_counter()
        eps = config.epsilon(episode)
        if robust:
            uset = cartpole.sample_uncertainty_set(rng, config.ranges, config.k_candidates,
                                                   config.cross_product, config.nominal)
        state = cartpole.reset(rng)
        total = 0.0
        for _ in range(config.max_episode_steps):
            current = ekf.mean if ekf is not None else weights
            action = select_action(current, state, eps, rng, topo)
            nxt, reward, terminal = cartpole.step_dynamics(state, action, config.nominal)
            if terminal:
                reward = config.failure_reward
            if robust:
                cand, cand_term = cartpole.candidate_next_states(state, action, uset)
            else:
                cand, cand_term = nxt[None, :], np.array([terminal])
            buffer.push(Transition(state, action, reward, nxt, terminal, cand, cand_term),
                        episode)
            total += reward

            if len(buffer) >= config.replay_min:
                if kind == "deep_rok":
                    check = (config.psd_check_interval > 0
                             and steps % config.psd_check_interval == 0)
                    ekf = train_step_deep_rok(ekf, buffer, target, config, rng, check_psd=check)
                    if check:
                        asym = float(np.max(np.abs(ekf.covariance - ekf.covariance.T)))
                        result.covariance_health.append((steps, ekf.last_min_eigenvalue, asym))
                elif kind == "rtd_dqn":
                    weights, adam = train_step_rtd_dqn(weights, adam, buffer, target, config, rng)
                else:
                    weights, adam = train_step_double_dqn(weights, adam, buffer, target, config,
                                                          rng)
                steps += 1
                if steps % config.target_sync_interval == 0:
                    target = (ekf.mean if ekf is not None else weights).copy()

            state = nxt
            if terminal:
                break
        wall = (time.perf_counter() - t0) * 1e3 if record_wall_time else 0.0
        result.log.append(EpisodeLog(episode, total, eps, steps, wall))
        if episode % 50 == 0 or episode == config.episodes - 1:
            logger.info("%s episode %d reward %.0f eps %.3f steps %d", kind, episode, total, eps,
                        steps)

    result.weights = ekf.mean.copy() if ekf is not None else weights
    result.ekf_state = ekf
    result.learning_steps = steps
    return result


def write_training_log(log, path):
    with open(path, "w", newline="") as fh:
        fh.write("episode,cumulative_reward,epsilon,learning_steps,wall_ms\n")
        for row in log:
            fh.write(f"{row.episode},{row.cumulative_reward:.6g},{row.epsilon:.6g},"
                     f"{row.learning_steps},{row.wall_ms:.3f}\n")


# ------------------------------------------------------ estimator wrappers


class _QAgent(BaseEstimator):
    """Shared estimator plumbing.

    ``fit`` trains in the simulator (``X`` and ``y`` are ignored);
    ``decision_function`` returns Q-values and ``predict`` greedy actions
    for an ``(m, 4)`` array of Cart-Pole states.
    """

    _kind = None

    def _config(self):
        base = self.config or TrainConfig()
        overrides = {k: v for k, v in self.get_params(deep=False).items()
                     if k not in ("config", "random_state") and v is not None}
        return replace(base, seed=self.random_state, **overrides)

    def fit(self, X=None, y=None):
        result = run_training(self._kind, self._config())
        self.weights_ = result.weights
        self.training_log_ = result.log
        self.result_ = result
        self.n_features_in_ = 4
        return self

    def decision_function(self, X):
        check_is_fitted(self, "weights_")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        return q_values_batch(self.weights_, X, self.result_.config.topology)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)


class DoubleDQNAgent(_QAgent):
    _kind = "double_dqn"

    def __init__(self, episodes=None, batch_size=None, gamma=None, adam_learning_rate=None,
                 target_sync_interval=None, replay_min=None, config=None, random_state=0):
        self.episodes = episodes
        self.batch_size = batch_size
        self.gamma = gamma
        self.adam_learning_rate = adam_learning_rate
        self.target_sync_interval = target_sync_interval
        self.replay_min = replay_min
        self.config = config
        self.random_state = random_state


class RTDDQNAgent(_QAgent):
    _kind = "rtd_dqn"

    def __init__(self, episodes=None, batch_size=None, gamma=None, adam_learning_rate=None,
                 target_sync_interval=None, replay_min=None, k_candidates=None, config=None,
                 random_state=0):
        self.episodes = episodes
        self.batch_size = batch_size
        self.gamma = gamma
        self.adam_learning_rate = adam_learning_rate
        self.target_sync_interval = target_sync_interval
        self.replay_min = replay_min
        self.k_candidates = k_candidates
        self.config = config
        self.random_state = random_state


class DeepRoKAgent(_QAgent):
    """Robust targets with an EKF posterior over the weights.

    After ``fit``, ``ekf_state_`` holds the posterior mean and covariance.
    """

    _kind = "deep_rok"

    def __init__(self, episodes=None, batch_size=None, gamma=None, ekf_learning_rate=None,
                 target_sync_interval=None, replay_min=None, k_candidates=None, p0_scale=None,
                 pv_scale=None, pn=None, ekf_batch_mode=None, config=None, random_state=0):
        self.episodes = episodes
        self.batch_size = batch_size
        self.gamma = gamma
        self.ekf_learning_rate = ekf_learning_rate
        self.target_sync_interval = target_sync_interval
        self.replay_min = replay_min
        self.k_candidates = k_candidates
        self.p0_scale = p0_scale
        self.pv_scale = pv_scale
        self.pn = pn
        self.ekf_batch_mode = ekf_batch_mode
        self.config = config
        self.random_state = random_state

    def fit(self, X=None, y=None):
        super().fit(X, y)
        self.ekf_state_ = self.result_.ekf_state
        return self


AGENT_CLASSES = {"double_dqn": DoubleDQNAgent, "rtd_dqn": RTDDQNAgent, "deep_rok": DeepRoKAgent}

"""Parameterized Cart-Pole dynamics with finite physics uncertainty sets.

Physics follow the classic CartPole-v0 model (Euler integration, position
updated with the old velocity). ``pole_length`` is the half-length, as in the
gym ``length`` attribute. Only cart mass and pole length vary between
candidate models; the other constants stay at their gym values.
"""

import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ._validation import check_random_state

X_THRESHOLD = 2.4
THETA_THRESHOLD = 12 * 2 * math.pi / 360
MAX_EPISODE_STEPS = 200
SUCCESS_THRESHOLD = 195.0

LEFT, RIGHT = 0, 1


@dataclass(frozen=True)
class CartPoleParams:
    cart_mass: float = 1.5
    pole_length: float = 0.5
    pole_mass: float = 0.1
    gravity: float = 9.8
    force_mag: float = 10.0
    tau: float = 0.02

    def __post_init__(self):
        if not self.cart_mass > 0:
            raise ValueError(f"cart_mass must be > 0, got {self.cart_mass}")
        if not self.pole_length > 0:
            raise ValueError(f"pole_length must be > 0, got {self.pole_length}")
        if not self.pole_mass >= 0:
            raise ValueError(f"pole_mass must be >= 0, got {self.pole_mass}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


NOMINAL_PARAMS = CartPoleParams()


@dataclass(frozen=True)
class ParamRanges:
    pole_length_min: float = 0.2
    pole_length_max: float = 1.4
    cart_mass_min: float = 0.1
    cart_mass_max: float = 7.0

    def __post_init__(self):
        if not 0 < self.pole_length_min <= self.pole_length_max:
            raise ValueError("need 0 < pole_length_min <= pole_length_max")
        if not 0 < self.cart_mass_min <= self.cart_mass_max:
            raise ValueError("need 0 < cart_mass_min <= cart_mass_max")

    def contains(self, params):
        return (self.pole_length_min <= params.pole_length <= self.pole_length_max
                and self.cart_mass_min <= params.cart_mass <= self.cart_mass_max)


@dataclass(frozen=True)
class UncertaintySet:
    candidates: tuple
    ranges: ParamRanges = field(default_factory=ParamRanges)

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.candidates) < 1:
            raise ValueError("an uncertainty set needs at least one candidate")

    def __len__(self):
        return len(self.candidates)

    @classmethod
    def singleton(cls, params=NOMINAL_PARAMS):
        lo_l = hi_l = params.pole_length
        lo_m = hi_m = params.cart_mass
        return cls((params,), ParamRanges(lo_l, hi_l, lo_m, hi_m))


def reset(rng=None):
    """Initial state with every component uniform on ``[-0.05, 0.05]``."""
    rng = check_random_state(rng)
    return rng.uniform(-0.05, 0.05, size=4)


def is_terminal(state):
    x, _, theta, _ = state
    return x < -X_THRESHOLD or x > X_THRESHOLD or theta < -THETA_THRESHOLD or theta > THETA_THRESHOLD


def step_dynamics(state, action, params=NOMINAL_PARAMS):
    """Advance one Euler step of ``tau`` seconds.

    Returns ``(next_state, reward, terminal)``. The reward is 1.0 unless the
    incoming state was already out of bounds. ``terminal`` reports whether
    ``next_state`` violates the cart-position or pole-angle limits.
    """
    x, x_dot, theta, theta_dot = (float(v) for v in state)
    reward = 0.0 if is_terminal((x, x_dot, theta, theta_dot)) else 1.0
    force = params.force_mag if action == RIGHT else -params.force_mag
    total_mass = params.cart_mass + params.pole_mass
    polemass_length = params.pole_mass * params.pole_length
    costheta = math.cos(theta)
    sintheta = math.sin(theta)
    temp = (force + polemass_length * theta_dot * theta_dot * sintheta) / total_mass
    thetaacc = (params.gravity * sintheta - costheta * temp) / (
        params.pole_length * (4.0 / 3.0 - params.pole_mass * costheta * costheta / total_mass))
    xacc = temp - polemass_length * thetaacc * costheta / total_mass
    x = x + params.tau * x_dot
    x_dot = x_dot + params.tau * xacc
    theta = theta + params.tau * theta_dot
    theta_dot = theta_dot + params.tau * thetaacc
    nxt = np.array([x, x_dot, theta, theta_dot])
    return nxt, reward, is_terminal(nxt)


def step_dynamics_batch(states, actions, params=NOMINAL_PARAMS):
    """Vectorized :func:`step_dynamics` over rows of ``states``.

    Results agree with the scalar path to rounding (numpy's vector
    ``sin``/``cos`` may differ from ``math`` in the last ulp).
    """
    states = np.asarray(states, dtype=np.float64)
    x, x_dot, theta, theta_dot = states.T
    force = np.where(np.asarray(actions) == RIGHT, params.force_mag, -params.force_mag)
    total_mass = params.cart_mass + params.pole_mass
    polemass_length = params.pole_mass * params.pole_length
    costheta = np.cos(theta)
    sintheta = np.sin(theta)
    temp = (force + polemass_length * theta_dot * theta_dot * sintheta) / total_mass
    thetaacc = (params.gravity * sintheta - costheta * temp) / (
        params.pole_length * (4.0 / 3.0 - params.pole_mass * costheta * costheta / total_mass))
    xacc = temp - polemass_length * thetaacc * costheta / total_mass
    nxt = np.stack([x + params.tau * x_dot, x_dot + params.tau * xacc,
                    theta + params.tau * theta_dot, theta_dot + params.tau * thetaacc], axis=1)
    terminal = ((np.abs(nxt[:, 0]) > X_THRESHOLD) | (np.abs(nxt[:, 2]) > THETA_THRESHOLD))
    return nxt, terminal


def sample_uncertainty_set(rng, ranges=ParamRanges(), k=5, cross_product=False,
                           base=NOMINAL_PARAMS):
    """Sample ``k`` pole lengths and ``k`` cart masses uniformly from ``ranges``.

    By default the i-th length is paired with the i-th mass (``k`` models);
    with ``cross_product`` every combination is used (``k * k`` models).
    """
    if int(k) < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = check_random_state(rng)
    lengths = rng.uniform(ranges.pole_length_min, ranges.pole_length_max, size=k)
    masses = rng.uniform(ranges.cart_mass_min, ranges.cart_mass_max, size=k)
    if cross_product:
        pairs = product(lengths, masses)
    else:
        pairs = zip(lengths, masses)
    candidates = [CartPoleParams(cart_mass=float(m), pole_length=float(ln),
                                 pole_mass=base.pole_mass, gravity=base.gravity,
                                 force_mag=base.force_mag, tau=base.tau)
                  for ln, m in pairs]
    return UncertaintySet(candidates, ranges)


def candidate_next_states(state, action, uset):
    """One deterministic step under every candidate model, in order.

    Returns ``(next_states, terminals)`` with shapes ``(k, 4)`` and ``(k,)``.
    Each deterministic model is a point-mass transition, so this list is the
    whole support of the transition uncertainty set for ``(state, action)``.
    """
    k = len(uset.candidates)
    nexts = np.empty((k, 4))
    terms = np.empty(k, dtype=bool)
    for i, params in enumerate(uset.candidates):
        nexts[i], _, terms[i] = step_dynamics(state, action, params)
    return nexts, terms

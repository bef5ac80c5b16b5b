"""Post-training evaluation: fixed-physics test episodes and robustness sweeps."""

import csv
import json
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import cartpole
from ._validation import check_random_state
from .cartpole import CartPoleParams
from .nn_core import CARTPOLE_TOPOLOGY, q_values_batch

REPORT_HEADER = ["pole_length", "cart_mass", "mean_reward", "std_reward", "success_rate",
                 "episodes"]
DEFAULT_POLE_LENGTHS = tuple(round(0.2 * i, 1) for i in range(1, 8))
DEFAULT_CART_MASSES = (0.1, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0)


@dataclass
class EvalResult:
    params: CartPoleParams
    mean_reward: float
    std_reward: float
    success_rate: float
    episodes: int
    rewards: np.ndarray = field(default=None, repr=False, compare=False)


@dataclass
class SweepReport:
    grid: list
    agent: str = None
    seed: int = None

    def result_at(self, pole_length, cart_mass):
        for r in self.grid:
            if r.params.pole_length == pole_length and r.params.cart_mass == cart_mass:
                return r
        raise KeyError((pole_length, cart_mass))

    def mean_success(self):
        return float(np.mean([r.success_rate for r in self.grid]))


def rollout_rewards(weights, params, episodes, epsilon, rng, topology=CARTPOLE_TOPOLOGY,
                    max_steps=cartpole.MAX_EPISODE_STEPS):
    """Cumulative reward of ``episodes`` epsilon-greedy episodes, run side by side.

    Every episode draws its start state and, at every step, one uniform and
    one random action from ``rng`` whether or not it is still running, so
    the stream consumed is independent of when episodes finish.
    """
    rng = check_random_state(rng)
    states = rng.uniform(-0.05, 0.05, size=(episodes, 4))
    alive = np.ones(episodes, dtype=bool)
    totals = np.zeros(episodes)
    for _ in range(max_steps):
        explore = rng.random(episodes) < epsilon
        random_actions = rng.integers(topology.output_dim, size=episodes)
        greedy = np.argmax(q_values_batch(weights, states, topology), axis=1)
        actions = np.where(explore, random_actions, greedy)
        nxt, terminal = cartpole.step_dynamics_batch(states, actions, params)
        totals += alive
        states = np.where(alive[:, None], nxt, states)
        alive &= ~terminal
        if not alive.any():
            break
    return totals


def run_test_episodes(weights, params=cartpole.NOMINAL_PARAMS, episodes=500, epsilon=0.1,
                      rng=None, topology=CARTPOLE_TOPOLOGY):
    """Evaluate ``weights`` under fixed physics.

    An episode succeeds when its cumulative reward exceeds 195. The standard
    deviation uses the ``n - 1`` divisor (0 for a single episode).
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    totals = rollout_rewards(weights, params, episodes, epsilon, rng, topology)
    std = float(np.std(totals, ddof=1)) if episodes > 1 else 0.0
    success = int(np.count_nonzero(totals > cartpole.SUCCESS_THRESHOLD))
    return EvalResult(params, float(totals.mean()), std, success / episodes, episodes, totals)


def point_seed(seed, pole_length, cart_mass):
    """Seed sequence keyed on the grid point's values, not its position."""
    words = struct.unpack("<4I", struct.pack("<2d", float(pole_length), float(cart_mass)))
    return np.random.SeedSequence([int(seed), *words])


def _n_threads():
    env = os.environ.get("RKRL_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("RKRL_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def sweep(weights, pole_lengths=DEFAULT_POLE_LENGTHS, cart_masses=DEFAULT_CART_MASSES,
          episodes=500, epsilon=0.1, seed=0, base=cartpole.NOMINAL_PARAMS, agent=None,
          topology=CARTPOLE_TOPOLOGY, n_threads=None):
    """Evaluate on the ``pole_lengths x cart_masses`` grid.

    Each point gets its own generator derived from ``(seed, pole_length,
    cart_mass)``, so results do not depend on axis order or on how many
    threads evaluate the grid.
    """
    pole_lengths = list(pole_lengths)
    cart_masses = list(cart_masses)
    if not pole_lengths or not cart_masses:
        raise ValueError("sweep axes must be non-empty")
    points = [replace(base, pole_length=float(ln), cart_mass=float(m))
              for ln in pole_lengths for m in cart_masses]

    def evaluate(params):
        rng = np.random.default_rng(point_seed(seed, params.pole_length, params.cart_mass))
        return run_test_episodes(weights, params, episodes, epsilon, rng, topology)

    n_threads = n_threads or _n_threads()
    if n_threads == 1:
        grid = [evaluate(p) for p in points]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            grid = list(pool.map(evaluate, points))
    return SweepReport(grid, agent, seed)


def _fmt(x):
    return f"{x:.6g}"


def write_report(report, path):
    """Write the sweep as CSV, rows sorted by ``(pole_length, cart_mass)``."""
    rows = sorted(report.grid, key=lambda r: (r.params.pole_length, r.params.cart_mass))
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for r in rows:
                w.writerow([_fmt(r.params.pole_length), _fmt(r.params.cart_mass),
                            _fmt(r.mean_reward), _fmt(r.std_reward), _fmt(r.success_rate),
                            r.episodes])
    except OSError as exc:
        raise OSError(f"cannot write sweep report to {path}: {exc}") from exc


def read_report(path):
    """Parse a CSV written by :func:`write_report` back into a list of dicts."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPORT_HEADER:
            raise ValueError(f"unexpected header in {path}: {reader.fieldnames}")
        return [{k: (int(v) if k == "episodes" else float(v)) for k, v in row.items()}
                for row in reader]


def write_report_json(report, path):
    rows = sorted(report.grid, key=lambda r: (r.params.pole_length, r.params.cart_mass))
    doc = {
        "agent": report.agent,
        "seed": report.seed,
        "grid": [{"params": asdict(r.params), "mean_reward": r.mean_reward,
                  "std_reward": r.std_reward, "success_rate": r.success_rate,
                  "episodes": r.episodes} for r in rows],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

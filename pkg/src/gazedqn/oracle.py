"""Exact tabular solvers on small gaze-chain MDPs.

These serve as ground truth for the DQN: value iteration computes Q* by
fixed-point iteration, tabular Q-learning approaches the same table via
epsilon-greedy sampling, and both greedy policies must agree.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .env import REWARDS, Action
from .errors import ConfigError


@dataclass(frozen=True)
class TabularMDP:
    """Chain MDP over gaze indices 1..n_states with clamped moves and the
    six-case reward scheme driven by a per-state in-lesion flag."""
    in_lesion: tuple  # length n_states, bools
    gamma: float

    @property
    def n_states(self) -> int:
        return len(self.in_lesion)

    def next_state(self, state: int, action: Action) -> int:
        # states are 0-based here; moves clamp at the chain ends
        if action == Action.ANTEROGRADE:
            return min(state + 1, self.n_states - 1)
        if action == Action.RETROGRADE:
            return max(state - 1, 0)
        return state

    def reward(self, state: int, action: Action) -> float:
        ns = self.next_state(state, action)
        effective = Action(action) if ns != state or action == Action.STILL else Action.STILL
        return REWARDS[(bool(self.in_lesion[state]), effective)]


def value_iteration(mdp: TabularMDP, tol: float = 1e-10,
                    max_sweeps: int = 1_000_000) -> np.ndarray:
    """Q* via sweeps of Q(s,a) = r(s,a) + gamma * max_a' Q(s',a'), iterated
    until the sup-norm change drops below tol."""
    if not 0.0 <= mdp.gamma < 1.0:
        raise ConfigError("value iteration requires 0 <= gamma < 1")
    if tol <= 0:
        raise ConfigError("tol must be positive")
    n = mdp.n_states
    q = np.zeros((n, len(Action)))
    for _ in range(max_sweeps):
        v = q.max(axis=1)
        new_q = np.array([[mdp.reward(s, a) + mdp.gamma * v[mdp.next_state(s, a)]
                           for a in Action] for s in range(n)])
        delta = np.abs(new_q - q).max()
        q = new_q
        if delta < tol:
            return q
    raise ConfigError("value iteration failed to converge")


def q_learning_tabular(mdp: TabularMDP, alpha: float, episodes: int,
                       epsilon, rng: np.random.Generator,
                       episode_length: int | None = None) -> np.ndarray:
    """Eq-3 style tabular Q-learning with epsilon-greedy episodes.

    ``epsilon`` is a constant or a callable episode -> epsilon.  Episodes
    start at the first gaze point and run ``episode_length`` steps (default:
    chain length), matching the DQN's episode protocol.
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigError("alpha must be in (0, 1]")
    n = mdp.n_states
    length = episode_length if episode_length is not None else n
    q = np.zeros((n, len(Action)))
    eps_fn = epsilon if callable(epsilon) else (lambda _ep: epsilon)
    for ep in range(episodes):
        eps = eps_fn(ep)
        s = 0
        for _ in range(length):
            if rng.random() < eps:
                a = Action(int(rng.integers(len(Action))))
            else:
                a = Action(int(np.argmax(q[s])))
            ns = mdp.next_state(s, a)
            r = mdp.reward(s, a)
            q[s, a] += alpha * (r + mdp.gamma * q[ns].max() - q[s, a])
            s = ns
    return q


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Argmax action per state, ties toward the lowest action index."""
    return np.argmax(q, axis=1)


def dump_qtable_csv(q: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["state"] + [a.name for a in Action])
        for s, row in enumerate(q):
            w.writerow([s + 1] + [repr(float(v)) for v in row])

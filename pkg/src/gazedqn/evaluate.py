"""Greedy on-policy rollouts, accuracy/score metrics and the RL-vs-baseline
significance test."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import env, nn
from .env import Action, GazeCase, OverlayConfig, StateRenderer
from .errors import DimensionError


def softmax(q: np.ndarray) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    q = np.asarray(q, dtype=np.float64)
    e = np.exp(q - q.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def episode_score(rewards, n_gaze: int) -> float:
    """Per-episode score: mean reward over the episode's N_gaze steps."""
    rewards = list(rewards)
    if len(rewards) != n_gaze:
        raise DimensionError(f"got {len(rewards)} rewards for an episode of {n_gaze} steps")
    return float(sum(rewards) / n_gaze)


@dataclass
class CaseResult:
    case_id: str
    final_index: int
    in_lesion: bool
    score: float


@dataclass
class EvaluationReport:
    results: list
    accuracy: float
    mean_score: float

    @property
    def true_positives(self) -> int:
        return sum(r.in_lesion for r in self.results)

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case_id", "final_index", "in_lesion", "score"])
            for r in self.results:
                w.writerow([r.case_id, r.final_index, int(r.in_lesion), repr(r.score)])
            w.writerow(["ACCURACY", "", "", repr(self.accuracy)])


def greedy_rollout(params, config: nn.NetworkConfig, case: GazeCase,
                   overlay: OverlayConfig = OverlayConfig()) -> int:
    """Run N_gaze greedy steps from g_1; returns the final gaze index.

    Each step takes argmax over the softmax of the Q forward pass (ties to
    the lowest action index); softmax is monotone so this equals the raw
    argmax, but mirrors the published evaluation procedure.
    """
    renderer = StateRenderer([case], overlay)
    index = 1
    for _ in range(case.n_gaze):
        q = nn.forward(params, config, renderer.render(case.case_id, index))
        action = Action(int(np.argmax(softmax(q))))
        index, _, _ = env.step(case, index, action)
    return index


def _rollout_batch(params, config, cases, overlay) -> list:
    """Greedy rollouts over many cases at once (one forward per step level)."""
    renderer = StateRenderer(cases, overlay)
    indices = {c.case_id: 1 for c in cases}
    rewards = {c.case_id: [] for c in cases}
    max_len = max(c.n_gaze for c in cases)
    batch = np.empty((len(cases), config.input_height, config.input_width,
                      config.input_channels), dtype=config.np_dtype())
    for t in range(max_len):
        active = [c for c in cases if t < c.n_gaze]
        for i, c in enumerate(active):
            renderer.render(c.case_id, indices[c.case_id], out=batch[i])
        q = nn.forward(params, config, batch[:len(active)])
        probs = softmax(q)
        for i, c in enumerate(active):
            action = Action(int(np.argmax(probs[i])))
            new_index, reward, _ = env.step(c, indices[c.case_id], action)
            indices[c.case_id] = new_index
            rewards[c.case_id].append(reward)
    return [CaseResult(c.case_id, indices[c.case_id],
                       env.in_lesion(c, indices[c.case_id]),
                       episode_score(rewards[c.case_id], c.n_gaze))
            for c in cases]


def test_accuracy(params, config: nn.NetworkConfig, cases,
                  overlay: OverlayConfig = OverlayConfig()) -> EvaluationReport:
    """Greedy rollout per case; accuracy = TP / |cases|."""
    cases = list(cases)
    if not cases:
        raise ValueError("need at least one case to evaluate")
    results = _rollout_batch(params, config, cases, overlay)
    tp = sum(r.in_lesion for r in results)
    return EvaluationReport(results=results,
                            accuracy=tp / len(cases),
                            mean_score=float(np.mean([r.score for r in results])))


@dataclass
class ComparisonResult:
    rl_accuracy_mean: float
    sdl_accuracy_mean: float
    p_value: float
    test_name: str = "pooled two-proportion z-test (two-sided)"

    def write_csv(self, path) -> None:
        import csv
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "accuracy", "p_value", "test"])
            w.writerow(["rl", repr(self.rl_accuracy_mean), repr(self.p_value), self.test_name])
            w.writerow(["sdl", repr(self.sdl_accuracy_mean), repr(self.p_value), self.test_name])


def compare_methods(rl_tp: int, sdl_tp: int, n: int) -> ComparisonResult:
    """Two-sided pooled two-proportion z-test on TP/n for the two methods."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not (0 <= rl_tp <= n and 0 <= sdl_tp <= n):
        raise ValueError("true-positive counts must lie in [0, n]")
    p1, p2 = rl_tp / n, sdl_tp / n
    if rl_tp == sdl_tp:
        p_value = 1.0
    else:
        pooled = (rl_tp + sdl_tp) / (2 * n)
        se = math.sqrt(pooled * (1.0 - pooled) * (2.0 / n))
        z = (p1 - p2) / se
        p_value = math.erfc(abs(z) / math.sqrt(2.0))
    return ComparisonResult(rl_accuracy_mean=p1, sdl_accuracy_mean=p2, p_value=p_value)

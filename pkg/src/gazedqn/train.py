"""Interleaved sample-and-learn DQN training.

Per environment step: render, forward, epsilon-greedy action, env step, push
the transition, sample a replay batch, compute bootstrapped targets with the
current online network (no frozen target copy), take one MAE gradient step.
Epsilon decays once per episode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import env, evaluate, nn
from .env import Action, GazeCase, OverlayConfig, StateRenderer
from .errors import DimensionError, NumericError, ValidationError
from .replay import ReplayMemory, Transition


@dataclass(frozen=True)
class Hyperparameters:
    gamma: float = 0.99
    epsilon_start: float = 0.5
    epsilon_decay_per_episode: float = 1e-4
    epsilon_min: float = 1e-4
    learning_rate: float = 1e-4
    n_memory: int = 12_000
    n_batch: int = 64
    episodes: int = 300
    agent_square: int = 11
    overlay_alpha: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.epsilon_min <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon_start <= 1")
        if min(self.n_memory, self.n_batch, self.episodes, self.agent_square) <= 0:
            raise ValueError("counts must be positive")
        if not 0.0 <= self.overlay_alpha <= 1.0:
            raise ValueError("overlay_alpha must be in [0, 1]")


@dataclass
class TrainingLog:
    episodes: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)
    losses: list = field(default_factory=list)       # mean batch loss per episode
    accuracy_episodes: list = field(default_factory=list)  # 10, 20, ...
    train_accuracies: list = field(default_factory=list)
    test_accuracies: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        acc = dict(zip(self.accuracy_episodes,
                       zip(self.train_accuracies, self.test_accuracies)))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "score", "epsilon", "mean_batch_loss",
                        "train_acc", "test_acc"])
            for i, ep in enumerate(self.episodes):
                tr, te = acc.get(ep, ("", ""))
                w.writerow([ep, repr(self.scores[i]), repr(self.epsilons[i]),
                            repr(self.losses[i]),
                            "" if tr == "" else repr(tr),
                            "" if te == "" else repr(te)])


def epsilon_at(episode: int, h: Hyperparameters) -> float:
    """Linear decay clamped at the floor: max(eps_min, start - episode*decay)."""
    return max(h.epsilon_min, h.epsilon_start - episode * h.epsilon_decay_per_episode)


def select_action(qvalues: np.ndarray, epsilon: float,
                  rng: np.random.Generator) -> Action:
    """Epsilon-greedy: uniform random with probability epsilon, else argmax
    (ties broken toward the lowest action index)."""
    qvalues = np.asarray(qvalues)
    if not np.isfinite(qvalues).all():
        raise NumericError("non-finite Q-values in action selection")
    if rng.random() < epsilon:
        return Action(int(rng.integers(len(Action))))
    return Action(int(np.argmax(qvalues)))


def bellman_target(reward: float, gamma: float, next_q: np.ndarray) -> float:
    """Bootstrapped target r + gamma * max_a Q(s', a)."""
    return float(reward + gamma * float(np.max(next_q)))


def batch_loss(targets: np.ndarray, predicted_q_taken: np.ndarray) -> float:
    """Mean absolute error between targets and the taken-action Q estimates."""
    targets = np.asarray(targets, dtype=np.float64)
    preds = np.asarray(predicted_q_taken, dtype=np.float64)
    if targets.shape != preds.shape or targets.ndim != 1 or targets.size == 0:
        raise DimensionError("targets and predictions must be equal-length 1D, n >= 1")
    return float(np.mean(np.abs(targets - preds)))


def default_network_config(case: GazeCase, dtype: str = "float32") -> nn.NetworkConfig:
    h, w = case.image.shape
    return nn.NetworkConfig(input_height=h, input_width=w, output_units=3,
                            output_activation="linear", dtype=dtype)


def train(dataset, h: Hyperparameters, test_set=(),
          config: nn.NetworkConfig | None = None,
          progress=None):
    """Train a DQN over the given cases; returns (params, config, TrainingLog).

    ``test_set`` is only used for the passive every-10-episodes accuracy
    probe; it never influences training.
    """
    h.validate()
    dataset = list(dataset)
    test_set = list(test_set)
    if not dataset:
        raise ValidationError("training dataset is empty")
    for case in dataset + test_set:
        case.validate()
    if config is None:
        config = default_network_config(dataset[0])
    config.validate()

    overlay = OverlayConfig(alpha=h.overlay_alpha, square_size=h.agent_square)
    renderer = StateRenderer(dataset, overlay)
    rng = np.random.default_rng(h.seed)
    params = nn.glorot_init(config, h.seed)
    optimizer = nn.Adam(h.learning_rate)
    memory = ReplayMemory(h.n_memory)
    log = TrainingLog()
    dtype = config.np_dtype()
    shape = (config.input_height, config.input_width, config.input_channels)
    s_batch = np.empty((h.n_batch,) + shape, dtype=dtype)
    ns_batch = np.empty((h.n_batch,) + shape, dtype=dtype)
    final_in_lesion = []  # per episode, for the trailing-10 train accuracy

    for episode in range(h.episodes):
        eps = epsilon_at(episode, h)
        case = dataset[int(rng.integers(len(dataset)))]
        index = 1
        rewards = []
        losses = []
        for _ in range(case.n_gaze):
            state = renderer.render(case.case_id, index)
            q = nn.forward(params, config, state)
            action = select_action(q, eps, rng)
            new_index, reward, _ = env.step(case, index, action)
            memory.push(Transition((case.case_id, index), action, reward,
                                   (case.case_id, new_index)))
            rewards.append(reward)
            index = new_index

            batch = memory.sample_batch(h.n_batch, rng)
            for i, t in enumerate(batch):
                renderer.render(t.state[0], t.state[1], out=s_batch[i])
                renderer.render(t.next_state[0], t.next_state[1], out=ns_batch[i])
            next_q = nn.forward(params, config, ns_batch)
            targets = np.array([bellman_target(t.reward, h.gamma, next_q[i])
                                for i, t in enumerate(batch)])
            q_pred, cache = nn.forward(params, config, s_batch, return_cache=True)
            taken = np.array([int(t.action) for t in batch])
            preds = q_pred[np.arange(h.n_batch), taken]
            loss = batch_loss(targets, preds)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite batch loss at episode {episode}, step {len(rewards)}")
            losses.append(loss)
            # d(mean|t - p|)/dp = sign(p - t)/n at the taken action, 0 elsewhere
            dout = np.zeros((h.n_batch, config.output_units), dtype=dtype)
            dout[np.arange(h.n_batch), taken] = np.sign(preds - targets) / h.n_batch
            grads = nn.backward(params, config, cache, dout)
            optimizer.step(params, grads)

        final_in_lesion.append(env.in_lesion(case, index))
        log.episodes.append(episode + 1)
        log.scores.append(evaluate.episode_score(rewards, case.n_gaze))
        log.epsilons.append(eps)
        log.losses.append(float(np.mean(losses)))

        if (episode + 1) % 10 == 0:
            train_acc = float(np.mean(final_in_lesion[-10:]))
            if test_set:
                report = evaluate.test_accuracy(params, config, test_set, overlay)
                test_acc = report.accuracy
            else:
                test_acc = float("nan")
            log.accuracy_episodes.append(episode + 1)
            log.train_accuracies.append(train_acc)
            log.test_accuracies.append(test_acc)
            if progress is not None:
                progress(episode + 1, log)

    return params, config, log

"""Supervised keypoint-regression baseline.

Same conv trunk as the DQN but with a 2-output sigmoid head regressing the
lesion bounding-box center (normalized to the unit square).  Inputs are the
plain grayscale slices replicated to 3 channels, with no gaze or agent
overlays: supervised detection has no agent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .env import GazeCase
from .errors import NumericError, ValidationError


def bbox_center(mask: np.ndarray) -> tuple[float, float]:
    """Center ((x_min+x_max)/2, (y_min+y_max)/2) of the mask's bounding box."""
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise ValidationError("empty mask has no bounding box")
    return ((float(xs.min()) + float(xs.max())) / 2.0,
            (float(ys.min()) + float(ys.max())) / 2.0)


def keypoint_target(case: GazeCase) -> np.ndarray:
    """Normalized (u, v) in [0,1]^2: bbox center over (width, height)."""
    h, w = case.image.shape
    cx, cy = bbox_center(case.lesion_mask)
    return np.array([cx / w, cy / h])


def _plain_input(case: GazeCase) -> np.ndarray:
    return np.repeat(case.image.astype(np.float32)[:, :, None], 3, axis=2)


def keypoint_network_config(case: GazeCase, dtype: str = "float32") -> nn.NetworkConfig:
    h, w = case.image.shape
    return nn.NetworkConfig(input_height=h, input_width=w, output_units=2,
                            output_activation="sigmoid", dtype=dtype)


@dataclass
class SupervisedLog:
    epochs: list = field(default_factory=list)
    train_losses: list = field(default_factory=list)
    test_losses: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "test_loss"])
            for e, tr, te in zip(self.epochs, self.train_losses, self.test_losses):
                w.writerow([e, repr(tr), repr(te)])


def divergence_epoch(log: SupervisedLog, factor: float = 1.1) -> int | None:
    """First epoch where the loss curves separate, marking overfitting: test
    loss exceeds train loss by the given factor and sits above its own
    running minimum while train loss is still decreasing; None if the curves
    never separate."""
    best_test = float("inf")
    for i, e in enumerate(log.epochs):
        test, train = log.test_losses[i], log.train_losses[i]
        if (i > 0 and test > factor * train and test > best_test
                and train <= log.train_losses[i - 1]):
            return e
        best_test = min(best_test, test)
    return None


def train_supervised(train_cases, test_cases=(), epochs: int = 300,
                     learning_rate: float = 1e-4, n_batch: int = 64,
                     seed: int = 0):
    """Minimize MAE between sigmoid outputs and bbox-center targets.

    Returns (params, config, SupervisedLog); the log carries per-epoch train
    loss and test ("validation") loss.
    """
    train_cases = list(train_cases)
    test_cases = list(test_cases)
    if not train_cases:
        raise ValidationError("training set is empty")
    config = keypoint_network_config(train_cases[0])
    config.validate()
    dtype = config.np_dtype()

    x_train = np.stack([_plain_input(c) for c in train_cases]).astype(dtype)
    y_train = np.stack([keypoint_target(c) for c in train_cases]).astype(dtype)
    x_test = (np.stack([_plain_input(c) for c in test_cases]).astype(dtype)
              if test_cases else None)
    y_test = (np.stack([keypoint_target(c) for c in test_cases]).astype(dtype)
              if test_cases else None)

    rng = np.random.default_rng(seed)
    params = nn.glorot_init(config, seed)
    optimizer = nn.Adam(learning_rate)
    log = SupervisedLog()
    n = len(train_cases)

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        epoch_abs_err = 0.0
        for start in range(0, n, n_batch):
            idx = order[start:start + n_batch]
            preds, cache = nn.forward(params, config, x_train[idx], return_cache=True)
            diff = preds - y_train[idx]
            loss = float(np.mean(np.abs(diff)))
            if not np.isfinite(loss):
                raise NumericError(f"non-finite supervised loss at epoch {epoch}")
            epoch_abs_err += float(np.abs(diff).sum())
            dout = (np.sign(diff) / diff.size).astype(dtype)
            grads = nn.backward(params, config, cache, dout)
            optimizer.step(params, grads)
        log.epochs.append(epoch)
        log.train_losses.append(epoch_abs_err / (n * config.output_units))
        if x_test is not None:
            test_preds = nn.forward(params, config, x_test)
            log.test_losses.append(float(np.mean(np.abs(test_preds - y_test))))
        else:
            log.test_losses.append(float("nan"))
    return params, config, log


def predict_keypoint(params, config: nn.NetworkConfig, case: GazeCase):
    """Predicted pixel (x, y) plus lesion-membership flag."""
    h, w = case.image.shape
    u, v = nn.forward(params, config, _plain_input(case))
    x = int(np.clip(round(float(u) * w), 0, w - 1))
    y = int(np.clip(round(float(v) * h), 0, h - 1))
    return (x, y), bool(case.lesion_mask[y, x])


def keypoint_accuracy(params, config: nn.NetworkConfig, cases) -> float:
    cases = list(cases)
    hits = sum(predict_keypoint(params, config, c)[1] for c in cases)
    return hits / len(cases)

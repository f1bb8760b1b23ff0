"""Standalone SVG figures generated from the CSV outputs."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_training_log(csv_path, svg_path) -> None:
    rows = _read_csv(csv_path)
    episodes = [int(r["episode"]) for r in rows]
    scores = [float(r["score"]) for r in rows]
    acc_eps = [int(r["episode"]) for r in rows if r["train_acc"]]
    train_acc = [float(r["train_acc"]) for r in rows if r["train_acc"]]
    test_acc = [float(r["test_acc"]) for r in rows if r["test_acc"]]

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
    ax1.plot(episodes, scores, lw=0.8)
    ax1.set_ylabel("episode score (mean reward)")
    ax1.set_title("DQN training")
    ax2.plot(acc_eps, train_acc, "o-", label="train accuracy", ms=3)
    if test_acc:
        ax2.plot(acc_eps, test_acc, "s-", label="test accuracy", ms=3)
    ax2.set_xlabel("episode")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(-0.05, 1.05)
    ax2.legend()
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)


def plot_sdl_loss(csv_path, svg_path, divergence: int | None = None) -> None:
    rows = _read_csv(csv_path)
    epochs = [int(r["epoch"]) for r in rows]
    train = [float(r["train_loss"]) for r in rows]
    test = [float(r["test_loss"]) for r in rows]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, train, label="train loss")
    ax.plot(epochs, test, label="test loss")
    if divergence is not None:
        ax.axvline(divergence, color="gray", ls="--", lw=0.8,
                   label=f"divergence (epoch {divergence})")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean absolute error")
    ax.set_title("Supervised keypoint baseline")
    ax.legend()
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)


def plot_comparison(csv_path, svg_path) -> None:
    rows = _read_csv(csv_path)
    methods = [r["method"] for r in rows]
    accs = [float(r["accuracy"]) for r in rows]
    p_value = float(rows[0]["p_value"])

    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(methods, accs, color=["tab:blue", "tab:orange"])
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    ax.set_title(f"RL vs supervised baseline (p = {p_value:.3g})")
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)

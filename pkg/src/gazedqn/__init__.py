"""Deep Q-learning lesion localization along radiologist gaze plots."""

from . import baseline, data, env, evaluate, nn, oracle, replay, train

__all__ = ["baseline", "data", "env", "evaluate", "nn", "oracle", "replay", "train"]
__version__ = "0.1.0"

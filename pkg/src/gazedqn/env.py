"""The gaze-plot MDP: cases, actions, rewards, dynamics and state rendering.

The agent lives on a 1D chain of gaze points g_1..g_N over a 2D grayscale
image.  States are rendered as RGB composites (red gaze points, blue agent
square, both alpha-blended) that the networks consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import StateError, ValidationError


class Action(IntEnum):
    """Index order fixes the Q-vector layout and argmax tie-breaking."""
    ANTEROGRADE = 0   # toward g_N
    STILL = 1
    RETROGRADE = 2    # toward g_1


# (in_lesion, effective action) -> reward
REWARDS = {
    (True, Action.STILL): 2.0,
    (False, Action.STILL): -4.0,
    (True, Action.RETROGRADE): 0.5,
    (False, Action.RETROGRADE): -1.5,
    (True, Action.ANTEROGRADE): 0.5,
    (False, Action.ANTEROGRADE): -0.5,
}

REWARD_MIN = min(REWARDS.values())
REWARD_MAX = max(REWARDS.values())


@dataclass(frozen=True)
class OverlayConfig:
    alpha: float = 0.5
    square_size: int = 11  # odd; 11x11 agent square


@dataclass(frozen=True)
class GazeCase:
    """One training/testing unit: image, lesion mask and ordered gaze plot.

    ``gaze_plot`` rows are (x, y) = (column, row), 0-based integer pixels.
    """
    case_id: str
    image: np.ndarray        # HxW float in [0, 1]
    lesion_mask: np.ndarray  # HxW bool
    gaze_plot: np.ndarray    # Nx2 int

    @property
    def n_gaze(self) -> int:
        return len(self.gaze_plot)

    def validate(self, strict: bool = True) -> None:
        h, w = self.image.shape
        if self.lesion_mask.shape != (h, w):
            raise ValidationError(f"{self.case_id}: mask shape {self.lesion_mask.shape} "
                                  f"!= image shape {(h, w)}")
        if not self.lesion_mask.any():
            raise ValidationError(f"{self.case_id}: empty lesion mask")
        if self.image.min() < 0 or self.image.max() > 1:
            raise ValidationError(f"{self.case_id}: image intensities outside [0, 1]")
        if self.gaze_plot.ndim != 2 or self.gaze_plot.shape[1] != 2:
            raise ValidationError(f"{self.case_id}: gaze plot must be Nx2")
        if self.n_gaze < 2:
            raise ValidationError(f"{self.case_id}: need at least 2 gaze points")
        x, y = self.gaze_plot[:, 0], self.gaze_plot[:, 1]
        if (x < 0).any() or (x >= w).any() or (y < 0).any() or (y >= h).any():
            raise ValidationError(f"{self.case_id}: gaze point out of image bounds")
        if strict and not self.lesion_mask[y, x].any():
            raise ValidationError(f"{self.case_id}: no gaze point inside the lesion")


def episode_length(case: GazeCase) -> int:
    """An episode on a case runs exactly N_gaze steps."""
    return case.n_gaze


def _check_index(case: GazeCase, index: int) -> None:
    if not 1 <= index <= case.n_gaze:
        raise StateError(f"gaze index {index} outside [1, {case.n_gaze}]")


def in_lesion(case: GazeCase, index: int) -> bool:
    """Lesion membership of the gaze point itself (not the display square)."""
    _check_index(case, index)
    x, y = case.gaze_plot[index - 1]
    return bool(case.lesion_mask[y, x])


def _blend(pixels: np.ndarray, where: np.ndarray, color, alpha: float) -> None:
    # pixels: HxWx3, where: HxW bool; in-place over = alpha*color + (1-alpha)*under
    for ch in range(3):
        plane = pixels[:, :, ch]
        plane[where] = (1.0 - alpha) * plane[where] + alpha * color[ch]


def _gaze_mask(case: GazeCase) -> np.ndarray:
    m = np.zeros(case.image.shape, dtype=bool)
    m[case.gaze_plot[:, 1], case.gaze_plot[:, 0]] = True
    return m


def _square_bounds(case: GazeCase, index: int, size: int):
    x, y = case.gaze_plot[index - 1]
    half = size // 2
    h, w = case.image.shape
    return (max(0, y - half), min(h, y + half + 1),
            max(0, x - half), min(w, x + half + 1))


def render_base(case: GazeCase, overlay: OverlayConfig = OverlayConfig()) -> np.ndarray:
    """Grayscale replicated to RGB with the red gaze points already blended.

    Each gaze pixel is blended once, even if several gaze points share it
    (fixations), so rendering stays a pure function of the case.
    """
    pixels = np.repeat(case.image.astype(np.float32)[:, :, None], 3, axis=2)
    _blend(pixels, _gaze_mask(case), (1.0, 0.0, 0.0), overlay.alpha)
    return pixels


def render_state(case: GazeCase, index: int,
                 overlay: OverlayConfig = OverlayConfig()) -> np.ndarray:
    """HxWx3 composite: gray base, red gaze points, blue agent square on top.

    The agent square is drawn last so it wins where it covers gaze points; it
    is clipped at the image borders.  Values stay in [0, 1].
    """
    _check_index(case, index)
    pixels = render_base(case, overlay)
    y0, y1, x0, x1 = _square_bounds(case, index, overlay.square_size)
    square = np.zeros(case.image.shape, dtype=bool)
    square[y0:y1, x0:x1] = True
    _blend(pixels, square, (0.0, 0.0, 1.0), overlay.alpha)
    return pixels


class StateRenderer:
    """Render cache: keeps the per-case base composite so that rendering a
    state only costs one copy plus the agent-square blend.  Bit-identical to
    ``render_state``."""

    def __init__(self, cases, overlay: OverlayConfig = OverlayConfig()):
        self.overlay = overlay
        self.cases = {c.case_id: c for c in cases}
        self._base: dict[str, np.ndarray] = {}

    def render(self, case_id: str, index: int, out: np.ndarray | None = None) -> np.ndarray:
        case = self.cases[case_id]
        _check_index(case, index)
        base = self._base.get(case_id)
        if base is None:
            base = self._base[case_id] = render_base(case, self.overlay)
        if out is None:
            out = base.copy()
        else:
            out[...] = base
        y0, y1, x0, x1 = _square_bounds(case, index, self.overlay.square_size)
        a = self.overlay.alpha
        out[y0:y1, x0:x1, 0] *= (1.0 - a)
        out[y0:y1, x0:x1, 1] *= (1.0 - a)
        out[y0:y1, x0:x1, 2] = (1.0 - a) * out[y0:y1, x0:x1, 2] + a
        return out


def step(case: GazeCase, index: int, action: Action) -> tuple[int, float, Action]:
    """One environment transition.

    Moves are clamped to [1, N_gaze]; a clamped move degenerates to STILL and
    the reward is that of the effective action, evaluated at the state where
    the action is taken.
    """
    _check_index(case, index)
    action = Action(action)
    if action == Action.ANTEROGRADE:
        new_index = min(index + 1, case.n_gaze)
    elif action == Action.RETROGRADE:
        new_index = max(index - 1, 1)
    else:
        new_index = index
    effective = action if new_index != index or action == Action.STILL else Action.STILL
    reward = REWARDS[(in_lesion(case, index), effective)]
    return new_index, reward, effective

"""Synthetic phantom cases, on-disk ingestion and the 70/30 split.

A case is an 8-bit grayscale image (smooth background, a brighter elliptical
lesion, plus lesion-like distractor blobs), a binary lesion mask and a gaze
plot simulated as a search-then-fixate random walk: wander, approach the
lesion, linger inside it, at most a short tail afterwards. The distractors
make the image alone ambiguous about which blob is annotated; the gaze plot
carries the disambiguating information, standing in for recorded radiologist
gaze.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .env import GazeCase
from .errors import ConfigError, ValidationError


@dataclass(frozen=True)
class SynthConfig:
    height: int = 128
    width: int = 128
    lesion_axis_min: float = 10.0
    lesion_axis_max: float = 20.0
    lesion_intensity: float = 0.4
    background_min: float = 0.2
    background_max: float = 0.45
    noise_sigma: float = 0.02
    n_gaze: int = 40
    step_min: int = 1
    step_max: int = 8
    lesion_visits: int = 8  # guaranteed gaze points inside the lesion (>= 1)
    n_distractors: int = 3  # lesion-like blobs outside the mask
    tail_max: int = 0       # max wandering points after the lesion fixation

    def validate(self) -> None:
        if min(self.height, self.width) <= 0:
            raise ConfigError("image dimensions must be positive")
        if not 0 < self.lesion_axis_min <= self.lesion_axis_max:
            raise ConfigError("lesion axis range invalid")
        if 2 * self.lesion_axis_max + 2 >= min(self.height, self.width):
            raise ConfigError("lesion does not fit inside the image")
        if self.n_gaze < 2:
            raise ConfigError("need at least 2 gaze points")
        if not 1 <= self.step_min <= self.step_max:
            raise ConfigError("step range invalid")
        if self.lesion_visits < 1:
            raise ConfigError("must guarantee at least one lesion visit")
        if self.n_distractors < 0 or self.tail_max < 0:
            raise ConfigError("n_distractors and tail_max must be non-negative")
        if self.lesion_visits + self.tail_max >= self.n_gaze:
            raise ConfigError("fixation plus tail must leave room for the approach")
        if not 0.0 <= self.background_min <= self.background_max <= 1.0:
            raise ConfigError("background range must lie in [0, 1]")


def _quantize(image: np.ndarray) -> np.ndarray:
    """Snap to 8-bit levels so PNG round-trips are exact."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def _smooth_background(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    coarse = rng.uniform(cfg.background_min, cfg.background_max, size=(8, 8))
    zoom = (cfg.height / 8, cfg.width / 8)
    bg = ndimage.zoom(coarse, zoom, order=3, mode="nearest", grid_mode=True)
    bg += rng.normal(0.0, cfg.noise_sigma, size=bg.shape)
    return bg


def _ellipse_mask(cfg: SynthConfig, rng: np.random.Generator,
                  avoid: np.ndarray | None = None,
                  attempts: int = 50) -> np.ndarray:
    """Random rotated ellipse fully inside the image; when ``avoid`` is given
    the ellipse is resampled until it does not touch that mask."""
    yy, xx = np.mgrid[0:cfg.height, 0:cfg.width]
    for _ in range(attempts):
        a = rng.uniform(cfg.lesion_axis_min, cfg.lesion_axis_max)
        b = rng.uniform(cfg.lesion_axis_min, cfg.lesion_axis_max)
        theta = rng.uniform(0.0, math.pi)
        margin = max(a, b) + 1.0
        cx = rng.uniform(margin, cfg.width - 1 - margin)
        cy = rng.uniform(margin, cfg.height - 1 - margin)
        dx, dy = xx - cx, yy - cy
        u = dx * math.cos(theta) + dy * math.sin(theta)
        v = -dx * math.sin(theta) + dy * math.cos(theta)
        mask = (u / a) ** 2 + (v / b) ** 2 <= 1.0
        if avoid is None or not (mask & avoid).any():
            return mask
    raise ValidationError("could not place a non-overlapping ellipse")


def _clip_point(x: float, y: float, cfg: SynthConfig) -> tuple[int, int]:
    return (int(np.clip(round(x), 0, cfg.width - 1)),
            int(np.clip(round(y), 0, cfg.height - 1)))


def _random_step(x, y, cfg, rng):
    angle = rng.uniform(0.0, 2.0 * math.pi)
    length = rng.uniform(cfg.step_min, cfg.step_max)
    return _clip_point(x + length * math.cos(angle), y + length * math.sin(angle), cfg)


def _gaze_walk(cfg: SynthConfig, mask: np.ndarray, rng: np.random.Generator,
               avoid: np.ndarray | None = None) -> np.ndarray:
    """Search-then-fixate random walk.

    The walk wanders, steers to the lesion around a planned arrival point
    near the end of the plot, fixates inside the lesion until at most
    ``tail_max`` points remain, then wanders off (no tail by default: a
    recording stops once the reader settles on the lesion). Non-lesion
    points precede the fixation, so moving anterograde from the first point
    reaches the lesion.

    ``avoid`` marks pixels the wander keeps away from (the lesion and any
    distractor blobs plus a clearance margin): a searching gaze skips over
    homogeneous regions and lands between salient spots, so only the
    fixation block sits on a blob.
    """
    if avoid is None:
        avoid = mask
    # fixate in the lesion interior so the display square drawn around each
    # fixation point sits fully on lesion pixels
    interior = ndimage.binary_erosion(mask, structure=np.ones((11, 11), dtype=bool))
    if not interior.any():
        interior = mask
    ys, xs = np.nonzero(interior)
    cx, cy = float(xs.mean()), float(ys.mean())
    radius = math.sqrt(interior.sum() / math.pi)  # aim for the interior edge
    x = int(rng.integers(cfg.width))
    y = int(rng.integers(cfg.height))
    while avoid[y, x]:
        x = int(rng.integers(cfg.width))
        y = int(rng.integers(cfg.height))
    tail = int(rng.integers(0, cfg.tail_max + 1))
    latest = cfg.n_gaze - cfg.lesion_visits - tail
    earliest = min(latest, max(2, latest - 4))
    arrival = int(rng.integers(earliest, latest + 1))
    fixating = False
    points = [(x, y)]
    while len(points) < cfg.n_gaze:
        d = max(0.0, math.hypot(cx - x, cy - y) - radius)
        approach = int(math.ceil(d / cfg.step_max)) + 1
        # wander while there is slack; steer only once the remaining budget
        # barely covers the approach, so arrival lands near the planned index
        if not fixating and len(points) + approach >= arrival:
            fixating = True
        if fixating and len(points) >= cfg.n_gaze - tail:
            fixating = False  # tail: wander off the lesion
        if fixating and interior[y, x]:
            # step that stays deep inside the lesion, spreading the fixation
            # cluster across it; repeat the point if none found
            nxt = (x, y)
            for _ in range(8):
                angle = rng.uniform(0.0, 2.0 * math.pi)
                length = rng.uniform(cfg.step_min, cfg.step_max)
                cand = _clip_point(x + length * math.cos(angle),
                                   y + length * math.sin(angle), cfg)
                if interior[cand[1], cand[0]]:
                    nxt = cand
                    break
            x, y = nxt
        elif fixating:
            # steer toward the lesion centroid, spreading the edge distance
            # over the steps left so arrival lands on schedule
            steps_left = max(1, arrival - len(points))
            step = min(cfg.step_max, max(cfg.step_min, d / steps_left))
            center_d = math.hypot(cx - x, cy - y)
            if center_d > 0:
                x, y = _clip_point(x + step * (cx - x) / center_d,
                                   y + step * (cy - y) / center_d, cfg)
        else:
            nxt = _random_step(x, y, cfg, rng)
            for _ in range(8):
                if not avoid[nxt[1], nxt[0]]:
                    break
                nxt = _random_step(x, y, cfg, rng)
            x, y = nxt
        points.append((x, y))
    gaze = np.array(points[:cfg.n_gaze], dtype=np.int64)
    if int(mask[gaze[:, 1], gaze[:, 0]].sum()) < cfg.lesion_visits:
        raise ValidationError("gaze walk failed to fixate the lesion long enough")
    return gaze


def _gaze_walk_retry(cfg: SynthConfig, mask: np.ndarray, rng: np.random.Generator,
                     avoid: np.ndarray | None = None,
                     attempts: int = 100) -> np.ndarray:
    # short plots may miss the lesion from a bad start; resample the walk
    for _ in range(attempts - 1):
        try:
            return _gaze_walk(cfg, mask, rng, avoid)
        except ValidationError:
            continue
    return _gaze_walk(cfg, mask, rng, avoid)


def generate_case(cfg: SynthConfig, rng: np.random.Generator,
                  case_id: str = "case000") -> GazeCase:
    cfg.validate()
    mask = _ellipse_mask(cfg, rng)
    image = _smooth_background(cfg, rng)
    image[mask] += cfg.lesion_intensity
    # distractors: blobs with the lesion's appearance but outside its mask,
    # so the image alone cannot identify which blob the annotation marks
    occupied = mask.copy()
    for _ in range(cfg.n_distractors):
        try:
            blob = _ellipse_mask(cfg, rng, avoid=occupied)
        except ValidationError:
            break  # crowded image: settle for fewer distractors
        image[blob] += cfg.lesion_intensity
        occupied |= blob
    image = _quantize(image)
    # wander clearance: keep searching gaze (and the display square drawn
    # around it) off every blob, so blob pixels under the square appear only
    # during the lesion fixation
    clearance = ndimage.binary_dilation(occupied, structure=np.ones((11, 11), dtype=bool))
    gaze = _gaze_walk_retry(cfg, mask, rng, avoid=clearance)
    case = GazeCase(case_id=case_id, image=image, lesion_mask=mask, gaze_plot=gaze)
    case.validate()
    return case


def save_case(case: GazeCase, directory) -> dict:
    """Write image/mask PNGs and the gaze CSV; returns the manifest entry."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    image_path = directory / f"{case.case_id}_image.png"
    mask_path = directory / f"{case.case_id}_mask.png"
    gaze_path = directory / f"{case.case_id}_gaze.csv"
    Image.fromarray(np.round(case.image * 255.0).astype(np.uint8)).save(image_path)
    Image.fromarray((case.lesion_mask * 255).astype(np.uint8)).save(mask_path)
    with open(gaze_path, "w") as fh:
        for x, y in case.gaze_plot:
            fh.write(f"{x},{y}\n")
    return {"case_id": case.case_id, "image": image_path.name,
            "mask": mask_path.name, "gaze": gaze_path.name}


def load_case(image_path, mask_path, gaze_path, case_id: str | None = None,
              strict: bool = True) -> GazeCase:
    """Load and validate one case: image normalized to [0,1], mask thresholded
    at 0.5, gaze CSV rows in temporal order."""
    image_path = Path(image_path)
    image = np.asarray(Image.open(image_path).convert("L"), dtype=np.float32) / 255.0
    mask_gray = np.asarray(Image.open(mask_path).convert("L"), dtype=np.float32) / 255.0
    if mask_gray.shape != image.shape:
        raise ValidationError(f"image {image.shape} vs mask {mask_gray.shape} dimension mismatch")
    mask = mask_gray >= 0.5
    rows = []
    with open(gaze_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            x_str, y_str = line.split(",")
            rows.append((int(x_str), int(y_str)))
    case = GazeCase(case_id=case_id or image_path.stem.replace("_image", ""),
                    image=image, lesion_mask=mask,
                    gaze_plot=np.array(rows, dtype=np.int64))
    case.validate(strict=strict)
    return case


def generate_dataset(n: int, cfg: SynthConfig, seed: int, out_dir) -> list:
    """Generate n cases, write them plus manifest.json; returns the cases."""
    if n <= 0:
        raise ConfigError("n must be positive")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    entries = []
    cases = []
    for i in range(n):
        case = generate_case(cfg, rng, case_id=f"case{i:03d}")
        entries.append(save_case(case, out_dir))
        cases.append(case)
    manifest = {"seed": seed, "config": asdict(cfg), "cases": entries}
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return cases


def load_dataset(directory, strict: bool = True) -> list:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"no manifest.json in {directory}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    return [load_case(directory / e["image"], directory / e["mask"],
                      directory / e["gaze"], case_id=e["case_id"], strict=strict)
            for e in manifest["cases"]]


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple
    test: tuple
    seed: int


def split_dataset(cases, train_n: int = 70, test_n: int = 30,
                  seed: int = 0) -> DatasetSplit:
    """Deterministic shuffle by seed; first train_n cases train, next test_n test."""
    cases = list(cases)
    if len(cases) < train_n + test_n:
        raise ValidationError(f"need {train_n + test_n} cases, got {len(cases)}")
    order = np.random.default_rng(seed).permutation(len(cases))
    train = tuple(cases[i] for i in order[:train_n])
    test = tuple(cases[i] for i in order[train_n:train_n + test_n])
    return DatasetSplit(train=train, test=test, seed=seed)

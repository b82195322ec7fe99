"""Labels, training-sample generation, dataset splits and synthetic eyes."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import GrayImage, extract_window
from .nn import TrainingSample

COARSE_WINDOW = 24
FINE_WINDOW = 89
COARSE_VALID_RADIUS = 1
COARSE_INVALID_RADII = (2, 3, 4, 5)
FINE_INVALID_DISTANCE = 5


class LabelError(ValueError):
    pass


class BorderError(ValueError):
    pass


@dataclass(frozen=True)
class PupilLabel:
    image_id: str
    x: float
    y: float


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


# -- labels -----------------------------------------------------------------

def _bounds_for(bounds, image_id):
    if bounds is None:
        return None
    if isinstance(bounds, Mapping):
        return bounds.get(image_id)
    return bounds


def parse_labels(text: str, bounds=None) -> list[PupilLabel]:
    """Parse ``image_id,x,y`` lines.

    ``bounds`` is an optional ``(width, height)`` applied to every label, or a
    mapping from image id to ``(width, height)``.
    """
    labels = []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if lineno == 1 and parts == ["image_id", "x", "y"]:
            continue
        if len(parts) != 3 or not parts[0]:
            raise LabelError(f"line {lineno}: expected 'image_id,x,y', got {line!r}")
        try:
            x, y = float(parts[1]), float(parts[2])
        except ValueError:
            raise LabelError(f"line {lineno}: coordinates are not numbers: {line!r}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise LabelError(f"line {lineno}: non-finite coordinate")
        image_id = parts[0]
        if image_id in seen:
            raise LabelError(f"line {lineno}: duplicate image_id {image_id!r}")
        seen.add(image_id)
        size = _bounds_for(bounds, image_id)
        if x < 0 or y < 0 or (size is not None and (x >= size[0] or y >= size[1])):
            where = f" {size[0]}x{size[1]}" if size is not None else ""
            raise LabelError(f"line {lineno}: ({x}, {y}) lies outside the{where} image")
        labels.append(PupilLabel(image_id, x, y))
    return labels


def load_labels(source, bounds=None) -> list[PupilLabel]:
    if hasattr(source, "read"):
        return parse_labels(source.read(), bounds)
    with open(source, encoding="utf-8") as fh:
        return parse_labels(fh.read(), bounds)


def format_labels(labels: Iterable[PupilLabel]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["image_id", "x", "y"])
    for lab in labels:
        writer.writerow([lab.image_id, repr(float(lab.x)), repr(float(lab.y))])
    return out.getvalue()


def save_labels(labels: Iterable[PupilLabel], destination) -> None:
    with open(destination, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_labels(labels))


# -- training samples -------------------------------------------------------

def coarse_offsets() -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Window offsets (dx, dy) around the anchor: 9 valid and 32 invalid.

    Valid offsets fill the 3x3 neighbourhood. Invalid ones lie on the eight
    compass directions at Chebyshev radius 2..5.
    """
    valid = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    invalid = []
    for r in COARSE_INVALID_RADII:
        for k in range(8):
            theta = k * math.pi / 4
            c, s = math.cos(theta), math.sin(theta)
            scale = r / max(abs(c), abs(s))
            invalid.append((round_half_up(c * scale), round_half_up(s * scale)))
    return valid, invalid


def fine_offsets() -> list[tuple[int, int]]:
    out = []
    for k in range(8):
        theta = k * math.pi / 4
        out.append((round_half_up(FINE_INVALID_DISTANCE * math.cos(theta)),
                    round_half_up(FINE_INVALID_DISTANCE * math.sin(theta))))
    return out


@dataclass(frozen=True)
class Window:
    """A labelled window position, not yet cut out of its image."""
    left: int
    top: int
    size: int
    target: int
    image_index: int = 0

    def extract(self, image: GrayImage) -> TrainingSample:
        return TrainingSample(extract_window(image, self.left, self.top, self.size), self.target)


def _clamp_anchor(left: int, top: int, reach: int, size: int, width: int, height: int,
                  on_border: str) -> tuple[int, int, bool]:
    lo = reach
    hi_x = width - size - reach
    hi_y = height - size - reach
    if hi_x < lo or hi_y < lo:
        raise BorderError(f"{width}x{height} image cannot hold {size}px windows "
                          f"shifted by +-{reach}")
    cl = min(max(left, lo), hi_x)
    ct = min(max(top, lo), hi_y)
    moved = (cl, ct) != (left, top)
    if moved and on_border == "error":
        raise BorderError(f"label too close to the border: anchor ({left}, {top}) "
                          f"needs clamping to ({cl}, {ct})")
    return cl, ct, moved


def coarse_anchor(width: int, height: int, x: float, y: float, size: int = COARSE_WINDOW,
                  on_border: str = "clamp") -> tuple[int, int, bool]:
    """Top-left of the window whose center is nearest (x, y), clamped inward."""
    half = (size - 1) / 2
    left, top = round_half_up(x - half), round_half_up(y - half)
    return _clamp_anchor(left, top, max(COARSE_INVALID_RADII), size, width, height, on_border)


def coarse_windows(width: int, height: int, label_ds: PupilLabel, size: int = COARSE_WINDOW,
                   on_border: str = "clamp", image_index: int = 0) -> tuple[list[Window], bool]:
    left, top, moved = coarse_anchor(width, height, label_ds.x, label_ds.y, size, on_border)
    valid, invalid = coarse_offsets()
    wins = [Window(left + dx, top + dy, size, 1, image_index) for dx, dy in valid]
    wins += [Window(left + dx, top + dy, size, 0, image_index) for dx, dy in invalid]
    return wins, moved


def gen_coarse_samples(downscaled: GrayImage, label_ds: PupilLabel, size: int = COARSE_WINDOW,
                       on_border: str = "clamp") -> list[TrainingSample]:
    """41 samples: the 3x3 block of windows around the label (target 1)
    followed by 32 displaced windows (target 0)."""
    wins, _ = coarse_windows(downscaled.width, downscaled.height, label_ds, size, on_border)
    return [w.extract(downscaled) for w in wins]


def fine_windows(width: int, height: int, label: PupilLabel, size: int = FINE_WINDOW,
                 on_border: str = "clamp", image_index: int = 0) -> tuple[list[Window], bool]:
    half = (size - 1) // 2
    left, top = round_half_up(label.x) - half, round_half_up(label.y) - half
    left, top, moved = _clamp_anchor(left, top, FINE_INVALID_DISTANCE, size, width, height,
                                     on_border)
    wins = [Window(left, top, size, 1, image_index)]
    wins += [Window(left + dx, top + dy, size, 0, image_index) for dx, dy in fine_offsets()]
    return wins, moved


def gen_fine_samples(image: GrayImage, label: PupilLabel, size: int = FINE_WINDOW,
                     on_border: str = "clamp") -> list[TrainingSample]:
    """One window centred on the rounded label plus eight at 5 px (target 0)."""
    wins, _ = fine_windows(image.width, image.height, label, size, on_border)
    return [w.extract(image) for w in wins]


def subsample_fine(samples: Sequence, seed: int, valid_fraction: float = 0.5,
                   invalid_fraction: float = 0.25) -> list:
    """Keep a seeded random share of each class, preserving input order.

    Works on anything with a ``target`` attribute (samples or :class:`Window`).
    """
    rng = np.random.default_rng(seed)
    keep = []
    for target, fraction in ((1, valid_fraction), (0, invalid_fraction)):
        idx = [i for i, s in enumerate(samples) if s.target == target]
        n = round_half_up(len(idx) * fraction)
        if n:
            keep.extend(rng.choice(idx, size=n, replace=False).tolist())
    return [samples[i] for i in sorted(keep)]


def split_dataset(labels: Sequence[PupilLabel], fraction: float,
                  seed: int) -> tuple[list[PupilLabel], list[PupilLabel]]:
    """Random partition into (train, eval); train gets round-half-up(n*fraction)."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if not labels:
        raise ValueError("no labels to split")
    n_train = round_half_up(len(labels) * fraction)
    order = np.random.default_rng(seed).permutation(len(labels))
    chosen = set(order[:n_train].tolist())
    train = [lab for i, lab in enumerate(labels) if i in chosen]
    held = [lab for i, lab in enumerate(labels) if i not in chosen]
    return train, held


# -- synthetic eyes ----------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Sampling ranges for :func:`synth_eye`. Lengths are in pixels."""
    width: int = 384
    height: int = 288
    margin: int = 70
    pupil_radius: tuple[float, float] = (12.0, 22.0)
    iris_radius: tuple[float, float] = (36.0, 50.0)
    aspect: tuple[float, float] = (0.65, 1.0)
    pupil_level: tuple[float, float] = (0.02, 0.12)
    iris_level: tuple[float, float] = (0.45, 0.65)
    skin_level: tuple[float, float] = (0.7, 0.9)
    reflections: tuple[int, int] = (0, 1)
    reflection_level: tuple[float, float] = (0.85, 1.0)
    reflection_radius: tuple[float, float] = (1.5, 4.0)
    dark_spots: tuple[int, int] = (0, 1)
    gradient: tuple[float, float] = (0.0, 0.3)
    noise_sigma: float = 0.02
    blur: tuple[float, float] = (0.5, 2.0)

    def __post_init__(self):
        for name in ("pupil_radius", "iris_radius", "aspect", "pupil_level", "iris_level",
                     "skin_level", "reflections", "reflection_level", "reflection_radius",
                     "dark_spots", "gradient", "blur"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range {lo}..{hi}")
        if self.pupil_radius[1] >= self.iris_radius[0]:
            raise ValueError("pupil radius must stay below the iris radius")
        if 2 * self.margin >= min(self.width, self.height):
            raise ValueError("margin leaves no room to place the pupil")
        if self.noise_sigma < 0 or self.blur[0] < 0 or self.reflections[0] < 0:
            raise ValueError("noise, blur and counts must be non-negative")

    def placement_region(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) for the pupil center."""
        return (self.margin, self.width - 1 - self.margin,
                self.margin, self.height - 1 - self.margin)

    def clean(self) -> "SynthSpec":
        """No noise, reflections, distractors, gradient or blur."""
        return replace(self, reflections=(0, 0), dark_spots=(0, 0), gradient=(0.0, 0.0),
                       noise_sigma=0.0, blur=(0.0, 0.0))


def _ellipse_coverage(xx, yy, cx, cy, rx, ry, angle):
    """Anti-aliased 0..1 coverage of a rotated ellipse."""
    c, s = math.cos(angle), math.sin(angle)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    rho = np.sqrt((u / rx) ** 2 + (v / ry) ** 2)
    # distance to the boundary, approximately in pixels
    d = (rho - 1.0) * min(rx, ry)
    return np.clip(0.5 - d, 0.0, 1.0)


def synth_eye(spec: SynthSpec, seed: int, image_id: str = "synth") -> tuple[GrayImage, PupilLabel]:
    """Render one eye image; the label is the exact pupil-ellipse center."""
    rng = np.random.default_rng(seed)
    w, h = spec.width, spec.height
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    x0, x1, y0, y1 = spec.placement_region()
    cx, cy = rng.uniform(x0, x1), rng.uniform(y0, y1)
    skin = rng.uniform(*spec.skin_level)
    img = np.full((h, w), skin)

    iris_r = rng.uniform(*spec.iris_radius)
    icx = cx + rng.uniform(-0.15, 0.15) * iris_r
    icy = cy + rng.uniform(-0.15, 0.15) * iris_r
    iris = _ellipse_coverage(xx, yy, icx, icy, iris_r, iris_r * rng.uniform(0.85, 1.0),
                             rng.uniform(0, math.pi))
    img += (rng.uniform(*spec.iris_level) - skin) * iris

    pr = rng.uniform(*spec.pupil_radius)
    aspect = rng.uniform(*spec.aspect)
    angle = rng.uniform(0, math.pi)
    pupil = _ellipse_coverage(xx, yy, cx, cy, pr, pr * aspect, angle)
    img = img * (1 - pupil) + rng.uniform(*spec.pupil_level) * pupil

    # dark distractors (eyelash clumps, iris spots): smaller than the pupil
    for _ in range(rng.integers(spec.dark_spots[0], spec.dark_spots[1] + 1)):
        ang = rng.uniform(0, 2 * math.pi)
        dist = rng.uniform(pr + 8, iris_r * 2.2)
        sr = rng.uniform(2.0, max(2.5, pr * 0.45))
        spot = _ellipse_coverage(xx, yy, cx + dist * math.cos(ang), cy + dist * math.sin(ang),
                                 sr, sr * rng.uniform(0.4, 1.0), rng.uniform(0, math.pi))
        img = img * (1 - spot) + rng.uniform(*spec.pupil_level) * spot

    # illumination gradient: multiplicative ramp in a random direction
    g = rng.uniform(*spec.gradient)
    if g > 0:
        ang = rng.uniform(0, 2 * math.pi)
        ramp = ((xx - w / 2) * math.cos(ang) + (yy - h / 2) * math.sin(ang)) / (0.5 * max(w, h))
        img = img * (1.0 + g * np.clip(ramp, -1, 1))

    # specular reflections, often on the pupil boundary
    for _ in range(rng.integers(spec.reflections[0], spec.reflections[1] + 1)):
        ang = rng.uniform(0, 2 * math.pi)
        dist = rng.uniform(0, 1.2) * pr
        rr = rng.uniform(*spec.reflection_radius)
        blob = _ellipse_coverage(xx, yy, cx + dist * math.cos(ang), cy + dist * math.sin(ang),
                                 rr, rr, 0.0)
        img = img * (1 - blob) + rng.uniform(*spec.reflection_level) * blob

    sigma = rng.uniform(*spec.blur)
    if sigma > 0:
        img = gaussian_filter(img, sigma, mode="nearest")
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return GrayImage(img), PupilLabel(image_id, float(cx), float(cy))

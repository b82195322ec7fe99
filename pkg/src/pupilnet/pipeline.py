"""Coarse-to-fine pupil localisation.

Window scoring shares the convolution across overlapping windows: the
conv layer is evaluated once over the searched region and every window's
pooled features are gathered from a stride-1 box mean of that map.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import kernels
from ._accel import worker_count
from .imaging import GrayImage, bicubic_resize
from .kernels import sigmoid
from .nn import CnnModel, predict

MODES = ("two-stage", "single-stage", "coarse-only", "coarse+ray")


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "two-stage"
    downscale_factor: int = 4
    refine_radius: int = 10
    ray_range: int = 30

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if self.downscale_factor < 1:
            raise ValueError("downscale_factor must be >= 1")
        if self.refine_radius < 0:
            raise ValueError("refine_radius must be >= 0")

    def required_models(self) -> tuple[str, ...]:
        return {"two-stage": ("coarse", "fine"), "single-stage": ("single",),
                "coarse-only": ("coarse",), "coarse+ray": ("coarse",)}[self.mode]


@dataclass(frozen=True)
class DetectionResult:
    coarse_x: float
    coarse_y: float
    coarse_confidence: float
    fine_x: float
    fine_y: float
    fine_confidence: float


def window_grid(width: int, height: int, size: int) -> tuple[int, int]:
    """Number of stride-1 window positions (columns, rows)."""
    return width - size + 1, height - size + 1


def _row_ratings(model: CnnModel, box: np.ndarray, row: int, cols: int) -> np.ndarray:
    cfg = model.config
    s, st = cfg.pooled_side, cfg.pool_stride
    ys = row + st * np.arange(s)
    xs = np.arange(cols)[:, None] + st * np.arange(s)[None, :]       # (cols, s)
    feats = box[:, ys[:, None, None], xs[None, :, :]]               # (F, s, cols, s)
    feats = feats.transpose(2, 0, 1, 3).reshape(cols, -1)
    hidden = sigmoid(feats @ model.fc_weights.T + model.fc_biases)
    return sigmoid(hidden @ model.out_weights + model.out_bias)


def score_windows(model: CnnModel, pixels: np.ndarray, workers: int | None = None) -> np.ndarray:
    """Rating of every stride-1 window of a raster, shape (rows, cols).

    Rows are scored as independent tasks; the result is identical for any
    ``workers`` value.
    """
    cfg = model.config
    n = cfg.input_size
    h, w = pixels.shape
    if h < n or w < n:
        raise DetectionError(f"{w}x{h} region is smaller than the {n}x{n} window")
    cols, rows = window_grid(w, h, n)
    act = sigmoid(kernels.conv_forward(pixels[None], model.conv_kernels, model.conv_biases)[0])
    box = kernels.box_mean(act, cfg.pool_window)
    workers = worker_count() if workers is None else workers
    task = lambda r: _row_ratings(model, box, r, cols)
    if workers > 1 and rows > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(task, range(rows)))
    else:
        out = [task(r) for r in range(rows)]
    return np.stack(out)


def score_windows_direct(model: CnnModel, pixels: np.ndarray) -> np.ndarray:
    """Reference scorer: cut out every window and run the full network on it."""
    n = model.config.input_size
    cols, rows = window_grid(pixels.shape[1], pixels.shape[0], n)
    win = np.lib.stride_tricks.sliding_window_view(pixels, (n, n))
    return predict(model, win.reshape(-1, n, n)).reshape(rows, cols)


def best_window(ratings: np.ndarray) -> tuple[int, int, float]:
    """(left, top, rating) of the maximum; first in row-major order on ties."""
    flat = int(np.argmax(ratings))
    top, left = divmod(flat, ratings.shape[1])
    return left, top, float(ratings[top, left])


def coarse_detect(model: CnnModel, downscaled: GrayImage,
                  workers: int | None = None) -> tuple[float, float, float]:
    """Center (x, y) and rating of the best window over the whole image."""
    ratings = score_windows(model, downscaled.pixels, workers)
    left, top, conf = best_window(ratings)
    half = (model.config.input_size - 1) / 2
    return left + half, top + half, conf


def map_coarse_to_original(x: float, y: float, factor: int) -> tuple[float, float]:
    """Center of the source block that a downscaled coordinate stands for."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    off = (factor - 1) / 2
    return factor * x + off, factor * y + off


def map_original_to_coarse(x: float, y: float, factor: int) -> tuple[float, float]:
    off = (factor - 1) / 2
    return (x - off) / factor, (y - off) / factor


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def fine_search_box(width: int, height: int, anchor: tuple[float, float], size: int,
                    radius: int) -> tuple[int, int, int, int]:
    """Clamped anchor and the top-left range of windows searched around it.

    Returns (left_min, left_max, top_min, top_max) of window top-lefts.
    """
    if width < size or height < size:
        raise DetectionError(f"{width}x{height} image is smaller than the {size}x{size} window")
    half = (size - 1) // 2
    ranges = []
    for a, extent in ((anchor[0], width), (anchor[1], height)):
        a = _round_half_up(a)
        lo_c, hi_c = half + radius, extent - size + half - radius
        if lo_c <= hi_c:
            a = min(max(a, lo_c), hi_c)
            ranges.append((a - half - radius, a - half + radius))
        else:
            # image too narrow for the full shift range: search what fits
            ranges.append((0, extent - size))
    (l0, l1), (t0, t1) = ranges
    return l0, l1, t0, t1


def fine_detect(model: CnnModel, image: GrayImage, anchor: tuple[float, float],
                radius: int = 10, workers: int | None = None) -> tuple[float, float, float]:
    """Best window center within +-radius of the rounded, clamped anchor."""
    n = model.config.input_size
    l0, l1, t0, t1 = fine_search_box(image.width, image.height, anchor, n, radius)
    region = image.pixels[t0:t1 + n, l0:l1 + n]
    ratings = score_windows(model, region, workers)
    left, top, conf = best_window(ratings)
    half = (n - 1) / 2
    return l0 + left + half, t0 + top + half, conf


def refine_ray(image: GrayImage, anchor: tuple[float, float],
               max_range: int = 30) -> tuple[float, float]:
    """Edge-ray refinement around an anchor.

    Eight rays leave the rounded anchor at 45 degree steps. On each the
    strongest adjacent-pixel step is taken as the boundary (nearest wins
    ties). Opposite rays give four chord midpoints; the mean of the closest
    pair of midpoints is returned.
    """
    ax, ay = anchor
    if not (0 <= ax < image.width and 0 <= ay < image.height):
        raise DetectionError(f"anchor ({ax}, {ay}) lies outside the image")
    px = image.pixels
    ox = min(_round_half_up(ax), image.width - 1)
    oy = min(_round_half_up(ay), image.height - 1)
    edges = []
    for k in range(8):
        dx = int(round(math.cos(k * math.pi / 4)))
        dy = int(round(math.sin(k * math.pi / 4)))
        steps = int(math.floor(max_range / math.hypot(dx, dy)))
        xs, ys = [ox], [oy]
        for i in range(1, steps + 1):
            x, y = ox + i * dx, oy + i * dy
            if not (0 <= x < image.width and 0 <= y < image.height):
                break
            xs.append(x)
            ys.append(y)
        if len(xs) < 2:
            edges.append((float(ox), float(oy)))
            continue
        vals = px[ys, xs]
        i = int(np.argmax(np.abs(np.diff(vals))))
        edges.append((ox + (i + 0.5) * dx, oy + (i + 0.5) * dy))
    mids = [((edges[k][0] + edges[k + 4][0]) / 2, (edges[k][1] + edges[k + 4][1]) / 2)
            for k in range(4)]
    best = None
    for i in range(4):
        for j in range(i + 1, 4):
            d = math.dist(mids[i], mids[j])
            if best is None or d < best[0]:
                best = (d, i, j)
    _, i, j = best
    return (mids[i][0] + mids[j][0]) / 2, (mids[i][1] + mids[j][1]) / 2


def darkest_block(image: GrayImage, block: int = 5) -> tuple[float, float]:
    """Center of the darkest ``block x block`` window (a naive baseline)."""
    means = kernels.box_mean(image.pixels, block)
    left, top, _ = best_window(-means)
    half = (block - 1) / 2
    return left + half, top + half


def detect(cfg: PipelineConfig, models: Mapping[str, CnnModel], image: GrayImage,
           workers: int | None = None) -> DetectionResult:
    """Run the configured pipeline on an original-resolution image.

    ``models`` maps "coarse", "fine" and/or "single" to trained networks.
    """
    missing = [m for m in cfg.required_models() if m not in models]
    if missing:
        raise DetectionError(f"mode {cfg.mode} needs models: {', '.join(missing)}")
    f = cfg.downscale_factor
    small = image if f == 1 else bicubic_resize(image, Fraction(1, f))
    first = models["single" if cfg.mode == "single-stage" else "coarse"]
    cx, cy, cconf = coarse_detect(first, small, workers)
    mx, my = map_coarse_to_original(cx, cy, f)
    mx = min(max(mx, 0.0), image.width - 1.0)
    my = min(max(my, 0.0), image.height - 1.0)
    if cfg.mode == "two-stage":
        fx, fy, fconf = fine_detect(models["fine"], image, (mx, my), cfg.refine_radius, workers)
    elif cfg.mode == "coarse+ray":
        fx, fy = refine_ray(image, (mx, my), cfg.ray_range)
        fconf = cconf
    else:
        fx, fy, fconf = mx, my, cconf
    return DetectionResult(cx, cy, cconf, fx, fy, fconf)

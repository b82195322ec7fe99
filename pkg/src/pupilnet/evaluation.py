"""Detection-rate curves, cost accounting and filter dumps."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .imaging import GrayImage, resize_array, save_pgm
from .nn import CnnConfig, CnnModel


@dataclass(frozen=True)
class EvalCurve:
    """Detection rate at each integer pixel threshold 0..t_max."""
    rates: tuple[float, ...]

    @property
    def t_max(self) -> int:
        return len(self.rates) - 1

    def rate(self, threshold: int) -> float:
        return self.rates[threshold]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["threshold", "rate"])
        for t, r in enumerate(self.rates):
            w.writerow([t, f"{r:.6f}"])
        return out.getvalue()


def pixel_errors(predictions: Sequence[tuple[float, float]],
                 labels: Sequence[tuple[float, float]]) -> np.ndarray:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(labels, dtype=np.float64).reshape(-1, 2)
    if len(p) != len(q):
        raise ValueError(f"{len(p)} predictions but {len(q)} labels")
    return np.hypot(p[:, 0] - q[:, 0], p[:, 1] - q[:, 1])


def detection_rate_curve(predictions, labels, t_max: int = 15) -> EvalCurve:
    """Fraction of predictions within Euclidean distance t, for t = 0..t_max."""
    d = pixel_errors(predictions, labels)
    if len(d) == 0:
        raise ValueError("no predictions to evaluate")
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    d = np.sort(d)
    counts = np.searchsorted(d, np.arange(t_max + 1), side="right")
    return EvalCurve(tuple(float(c) / len(d) for c in counts))


def compare_runs(curves: Mapping[str, EvalCurve], destination=None) -> str:
    """Wide CSV: one threshold column plus one column per named curve."""
    if not curves:
        raise ValueError("no curves to compare")
    t_maxes = {c.t_max for c in curves.values()}
    if len(t_maxes) != 1:
        raise ValueError(f"curves disagree on t_max: {sorted(t_maxes)}")
    names = list(curves)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["threshold", *names])
    for t in range(t_maxes.pop() + 1):
        w.writerow([t, *(f"{curves[n].rates[t]:.6f}" for n in names)])
    text = out.getvalue()
    if destination is not None:
        with open(destination, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


# -- cost ---------------------------------------------------------------------

@dataclass(frozen=True)
class FlopBreakdown:
    conv_flops: int
    pool_flops: int
    fc_flops: int
    out_flops: int
    runs_per_image: int

    @property
    def total(self) -> int:
        return self.conv_flops + self.pool_flops + self.fc_flops + self.out_flops

    @property
    def image_total(self) -> int:
        return self.total * self.runs_per_image


def _runs(config: CnnConfig, image_size: tuple[int, int]) -> int:
    w, h = image_size
    s = config.input_size
    if w < s or h < s:
        raise ValueError(f"{w}x{h} image is smaller than the {s}x{s} window")
    return (w - s + 1) * (h - s + 1)


def flop_accounting(config: CnnConfig, image_size: tuple[int, int] = (96, 72)) -> FlopBreakdown:
    """Per-window cost under the nominal counting convention.

    conv = conv output area * kernel area * filters, pool = kernel area *
    filters, fc = pooled area * filters * perceptrons, out = filters.
    The pool term is a bookkeeping convention, not a real operation count;
    see :func:`mac_count` for that.
    """
    k2 = config.kernel_size ** 2
    f = config.num_filters
    return FlopBreakdown(
        conv_flops=config.conv_side ** 2 * k2 * f,
        pool_flops=k2 * f,
        fc_flops=config.pooled_side ** 2 * f * config.num_perceptrons,
        out_flops=f,
        runs_per_image=_runs(config, image_size),
    )


def mac_count(config: CnnConfig, image_size: tuple[int, int] = (96, 72)) -> FlopBreakdown:
    """Multiply-accumulates actually performed by an independent window pass."""
    f = config.num_filters
    return FlopBreakdown(
        conv_flops=config.conv_side ** 2 * config.kernel_size ** 2 * f,
        pool_flops=config.pooled_side ** 2 * config.pool_window ** 2 * f,
        fc_flops=config.fc_inputs * config.num_perceptrons,
        out_flops=config.num_perceptrons,
        runs_per_image=_runs(config, image_size),
    )


def flops_csv(config: CnnConfig, image_size: tuple[int, int] = (96, 72)) -> str:
    nominal, true = flop_accounting(config, image_size), mac_count(config, image_size)
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["term", "flops", "macs"])
    for term in ("conv_flops", "pool_flops", "fc_flops", "out_flops"):
        w.writerow([term.removesuffix("_flops"), getattr(nominal, term), getattr(true, term)])
    w.writerow(["total", nominal.total, true.total])
    w.writerow(["runs_per_image", nominal.runs_per_image, true.runs_per_image])
    w.writerow(["image_total", nominal.image_total, true.image_total])
    return out.getvalue()


# -- filter dumps ---------------------------------------------------------------

def normalize01(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.full(values.shape, 0.5)
    return (values - lo) / (hi - lo)


def weight_image(weights: np.ndarray, scale: int = 20) -> GrayImage:
    """Bicubic upscale then stretch to [0, 1]."""
    big = resize_array(np.asarray(weights, dtype=np.float64), scale)
    return GrayImage(np.clip(normalize01(big), 0.0, 1.0))


def sign_map(weights: np.ndarray) -> np.ndarray:
    """1 where a weight is positive, 0 otherwise."""
    return (np.asarray(weights) > 0).astype(np.float64)


def sign_image(weights: np.ndarray, scale: int = 20) -> GrayImage:
    return GrayImage(np.kron(sign_map(weights), np.ones((scale, scale))))


def dump_filters(model: CnnModel, destination, scale: int = 20) -> list[str]:
    """Write filter, sign and fully-connected weight maps as PGM files.

    Returns the written file names in order.
    """
    os.makedirs(destination, exist_ok=True)
    cfg = model.config
    s = cfg.pooled_side
    written = []

    def emit(name, image):
        save_pgm(image, os.path.join(destination, name))
        written.append(name)

    for i, kernel in enumerate(model.conv_kernels):
        emit(f"filter_{i}.pgm", weight_image(kernel, scale))
        emit(f"sign_{i}.pgm", sign_image(kernel, scale))
    fc = model.fc_weights.reshape(cfg.num_perceptrons, cfg.num_filters, s, s)
    for j in range(cfg.num_perceptrons):
        for i in range(cfg.num_filters):
            emit(f"fc_p{j}_f{i}.pgm", weight_image(fc[j, i], scale))
    return written

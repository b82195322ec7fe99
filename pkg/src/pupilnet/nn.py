"""A small CNN engine: conv -> average pool -> logistic layer -> logistic output.

Everything is float64. Patches are square ``input_size x input_size``
intensity grids; the network produces a single rating in (0, 1).
"""
from __future__ import annotations

import dataclasses
import io
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from ._accel import worker_count
from .kernels import sigmoid

MAGIC = b"PNET"
FORMAT_VERSION = 1

# Samples per gradient chunk; bounds the activation memory of large patches.
_CHUNK_PIXELS = 2_000_000


class ConfigError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class ModelFormatError(ValueError):
    """Base class for unreadable model files."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class DimensionMismatchError(ModelFormatError):
    pass


class TruncatedStreamError(ModelFormatError):
    pass


@dataclass(frozen=True)
class CnnConfig:
    input_size: int
    kernel_size: int
    conv_stride: int = 1
    num_filters: int = 8
    pool_window: int = 4
    pool_stride: int = 4
    num_perceptrons: int = 8

    def __post_init__(self):
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ConfigError(f"{field.name} must be an integer, got {value!r}")
            if value < 1:
                raise ConfigError(f"{field.name} must be >= 1, got {value}")
        if self.conv_stride != 1:
            raise ConfigError("only conv_stride 1 is supported")
        if self.conv_side < 1:
            raise ConfigError(
                f"kernel {self.kernel_size} does not fit input {self.input_size}")
        if self.conv_side < self.pool_window:
            raise ConfigError(
                f"pool window {self.pool_window} does not fit conv output {self.conv_side}")

    @property
    def conv_side(self) -> int:
        return self.input_size - self.kernel_size + 1

    @property
    def pooled_side(self) -> int:
        return (self.conv_side - self.pool_window) // self.pool_stride + 1

    @property
    def fc_inputs(self) -> int:
        return self.num_filters * self.pooled_side ** 2

    def as_tuple(self) -> tuple[int, ...]:
        return dataclasses.astuple(self)

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "input": (self.input_size, self.input_size),
            "conv": (self.num_filters, self.conv_side, self.conv_side),
            "pool": (self.num_filters, self.pooled_side, self.pooled_side),
            "fc": (self.num_perceptrons,),
            "out": (1,),
        }


_PARAM_FIELDS = ("conv_kernels", "conv_biases", "fc_weights", "fc_biases",
                 "out_weights", "out_bias")


def _param_shapes(config: CnnConfig) -> dict[str, tuple[int, ...]]:
    k = config.kernel_size
    return {
        "conv_kernels": (config.num_filters, k, k),
        "conv_biases": (config.num_filters,),
        "fc_weights": (config.num_perceptrons, config.fc_inputs),
        "fc_biases": (config.num_perceptrons,),
        "out_weights": (config.num_perceptrons,),
        "out_bias": (),
    }


@dataclass
class Gradients:
    conv_kernels: np.ndarray
    conv_biases: np.ndarray
    fc_weights: np.ndarray
    fc_biases: np.ndarray
    out_weights: np.ndarray
    out_bias: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in _PARAM_FIELDS]

    def scaled(self, factor: float) -> "Gradients":
        return Gradients(*(a * factor for a in self.arrays()))


@dataclass
class CnnModel:
    config: CnnConfig
    conv_kernels: np.ndarray
    conv_biases: np.ndarray
    fc_weights: np.ndarray
    fc_biases: np.ndarray
    out_weights: np.ndarray
    out_bias: np.ndarray

    def __post_init__(self):
        for name in _PARAM_FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.check()

    def check(self) -> None:
        """Raise if any parameter has the wrong shape or is not finite."""
        for name, shape in _param_shapes(self.config).items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in _PARAM_FIELDS]

    def copy(self) -> "CnnModel":
        return CnnModel(self.config, *(a.copy() for a in self.arrays()))

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    @classmethod
    def zeros(cls, config: CnnConfig) -> "CnnModel":
        return cls(config, *(np.zeros(s) for s in _param_shapes(config).values()))


@dataclass
class TrainingSample:
    patch: np.ndarray
    target: int

    def __post_init__(self):
        self.patch = np.asarray(self.patch, dtype=np.float64)
        if self.target not in (0, 1):
            raise ValueError(f"target must be 0 or 1, got {self.target!r}")


def init_model(config: CnnConfig, seed: int) -> CnnModel:
    """Uniform fan-based initialization; biases start at zero.

    Weights of each layer are drawn from +-sqrt(6 / (fan_in + fan_out)), where
    a conv unit has fan_in = kernel area and fan_out = number of filters.
    """
    rng = np.random.default_rng(seed)
    k2 = config.kernel_size ** 2

    def uniform(shape, fan_in, fan_out):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-r, r, size=shape)

    shapes = _param_shapes(config)
    return CnnModel(
        config,
        conv_kernels=uniform(shapes["conv_kernels"], k2, config.num_filters),
        conv_biases=np.zeros(shapes["conv_biases"]),
        fc_weights=uniform(shapes["fc_weights"], config.fc_inputs, config.num_perceptrons),
        fc_biases=np.zeros(shapes["fc_biases"]),
        out_weights=uniform(shapes["out_weights"], config.num_perceptrons, 1),
        out_bias=np.zeros(()),
    )


def _as_batch(config: CnnConfig, patches) -> np.ndarray:
    X = np.asarray(patches, dtype=np.float64)
    n = config.input_size
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim == 2 and X.shape[-1] == n * n and X.shape != (n, n):
        X = X.reshape(-1, n, n)
    elif X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (n, n):
        raise ShapeError(f"patch shape {np.shape(patches)} does not match input size {n}")
    return X


@dataclass
class Activations:
    conv: np.ndarray    # logistic(conv + bias), (N, F, c, c)
    pool: np.ndarray    # (N, F, s, s)
    hidden: np.ndarray  # (N, P)
    output: np.ndarray  # (N,)


def _forward_batch(model: CnnModel, X: np.ndarray) -> Activations:
    cfg = model.config
    A, pooled = kernels.conv_layer_forward(X, model.conv_kernels, model.conv_biases,
                                           cfg.pool_window, cfg.pool_stride)
    flat = pooled.reshape(len(X), -1)
    hidden = sigmoid(flat @ model.fc_weights.T + model.fc_biases)
    out = sigmoid(hidden @ model.out_weights + model.out_bias)
    return Activations(A, pooled, hidden, out)


def predict(model: CnnModel, patches) -> np.ndarray:
    """Ratings for a stack of patches."""
    X = _as_batch(model.config, patches)
    return _forward_batch(model, X).output


def forward(model: CnnModel, patch, return_activations: bool = False):
    """Rate one patch. Optionally also return every intermediate activation."""
    X = _as_batch(model.config, patch)
    if len(X) != 1:
        raise ShapeError("forward takes a single patch; use predict for stacks")
    acts = _forward_batch(model, X)
    rating = float(acts.output[0])
    if return_activations:
        return rating, Activations(acts.conv[0], acts.pool[0], acts.hidden[0], acts.output)
    return rating


def _grad_sums(model: CnnModel, X: np.ndarray, t: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Summed loss and summed parameter gradients over a stack."""
    cfg = model.config
    acts = _forward_batch(model, X)
    y = acts.output
    err = y - t
    loss = 0.5 * float(np.sum(err * err))

    d_out = err * y * (1.0 - y)                        # (N,)
    g_out_w = acts.hidden.T @ d_out
    g_out_b = np.sum(d_out)

    h = acts.hidden
    d_hidden = np.outer(d_out, model.out_weights) * h * (1.0 - h)   # (N, P)
    flat = acts.pool.reshape(len(X), -1)
    g_fc_w = d_hidden.T @ flat
    g_fc_b = d_hidden.sum(axis=0)

    d_pool = (d_hidden @ model.fc_weights).reshape(acts.pool.shape)
    g_k, g_b = kernels.conv_layer_backward(X, acts.conv, d_pool, cfg.pool_window,
                                           cfg.pool_stride, cfg.kernel_size)
    return loss, [g_k, g_b, g_fc_w, g_fc_b, g_out_w, np.asarray(g_out_b)]


def _chunk_bounds(config: CnnConfig, n: int) -> list[tuple[int, int]]:
    per = max(1, _CHUNK_PIXELS // (config.num_filters * config.conv_side ** 2))
    return [(i, min(i + per, n)) for i in range(0, n, per)]


def batch_gradients(model: CnnModel, X: np.ndarray, t: np.ndarray,
                    pool: ThreadPoolExecutor | None = None) -> tuple[float, Gradients]:
    """Mean loss and mean gradients over a stack of samples.

    Chunks are fixed by sample count alone and summed in chunk order, so the
    result does not depend on how many threads evaluate them.
    """
    bounds = _chunk_bounds(model.config, len(X))
    work = lambda b: _grad_sums(model, X[b[0]:b[1]], t[b[0]:b[1]])
    parts = list(pool.map(work, bounds)) if pool is not None else [work(b) for b in bounds]
    loss = 0.0
    sums = [np.zeros_like(a) for a in model.arrays()]
    for part_loss, grads in parts:
        loss += part_loss
        for acc, g in zip(sums, grads):
            acc += g
    n = float(len(X))
    return loss / n, Gradients(*(s / n for s in sums))


def compute_gradients(model: CnnModel, sample: TrainingSample) -> tuple[float, Gradients]:
    X = _as_batch(model.config, sample.patch)
    if len(X) != 1:
        raise ShapeError("sample must hold exactly one patch")
    return batch_gradients(model, X, np.array([float(sample.target)]))


def stack_samples(config: CnnConfig, samples: Sequence[TrainingSample]) -> tuple[np.ndarray, np.ndarray]:
    n = config.input_size
    X = np.empty((len(samples), n, n))
    t = np.empty(len(samples))
    for i, s in enumerate(samples):
        X[i] = _as_batch(config, s.patch)[0]
        t[i] = s.target
    return X, t


def apply_gradients(model: CnnModel, grads: Gradients, learning_rate: float) -> None:
    for w, g in zip(model.arrays(), grads.arrays()):
        w -= learning_rate * g
    model.check()


def train(model: CnnModel, samples, epochs: int = 10, batch_size: int = 500,
          learning_rate: float = 1.0, seed: int = 0,
          on_epoch: Callable[[int, float], None] | None = None) -> tuple[CnnModel, list[float]]:
    """Batch gradient descent; returns the trained copy and per-epoch mean losses.

    ``samples`` is a sequence of :class:`TrainingSample` or a ``(patches,
    targets)`` pair of arrays. ``batch_size=1`` gives plain stochastic
    gradient descent.
    """
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    if isinstance(samples, tuple):
        X = _as_batch(model.config, samples[0])
        t = np.asarray(samples[1], dtype=np.float64)
    else:
        X, t = stack_samples(model.config, samples)
    if len(X) == 0:
        raise ValueError("no training samples")
    if len(t) != len(X):
        raise ShapeError("patches and targets differ in length")

    model = model.copy()
    rng = np.random.default_rng(seed)
    history = []
    workers = worker_count()
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(X))
            total = 0.0
            for start in range(0, len(X), batch_size):
                idx = order[start:start + batch_size]
                loss, grads = batch_gradients(model, X[idx], t[idx], pool)
                apply_gradients(model, grads, learning_rate)
                total += loss * len(idx)
            history.append(total / len(X))
            if on_epoch is not None:
                on_epoch(epoch + 1, history[-1])
    finally:
        if pool is not None:
            pool.shutdown()
    return model, history


def _loss_at(model: CnnModel, X: np.ndarray, target: float) -> float:
    y = _forward_batch(model, X).output[0]
    return 0.5 * (y - target) ** 2


def gradient_check(model: CnnModel, sample: TrainingSample, epsilon: float = 1e-5,
                   max_per_param: int | None = None, seed: int = 0,
                   grad_fn: Callable | None = None) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``max_per_param`` limits how many entries of each parameter array are
    probed (chosen at random by ``seed``); ``None`` probes all of them.
    ``grad_fn`` replaces :func:`compute_gradients`, for mutation tests.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    X = _as_batch(model.config, sample.patch)
    target = float(sample.target)
    _, grads = (grad_fn or compute_gradients)(model, sample)
    probe = model.copy()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for w, g in zip(probe.arrays(), grads.arrays()):
        flat_w = w.reshape(-1)
        flat_g = np.asarray(g).reshape(-1)
        if max_per_param is None or max_per_param >= flat_w.size:
            idx = range(flat_w.size)
        else:
            idx = np.sort(rng.choice(flat_w.size, size=max_per_param, replace=False))
        for i in idx:
            orig = flat_w[i]
            flat_w[i] = orig + epsilon
            plus = _loss_at(probe, X, target)
            flat_w[i] = orig - epsilon
            minus = _loss_at(probe, X, target)
            flat_w[i] = orig
            numeric = (plus - minus) / (2.0 * epsilon)
            analytic = flat_g[i]
            denom = max(abs(analytic), abs(numeric), 1e-12)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def model_to_bytes(model: CnnModel) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<7I", *model.config.as_tuple()))
    for arr in model.arrays():
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return buf.getvalue()


def model_from_bytes(data: bytes) -> CnnModel:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError("bad magic: not a model file")
    if len(data) < 8:
        raise TruncatedStreamError("truncated stream: missing format version")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"version mismatch: file has {version}, expected {FORMAT_VERSION}")
    if len(data) < 36:
        raise TruncatedStreamError("truncated stream: incomplete config header")
    fields = struct.unpack_from("<7I", data, 8)
    try:
        config = CnnConfig(*fields)
    except ConfigError as exc:
        raise DimensionMismatchError(f"dimension mismatch: {exc}") from None
    shapes = _param_shapes(config)
    need = 36 + 8 * sum(int(np.prod(s)) for s in shapes.values())
    if len(data) < need:
        raise TruncatedStreamError(
            f"truncated stream: expected {need} bytes, got {len(data)}")
    if len(data) > need:
        raise DimensionMismatchError(
            f"dimension mismatch: {len(data) - need} trailing bytes after weights")
    offset = 36
    arrays = []
    for shape in shapes.values():
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        arrays.append(arr.astype(np.float64).reshape(shape))
        offset += 8 * count
    return CnnModel(config, *arrays)


def save_model(model: CnnModel, destination) -> None:
    data = model_to_bytes(model)
    if hasattr(destination, "write"):
        destination.write(data)
    else:
        with open(destination, "wb") as fh:
            fh.write(data)


def load_model(source) -> CnnModel:
    if hasattr(source, "read"):
        return model_from_bytes(source.read())
    with open(source, "rb") as fh:
        return model_from_bytes(fh.read())


def model_digest(model: CnnModel) -> int:
    """CRC32 of the serialized model, handy for determinism checks."""
    return zlib.crc32(model_to_bytes(model))

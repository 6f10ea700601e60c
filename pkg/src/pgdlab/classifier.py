"""Small convolutional classifier, stratified splitting and Adam training.

Architectures are written as dash-separated layer tokens::

    conv3x3x8-relu-pool-conv3x3x16-relu-pool-flatten-dense64-relu-dense2

``convKxKxF`` is a KxK convolution with F filters ("same" padding, stride 1;
append ``s2`` for stride 2 and/or ``v`` for "valid" padding), ``pool`` is 2x2
max-pooling and ``denseN`` a fully connected layer of width N.  The last
layer must be ``dense<num_classes>``.
"""

from __future__ import annotations

import hashlib
import io
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .datagen import Image
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    conv2d,
    flatten,
    matmul,
    max_pool2,
    relu,
    softmax_cross_entropy,
)

__all__ = [
    "LayerSpec",
    "ClassifierModel",
    "AdamConfig",
    "AdamState",
    "TrainConfig",
    "TrainReport",
    "SplitDataset",
    "TrainingError",
    "default_architecture",
    "parse_architecture",
    "adam_step",
    "split",
    "stratified_subsample",
    "train",
    "predict",
    "predict_batch",
    "argmax",
    "accuracy",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_digest",
]


def default_architecture(num_classes: int) -> str:
    return f"conv3x3x8-relu-pool-conv3x3x16-relu-pool-flatten-dense64-relu-dense{num_classes}"


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | relu | pool | flatten | dense
    kernel: int = 0
    width: int = 0
    stride: int = 1
    padding: str = "same"

    def token(self) -> str:
        if self.kind == "conv":
            return (f"conv{self.kernel}x{self.kernel}x{self.width}"
                    + ("s2" if self.stride == 2 else "") + ("v" if self.padding == "valid" else ""))
        if self.kind == "dense":
            return f"dense{self.width}"
        return self.kind


_CONV_RE = re.compile(r"^conv(\d+)x(\d+)x(\d+)(s2)?(v)?$")
_DENSE_RE = re.compile(r"^dense(\d+)$")


def parse_architecture(text: str) -> tuple[LayerSpec, ...]:
    layers = []
    for tok in text.strip().split("-"):
        if m := _CONV_RE.match(tok):
            if m[1] != m[2]:
                raise ValueError(f"only square kernels are supported: {tok!r}")
            layers.append(LayerSpec("conv", kernel=int(m[1]), width=int(m[3]),
                                    stride=2 if m[4] else 1, padding="valid" if m[5] else "same"))
        elif m := _DENSE_RE.match(tok):
            layers.append(LayerSpec("dense", width=int(m[1])))
        elif tok in ("relu", "pool", "flatten"):
            layers.append(LayerSpec(tok))
        else:
            raise ValueError(f"unknown layer token {tok!r} in architecture {text!r}")
    if not layers:
        raise ValueError("empty architecture")
    return tuple(layers)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    """Layer stack plus named float64 parameters; maps NHWC images to logits.

    Treated as immutable: training returns a new model.
    """

    architecture: str
    input_shape: tuple[int, int, int]
    num_classes: int
    params: dict[str, np.ndarray]
    seed: int = 0
    layers: tuple[LayerSpec, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", parse_architecture(self.architecture))
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        expected = _param_shapes(self.layers, self.input_shape)
        if list(expected) != list(self.params):
            raise ValueError(f"parameter names {list(self.params)} do not match architecture {list(expected)}")
        frozen = {}
        for name, shape in expected.items():
            arr = np.array(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"parameter {name}: shape {arr.shape}, architecture needs {shape}")
            arr.flags.writeable = False
            frozen[name] = arr
        object.__setattr__(self, "params", frozen)
        last = self.layers[-1]
        if last.kind != "dense" or last.width != self.num_classes:
            raise ValueError(f"architecture must end with dense{self.num_classes}")

    @classmethod
    def build(cls, architecture: str | None, input_shape: Sequence[int], num_classes: int,
              seed: int = 0) -> "ClassifierModel":
        """Glorot-uniform weights (per tensor, seeded), zero biases."""
        architecture = architecture or default_architecture(num_classes)
        input_shape = tuple(int(d) for d in input_shape)
        layers = parse_architecture(architecture)
        rng = np.random.default_rng(int(seed) & (2**63 - 1))
        params: dict[str, np.ndarray] = {}
        for name, shape in _param_shapes(layers, input_shape).items():
            if name.endswith(".bias"):
                params[name] = np.zeros(shape)
            elif len(shape) == 4:
                k0, k1, cin, cout = shape
                params[name] = _glorot(rng, shape, k0 * k1 * cin, k0 * k1 * cout)
            else:
                params[name] = _glorot(rng, shape, shape[0], shape[1])
        return cls(architecture, input_shape, num_classes, params, seed)

    def with_params(self, params: Mapping[str, np.ndarray]) -> "ClassifierModel":
        return ClassifierModel(self.architecture, self.input_shape, self.num_classes, dict(params), self.seed)

    @property
    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def logits(self, x: Tensor, params: Mapping[str, Tensor] | None = None) -> Tensor:
        """Differentiable forward pass of an (N, H, W, C) batch.

        ``params`` defaults to constant tensors of the model's own weights,
        which keeps an input-gradient pass from computing weight gradients.
        """
        if x.data.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ValueError(f"input batch shape {x.shape} does not match model input (N, {self.input_shape})")
        if params is None:
            params = {k: Tensor(v, requires_grad=False) for k, v in self.params.items()}
        h = x
        conv_i = dense_i = 0
        for layer in self.layers:
            if layer.kind == "conv":
                conv_i += 1
                h = conv2d(h, params[f"conv{conv_i}.weight"], params[f"conv{conv_i}.bias"],
                           stride=layer.stride, padding=layer.padding)
            elif layer.kind == "dense":
                dense_i += 1
                if h.data.ndim != 2:
                    h = flatten(h)
                h = add(matmul(h, params[f"dense{dense_i}.weight"]), params[f"dense{dense_i}.bias"])
            elif layer.kind == "relu":
                h = relu(h)
            elif layer.kind == "pool":
                h = max_pool2(h)
            else:
                h = flatten(h)
        return h

    def forward(self, images: np.ndarray) -> np.ndarray:
        """Logits for an (N, H, W, C) array (or a single H x W x C image)."""
        images = np.asarray(images, dtype=np.float64)
        single = images.ndim == 3
        out = self.logits(Tensor(images[None] if single else images, requires_grad=False)).data
        return out[0] if single else out


def _param_shapes(layers: Sequence[LayerSpec], input_shape: tuple[int, int, int]) -> dict[str, tuple[int, ...]]:
    h, w, c = input_shape
    flat = None
    shapes: dict[str, tuple[int, ...]] = {}
    conv_i = dense_i = 0
    for layer in layers:
        if layer.kind == "conv":
            if flat is not None:
                raise ValueError("conv layer after flatten/dense")
            conv_i += 1
            k, s = layer.kernel, layer.stride
            shapes[f"conv{conv_i}.weight"] = (k, k, c, layer.width)
            shapes[f"conv{conv_i}.bias"] = (layer.width,)
            if layer.padding == "same":
                h, w = -(-h // s), -(-w // s)
            else:
                h, w = (h - k) // s + 1, (w - k) // s + 1
            c = layer.width
            if h < 1 or w < 1:
                raise ValueError("convolution shrinks the feature map to nothing")
        elif layer.kind == "pool":
            if flat is not None:
                raise ValueError("pool layer after flatten/dense")
            if h < 2 or w < 2:
                raise ValueError("pool layer on a feature map smaller than 2x2")
            h, w = h // 2, w // 2
        elif layer.kind in ("flatten", "dense"):
            if flat is None:
                flat = h * w * c
            if layer.kind == "dense":
                dense_i += 1
                shapes[f"dense{dense_i}.weight"] = (flat, layer.width)
                shapes[f"dense{dense_i}.bias"] = (layer.width,)
                flat = layer.width
    return shapes


# --------------------------------------------------------------------------
# Adam


@dataclass(frozen=True)
class AdamConfig:
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_hat: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.step_size < 0 or self.epsilon_hat <= 0:
            raise ValueError("step_size must be >= 0 and epsilon_hat > 0")


@dataclass(frozen=True)
class AdamState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    hyper: AdamConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; inputs are not modified."""
    if set(params) != set(grads):
        raise ValueError(f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}")
    t = state.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p[name] = p - hyper.step_size * m_hat / (np.sqrt(v_hat) + hyper.epsilon_hat)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(t, new_m, new_v)


# --------------------------------------------------------------------------
# data splitting


@dataclass(frozen=True)
class SplitDataset:
    train: list[Image]
    validation: list[Image]


def _by_class(images: Sequence[Image]) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i, im in enumerate(images):
        groups.setdefault(im.label, []).append(i)
    return dict(sorted(groups.items()))


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split(images: Sequence[Image], ratio: float = 0.8, seed: int = 0) -> SplitDataset:
    """Stratified train/validation split.

    Each class contributes ``round(ratio * n)`` images to train (clamped so
    both parts get at least one).  Both parts keep the input order.
    """
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    images = list(images)
    ids = [im.id for im in images]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image ids")
    rng = np.random.default_rng(int(seed) & (2**63 - 1))
    train_idx = []
    for label, idx in _by_class(images).items():
        if len(idx) < 2:
            raise ValueError(f"class {label} has {len(idx)} image(s); at least 2 are needed to split")
        n_train = min(max(_round_half_up(ratio * len(idx)), 1), len(idx) - 1)
        perm = rng.permutation(len(idx))
        train_idx.extend(idx[j] for j in perm[:n_train])
    chosen = set(train_idx)
    return SplitDataset(
        train=[im for i, im in enumerate(images) if i in chosen],
        validation=[im for i, im in enumerate(images) if i not in chosen],
    )


def stratified_subsample(images: Sequence[Image], fraction: float, seed: int) -> list[Image]:
    """Keep ``round(fraction * n)`` images per class (at least one), in input order.

    For one seed the subsamples are nested: a larger fraction keeps every
    image a smaller fraction kept.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    images = list(images)
    rng = np.random.default_rng(int(seed) & (2**63 - 1))
    keep = set()
    for _, idx in _by_class(images).items():
        n_keep = min(max(_round_half_up(fraction * len(idx)), 1), len(idx))
        perm = rng.permutation(len(idx))
        keep.update(idx[j] for j in perm[:n_keep])
    return [im for i, im in enumerate(images) if i in keep]


# --------------------------------------------------------------------------
# training and prediction


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    adam: AdamConfig = AdamConfig()
    split_ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class TrainReport:
    model: ClassifierModel
    epoch_losses: list[float]
    initial_accuracy: float
    validation_accuracy: float


def _stack(images: Sequence[Image]) -> np.ndarray:
    return np.stack([im.pixels for im in images])


def _labels(images: Sequence[Image]) -> np.ndarray:
    return np.array([im.label for im in images], dtype=np.int64)


def loss_and_grads(model: ClassifierModel, x: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy of a batch and its gradient w.r.t. every parameter."""
    params = {k: Tensor(v) for k, v in model.params.items()}
    with Tape() as tape:
        loss = softmax_cross_entropy(model.logits(Tensor(x, requires_grad=False), params), y)
    grads = backward(tape, loss)
    return loss.item(), {k: grads[t] for k, t in params.items()}


def train(model: ClassifierModel, data: SplitDataset, config: TrainConfig) -> TrainReport:
    """Minibatch Adam on the training part; accuracy measured on validation.

    Batches are reshuffled every epoch from a generator seeded with
    ``(config.seed, epoch)``.
    """
    if not data.train or not data.validation:
        raise ValueError("train and validation sets must both be non-empty")
    if data.train[0].shape != model.input_shape:
        raise ValueError(f"images of shape {data.train[0].shape} do not fit model input {model.input_shape}")
    x_all, y_all = _stack(data.train), _labels(data.train)
    initial = accuracy(model, data.validation)
    params = dict(model.params)
    state = AdamState.zeros(params)
    losses = []
    n = len(x_all)
    for epoch in range(config.epochs):
        order = np.random.default_rng([int(config.seed) & (2**63 - 1), epoch]).permutation(n)
        total_loss = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                loss, grads = loss_and_grads(model.with_params(params), x_all[idx], y_all[idx])
            except ArithmeticError as exc:
                raise TrainingError(f"non-finite value at epoch {epoch}, batch {b}: {exc}") from exc
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            params, state = adam_step(params, grads, state, config.adam)
            total_loss += loss * len(idx)
        losses.append(total_loss / n)
    final = model.with_params(params)
    return TrainReport(final, losses, initial, accuracy(final, data.validation))


def argmax(values) -> int:
    """Index of the largest entry; the lowest index wins ties."""
    return int(np.argmax(np.asarray(values)))


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: ClassifierModel, image: Image | np.ndarray) -> tuple[np.ndarray, int]:
    """Class probabilities for one image and the predicted (argmax) class."""
    px = image.pixels if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    if px.shape != model.input_shape:
        raise ValueError(f"image shape {px.shape} does not match model input {model.input_shape}")
    probs = _softmax_rows(model.forward(px))
    return probs, argmax(probs)


def predict_batch(model: ClassifierModel, images: Sequence[Image], batch_size: int = 64) -> np.ndarray:
    """(N, C) probabilities for a list of images."""
    out = []
    for start in range(0, len(images), batch_size):
        out.append(_softmax_rows(model.forward(_stack(images[start:start + batch_size]))))
    return np.concatenate(out) if out else np.zeros((0, model.num_classes))


def accuracy(model: ClassifierModel, images: Sequence[Image]) -> float:
    if not images:
        raise ValueError("accuracy of an empty image list is undefined")
    probs = predict_batch(model, images)
    return float(np.mean(probs.argmax(axis=1) == _labels(images)))


# --------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = "pgdlab-checkpoint v1"


def save_checkpoint(model: ClassifierModel, path: str | os.PathLike, metadata: Mapping[str, object] | None = None) -> None:
    """Text header, blank line, then float64 little-endian parameter blocks."""
    lines = [
        _CKPT_MAGIC,
        f"architecture={model.architecture}",
        "input_shape=" + ",".join(str(d) for d in model.input_shape),
        f"num_classes={model.num_classes}",
        f"seed={model.seed}",
    ]
    for k, v in (metadata or {}).items():
        text = str(v)
        if "\n" in text or "=" in str(k):
            raise ValueError(f"metadata entry {k!r} cannot be stored in the header")
        lines.append(f"meta.{k}={text}")
    for name, p in model.params.items():
        lines.append(f"param={name}:" + ",".join(str(d) for d in p.shape))
    header = ("\n".join(lines) + "\n\n").encode("utf-8")
    body = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in model.params.values())
    Path(path).write_bytes(header + body)


def load_checkpoint(path: str | os.PathLike) -> tuple[ClassifierModel, dict[str, str]]:
    """Inverse of :func:`save_checkpoint`; returns the model and its metadata."""
    raw = Path(path).read_bytes()
    cut = raw.find(b"\n\n")
    if cut < 0:
        raise ValueError(f"{path}: checkpoint header not terminated")
    lines = raw[:cut].decode("utf-8").split("\n")
    if lines[0] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    fields: dict[str, str] = {}
    meta: dict[str, str] = {}
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for line in lines[1:]:
        key, _, value = line.partition("=")
        if key == "param":
            name, _, dims = value.partition(":")
            shapes.append((name, tuple(int(d) for d in dims.split(","))))
        elif key.startswith("meta."):
            meta[key[5:]] = value
        else:
            fields[key] = value
    stream = io.BytesIO(raw[cut + 2:])
    params = {}
    for name, shape in shapes:
        count = int(np.prod(shape))
        chunk = stream.read(8 * count)
        if len(chunk) != 8 * count:
            raise ValueError(f"{path}: truncated parameter block {name}")
        params[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
    if stream.read(1):
        raise ValueError(f"{path}: trailing bytes after parameter blocks")
    model = ClassifierModel(
        fields["architecture"],
        tuple(int(d) for d in fields["input_shape"].split(",")),
        int(fields["num_classes"]),
        params,
        int(fields["seed"]),
    )
    return model, meta


def checkpoint_digest(model: ClassifierModel) -> str:
    """SHA-256 over architecture, input shape and raw parameter bytes."""
    h = hashlib.sha256()
    h.update(model.architecture.encode())
    h.update(repr(model.input_shape).encode())
    for name, p in model.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()

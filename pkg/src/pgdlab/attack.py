"""White-box PGD on the probability of the originally predicted class.

Each step moves the image against the raw input gradient of ``y_p``, the
softmax probability of class ``p`` (the prediction on the clean image), then
constrains the result:

* ``project-iterate`` (default): ``x' = clip_to_ball(x - lr * g, x0, eps)``
* ``clip-gradient``: ``x' = clamp(x - lr * clamp(g, -eps, eps), 0, 1)``

Only the first variant keeps ``|x' - x0| <= eps``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .classifier import ClassifierModel, argmax
from .datagen import Image
from .tensor import NonFiniteError, Tape, Tensor, backward, pick, softmax, total

__all__ = [
    "AttackConfig",
    "AttackTrace",
    "AttackError",
    "CLIP_VARIANTS",
    "clip_to_ball",
    "input_gradient",
    "pgd_step",
    "attack_image",
    "attack_dataset",
    "save_traces",
    "load_traces",
]

CLIP_VARIANTS = ("project-iterate", "clip-gradient")
TARGET_POLICIES = ("fixed-original-prediction",)


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.02
    lr: float = 20.0
    max_iter: int = 20
    clip_variant: str = "project-iterate"
    target_class_policy: str = "fixed-original-prediction"

    def __post_init__(self):
        if not (self.epsilon >= 0 and self.lr >= 0):
            raise ValueError(f"epsilon and lr must be >= 0 (got {self.epsilon}, {self.lr})")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be an integer >= 1, got {self.max_iter}")
        if self.clip_variant not in CLIP_VARIANTS:
            raise ValueError(f"clip_variant must be one of {CLIP_VARIANTS}")
        if self.target_class_policy not in TARGET_POLICIES:
            raise ValueError(f"target_class_policy must be one of {TARGET_POLICIES}")


class AttackError(ArithmeticError):
    """The attack produced a non-finite gradient; ``trace`` holds the steps done so far."""

    def __init__(self, message: str, trace: "AttackTrace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass
class AttackTrace:
    """Outputs of the model along one attack trajectory.

    ``per_iteration_probabilities[k-1]`` is the softmax after step ``k``.
    """

    image_id: str
    true_label: int
    original_logits: np.ndarray
    original_probabilities: np.ndarray
    per_iteration_logits: np.ndarray  # (max_iter, C)
    per_iteration_probabilities: np.ndarray  # (max_iter, C)
    config: AttackConfig
    error: str | None = None

    @property
    def original_predicted_class(self) -> int:
        return argmax(self.original_probabilities)

    @property
    def native_misclassified(self) -> bool:
        return self.original_predicted_class != self.true_label

    @property
    def complete(self) -> bool:
        return self.error is None and len(self.per_iteration_probabilities) == self.config.max_iter

    @property
    def num_classes(self) -> int:
        return len(self.original_probabilities)

    def predicted_classes(self) -> np.ndarray:
        """Argmax per recorded iteration (lowest index on ties)."""
        return np.argmax(self.per_iteration_probabilities, axis=1)


def clip_to_ball(candidate: np.ndarray, original: np.ndarray, epsilon: float) -> np.ndarray:
    """Nearest point to ``candidate`` within the L-inf ``epsilon`` ball of ``original`` and [0, 1]."""
    candidate = np.asarray(candidate, dtype=np.float64)
    original = np.asarray(original, dtype=np.float64)
    if candidate.shape != original.shape:
        raise ValueError(f"clip_to_ball: shapes {candidate.shape} and {original.shape} differ")
    lo = np.maximum(original - epsilon, 0.0)
    hi = np.minimum(original + epsilon, 1.0)
    return np.minimum(np.maximum(candidate, lo), hi)


def input_gradient(model: ClassifierModel, x: np.ndarray, target: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Logits, probabilities and d probs[target] / dx for one H x W x C image."""
    logits, probs, grad = _outputs(model, x, target)
    return logits, probs, grad


def _outputs(model: ClassifierModel, x: np.ndarray, target: int | None = None):
    # recorded outputs and gradients share this one forward path
    xt = Tensor(np.asarray(x, dtype=np.float64)[None], requires_grad=target is not None)
    with Tape() as tape:
        logits = model.logits(xt)
        probs = softmax(logits)
        objective = None if target is None else total(pick(probs, [target]))
    lg, pr = logits.data[0].copy(), probs.data[0].copy()
    if objective is None:
        return lg, pr, None
    grad = backward(tape, objective)[xt][0]
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite input gradient")
    return lg, pr, grad


def _apply_step(x_k: np.ndarray, original: np.ndarray, grad: np.ndarray, config: AttackConfig) -> np.ndarray:
    if config.clip_variant == "project-iterate":
        return clip_to_ball(x_k - config.lr * grad, original, config.epsilon)
    step = np.clip(grad, -config.epsilon, config.epsilon)
    return np.clip(x_k - config.lr * step, 0.0, 1.0)


def pgd_step(
    x_k: np.ndarray,
    original: np.ndarray,
    model: ClassifierModel,
    config: AttackConfig,
    target: int | None = None,
) -> np.ndarray:
    """One PGD update of ``x_k``.

    ``target`` defaults to the model's prediction on ``original``.
    Raises :class:`AttackError` if the gradient is not finite.
    """
    x_k = np.asarray(x_k, dtype=np.float64)
    original = np.asarray(original, dtype=np.float64)
    try:
        if target is None:
            target = argmax(_outputs(model, original)[1])
        grad = _outputs(model, x_k, target)[2]
    except NonFiniteError as exc:
        raise AttackError(str(exc)) from exc
    return _apply_step(x_k, original, grad, config)


def attack_image(
    model: ClassifierModel,
    image: Image,
    config: AttackConfig,
    observer: Callable[[int, np.ndarray], None] | None = None,
) -> AttackTrace:
    """Run ``config.max_iter`` PGD steps from the clean image and record the model outputs.

    ``observer(k, x_k)`` is called after every step with a read-only view of
    the iterate.  On a non-finite value an :class:`AttackError` carrying the
    partial trace is raised.
    """
    x0 = image.pixels
    if x0.shape != model.input_shape:
        raise ValueError(f"image {image.id} shape {x0.shape} does not match model input {model.input_shape}")
    c = model.num_classes
    logits0 = probs0 = np.full(c, np.nan)
    logits_rows: list[np.ndarray] = []
    prob_rows: list[np.ndarray] = []
    k = 0
    try:
        logits0, probs0, _ = _outputs(model, x0)
        target = argmax(probs0)
        grad = _outputs(model, x0, target)[2]
        x = x0
        for k in range(1, config.max_iter + 1):
            x = _apply_step(x, x0, grad, config)
            x.flags.writeable = False
            if observer is not None:
                observer(k, x)
            logits, probs, grad = _outputs(model, x, target if k < config.max_iter else None)
            logits_rows.append(logits)
            prob_rows.append(probs)
    except NonFiniteError as exc:
        msg = f"iteration {k}: {exc}"
        trace = AttackTrace(image.id, image.label, logits0, probs0,
                            np.array(logits_rows).reshape(-1, c), np.array(prob_rows).reshape(-1, c), config, msg)
        raise AttackError(f"{image.id}: {msg}", trace) from exc
    return AttackTrace(image.id, image.label, logits0, probs0, np.array(logits_rows), np.array(prob_rows), config)


def attack_dataset(
    model: ClassifierModel,
    images: Sequence[Image],
    config: AttackConfig,
    observer: Callable[[str, int, np.ndarray], None] | None = None,
) -> list[AttackTrace]:
    """Attack every image independently; failures are kept as incomplete traces."""
    traces = []
    for im in images:
        obs = None if observer is None else (lambda k, x, _id=im.id: observer(_id, k, x))
        try:
            traces.append(attack_image(model, im, config, obs))
        except AttackError as exc:
            traces.append(exc.trace)
    return traces


# --------------------------------------------------------------------------
# persistence

_TRACE_MAGIC = "# pgdlab attack traces v1"


def _fmt(values: Iterable[float]) -> str:
    return ",".join(repr(float(v)) for v in values)


def save_traces(
    traces: Sequence[AttackTrace],
    path: str | os.PathLike,
    config: AttackConfig,
    model_digest: str = "",
    dataset_id: str = "",
) -> None:
    """Write a trace file: ``#`` header lines, then one CSV row per image per iteration.

    Original (unattacked) outputs and per-image status live in ``# original=``
    header lines so the table has exactly ``max_iter`` rows per complete image.
    Floats are written with ``repr`` and reload bit-exactly.
    """
    if not traces:
        num_classes = 0
    else:
        num_classes = traces[0].num_classes
    lines = [
        _TRACE_MAGIC,
        f"# epsilon={config.epsilon!r}",
        f"# lr={config.lr!r}",
        f"# max_iter={config.max_iter}",
        f"# clip_variant={config.clip_variant}",
        f"# target_class_policy={config.target_class_policy}",
        f"# model_sha256={model_digest}",
        f"# dataset_id={dataset_id}",
        f"# num_classes={num_classes}",
    ]
    for t in traces:
        status = "ok" if t.error is None else "error:" + t.error.replace(";", ",").replace("\n", " ")
        lines.append(
            f"# original={t.image_id};{t.true_label};{status};"
            f"{_fmt(t.original_logits)};{_fmt(t.original_probabilities)}"
        )
    cols = ["image_id", "iteration"]
    cols += [f"logit_{j}" for j in range(num_classes)] + [f"prob_{j}" for j in range(num_classes)]
    lines.append(",".join(cols))
    for t in traces:
        for k, (lg, pr) in enumerate(zip(t.per_iteration_logits, t.per_iteration_probabilities), start=1):
            lines.append(f"{t.image_id},{k},{_fmt(lg)},{_fmt(pr)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=np.float64) if text else np.zeros(0)


def load_traces(path: str | os.PathLike) -> tuple[list[AttackTrace], dict[str, str]]:
    """Read a trace file; returns the traces (file order) and the header fields."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _TRACE_MAGIC:
        raise ValueError(f"{path}: not a trace file")
    header: dict[str, str] = {}
    originals = []
    i = 1
    while i < len(lines) and lines[i].startswith("# "):
        key, _, value = lines[i][2:].partition("=")
        if key == "original":
            originals.append(value.split(";"))
        else:
            header[key] = value
        i += 1
    config = AttackConfig(
        epsilon=float(header["epsilon"]),
        lr=float(header["lr"]),
        max_iter=int(header["max_iter"]),
        clip_variant=header["clip_variant"],
        target_class_policy=header["target_class_policy"],
    )
    c = int(header["num_classes"])
    rows: dict[str, list[tuple[int, np.ndarray, np.ndarray]]] = {o[0]: [] for o in originals}
    for line in lines[i + 1:]:
        if not line:
            continue
        parts = line.split(",")
        vals = np.array([float(v) for v in parts[2:]], dtype=np.float64)
        rows[parts[0]].append((int(parts[1]), vals[:c], vals[c:]))
    traces = []
    for image_id, label, status, lg, pr in originals:
        recs = sorted(rows[image_id], key=lambda r: r[0])
        traces.append(AttackTrace(
            image_id, int(label), _floats(lg), _floats(pr),
            np.array([r[1] for r in recs]).reshape(-1, c),
            np.array([r[2] for r in recs]).reshape(-1, c),
            config,
            None if status == "ok" else status[len("error:"):],
        ))
    return traces, header

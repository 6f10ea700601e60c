"""Synthetic image datasets, augmentation and 16-bit PGM/PPM storage.

Two seeded generator families stand in for real imagery:

* ``gen_texture_dataset`` -- shape-free band-limited noise; the class is the
  spatial-frequency band the noise is filtered to.
* ``gen_shape_dataset`` -- a soft-edged ellipse whose orientation band is the
  class, with pose jitter and additive noise.

Every image draws its randomness from ``(seed, label, index)`` only, so
generation order never changes the output.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Image",
    "Dataset",
    "ImageFormatError",
    "MalformedHeaderError",
    "TruncatedPayloadError",
    "MaxvalMismatchError",
    "gen_texture_dataset",
    "gen_shape_dataset",
    "augment",
    "augment_dataset",
    "save_image",
    "load_image",
    "save_dataset",
    "load_dataset",
    "AUGMENT_OPS",
]

MAXVAL = 65535
_ID_RE = re.compile(r"^[A-Za-z0-9_.+\-]+$")


@dataclass(frozen=True, eq=False)
class Image:
    """An H x W x C grid of intensities in [0, 1] with its class label."""

    id: str
    pixels: np.ndarray
    label: int
    class_name: str = ""

    def __post_init__(self):
        if not _ID_RE.match(self.id):
            raise ValueError(f"image id {self.id!r} may only use letters, digits and _.+-")
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"image {self.id}: pixels must be H x W x C with C in (1, 3), got {px.shape}")
        if not np.all((px >= 0.0) & (px <= 1.0)):
            raise ValueError(f"image {self.id}: pixels outside [0, 1]")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "label", int(self.label))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


@dataclass
class Dataset:
    name: str
    class_names: tuple[str, ...]
    images: list[Image]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        ids = [im.id for im in self.images]
        if len(set(ids)) != len(ids):
            raise ValueError(f"dataset {self.name}: duplicate image ids")
        for im in self.images:
            if not 0 <= im.label < len(self.class_names):
                raise ValueError(f"image {im.id}: label {im.label} outside 0..{len(self.class_names) - 1}")

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self) -> Iterator[Image]:
        return iter(self.images)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> list[int]:
        counts = [0] * self.num_classes
        for im in self.images:
            counts[im.label] += 1
        return counts


def _image_rng(seed: int, label: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & (2**63 - 1), label, index])


# --------------------------------------------------------------------------
# generators


def _texture_bands(num_classes: int) -> list[tuple[float, float]]:
    # disjoint radial-frequency bands (cycles/pixel) with a gap between them
    edges = np.geomspace(0.03, 0.45, 2 * num_classes)
    return [(float(edges[2 * c]), float(edges[2 * c + 1])) for c in range(num_classes)]


def gen_texture_dataset(
    seed: int,
    n_per_class: int,
    size: int = 32,
    num_classes: int = 2,
    channels: int = 3,
) -> Dataset:
    """Band-pass filtered noise; class ``c`` keeps the ``c``-th frequency band.

    Class 0 is the lowest band (large blobs), the last class the highest
    (fine grain).  Each image is min-max normalised to [0, 1].
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if size < 16:
        raise ValueError("size must be >= 16")
    if num_classes < 2 or channels not in (1, 3):
        raise ValueError("need num_classes >= 2 and channels in (1, 3)")

    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    radius = np.hypot(fy, fx)
    bands = _texture_bands(num_classes)
    name = f"texture-s{seed}"
    images = []
    for label, (lo, hi) in enumerate(bands):
        mask = ((radius >= lo) & (radius <= hi)).astype(np.float64)[:, :, None]
        for i in range(n_per_class):
            rng = _image_rng(seed, label, i)
            noise = rng.standard_normal((size, size, channels))
            field_ = np.fft.ifft2(np.fft.fft2(noise, axes=(0, 1)) * mask, axes=(0, 1)).real
            lo_v, hi_v = field_.min(), field_.max()
            px = (field_ - lo_v) / (hi_v - lo_v) if hi_v > lo_v else np.full_like(field_, 0.5)
            images.append(Image(f"{name}-c{label}-{i:05d}", np.clip(px, 0.0, 1.0), label, f"band{label}"))
    params = {"generator": "texture", "seed": seed, "n_per_class": n_per_class, "size": size,
              "num_classes": num_classes, "channels": channels}
    return Dataset(name, tuple(f"band{c}" for c in range(num_classes)), images, params)


SHAPE_CLASSES = ("shallow", "steep")


def _render_ellipse(size: int, cy: float, cx: float, a: float, b: float, angle: float, soft: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    r = np.sqrt((u / a) ** 2 + (v / b) ** 2)
    return 1.0 / (1.0 + np.exp(-(1.0 - r) / soft))


def gen_shape_dataset(
    seed: int,
    n_per_class: int,
    size: int = 32,
    jitter: float = 1.0,
    noise: float = 0.1,
    channels: int = 1,
) -> Dataset:
    """Two classes of rendered ellipses told apart by orientation band.

    Class 0 ("shallow") archetypes sit at 22.5 degrees, class 1 ("steep") at
    67.5 degrees.  ``jitter`` scales the pose randomisation: orientation
    +-22.5 degrees (the bands meet at 45), centre +-10% of the side,
    axis lengths +-10%.  ``noise`` is the std of additive Gaussian noise.
    With both at 0 every image of a class is its archetype.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if size < 16:
        raise ValueError("size must be >= 16")
    if jitter < 0 or noise < 0 or channels not in (1, 3):
        raise ValueError("need jitter >= 0, noise >= 0 and channels in (1, 3)")

    name = f"shape-s{seed}"
    images = []
    for label, base_angle in enumerate(np.deg2rad([22.5, 67.5])):
        for i in range(n_per_class):
            rng = _image_rng(seed, label, i)
            u = rng.uniform(-1.0, 1.0, size=5) * jitter
            angle = base_angle + np.deg2rad(22.5) * u[0]
            cy = (size - 1) / 2 + 0.1 * size * u[1]
            cx = (size - 1) / 2 + 0.1 * size * u[2]
            a = 0.32 * size * (1 + 0.1 * u[3])
            b = 0.13 * size * (1 + 0.1 * u[4])
            shape = _render_ellipse(size, cy, cx, a, b, angle, soft=0.08)
            px = np.repeat((0.15 + 0.7 * shape)[:, :, None], channels, axis=2)
            if noise > 0:
                px = px + noise * rng.standard_normal(px.shape)
            images.append(Image(f"{name}-c{label}-{i:05d}", np.clip(px, 0.0, 1.0), label, SHAPE_CLASSES[label]))
    params = {"generator": "shape", "seed": seed, "n_per_class": n_per_class, "size": size,
              "jitter": jitter, "noise": noise, "channels": channels}
    return Dataset(name, SHAPE_CLASSES, images, params)


# --------------------------------------------------------------------------
# augmentation

AUGMENT_OPS = ("horizontal-flip", "shift", "intensity-scale")


def _normalise_op(op) -> tuple[str, object]:
    name, value = (op, None) if isinstance(op, str) else (op[0], op[1])
    if name not in AUGMENT_OPS:
        raise ValueError(f"unknown augmentation op {name!r}; expected one of {AUGMENT_OPS}")
    return name, value


def _shift(px: np.ndarray, dy: int, dx: int) -> np.ndarray:
    h, w, _ = px.shape
    padded = np.pad(px, ((abs(dy), abs(dy)), (abs(dx), abs(dx)), (0, 0)), mode="edge")
    y0, x0 = abs(dy) - dy, abs(dx) - dx
    return padded[y0:y0 + h, x0:x0 + w]


def augment(image: Image, ops: Sequence, seed: int, factor: int = 1) -> list[Image]:
    """Return ``factor`` augmented copies of ``image``.

    ``ops`` is applied in order to each copy.  An op is a name, whose
    parameters are then drawn from the seeded stream, or a ``(name, value)``
    pair with explicit parameters: ``("shift", (dy, dx))`` in pixels,
    ``("intensity-scale", s)``.  Random shifts stay within 10% of the side and
    random scales within [0.9, 1.1].  Ids record the op chain.
    """
    ops = [_normalise_op(op) for op in ops]
    if factor < 1:
        raise ValueError("factor must be >= 1")
    h, w, _ = image.shape
    max_shift = max(int(0.1 * min(h, w)), 0)
    out = []
    for k in range(factor):
        rng = np.random.default_rng([int(seed) & (2**63 - 1), k])
        px = image.pixels.copy()
        tags = []
        for name, value in ops:
            if name == "horizontal-flip":
                px = px[:, ::-1, :]
                tags.append("hflip")
            elif name == "shift":
                if value is None:
                    dy, dx = (int(v) for v in rng.integers(-max_shift, max_shift + 1, size=2))
                else:
                    dy, dx = (int(v) for v in value)
                if max(abs(dy), abs(dx)) > max(max_shift, 0):
                    raise ValueError(f"shift ({dy}, {dx}) exceeds 10% of the image side")
                px = _shift(px, dy, dx)
                tags.append(f"shift{dy:+d}{dx:+d}")
            else:
                s = float(rng.uniform(0.9, 1.1)) if value is None else float(value)
                if not 0.9 <= s <= 1.1:
                    raise ValueError(f"intensity scale {s} outside [0.9, 1.1]")
                px = px * s
                tags.append(f"scale{s:.6f}")
        new_id = ".".join([image.id, f"aug{k}"] + tags)
        out.append(Image(new_id, np.clip(px, 0.0, 1.0), image.label, image.class_name))
    return out


def augment_dataset(dataset: Dataset, ops: Sequence, seed: int, factor: int) -> Dataset:
    """Expand each image to itself plus ``factor - 1`` augmented copies."""
    images = []
    for idx, im in enumerate(dataset.images):
        images.append(im)
        if factor > 1:
            images.extend(augment(im, ops, seed=hash_seed(seed, idx), factor=factor - 1))
    params = dict(dataset.params, augment_factor=factor, augment_seed=seed,
                  augment_ops="|".join(_normalise_op(o)[0] for o in ops))
    return Dataset(f"{dataset.name}-aug{factor}", dataset.class_names, images, params)


def hash_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed) & (2**63 - 1), index]).generate_state(1, np.uint64)[0])


# --------------------------------------------------------------------------
# PGM / PPM


class ImageFormatError(ValueError):
    """Base class for unreadable PGM/PPM files."""


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class MaxvalMismatchError(ImageFormatError):
    pass


def save_image(image: Image, path: str | os.PathLike) -> None:
    """Write a P5 (C=1) or P6 (C=3) file, 16-bit big-endian samples.

    Id, label and class name travel in header comments.
    """
    h, w, c = image.shape
    magic = b"P5" if c == 1 else b"P6"
    samples = np.round(image.pixels * MAXVAL).astype(">u2")
    header = (
        magic + b"\n"
        + f"# id={image.id} label={image.label} class={image.class_name or '-'}\n".encode()
        + f"{w} {h}\n{MAXVAL}\n".encode()
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(samples.tobytes())


def _read_header(buf: bytes) -> tuple[list[bytes], dict[str, str], int]:
    """Return the four header tokens, comment key/values and raster offset."""
    tokens: list[bytes] = []
    meta: dict[str, str] = {}
    pos, n = 0, len(buf)
    while len(tokens) < 4:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise MalformedHeaderError("header ended before magic, width, height and maxval")
        if buf[pos:pos + 1] == b"#":
            end = buf.find(b"\n", pos)
            end = n if end < 0 else end
            for item in buf[pos + 1:end].decode("ascii", "replace").split():
                if "=" in item:
                    k, v = item.split("=", 1)
                    meta[k] = v
            pos = end
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after maxval")
    return tokens, meta, pos + 1


def load_image(path: str | os.PathLike, label: int | None = None, image_id: str | None = None) -> Image:
    """Read a 16-bit P5/P6 file written by :func:`save_image`.

    ``label`` and ``image_id`` override the header comments (a file without
    comments gets label 0 and its stem as id).
    """
    buf = Path(path).read_bytes()
    tokens, meta, offset = _read_header(buf)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise MalformedHeaderError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeaderError(f"non-integer size/maxval in header: {tokens[1:]}") from None
    if w <= 0 or h <= 0:
        raise MalformedHeaderError(f"invalid image size {w}x{h}")
    if maxval != MAXVAL:
        raise MaxvalMismatchError(f"maxval {maxval}, expected {MAXVAL}")
    c = 1 if magic == b"P5" else 3
    need = w * h * c * 2
    raster = buf[offset:offset + need]
    if len(raster) < need:
        raise TruncatedPayloadError(f"{path}: expected {need} raster bytes, found {len(raster)}")
    px = np.frombuffer(raster, dtype=">u2").astype(np.float64).reshape(h, w, c) / MAXVAL
    if label is None:
        label = int(meta.get("label", 0))
    if image_id is None:
        image_id = meta.get("id", Path(path).stem)
    class_name = meta.get("class", "")
    return Image(image_id, px, label, "" if class_name == "-" else class_name)


# --------------------------------------------------------------------------
# manifests

_MANIFEST_MAGIC = "# pgdlab dataset manifest v1"


def save_dataset(dataset: Dataset, directory: str | os.PathLike) -> Path:
    """Write every image plus ``manifest.txt`` into ``directory``."""
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    lines = [
        _MANIFEST_MAGIC,
        f"# name={dataset.name}",
        "# classes=" + ",".join(dataset.class_names),
    ]
    lines += [f"# param.{k}={v}" for k, v in dataset.params.items()]
    lines.append("id,path,label")
    for im in dataset.images:
        rel = f"images/{im.id}.{'pgm' if im.shape[2] == 1 else 'ppm'}"
        save_image(im, root / rel)
        lines.append(f"{im.id},{rel},{im.label}")
    manifest = root / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def _parse_param(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def load_dataset(manifest: str | os.PathLike) -> Dataset:
    """Load a dataset from a manifest written by :func:`save_dataset`."""
    manifest = Path(manifest)
    lines = manifest.read_text().splitlines()
    if not lines or lines[0] != _MANIFEST_MAGIC:
        raise ValueError(f"{manifest}: not a dataset manifest")
    name, classes, params = manifest.parent.name, None, {}
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            if key == "name":
                name = value
            elif key == "classes":
                classes = tuple(value.split(","))
            elif key.startswith("param."):
                params[key[6:]] = _parse_param(value)
        elif line == "id,path,label":
            body_start = i + 1
            break
    if classes is None or body_start is None:
        raise ValueError(f"{manifest}: missing classes line or column header")
    images = []
    for line in lines[body_start:]:
        if not line.strip():
            continue
        image_id, rel, label = line.split(",")
        im = load_image(manifest.parent / rel, label=int(label), image_id=image_id)
        images.append(Image(im.id, im.pixels, im.label, classes[im.label]))
    return Dataset(name, classes, images, params)


def iter_labels(images: Iterable[Image]) -> np.ndarray:
    return np.array([im.label for im in images], dtype=np.int64)

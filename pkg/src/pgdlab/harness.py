"""End-to-end attack studies driven by a flat key/value configuration.

Every study writes into ``output_dir``: the resolved configuration, the
trained checkpoint, one trace file per attack run, a CSV table and an SVG
chart.  A study that fails leaves the rows computed so far plus an
``INCOMPLETE`` marker file and re-raises.

Randomness fans out from ``master_seed`` through :func:`derive_seed`::

    data      dataset generation
    split     train/validation partition
    init      weight initialisation
    shuffle   minibatch order
    subsample training-set subsampling in the dataset-size study
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence
from xml.sax.saxutils import escape

from .analytics import (
    BinReport,
    RatePoint,
    SuccessCurve,
    bin_by_confidence,
    success_by_iteration,
    success_rate,
    write_bins_csv,
    write_curve_csv,
)
from .attack import AttackConfig, AttackTrace, attack_dataset, save_traces
from .classifier import (
    AdamConfig,
    ClassifierModel,
    SplitDataset,
    TrainConfig,
    TrainReport,
    checkpoint_digest,
    load_checkpoint,
    save_checkpoint,
    split,
    stratified_subsample,
    train,
)
from .datagen import Dataset, augment_dataset, gen_shape_dataset, gen_texture_dataset, load_dataset

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "Prepared",
    "StudyResult",
    "STUDIES",
    "derive_seed",
    "load_config",
    "parse_config",
    "format_config",
    "build_dataset",
    "prepare",
    "run_attack",
    "run_epsilon_sweep",
    "run_iteration_study",
    "run_confidence_study",
    "run_dataset_size_study",
    "run_study",
    "emit_chart",
]

log = logging.getLogger(__name__)

STUDIES = ("epsilon-sweep", "iteration-study", "confidence-study", "dataset-size-study")
INCOMPLETE = "INCOMPLETE"


class ConfigError(ValueError):
    pass


def derive_seed(master_seed: int, name: str) -> int:
    """First 8 bytes (little-endian) of sha256("<master>/<name>"), as a 63-bit int."""
    digest = hashlib.sha256(f"{int(master_seed)}/{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def _key(name: str, doc: str):
    return {"key": name, "doc": doc}


DEFAULT_EPSILONS = tuple(round(0.02 * i, 10) for i in range(1, 11))
DEFAULT_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of an experiment; see :data:`CONFIG_KEYS` for the file keys."""

    study: str = field(default="epsilon-sweep", metadata=_key("study", "one of " + ", ".join(STUDIES)))
    output_dir: str = field(default="runs/experiment", metadata=_key("output_dir", "directory for all outputs"))
    master_seed: int = field(default=20190101, metadata=_key("master_seed", "root of every derived seed"))

    dataset_generator: str = field(default="shape", metadata=_key("dataset.generator", "shape | texture | manifest"))
    dataset_manifest: str = field(default="", metadata=_key("dataset.manifest", "manifest path when generator=manifest"))
    dataset_n_per_class: int = field(default=125, metadata=_key("dataset.n_per_class", "images per class"))
    dataset_size: int = field(default=32, metadata=_key("dataset.size", "image side in pixels"))
    dataset_channels: int = field(default=1, metadata=_key("dataset.channels", "1 (grey) or 3 (colour)"))
    dataset_num_classes: int = field(default=2, metadata=_key("dataset.num_classes", "texture generator only"))
    dataset_jitter: float = field(default=1.0, metadata=_key("dataset.jitter", "shape generator pose jitter scale"))
    dataset_noise: float = field(default=0.1, metadata=_key("dataset.noise", "shape generator noise std"))
    dataset_augment_factor: int = field(default=1, metadata=_key("dataset.augment_factor",
                                                                 "expand the training part this many times"))

    model_architecture: str = field(default="default", metadata=_key("model.architecture",
                                                                     "layer string or 'default'"))
    model_checkpoint: str = field(default="", metadata=_key("model.checkpoint",
                                                            "load this checkpoint instead of training"))

    train_epochs: int = field(default=15, metadata=_key("train.epochs", "training epochs"))
    train_batch_size: int = field(default=16, metadata=_key("train.batch_size", "minibatch size"))
    train_step_size: float = field(default=1e-3, metadata=_key("train.step_size", "Adam step size"))
    train_beta1: float = field(default=0.9, metadata=_key("train.beta1", "Adam first-moment decay"))
    train_beta2: float = field(default=0.999, metadata=_key("train.beta2", "Adam second-moment decay"))
    train_epsilon_hat: float = field(default=1e-8, metadata=_key("train.epsilon_hat", "Adam denominator offset"))
    train_split_ratio: float = field(default=0.8, metadata=_key("train.split_ratio", "train share per class"))

    attack_epsilon: float = field(default=0.02, metadata=_key("attack.epsilon",
                                                              "perturbation amplitude for fixed-epsilon studies"))
    attack_lr: float = field(default=20.0, metadata=_key("attack.lr", "PGD step coefficient"))
    attack_max_iter: int = field(default=20, metadata=_key("attack.max_iter", "PGD iterations"))
    attack_clip_variant: str = field(default="project-iterate", metadata=_key("attack.clip_variant",
                                                                               "project-iterate | clip-gradient"))

    report_mode: str = field(default="cumulative", metadata=_key("report.mode", "cumulative | instant"))
    study_epsilons: tuple[float, ...] = field(default=DEFAULT_EPSILONS, metadata=_key(
        "study.epsilons", "comma-separated, strictly increasing"))
    study_train_fractions: tuple[float, ...] = field(default=DEFAULT_FRACTIONS, metadata=_key(
        "study.train_fractions", "comma-separated, strictly increasing, in (0, 1]"))

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigError(f"study must be one of {STUDIES}, got {self.study!r}")
        if self.dataset_generator not in ("shape", "texture", "manifest"):
            raise ConfigError(f"unknown dataset.generator {self.dataset_generator!r}")
        if self.dataset_generator == "manifest" and not self.dataset_manifest:
            raise ConfigError("dataset.generator=manifest needs dataset.manifest")
        eps = self.study_epsilons
        if not eps or any(e < 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"study.epsilons must be non-empty, >= 0 and strictly increasing: {eps}")
        fr = self.study_train_fractions
        if not fr or any(not 0 < f <= 1 for f in fr) or any(b <= a for a, b in zip(fr, fr[1:])):
            raise ConfigError(f"study.train_fractions must be in (0, 1] and strictly increasing: {fr}")
        if self.report_mode not in ("cumulative", "instant"):
            raise ConfigError("report.mode must be cumulative or instant")
        if self.dataset_augment_factor < 1:
            raise ConfigError("dataset.augment_factor must be >= 1")
        try:
            self.attack_config()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def seed(self, name: str) -> int:
        return derive_seed(self.master_seed, name)

    def attack_config(self, **overrides) -> AttackConfig:
        kw = dict(epsilon=self.attack_epsilon, lr=self.attack_lr, max_iter=self.attack_max_iter,
                  clip_variant=self.attack_clip_variant)
        kw.update(overrides)
        return AttackConfig(**kw)

    def train_config(self) -> TrainConfig:
        adam = AdamConfig(self.train_step_size, self.train_beta1, self.train_beta2, self.train_epsilon_hat)
        return TrainConfig(self.train_epochs, self.train_batch_size, adam, self.train_split_ratio,
                           self.seed("shuffle"))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


CONFIG_KEYS = {f.metadata["key"]: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(f: dataclasses.Field, raw: str):
    raw = raw.strip()
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind.startswith("tuple"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{f.metadata['key']}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(text: str, overrides: Sequence[str] = (), base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` comments) and then ``key=value`` overrides."""
    changes = {}
    items = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        items.append(line)
    items.extend(overrides)
    for item in items:
        key, _, value = item.partition("=")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        f = CONFIG_KEYS[key]
        changes[f.name] = _coerce(f, value)
    base = base or ExperimentConfig()
    return dataclasses.replace(base, **changes)


def load_config(path: str | os.PathLike | None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, overrides)


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg: ExperimentConfig) -> str:
    """Fully resolved config in the same format :func:`parse_config` reads."""
    lines = ["# resolved pgdlab experiment configuration"]
    for key, f in CONFIG_KEYS.items():
        lines.append(f"{key} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# pipeline


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_generator == "manifest":
        return load_dataset(cfg.dataset_manifest)
    seed = cfg.seed("data")
    if cfg.dataset_generator == "texture":
        return gen_texture_dataset(seed, cfg.dataset_n_per_class, cfg.dataset_size,
                                   cfg.dataset_num_classes, cfg.dataset_channels)
    return gen_shape_dataset(seed, cfg.dataset_n_per_class, cfg.dataset_size,
                             cfg.dataset_jitter, cfg.dataset_noise, cfg.dataset_channels)


@dataclass
class Prepared:
    dataset: Dataset
    split: SplitDataset
    model: ClassifierModel
    train_report: TrainReport | None


def _fit(cfg: ExperimentConfig, dataset: Dataset, data: SplitDataset) -> TrainReport:
    arch = None if cfg.model_architecture == "default" else cfg.model_architecture
    model = ClassifierModel.build(arch, data.train[0].shape, dataset.num_classes, seed=cfg.seed("init"))
    return train(model, data, cfg.train_config())


def _augment_train(cfg: ExperimentConfig, dataset: Dataset, data: SplitDataset) -> SplitDataset:
    if cfg.dataset_augment_factor == 1:
        return data
    part = Dataset(dataset.name + "-train", dataset.class_names, list(data.train), dataset.params)
    ops = ("horizontal-flip", "shift", "intensity-scale")
    expanded = augment_dataset(part, ops, cfg.seed("augment"), cfg.dataset_augment_factor)
    return SplitDataset(expanded.images, data.validation)


def prepare(cfg: ExperimentConfig) -> Prepared:
    """Dataset, stratified split and a trained (or loaded) model."""
    dataset = build_dataset(cfg)
    data = split(dataset.images, cfg.train_split_ratio, cfg.seed("split"))
    data = _augment_train(cfg, dataset, data)
    if cfg.model_checkpoint:
        model, _ = load_checkpoint(cfg.model_checkpoint)
        return Prepared(dataset, data, model, None)
    report = _fit(cfg, dataset, data)
    log.info("trained %s: validation accuracy %.4f", dataset.name, report.validation_accuracy)
    return Prepared(dataset, data, report.model, report)


def _write_training(out: Path, prep: Prepared, cfg: ExperimentConfig, name: str = "model") -> None:
    meta = {"dataset": prep.dataset.name, "master_seed": cfg.master_seed}
    if prep.train_report is not None:
        rep = prep.train_report
        meta.update(epochs=len(rep.epoch_losses), validation_accuracy=repr(rep.validation_accuracy))
        lines = ["epoch,loss"] + [f"{i + 1},{loss!r}" for i, loss in enumerate(rep.epoch_losses)]
        lines.append(f"# validation_accuracy={rep.validation_accuracy!r}")
        (out / f"{name}_training.csv").write_text("\n".join(lines) + "\n")
    save_checkpoint(prep.model, out / f"{name}.ckpt", meta)


def _dataset_id(prep: Prepared) -> str:
    return f"{prep.dataset.name}/validation[{len(prep.split.validation)}]"


def run_attack(cfg: ExperimentConfig, prep: Prepared, attack: AttackConfig, trace_path: Path | None) -> list[AttackTrace]:
    traces = attack_dataset(prep.model, prep.split.validation, attack)
    if trace_path is not None:
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        save_traces(traces, trace_path, attack, checkpoint_digest(prep.model), _dataset_id(prep))
    return traces


@dataclass
class StudyResult:
    name: str
    result: SuccessCurve | BinReport
    csv_path: Path
    chart_path: Path
    extra: dict = field(default_factory=dict)


def _begin(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(format_config(cfg))
    return out


@contextmanager
def _guard(out: Path, csv_name: str, parameter: str, points: list[RatePoint]) -> Iterator[None]:
    marker = out / INCOMPLETE
    if marker.exists():
        marker.unlink()
    try:
        yield
    except BaseException as exc:
        if points:
            write_curve_csv(SuccessCurve(parameter, tuple(points)), out / csv_name)
        marker.write_text(f"{csv_name}: aborted after {len(points)} point(s): {type(exc).__name__}: {exc}\n")
        raise


def _eps_tag(eps: float) -> str:
    return format(eps, ".6g")


def run_epsilon_sweep(cfg: ExperimentConfig, prep: Prepared | None = None) -> StudyResult:
    """Final-iteration success rate for each epsilon of ``study.epsilons``."""
    out = _begin(cfg)
    points: list[RatePoint] = []
    with _guard(out, "epsilon_sweep.csv", "epsilon", points):
        prep = prep or prepare(cfg)
        _write_training(out, prep, cfg)
        for eps in cfg.study_epsilons:
            attack = cfg.attack_config(epsilon=eps)
            traces = run_attack(cfg, prep, attack, out / "traces" / f"epsilon_{_eps_tag(eps)}.csv")
            r = success_rate(traces, mode=cfg.report_mode)
            points.append(RatePoint(eps, r.successful, r.eligible))
            log.info("epsilon %.4g: success %d/%d", eps, r.successful, r.eligible)
        curve = SuccessCurve("epsilon", tuple(points))
    return _finish(out, "epsilon_sweep", curve, "Attack success vs perturbation amplitude")


def run_iteration_study(cfg: ExperimentConfig, prep: Prepared | None = None) -> StudyResult:
    """Success by iteration 1..max_iter at ``attack.epsilon``."""
    out = _begin(cfg)
    points: list[RatePoint] = []
    with _guard(out, "iteration_study.csv", "iteration", points):
        prep = prep or prepare(cfg)
        _write_training(out, prep, cfg)
        attack = cfg.attack_config()
        traces = run_attack(cfg, prep, attack, out / "traces" / f"iterations_epsilon_{_eps_tag(attack.epsilon)}.csv")
        curve = success_by_iteration(traces, cfg.report_mode)
    return _finish(out, "iteration_study", curve, "Attack success vs iterations")


def run_confidence_study(cfg: ExperimentConfig, prep: Prepared | None = None) -> StudyResult:
    """Per-confidence-bin success rate at ``attack.epsilon``."""
    out = _begin(cfg)
    with _guard(out, "confidence_study.csv", "confidence", []):
        prep = prep or prepare(cfg)
        _write_training(out, prep, cfg)
        attack = cfg.attack_config()
        traces = run_attack(cfg, prep, attack, out / "traces" / f"confidence_epsilon_{_eps_tag(attack.epsilon)}.csv")
        report = bin_by_confidence(traces, mode=cfg.report_mode)
        if report.total_eligible == 0:
            raise ValueError("confidence study: no eligible traces")
    return _finish(out, "confidence_study", report, "Attack success vs original confidence")


def run_dataset_size_study(cfg: ExperimentConfig, prep: Prepared | None = None) -> StudyResult:
    """Retrain on nested stratified subsamples of the training part; attack the fixed validation set."""
    out = _begin(cfg)
    points: list[RatePoint] = []
    accuracy_rows = ["train_fraction,train_size,validation_accuracy"]
    with _guard(out, "dataset_size_study.csv", "train_fraction", points):
        if prep is None:
            dataset = build_dataset(cfg)
            base = split(dataset.images, cfg.train_split_ratio, cfg.seed("split"))
            base = _augment_train(cfg, dataset, base)
        else:
            dataset, base = prep.dataset, prep.split
        attack = cfg.attack_config()
        validation_ids = [im.id for im in base.validation]
        for frac in cfg.study_train_fractions:
            subset = stratified_subsample(base.train, frac, cfg.seed("subsample"))
            data = SplitDataset(subset, base.validation)
            report = _fit(cfg, dataset, data)
            sub = Prepared(dataset, data, report.model, report)
            tag = _eps_tag(frac)
            _write_training(out, sub, cfg, name=f"model_fraction_{tag}")
            traces = run_attack(cfg, sub, attack, out / "traces" / f"fraction_{tag}.csv")
            assert [t.image_id for t in traces] == validation_ids
            r = success_rate(traces, mode=cfg.report_mode)
            points.append(RatePoint(frac, r.successful, r.eligible))
            accuracy_rows.append(f"{frac!r},{len(subset)},{report.validation_accuracy!r}")
        curve = SuccessCurve("train_fraction", tuple(points))
        (out / "dataset_size_accuracy.csv").write_text("\n".join(accuracy_rows) + "\n")
    return _finish(out, "dataset_size_study", curve, "Attack success vs training-set fraction")


def _finish(out: Path, name: str, result, title: str) -> StudyResult:
    csv_path, chart_path = out / f"{name}.csv", out / f"{name}.svg"
    if isinstance(result, BinReport):
        write_bins_csv(result, csv_path)
    else:
        write_curve_csv(result, csv_path)
    emit_chart(result, chart_path, title)
    return StudyResult(name, result, csv_path, chart_path)


_RUNNERS = {
    "epsilon-sweep": run_epsilon_sweep,
    "iteration-study": run_iteration_study,
    "confidence-study": run_confidence_study,
    "dataset-size-study": run_dataset_size_study,
}


def run_study(cfg: ExperimentConfig, prep: Prepared | None = None) -> StudyResult:
    return _RUNNERS[cfg.study](cfg, prep)


# --------------------------------------------------------------------------
# SVG charts

_W, _H = 520, 340
_ML, _MR, _MT, _MB = 64, 20, 40, 56


def _sx(v: float, lo: float, hi: float) -> float:
    if hi == lo:
        return _ML + (_W - _ML - _MR) / 2
    return _ML + (v - lo) / (hi - lo) * (_W - _ML - _MR)


def _sy(rate: float) -> float:
    return _H - _MB - rate * (_H - _MT - _MB)


def _frame(title: str, xlabel: str) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2:.2f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">'
        f"{escape(title)}</text>",
        f'<line x1="{_ML}" y1="{_H - _MB}" x2="{_W - _MR}" y2="{_H - _MB}" stroke="black"/>',
        f'<line x1="{_ML}" y1="{_MT}" x2="{_ML}" y2="{_H - _MB}" stroke="black"/>',
        f'<text x="{(_ML + _W - _MR) / 2:.2f}" y="{_H - 14}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13">{escape(xlabel)}</text>',
        f'<text x="18" y="{(_MT + _H - _MB) / 2:.2f}" text-anchor="middle" font-family="sans-serif" font-size="13" '
        f'transform="rotate(-90 18 {(_MT + _H - _MB) / 2:.2f})">attack success rate</text>',
    ]
    for i in range(5):
        r = i / 4
        y = _sy(r)
        parts.append(f'<line x1="{_ML - 4}" y1="{y:.2f}" x2="{_ML}" y2="{y:.2f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 8}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{r:.2f}</text>')
    return parts


def _xtick(x: float, label: str) -> list[str]:
    y0 = _H - _MB
    return [
        f'<line x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 4}" stroke="black"/>',
        f'<text x="{x:.2f}" y="{y0 + 17}" text-anchor="middle" font-family="sans-serif" font-size="11">'
        f"{escape(label)}</text>",
    ]


def emit_chart(data: SuccessCurve | BinReport, path: str | os.PathLike, title: str | None = None) -> None:
    """Line chart of a :class:`SuccessCurve` or bar chart of a :class:`BinReport`.

    Output bytes depend only on the input values and title.
    """
    if isinstance(data, BinReport):
        body = _bar_chart(data, title or "Attack success vs original confidence")
    elif isinstance(data, SuccessCurve):
        if not data.points:
            raise ValueError("emit_chart: curve has no points")
        body = _line_chart(data, title or f"Attack success vs {data.parameter}")
    else:
        raise TypeError(f"emit_chart: unsupported input {type(data).__name__}")
    Path(path).write_text("\n".join(body) + "\n")


def _line_chart(curve: SuccessCurve, title: str) -> list[str]:
    parts = _frame(title, curve.parameter)
    vals = curve.values
    lo, hi = min(vals), max(vals)
    step = max(1, -(-len(vals) // 10))
    for i, v in enumerate(vals):
        if i % step == 0 or i == len(vals) - 1:
            parts += _xtick(_sx(v, lo, hi), format(v, ".4g"))
    coords = [(_sx(p.value, lo, hi), _sy(p.rate)) for p in curve.points]
    if len(coords) > 1:
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in coords)
        parts.append(f'<polyline class="curve" points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    for (x, y), p in zip(coords, curve.points):
        parts.append(f'<circle class="marker" cx="{x:.2f}" cy="{y:.2f}" r="4" fill="#1f77b4">'
                     f"<title>{curve.parameter}={p.value:.6g} rate={p.rate:.6g} "
                     f"({p.successful}/{p.eligible})</title></circle>")
    parts.append("</svg>")
    return parts


def _bar_chart(report: BinReport, title: str) -> list[str]:
    parts = _frame(title, "maximal probability of the original image")
    bins = list(report.bins) + ([report.overflow] if report.overflow.eligible else [])
    slot = (_W - _ML - _MR) / len(bins)
    for i, b in enumerate(bins):
        x = _ML + i * slot
        parts += _xtick(x + slot / 2, f"{b.low:.2f}")
        if b.eligible:
            y = _sy(b.rate)
            parts.append(f'<rect class="bar" x="{x + 3:.2f}" y="{y:.2f}" width="{slot - 6:.2f}" '
                         f'height="{_H - _MB - y:.2f}" fill="#ff7f0e"><title>[{b.low:.2f}, {b.high:.2f}] '
                         f"rate={b.rate:.6g} ({b.successful}/{b.eligible})</title></rect>")
            parts.append(f'<text x="{x + slot / 2:.2f}" y="{y - 4:.2f}" text-anchor="middle" '
                         f'font-family="sans-serif" font-size="10">n={b.eligible}</text>')
    parts.append("</svg>")
    return parts

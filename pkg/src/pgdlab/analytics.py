"""Attack success statistics computed from attack traces.

An image is *eligible* when its trace is complete and the clean image was
classified correctly; natively misclassified images never count, in either
the numerator or the denominator.  Success at iteration ``k`` is judged in
one of two modes:

``instant``
    the prediction after step ``k`` differs from the true label;
``cumulative``
    that held after some step ``j <= k``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attack import AttackTrace

__all__ = [
    "MODES",
    "NativeMisclassificationError",
    "NoEligibleTracesError",
    "RatePoint",
    "SuccessCurve",
    "ConfidenceBin",
    "BinReport",
    "BIN_EDGES",
    "is_successful",
    "eligible_traces",
    "success_rate",
    "success_by_iteration",
    "bin_index",
    "bin_by_confidence",
    "write_curve_csv",
    "write_bins_csv",
    "read_curve_csv",
    "read_bins_csv",
]

MODES = ("instant", "cumulative")

# [0.50, 0.55), ..., [0.90, 0.95), [0.95, 1.00]; rounded so 0.8 is exactly an edge
BIN_EDGES = tuple(round(0.5 + 0.05 * i, 10) for i in range(11))


class NativeMisclassificationError(ValueError):
    """Success was asked for an image the model already got wrong."""


class NoEligibleTracesError(ValueError):
    pass


@dataclass(frozen=True)
class RatePoint:
    value: float
    successful: int
    eligible: int

    @property
    def rate(self) -> float:
        return self.successful / self.eligible


@dataclass(frozen=True)
class SuccessCurve:
    parameter: str  # epsilon | iteration | train_fraction
    points: tuple[RatePoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if any(p.eligible <= 0 for p in self.points):
            raise ValueError("every curve point needs a positive eligible count")

    @property
    def values(self) -> list[float]:
        return [p.value for p in self.points]

    @property
    def rates(self) -> list[float]:
        return [p.rate for p in self.points]

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class ConfidenceBin:
    low: float
    high: float
    eligible: int
    successful: int

    @property
    def rate(self) -> float:
        return self.successful / self.eligible if self.eligible else float("nan")


@dataclass(frozen=True)
class BinReport:
    """Ten confidence bins over [0.5, 1.0] plus an overflow bucket for max prob < 0.5."""

    bins: tuple[ConfidenceBin, ...]
    overflow: ConfidenceBin
    at_iteration: int
    mode: str

    @property
    def total_eligible(self) -> int:
        return sum(b.eligible for b in self.bins) + self.overflow.eligible

    def pooled(self, low: float, high: float) -> tuple[int, int]:
        """(successful, eligible) summed over bins lying inside [low, high]."""
        chosen = [b for b in self.bins if b.low >= low - 1e-12 and b.high <= high + 1e-12]
        return sum(b.successful for b in chosen), sum(b.eligible for b in chosen)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def is_successful(trace: AttackTrace, at_iteration: int, mode: str = "cumulative") -> bool:
    _check_mode(mode)
    if trace.native_misclassified:
        raise NativeMisclassificationError(f"{trace.image_id} is natively misclassified; filter it out first")
    n = len(trace.per_iteration_probabilities)
    if not 1 <= at_iteration <= n:
        raise ValueError(f"at_iteration must lie in 1..{n}, got {at_iteration}")
    wrong = trace.predicted_classes()[:at_iteration] != trace.true_label
    return bool(wrong[-1]) if mode == "instant" else bool(wrong.any())


def eligible_traces(traces: Sequence[AttackTrace]) -> list[AttackTrace]:
    """Complete traces whose clean image was classified correctly."""
    return [t for t in traces if t.complete and not t.native_misclassified]


def _common_max_iter(traces: Sequence[AttackTrace]) -> int:
    iters = {t.config.max_iter for t in traces}
    if len(iters) > 1:
        raise ValueError(f"traces mix max_iter values {sorted(iters)}")
    return iters.pop()


def success_rate(traces: Sequence[AttackTrace], at_iteration: int | None = None,
                 mode: str = "cumulative") -> RatePoint:
    """Successful / eligible at ``at_iteration`` (default: the last iteration).

    The returned point's ``value`` is ``at_iteration``.
    """
    _check_mode(mode)
    if not traces:
        raise ValueError("success_rate needs at least one trace")
    pool = eligible_traces(traces)
    if not pool:
        raise NoEligibleTracesError("no eligible traces: every image is natively misclassified or incomplete")
    k = _common_max_iter(pool) if at_iteration is None else at_iteration
    wins = sum(is_successful(t, k, mode) for t in pool)
    return RatePoint(float(k), wins, len(pool))


def success_by_iteration(traces: Sequence[AttackTrace], mode: str = "cumulative") -> SuccessCurve:
    """One point per iteration 1..max_iter."""
    _check_mode(mode)
    if not traces:
        raise ValueError("success_by_iteration needs at least one trace")
    max_iter = _common_max_iter(traces)
    pool = eligible_traces(traces)
    if not pool:
        raise NoEligibleTracesError("no eligible traces")
    wrong = np.array([t.predicted_classes() != t.true_label for t in pool])  # (n, max_iter)
    if mode == "cumulative":
        wrong = np.logical_or.accumulate(wrong, axis=1)
    counts = wrong.sum(axis=0)
    return SuccessCurve("iteration", tuple(RatePoint(float(k + 1), int(counts[k]), len(pool))
                                           for k in range(max_iter)))


def bin_index(confidence: float) -> int:
    """Bin of a max-probability value: 0..9, or -1 below 0.5.

    Bins are left-closed, right-open except the last, which includes 1.0.
    """
    if confidence < BIN_EDGES[0]:
        return -1
    for i in range(9, -1, -1):
        if confidence >= BIN_EDGES[i]:
            return i
    return 0  # unreachable


def bin_by_confidence(traces: Sequence[AttackTrace], at_iteration: int | None = None,
                      mode: str = "cumulative") -> BinReport:
    """Success rate per bin of the clean image's maximal class probability."""
    _check_mode(mode)
    pool = eligible_traces(traces)
    k = (_common_max_iter(pool) if pool else 1) if at_iteration is None else at_iteration
    elig = [0] * 10
    wins = [0] * 10
    over_e = over_w = 0
    for t in pool:
        b = bin_index(float(np.max(t.original_probabilities)))
        ok = is_successful(t, k, mode)
        if b < 0:
            over_e += 1
            over_w += ok
        else:
            elig[b] += 1
            wins[b] += ok
    bins = tuple(ConfidenceBin(BIN_EDGES[i], BIN_EDGES[i + 1], elig[i], wins[i]) for i in range(10))
    return BinReport(bins, ConfidenceBin(0.0, BIN_EDGES[0], over_e, over_w), k, mode)


# --------------------------------------------------------------------------
# CSV


def _num(x: float) -> str:
    return "nan" if x != x else format(x, ".12g")


def write_curve_csv(curve: SuccessCurve, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter_name", "parameter_value", "eligible", "successful", "rate"])
        for p in curve.points:
            w.writerow([curve.parameter, _num(p.value), p.eligible, p.successful, _num(p.rate)])


def write_bins_csv(report: BinReport, path: str | os.PathLike) -> None:
    """Ten bin rows, plus an overflow row (0 to 0.5) when it holds any trace.

    Empty bins get rate ``nan``.
    """
    rows = list(report.bins) + ([report.overflow] if report.overflow.eligible else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "eligible", "successful", "rate"])
        for b in rows:
            w.writerow([_num(b.low), _num(b.high), b.eligible, b.successful, _num(b.rate)])


def read_curve_csv(path: str | os.PathLike) -> SuccessCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return SuccessCurve(rows[0]["parameter_name"], tuple(
        RatePoint(float(r["parameter_value"]), int(r["successful"]), int(r["eligible"])) for r in rows))


def read_bins_csv(path: str | os.PathLike) -> BinReport:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    bins = [ConfidenceBin(float(r["bin_low"]), float(r["bin_high"]), int(r["eligible"]), int(r["successful"]))
            for r in rows]
    overflow = bins.pop() if len(bins) == 11 else ConfidenceBin(0.0, BIN_EDGES[0], 0, 0)
    return BinReport(tuple(bins), overflow, at_iteration=0, mode="")

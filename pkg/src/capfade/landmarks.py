"""End-of-life and knee-point detection on capacity-fade curves."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from . import _kernels
from .curve import CapacityCurve, Dataset, downsample
from .errors import InsufficientData, InvalidArgument

DEFAULT_EOL_FRACTION = 0.8
MIN_SIDE = 3
SLOPE_EPS = 1e-12


@dataclass(frozen=True)
class Landmarks:
    knee_cycle: int | None
    eol_cycle: int | None
    eol_threshold_fraction: float = DEFAULT_EOL_FRACTION
    error: str | None = None


def detect_eol(curve: CapacityCurve, threshold_fraction: float = DEFAULT_EOL_FRACTION) -> int | None:
    """First sampled cycle with capacity <= fraction * nominal, or None."""
    if not 0 < threshold_fraction < 1:
        raise InvalidArgument("threshold fraction must lie in (0, 1)")
    hit = np.flatnonzero(curve.capacities <= threshold_fraction * curve.nominal_capacity)
    if len(hit) == 0:
        return None
    return int(curve.cycles[hit[0]])


@dataclass(frozen=True)
class KneeFit:
    split_index: int
    early: tuple[float, float]  # slope, intercept
    late: tuple[float, float]
    sse: float
    intersection: float | None


def fit_two_lines(curve: CapacityCurve, impl=None) -> KneeFit:
    """Exhaustive breakpoint search for the best pair of least-squares lines."""
    if len(curve) < 2 * MIN_SIDE:
        raise InsufficientData(f"knee fitting needs >= {2 * MIN_SIDE} points, got {len(curve)}")
    x, y = curve.cycles, curve.capacities
    sse = _kernels.knee_sse(x, y, MIN_SIDE, impl=impl)
    b = int(np.argmin(sse))
    early = _lsq_line(x[: b + 1], y[: b + 1])
    late = _lsq_line(x[b:], y[b:])
    cross = None
    if abs(early[0] - late[0]) > SLOPE_EPS:
        cross = (late[1] - early[1]) / (early[0] - late[0])
    return KneeFit(b, early, late, float(sse[b]), cross)


def _lsq_line(x, y) -> tuple[float, float]:
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(np.dot(dx, y - ym) / np.dot(dx, dx))
    return slope, float(ym - slope * xm)


def detect_knee(curve: CapacityCurve, stride: int = 1) -> int | None:
    """Cycle where the early and late tangent lines intersect, or None.

    ``stride > 1`` fits on a downsampled copy of the curve.
    """
    if stride != 1:
        curve = downsample(curve, stride)
    fit = fit_two_lines(curve)
    if fit.intersection is None:
        return None
    if not curve.first_cycle <= fit.intersection <= curve.last_cycle:
        return None
    return int(np.floor(fit.intersection + 0.5))


def label_curve(curve: CapacityCurve, threshold_fraction: float = DEFAULT_EOL_FRACTION,
                knee_stride: int = 1) -> Landmarks:
    eol = detect_eol(curve, threshold_fraction)
    try:
        knee = detect_knee(curve, knee_stride)
        err = None
    except InsufficientData as exc:
        knee, err = None, str(exc)
    return Landmarks(knee, eol, threshold_fraction, err)


def label_dataset(dataset: Dataset, threshold_fraction: float = DEFAULT_EOL_FRACTION,
                  knee_stride: int = 1) -> dict[str, Landmarks]:
    """Label every cell; a failure on one cell is recorded, not raised."""
    out = {}
    for curve in dataset:
        try:
            out[curve.cell_id] = label_curve(curve, threshold_fraction, knee_stride)
        except Exception as exc:  # per-cell isolation
            out[curve.cell_id] = Landmarks(None, None, threshold_fraction, str(exc))
    return out


def write_labels_csv(path, labels: Mapping[str, Landmarks]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "knee_cycle", "eol_cycle"])
        for cid, lm in labels.items():
            w.writerow([
                cid,
                "" if lm.knee_cycle is None else lm.knee_cycle,
                "" if lm.eol_cycle is None else lm.eol_cycle,
            ])


def read_labels_csv(path, threshold_fraction: float = DEFAULT_EOL_FRACTION) -> dict[str, Landmarks]:
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            knee = int(row["knee_cycle"]) if row["knee_cycle"] else None
            eol = int(row["eol_cycle"]) if row["eol_cycle"] else None
            out[row["cell_id"]] = Landmarks(knee, eol, threshold_fraction)
    return out

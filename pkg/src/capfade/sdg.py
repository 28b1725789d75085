"""Offset / slope / elongation synthesis of capacity-fade curves.

Parameters are estimated from pairs of seed curves::

    o = Q_i[first] - Q_j[first]
    s = (Q_i[n] - Q_i[first]) - (Q_j[n] - Q_j[first])
    e = N / M                      (final cycle numbers of i and j)

and a synthetic curve is produced from one seed by adding a constant offset,
adding a slope ramp that grows linearly (by index) from 0 to ``s``, stretching
the cycle axis by a factor growing linearly from 1 to ``e``, and finally
re-sampling the stretched curve onto integer cycles.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .curve import CapacityCurve, Dataset, validate, write_dataset_csv
from .errors import (
    DegenerateOutput,
    GenerationFailure,
    InsufficientData,
    InvalidArgument,
    OutOfRange,
)
from .rng import substream

DEFAULT_BINS = 20
DEFAULT_RETRIES = 100


def round_half_away(x):
    """Round to the nearest integer, ties away from zero (numpy rounds ties to even)."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class SdgParams:
    offset: float
    slope: float
    elongation: float

    def __post_init__(self):
        if not (math.isfinite(self.offset) and math.isfinite(self.slope)):
            raise InvalidArgument("offset and slope must be finite")
        if not (math.isfinite(self.elongation) and self.elongation > 0):
            raise InvalidArgument(f"elongation must be > 0, got {self.elongation}")

    def astuple(self) -> tuple[float, float, float]:
        return (self.offset, self.slope, self.elongation)


IDENTITY = SdgParams(0.0, 0.0, 1.0)


@dataclass(frozen=True)
class ParamRanges:
    o_min: float
    o_max: float
    s_min: float
    s_max: float
    e_min: float
    e_max: float
    n: int = 0

    def __post_init__(self):
        for lo, hi, name in (
            (self.o_min, self.o_max, "offset"),
            (self.s_min, self.s_max, "slope"),
            (self.e_min, self.e_max, "elongation"),
        ):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise InvalidArgument(f"invalid {name} range [{lo}, {hi}]")
        if self.e_min <= 0:
            raise InvalidArgument("elongation lower bound must be > 0")
        if self.n != 0 and self.n < 2:
            raise InvalidArgument("slope reference cycle must be 0 or >= 2")

    def with_elongation(self, halfwidth: float) -> "ParamRanges":
        return ParamRanges(
            self.o_min, self.o_max, self.s_min, self.s_max,
            1.0 - halfwidth, 1.0 + halfwidth, self.n,
        )

    def summary(self) -> str:
        return (
            f"offset [{self.o_min:.6g}, {self.o_max:.6g}] Ah; "
            f"slope [{self.s_min:.6g}, {self.s_max:.6g}] Ah; "
            f"elongation [{self.e_min:.6g}, {self.e_max:.6g}]; n={self.n}"
        )


@dataclass
class PairwiseStats:
    samples: np.ndarray  # (k, 3): offset, slope, elongation
    pairs: list[tuple[str, str]]
    n: int
    histograms: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)


def _anchor(curve: CapacityCurve, n: int) -> tuple[float, float, float]:
    """(first capacity, capacity at cycle n, final cycle) for one curve."""
    q1 = float(curve.capacities[0])
    if n == 0:
        return q1, q1, curve.last_cycle
    if n < curve.first_cycle or n > curve.last_cycle:
        raise OutOfRange(
            f"slope reference cycle {n} outside span of {curve.cell_id!r} "
            f"[{curve.first_cycle:g}, {curve.last_cycle:g}]"
        )
    k = np.searchsorted(curve.cycles, n)
    if curve.cycles[k] == n:
        qn = float(curve.capacities[k])
    else:
        qn = float(np.interp(n, curve.cycles, curve.capacities))
    return q1, qn, curve.last_cycle


def estimate_params(curve_i: CapacityCurve, curve_j: CapacityCurve, n: int) -> SdgParams:
    """Parameters mapping ``curve_j`` onto ``curve_i``.

    ``n = 0`` disables the slope term. When cycle ``n`` is not sampled
    exactly it is linearly interpolated; resample first for exact values.
    """
    if n < 0:
        raise InvalidArgument("n must be >= 0")
    qi1, qin, big_n = _anchor(curve_i, n)
    qj1, qjn, big_m = _anchor(curve_j, n)
    slope = 0.0 if n == 0 else (qin - qi1) - (qjn - qj1)
    return SdgParams(qi1 - qj1, slope, big_n / big_m)


def pairwise_stats(
    dataset: Dataset,
    n: int,
    within_condition_only: bool = True,
    bins: int = DEFAULT_BINS,
) -> PairwiseStats:
    """All ordered-pair (i != j) parameter samples within each condition group."""
    groups = dataset.groups() if within_condition_only else [tuple(dataset.cell_ids)]
    groups = [g for g in groups if len(g) >= 2]
    if not groups:
        raise InsufficientData("need at least 2 curves in some condition group")
    rows, pairs = [], []
    for group in groups:
        curves = [dataset.get(cid) for cid in group]
        anchors = np.array([_anchor(c, n) for c in curves])
        q1, qn, last = anchors[:, 0], anchors[:, 1], anchors[:, 2]
        drop = qn - q1
        ii, jj = np.nonzero(~np.eye(len(curves), dtype=bool))
        o = q1[ii] - q1[jj]
        s = np.zeros(len(ii)) if n == 0 else drop[ii] - drop[jj]
        e = last[ii] / last[jj]
        rows.append(np.column_stack([o, s, e]))
        pairs.extend((group[i], group[j]) for i, j in zip(ii, jj))
    samples = np.vstack(rows)
    hist = {}
    for col, name in enumerate(("offset", "slope", "elongation")):
        counts, edges = np.histogram(samples[:, col], bins=bins)
        hist[name] = (edges, counts)
    return PairwiseStats(samples, pairs, n, hist)


def derive_ranges(stats: PairwiseStats, elongation_halfwidth: float = 0.25) -> ParamRanges:
    if len(stats) == 0:
        raise InsufficientData("no pairwise samples")
    if not 0 < elongation_halfwidth < 1:
        raise InvalidArgument("elongation halfwidth must lie in (0, 1)")
    o = stats.samples[:, 0]
    s = stats.samples[:, 1]
    return ParamRanges(
        float(o.min()), float(o.max()),
        float(s.min()), float(s.max()),
        1.0 - elongation_halfwidth, 1.0 + elongation_halfwidth,
        stats.n,
    )


def sample_params(ranges: ParamRanges, rng: np.random.Generator) -> SdgParams:
    o = rng.uniform(ranges.o_min, ranges.o_max)
    s = rng.uniform(ranges.s_min, ranges.s_max)
    e = rng.uniform(ranges.e_min, ranges.e_max)
    return SdgParams(float(o), float(s), float(e))


def apply_params(seed: CapacityCurve, p: SdgParams, cell_id: str | None = None) -> CapacityCurve:
    c = seed.cycles
    q = seed.capacities
    size = len(c)
    ramp = np.arange(size) / (size - 1)
    q_mod = q + p.offset + p.slope * ramp
    c_mod = c * (1.0 + (p.elongation - 1.0) * ramp)
    if np.any(np.diff(c_mod) <= 0):
        # strong shrinking (e well below 1) folds the cycle axis back on itself
        raise DegenerateOutput("stretched cycle axis is not increasing")
    last = float(round_half_away(c_mod[-1]))
    if last < c[0] + 1:
        raise DegenerateOutput(f"stretched curve ends at cycle {last:g}, before {c[0] + 1:g}")
    grid = np.arange(c[0], last + 1.0)
    q_new = np.interp(grid, c_mod, q_mod)
    over = grid > c_mod[-1]
    if over.any():
        # rounding up the final cycle overhangs the data by < 1 cycle; extend the last segment
        rate = (q_mod[-1] - q_mod[-2]) / (c_mod[-1] - c_mod[-2])
        q_new[over] = q_mod[-1] + rate * (grid[over] - c_mod[-1])
    if np.any(q_new <= 0) or not np.all(np.isfinite(q_new)):
        raise DegenerateOutput("synthetic curve has non-positive capacity")
    return seed.with_data(grid, q_new, cell_id=cell_id)


@dataclass(frozen=True)
class Provenance:
    cell_id: str
    seed_cell_id: str
    offset: float
    slope: float
    elongation: float
    master_seed: int
    draw_index: int
    attempts: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SyntheticBatch:
    curves: list[CapacityCurve]
    provenance: list[Provenance]

    def __len__(self) -> int:
        return len(self.curves)


def generate_one(
    seeds: Sequence[CapacityCurve],
    ranges: ParamRanges,
    master_seed: int,
    index: int,
    *,
    role: str = "synthetic",
    prefix: str = "syn",
    max_retries: int = DEFAULT_RETRIES,
    accept: Callable[[CapacityCurve], bool] | None = None,
) -> tuple[CapacityCurve, Provenance]:
    rng = substream(master_seed, role, index)
    seed = seeds[int(rng.integers(len(seeds)))]
    cid = f"{prefix}-{index:06d}"
    for attempt in range(1, max_retries + 1):
        p = sample_params(ranges, rng)
        try:
            curve = apply_params(seed, p, cell_id=cid)
        except DegenerateOutput:
            continue
        if accept is not None and not accept(curve):
            continue
        prov = Provenance(
            cid, seed.cell_id, p.offset, p.slope, p.elongation,
            int(master_seed), index, attempt,
        )
        return curve, prov
    raise GenerationFailure(seed.cell_id, max_retries)


def generate_batch(
    seeds: Sequence[CapacityCurve],
    ranges: ParamRanges,
    count: int,
    master_seed: int,
    *,
    role: str = "synthetic",
    prefix: str = "syn",
    max_retries: int = DEFAULT_RETRIES,
    accept: Callable[[CapacityCurve], bool] | None = None,
) -> SyntheticBatch:
    """Draw ``count`` synthetic curves.

    Curve ``i`` uses its own sub-stream ``(master_seed, role, i)``, so any
    slice of the batch can be regenerated independently.
    """
    if count < 0:
        raise InvalidArgument("count must be >= 0")
    if count and not seeds:
        raise InsufficientData("no seed curves")
    curves, prov = [], []
    for i in range(count):
        c, p = generate_one(
            seeds, ranges, master_seed, i,
            role=role, prefix=prefix, max_retries=max_retries, accept=accept,
        )
        curves.append(c)
        prov.append(p)
    return SyntheticBatch(curves, prov)


def write_batch(batch: SyntheticBatch, csv_path, provenance_path) -> None:
    write_dataset_csv(csv_path, batch.curves)
    with Path(provenance_path).open("w", encoding="utf-8") as fh:
        for rec in batch.provenance:
            fh.write(rec.to_json() + "\n")


def read_provenance(path) -> list[Provenance]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(Provenance(**json.loads(line)))
    return out


def check_batch(batch: SyntheticBatch) -> list[str]:
    """Cell ids of batch members that fail curve validation."""
    return [c.cell_id for c in batch.curves if validate(c) is not None]

"""Capacity-fade curves, datasets, and the resampling primitives built on them.

Every other module trades in :class:`CapacityCurve`: a strictly increasing
vector of cycle numbers paired with discharge capacities in Ah.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import solve_banded

from .errors import InvalidArgument, OutOfRange, ParseError

CSV_HEADER = ("cell_id", "cycle", "capacity_ah")


@dataclass(frozen=True, eq=False)
class CapacityCurve:
    cell_id: str
    cycles: np.ndarray
    capacities: np.ndarray
    nominal_capacity: float

    def __post_init__(self):
        object.__setattr__(self, "cycles", np.asarray(self.cycles, dtype=float))
        object.__setattr__(self, "capacities", np.asarray(self.capacities, dtype=float))
        object.__setattr__(self, "nominal_capacity", float(self.nominal_capacity))

    def __len__(self) -> int:
        return len(self.cycles)

    @property
    def first_cycle(self) -> float:
        return float(self.cycles[0])

    @property
    def last_cycle(self) -> float:
        return float(self.cycles[-1])

    def with_data(self, cycles, capacities, cell_id: str | None = None) -> "CapacityCurve":
        return CapacityCurve(
            self.cell_id if cell_id is None else cell_id,
            cycles,
            capacities,
            self.nominal_capacity,
        )

    def is_unit_spaced(self) -> bool:
        return bool(np.all(np.diff(self.cycles) == 1.0))


def validate(curve: CapacityCurve) -> str | None:
    """Return a description of the first violated invariant, or None when valid."""
    c = np.asarray(curve.cycles)
    q = np.asarray(curve.capacities)
    if c.ndim != 1 or q.ndim != 1:
        return "cycles and capacities must be one-dimensional"
    if len(c) != len(q):
        return "length mismatch"
    if len(c) < 2:
        return "fewer than 2 points"
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(q))):
        return "non-finite values"
    if np.any(c != np.round(c)):
        return "cycles not integer"
    if np.any(np.diff(c) <= 0):
        return "cycles not strictly increasing"
    if c[0] < 1:
        return "first cycle below 1"
    if np.any(q <= 0):
        return "non-positive capacity"
    if not (np.isfinite(curve.nominal_capacity) and curve.nominal_capacity > 0):
        return "non-positive nominal capacity"
    return None


def downsample(curve: CapacityCurve, stride: int) -> CapacityCurve:
    """Keep every ``stride``-th sample, starting with the first."""
    if int(stride) != stride or stride < 1:
        raise InvalidArgument(f"stride must be a positive integer, got {stride!r}")
    stride = int(stride)
    return curve.with_data(curve.cycles[::stride], curve.capacities[::stride])


def _check_targets(curve: CapacityCurve, target_cycles) -> np.ndarray:
    t = np.asarray(target_cycles, dtype=float)
    if t.ndim != 1 or len(t) == 0:
        raise InvalidArgument("target_cycles must be a non-empty 1-D sequence")
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise InvalidArgument("target_cycles must be strictly increasing")
    lo, hi = curve.cycles[0], curve.cycles[-1]
    if t[0] < lo or t[-1] > hi:
        raise OutOfRange(
            f"targets [{t[0]:g}, {t[-1]:g}] exceed the curve span [{lo:g}, {hi:g}]"
        )
    return t


def _hermite_eval(x, y, d, t) -> np.ndarray:
    """Evaluate the cubic Hermite interpolant with knot slopes ``d`` at ``t``."""
    h = np.diff(x)
    delta = np.diff(y) / h
    c2 = (3.0 * delta - 2.0 * d[:-1] - d[1:]) / h
    c3 = (d[:-1] - 2.0 * delta + d[1:]) / h**2
    k = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
    s = t - x[k]
    out = y[k] + s * (d[k] + s * (c2[k] + s * c3[k]))
    # right end lands at s == h in the last interval; pin it to the knot value
    out[t == x[-1]] = y[-1]
    return out


def pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Knot derivatives of the shape-preserving piecewise cubic.

    Interior slopes are the weighted harmonic mean of neighbouring secants
    (zero at local extrema or sign changes); endpoints use the one-sided
    three-point formula with the usual monotonicity clamps. This is the
    slope rule MATLAB's ``pchip`` uses.
    """
    h = np.diff(x)
    delta = np.diff(y) / h
    n = len(x)
    d = np.zeros(n)
    if n == 2:
        d[:] = delta[0]
        return d
    h0, h1 = h[:-1], h[1:]
    m0, m1 = delta[:-1], delta[1:]
    same = np.sign(m0) * np.sign(m1) > 0
    w1 = 2.0 * h1 + h0
    w2 = h1 + 2.0 * h0
    with np.errstate(divide="ignore", invalid="ignore"):
        interior = (w1 + w2) / (w1 / m0 + w2 / m1)
    d[1:-1] = np.where(same, interior, 0.0)
    d[0] = _pchip_end(h[0], h[1], delta[0], delta[1])
    d[-1] = _pchip_end(h[-1], h[-2], delta[-1], delta[-2])
    return d


def _pchip_end(h0, h1, m0, m1) -> float:
    d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > abs(3.0 * m0):
        return 3.0 * m0
    return float(d)


def pchip_resample(curve: CapacityCurve, target_cycles) -> CapacityCurve:
    t = _check_targets(curve, target_cycles)
    x, y = curve.cycles, curve.capacities
    q = _hermite_eval(x, y, pchip_slopes(x, y), t)
    return curve.with_data(t, q)


def linear_resample(curve: CapacityCurve, target_cycles) -> CapacityCurve:
    t = _check_targets(curve, target_cycles)
    return curve.with_data(t, np.interp(t, curve.cycles, curve.capacities))


def natural_spline_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """First derivatives at the knots of the natural cubic spline through (x, y)."""
    n = len(x)
    h = np.diff(x)
    delta = np.diff(y) / h
    if n == 2:
        return np.full(2, delta[0])
    # tridiagonal system for knot slopes with zero curvature at both ends
    ab = np.zeros((3, n))
    rhs = np.empty(n)
    ab[1, 0], ab[0, 1], rhs[0] = 2.0, 1.0, 3.0 * delta[0]
    ab[1, -1], ab[2, -2], rhs[-1] = 2.0, 1.0, 3.0 * delta[-1]
    ab[2, :-2] = h[1:]  # sub-diagonal: row i, column i-1
    ab[1, 1:-1] = 2.0 * (h[:-1] + h[1:])
    ab[0, 2:] = h[:-1]  # super-diagonal: row i, column i+1
    rhs[1:-1] = 3.0 * (h[1:] * delta[:-1] + h[:-1] * delta[1:])
    return solve_banded((1, 1), ab, rhs)


def cubic_spline_resample(curve: CapacityCurve, target_cycles) -> CapacityCurve:
    t = _check_targets(curve, target_cycles)
    x, y = curve.cycles, curve.capacities
    q = _hermite_eval(x, y, natural_spline_slopes(x, y), t)
    return curve.with_data(t, q)


def to_integer_cycles(curve: CapacityCurve, method: str = "pchip") -> CapacityCurve:
    """Resample onto every integer cycle inside the curve span."""
    if curve.is_unit_spaced():
        return curve
    grid = np.arange(np.ceil(curve.cycles[0]), np.floor(curve.cycles[-1]) + 1)
    resampler = {
        "pchip": pchip_resample,
        "linear": linear_resample,
        "spline": cubic_spline_resample,
    }[method]
    return resampler(curve, grid)


@dataclass(frozen=True)
class Dataset:
    name: str
    curves: tuple[CapacityCurve, ...]
    condition_groups: Mapping[str, tuple[str, ...]] | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "curves", tuple(self.curves))
        ids = [c.cell_id for c in self.curves]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("duplicate cell_id in dataset")
        if self.condition_groups is not None:
            known = set(ids)
            groups = {str(k): tuple(v) for k, v in self.condition_groups.items()}
            for g, members in groups.items():
                missing = [m for m in members if m not in known]
                if missing:
                    raise InvalidArgument(f"condition {g!r} references unknown cells {missing}")
            object.__setattr__(self, "condition_groups", groups)

    def __len__(self) -> int:
        return len(self.curves)

    def __iter__(self):
        return iter(self.curves)

    @property
    def cell_ids(self) -> list[str]:
        return [c.cell_id for c in self.curves]

    def get(self, cell_id: str) -> CapacityCurve:
        for c in self.curves:
            if c.cell_id == cell_id:
                return c
        raise KeyError(cell_id)

    def subset(self, cell_ids: Iterable[str]) -> "Dataset":
        wanted = list(cell_ids)
        lookup = {c.cell_id: c for c in self.curves}
        groups = None
        if self.condition_groups is not None:
            keep = set(wanted)
            groups = {
                g: tuple(m for m in members if m in keep)
                for g, members in self.condition_groups.items()
            }
            groups = {g: m for g, m in groups.items() if m}
        return Dataset(self.name, tuple(lookup[i] for i in wanted), groups)

    def groups(self) -> list[tuple[str, ...]]:
        """Cell-id groups by aging condition (one group when none are recorded)."""
        if not self.condition_groups:
            return [tuple(self.cell_ids)]
        return [tuple(v) for _, v in sorted(self.condition_groups.items())]


@dataclass
class IngestReport:
    dataset: Dataset
    row_counts: dict[str, int]
    rejected: dict[str, str]


def read_dataset_csv(path, nominal_capacity: float, name: str | None = None) -> IngestReport:
    """Parse a canonical ``cell_id,cycle,capacity_ah[,condition]`` file.

    Malformed rows raise :class:`ParseError` with the 1-based line number.
    Cells that violate curve invariants are dropped and listed in ``rejected``.
    """
    path = Path(path)
    cells: dict[str, tuple[list[float], list[float]]] = {}
    conditions: dict[str, str] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"empty file; expected header {','.join(CSV_HEADER)}", 1)
        header = [h.strip() for h in header]
        if tuple(header[:3]) != CSV_HEADER or header[3:] not in ([], ["condition"]):
            raise ParseError(
                f"expected header {','.join(CSV_HEADER)}[,condition], got {','.join(header)}",
                1,
            )
        has_cond = len(header) == 4
        for row in reader:
            line = reader.line_num
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            cid = row[0].strip()
            if not cid:
                raise ParseError("empty cell_id", line)
            try:
                cyc = float(row[1])
                cap = float(row[2])
            except ValueError:
                raise ParseError(f"non-numeric cycle or capacity: {row[1]!r}, {row[2]!r}", line)
            if not np.isfinite(cyc) or cyc != int(cyc):
                raise ParseError(f"cycle must be an integer, got {row[1]!r}", line)
            cc, qq = cells.setdefault(cid, ([], []))
            cc.append(cyc)
            qq.append(cap)
            if has_cond:
                cond = row[3].strip()
                if conditions.setdefault(cid, cond) != cond:
                    raise ParseError(f"cell {cid!r} has more than one condition", line)

    curves, rejected, counts = [], {}, {}
    for cid, (cc, qq) in cells.items():
        counts[cid] = len(cc)
        curve = CapacityCurve(cid, cc, qq, nominal_capacity)
        problem = validate(curve)
        if problem is not None:
            rejected[cid] = problem
        else:
            curves.append(curve)
    groups = None
    if has_cond:
        groups = {}
        for c in curves:
            groups.setdefault(conditions[c.cell_id], []).append(c.cell_id)
        groups = {k: tuple(v) for k, v in groups.items() if k}
    return IngestReport(Dataset(name or path.stem, tuple(curves), groups or None), counts, rejected)


def write_dataset_csv(
    path,
    curves: Sequence[CapacityCurve],
    conditions: Mapping[str, str] | None = None,
) -> None:
    """Write curves in the canonical format (vectorised; fine for millions of rows)."""
    import polars as pl

    path = Path(path)
    ids = [c.cell_id for c in curves]
    lengths = np.array([len(c) for c in curves], dtype=np.int64)
    index = np.repeat(np.arange(len(curves), dtype=np.uint32), lengths)
    if curves:
        cycles = np.concatenate([c.cycles for c in curves]).astype(np.int64)
        caps = np.concatenate([c.capacities for c in curves])
    else:
        cycles = np.empty(0, dtype=np.int64)
        caps = np.empty(0)
    cols = {
        "cell_id": pl.Series("cell_id", ids, dtype=pl.String).gather(index),
        "cycle": cycles,
        "capacity_ah": caps,
    }
    if conditions is not None:
        cond = [conditions.get(i, "") for i in ids]
        cols["condition"] = pl.Series("condition", cond, dtype=pl.String).gather(index)
    pl.DataFrame(cols).write_csv(path)

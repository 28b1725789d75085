"""Generated benchmark seed datasets with known two-stage fade behaviour.

Each cell follows a smoothed two-slope law::

    Q(c) = q0 - a*c - b*w*softplus((c - knee) / w) + noise

so the early fade rate is ``a`` and the late rate ``a + b``. Cells that fade
faster early tend to knee earlier (``knee ~ 1/a`` times an independent
log-normal jitter), so early-life windows carry some but not all of the
lifetime information, while EOL and knee stay strongly correlated.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass

import numpy as np

from .curve import CapacityCurve, Dataset, write_dataset_csv


@dataclass(frozen=True)
class BenchmarkSpec:
    n_cells: int = 48
    nominal: float = 2.0
    q0: float = 2.0
    q0_sd: float = 0.008
    early_rate: float = 1.0e-4
    early_rate_sd: float = 0.2  # log-normal spread
    late_rate: float = 2.0e-3
    late_rate_sd: float = 0.1
    knee_ref: float = 1300.0
    knee_sd: float = 0.12  # log-normal lifetime jitter independent of the early fade rate
    width: float = 25.0
    noise_sd: float = 5e-4
    end_fraction: float = 0.75  # last sample once capacity drops below this * nominal


def _softplus(z):
    return np.logaddexp(0.0, z)


def make_cell(cell_id: str, spec: BenchmarkSpec, rng: np.random.Generator) -> CapacityCurve:
    a_ratio = np.exp(rng.normal(0.0, spec.early_rate_sd))
    a = spec.early_rate * a_ratio
    b = spec.late_rate * np.exp(rng.normal(0.0, spec.late_rate_sd))
    knee = spec.knee_ref / a_ratio * np.exp(rng.normal(0.0, spec.knee_sd))
    q0 = spec.q0 + rng.normal(0.0, spec.q0_sd)
    # long enough to pass end_fraction even for the slowest plausible cell
    horizon = int(knee + (q0 - spec.end_fraction * spec.nominal) / (a + b) * 3 + 200)
    c = np.arange(1, horizon + 1, dtype=float)
    q = q0 - a * c - b * spec.width * _softplus((c - knee) / spec.width)
    q = q + rng.normal(0.0, spec.noise_sd, len(c))
    below = np.flatnonzero(q < spec.end_fraction * spec.nominal)
    end = int(below[0]) + 1 if len(below) else len(c)
    return CapacityCurve(cell_id, c[:end], q[:end], spec.nominal)


def make_benchmark(seed: int = 0, spec: BenchmarkSpec = BenchmarkSpec(), name: str = "benchmark") -> Dataset:
    rng = np.random.default_rng(seed)
    curves = tuple(make_cell(f"cell{i + 1:02d}", spec, rng) for i in range(spec.n_cells))
    return Dataset(name, curves)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Write a generated benchmark seed dataset as canonical CSV.")
    ap.add_argument("out")
    ap.add_argument("--cells", type=int, default=48)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    ds = make_benchmark(args.seed, BenchmarkSpec(n_cells=args.cells))
    write_dataset_csv(args.out, ds.curves)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

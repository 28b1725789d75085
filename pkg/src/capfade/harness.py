"""Experiment engine: input windows, augmentation scenarios, and error metrics.

Errors are aggregated cell -> run -> cycle: the MAE over test cells for each
(run, window), its mean over runs (``mae_ra``), and that curve's mean over
windows (``mae_ca``).
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import cnn, gpr
from .curve import CapacityCurve, Dataset, pchip_resample
from .errors import InsufficientData, InvalidArgument
from .landmarks import Landmarks, detect_eol, detect_knee
from .rng import substream
from .sdg import ParamRanges, Provenance, generate_batch

SCHEMA_VERSION = "capfade.report/1"
KINDS = ("seed-only", "seed-plus-fixed-synthetic", "partial-replacement", "sparse-enrichment")
TARGETS = ("eol", "knee")
MODEL_KINDS = ("gpr", "cnn")


# -- inputs ------------------------------------------------------------------

@dataclass(frozen=True)
class InputWindow:
    available_cycles: int
    stride: int = 2

    def __post_init__(self):
        if self.stride < 1:
            raise InvalidArgument("stride must be >= 1")
        if self.available_cycles < self.stride:
            raise InvalidArgument("available_cycles must be >= stride")

    @property
    def cycles(self) -> np.ndarray:
        return np.arange(1, self.available_cycles + 1, self.stride, dtype=float)

    @property
    def length(self) -> int:
        return len(self.cycles)


def spans_window(curve: CapacityCurve, window: InputWindow) -> bool:
    return curve.first_cycle <= 1 and curve.last_cycle >= window.available_cycles


def build_input(curve: CapacityCurve, window: InputWindow) -> np.ndarray:
    """Capacities at cycles 1, 1+stride, ... up to ``available_cycles``."""
    if not spans_window(curve, window):
        raise InsufficientData(
            f"{curve.cell_id!r} spans cycles [{curve.first_cycle:g}, {curve.last_cycle:g}], "
            f"window needs [1, {window.available_cycles}]"
        )
    if curve.first_cycle == 1 and curve.is_unit_spaced():
        return curve.capacities[: window.available_cycles: window.stride].copy()
    return pchip_resample(curve, window.cycles).capacities


# -- metrics -----------------------------------------------------------------

def prediction_error(y_pred: float, y_actual: float, percent: bool = False) -> float:
    delta = float(y_pred) - float(y_actual)
    if not percent:
        return delta
    if y_actual == 0:
        raise InvalidArgument("percent error undefined for an actual value of 0")
    return 100.0 * delta / float(y_actual)


def mae(deltas) -> float:
    d = np.asarray(list(deltas) if not isinstance(deltas, np.ndarray) else deltas, dtype=float)
    if d.size == 0:
        raise InsufficientData("MAE of an empty set")
    return float(np.mean(np.abs(d)))


def mae_run_average(per_run) -> np.ndarray:
    """Mean over runs (axis 0) of per-run MAE values at each cycle point."""
    a = np.asarray(per_run, dtype=float)
    if a.size == 0 or a.shape[0] == 0:
        raise InsufficientData("no runs to average")
    return np.asarray(a.mean(axis=0))


def mae_cycle_average(mae_ra) -> float:
    a = np.asarray(mae_ra, dtype=float)
    if a.size == 0:
        raise InsufficientData("no cycle points to average")
    return float(a.mean())


def effort_savings(n_full_real: int, n_real_in_mixed: int) -> float:
    if n_full_real <= 0:
        raise InvalidArgument("n_full_real must be > 0")
    if not 0 <= n_real_in_mixed <= n_full_real:
        raise InvalidArgument("n_real_in_mixed must lie in [0, n_full_real]")
    return 100.0 * (n_full_real - n_real_in_mixed) / n_full_real


def pearson(xs, ys) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) != len(y) or len(x) < 2:
        raise InsufficientData("pearson needs >= 2 paired points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise InvalidArgument("pearson undefined for zero variance")
    return float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))


# -- scenarios ---------------------------------------------------------------

@dataclass(frozen=True)
class Scenario:
    """A set of training-composition arms evaluated on a fixed test set.

    Each arm is ``(n_real, n_synthetic)``. Use the ``seed_only`` /
    ``fixed_synthetic`` / ``partial_replacement`` / ``sparse_enrichment``
    constructors rather than spelling arms out by hand.
    """

    kind: str
    arms: tuple[tuple[int, int], ...]
    target: str = "eol"
    runs: int = 15
    seed: int = 0
    windows: tuple[int, ...] = (100, 200, 300, 400, 500, 600, 700, 800)
    stride: int = 2
    test_cells: tuple[str, ...] | int = 7
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if self.target not in TARGETS:
            raise InvalidArgument(f"unknown target {self.target!r}")
        if self.runs < 1:
            raise InvalidArgument("runs must be >= 1")
        object.__setattr__(self, "arms", tuple((int(r), int(s)) for r, s in self.arms))
        object.__setattr__(self, "windows", tuple(int(w) for w in self.windows))
        if not self.arms or any(r < 1 or s < 0 for r, s in self.arms):
            raise InvalidArgument("every arm needs >= 1 real cell and >= 0 synthetic")
        if not self.windows:
            raise InvalidArgument("no input windows")
        if self.kind == "partial-replacement" and len({r + s for r, s in self.arms}) != 1:
            raise InvalidArgument("partial replacement arms must share one training size")
        if isinstance(self.test_cells, (list, tuple)):
            object.__setattr__(self, "test_cells", tuple(self.test_cells))

    @classmethod
    def seed_only(cls, real_counts: Sequence[int], **kw) -> "Scenario":
        return cls("seed-only", tuple((r, 0) for r in real_counts), **kw)

    @classmethod
    def fixed_synthetic(cls, real_counts: Sequence[int], synthetic: int = 30, **kw) -> "Scenario":
        return cls("seed-plus-fixed-synthetic", tuple((r, synthetic) for r in real_counts), **kw)

    @classmethod
    def partial_replacement(cls, total: int, real_counts: Sequence[int], **kw) -> "Scenario":
        return cls("partial-replacement", tuple((r, total - r) for r in real_counts), **kw)

    @classmethod
    def sparse_enrichment(cls, n_real: int, ratios: Sequence[int] = (0, 1, 2, 3), **kw) -> "Scenario":
        return cls("sparse-enrichment", tuple((n_real, n_real * int(k)) for k in ratios), **kw)

    def arm_label(self, i: int) -> str:
        r, s = self.arms[i]
        return f"{r}" if s == 0 else f"{r}+{s}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arms"] = [list(a) for a in self.arms]
        d["windows"] = list(self.windows)
        d["test_cells"] = list(self.test_cells) if isinstance(self.test_cells, tuple) else self.test_cells
        return d


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "gpr"
    gpr_tune: bool = True
    gpr_folds: int = 5
    cnn_epochs: int = 700
    cnn_learning_rate: float = 0.01
    cnn_batch_size: int = 16
    cnn_channels: tuple[int, ...] = (8, 16)
    cnn_hidden: int = 32
    normalize_by_nominal: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidArgument(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")


def target_value(lm: Landmarks | None, target: str) -> int | None:
    if lm is None:
        return None
    return lm.eol_cycle if target == "eol" else lm.knee_cycle


def label_target(curve: CapacityCurve, target: str, eol_fraction: float = 0.8) -> int | None:
    if target == "eol":
        return detect_eol(curve, eol_fraction)
    try:
        return detect_knee(curve)
    except InsufficientData:
        return None


def select_test_cells(dataset: Dataset, labels: Mapping[str, Landmarks], scenario: Scenario) -> list[str]:
    eligible = [
        cid for cid in dataset.cell_ids
        if target_value(labels.get(cid), scenario.target) is not None
    ]
    if isinstance(scenario.test_cells, tuple):
        missing = [c for c in scenario.test_cells if c not in eligible]
        if missing:
            raise InvalidArgument(f"test cells without a {scenario.target} label: {missing}")
        return list(scenario.test_cells)
    n = int(scenario.test_cells)
    if not 1 <= n < len(eligible):
        raise InsufficientData(f"cannot hold out {n} test cells from {len(eligible)} labelled cells")
    order = substream(scenario.seed, "test-split").permutation(len(eligible))
    return sorted(eligible[i] for i in order[:n])


# -- model fitting -----------------------------------------------------------

def _fit_predict(spec: ModelSpec, x_train, y_train, x_test, seed: int, nominal: float,
                 validation=None) -> np.ndarray:
    if spec.kind == "gpr":
        if spec.gpr_tune and len(y_train) >= 3:
            k = min(spec.gpr_folds, len(y_train))
            hyper = gpr.tune(x_train, y_train, k=k, rng=substream(seed, "gpr-folds")).hyper
        else:
            hyper = gpr.default_hyper(x_train, y_train)
        model = gpr.fit(x_train, y_train, hyper)
        return gpr.predict(model, x_test)[0]
    arch = cnn.CnnArch(
        x_train.shape[1],
        tuple(cnn.ConvStage(3, c, 2) for c in spec.cnn_channels),
        (0.1, 0.1),
        (spec.cnn_hidden, 1),
    )
    cfg = cnn.TrainConfig(
        epochs=spec.cnn_epochs,
        learning_rate=spec.cnn_learning_rate,
        batch_size=spec.cnn_batch_size,
        seed=seed,
        input_scale=nominal if spec.normalize_by_nominal else 1.0,
    )
    model = cnn.train(x_train, y_train, arch, cfg, validation=validation)
    return model.predict(x_test)


# -- scenario runs -----------------------------------------------------------

@dataclass
class RunRecord:
    run: int
    arm: int
    real_cells: list[str]
    validation_cells: list[str]
    synthetic: list[Provenance]
    # errors[window][cell_id] = signed error in cycles
    errors: dict[int, dict[str, float]]
    train_sizes: dict[int, int]


def _arm_run(dataset: Dataset, labels, scenario: Scenario, spec: ModelSpec,
             ranges: ParamRanges | None, test: list[str], pool: list[str],
             run: int, arm: int, eol_fraction: float) -> RunRecord:
    n_real, n_syn = scenario.arms[arm]
    order = substream(scenario.seed, "real-subset", run).permutation(len(pool))
    real = [pool[i] for i in order[:n_real]]
    real_curves = [dataset.get(c) for c in real]
    synthetic, syn_prov, syn_targets = [], [], {}
    if n_syn:
        if ranges is None:
            raise InvalidArgument("synthetic arms need parameter ranges")

        def has_label(c: CapacityCurve) -> bool:
            return label_target(c, scenario.target, eol_fraction) is not None

        batch = generate_batch(
            real_curves, ranges, n_syn, scenario.seed,
            role=f"synthetic/run{run}/arm{arm}", prefix=f"syn-r{run}a{arm}",
            accept=has_label,
        )
        synthetic, syn_prov = batch.curves, batch.provenance
        syn_targets = {c.cell_id: label_target(c, scenario.target, eol_fraction) for c in synthetic}

    real_targets = {c: target_value(labels[c], scenario.target) for c in real}
    validation = []
    if spec.kind == "cnn" and len(real) >= 2:
        k = max(1, int(round(0.2 * len(real))))
        vorder = substream(scenario.seed, "validation", run, arm).permutation(len(real))
        validation = sorted(real[i] for i in vorder[:k])
    fit_real = [c for c in real if c not in validation]

    errors, sizes = {}, {}
    model_seed = int(substream(scenario.seed, "model", run, arm).integers(2**63))
    for w in scenario.windows:
        win = InputWindow(w, scenario.stride)
        train_curves = [dataset.get(c) for c in fit_real] + list(synthetic)
        train_curves = [c for c in train_curves if spans_window(c, win)]
        y = np.array([
            real_targets[c.cell_id] if c.cell_id in real_targets else syn_targets[c.cell_id]
            for c in train_curves
        ], dtype=float)
        sizes[w] = len(train_curves)
        if len(train_curves) < (2 if spec.kind == "cnn" else 1):
            raise InsufficientData(f"run {run} arm {arm}: no training curves span window {w}")
        x = np.vstack([build_input(c, win) for c in train_curves])
        xt = np.vstack([build_input(dataset.get(c), win) for c in test])
        nominal = dataset.get(test[0]).nominal_capacity
        val = None
        if validation:
            vc = [dataset.get(c) for c in validation if spans_window(dataset.get(c), win)]
            if vc:
                val = (
                    np.vstack([build_input(c, win) for c in vc]),
                    np.array([real_targets[c.cell_id] for c in vc], dtype=float),
                )
        pred = _fit_predict(spec, x, y, xt, model_seed + w, nominal, validation=val)
        actual = [target_value(labels[c], scenario.target) for c in test]
        errors[w] = {c: prediction_error(p, a) for c, p, a in zip(test, pred, actual)}
    return RunRecord(run, arm, real, validation, syn_prov, errors, sizes)


def _arm_run_star(args):
    return _arm_run(*args)


def run_scenario(dataset: Dataset, labels: Mapping[str, Landmarks], scenario: Scenario,
                 model: ModelSpec | str = "gpr", ranges: ParamRanges | None = None,
                 eol_fraction: float = 0.8, workers: int = 1) -> dict:
    """Evaluate every arm of ``scenario`` over ``scenario.runs`` seeded runs.

    Test cells are fixed for the whole scenario and never enter training or
    validation; synthetic curves are generated only from the run's real
    training subset and are used for training only.
    """
    spec = ModelSpec(model) if isinstance(model, str) else model
    t0 = time.perf_counter()
    test = select_test_cells(dataset, labels, scenario)
    pool = [
        c for c in dataset.cell_ids
        if c not in test and target_value(labels.get(c), scenario.target) is not None
    ]
    need = max(r for r, _ in scenario.arms)
    if need > len(pool):
        raise InsufficientData(f"scenario needs {need} real training cells, only {len(pool)} available")
    for c in test:
        curve = dataset.get(c)
        for w in scenario.windows:
            if not spans_window(curve, InputWindow(w, scenario.stride)):
                raise InsufficientData(f"test cell {c!r} is shorter than window {w}")

    jobs = [
        (dataset, labels, scenario, spec, ranges, test, pool, run, arm, eol_fraction)
        for arm in range(len(scenario.arms)) for run in range(scenario.runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_arm_run_star, jobs))
    else:
        records = [_arm_run(*j) for j in jobs]

    actual = {c: target_value(labels[c], scenario.target) for c in test}
    arms = []
    for a in range(len(scenario.arms)):
        recs = [r for r in records if r.arm == a]
        arms.append(_aggregate_arm(scenario, a, recs, actual))
    return {
        "schema": SCHEMA_VERSION,
        "scenario": scenario.to_dict(),
        "model": asdict(spec),
        "ranges": None if ranges is None else asdict(ranges),
        "test_cells": test,
        "actual": actual,
        "arms": arms,
        "provenance": {
            "master_seed": scenario.seed,
            "streams": {
                "test_split": "test-split",
                "real_subset": "real-subset/<run>",
                "synthetic": "synthetic/run<run>/arm<arm>/<index>",
                "model": "model/<run>/<arm>",
            },
        },
        "wall_clock_s": time.perf_counter() - t0,
    }


def _aggregate_arm(scenario: Scenario, arm: int, recs: list[RunRecord], actual) -> dict:
    windows = list(scenario.windows)
    per_run_cycles = np.array([
        [mae(list(r.errors[w].values())) for w in windows] for r in recs
    ])
    per_run_pct = np.array([
        [mae([100.0 * d / actual[c] for c, d in r.errors[w].items()]) for w in windows]
        for r in recs
    ])
    ra_cycles = mae_run_average(per_run_cycles)
    ra_pct = mae_run_average(per_run_pct)
    n_real, n_syn = scenario.arms[arm]
    return {
        "label": scenario.arm_label(arm),
        "n_real": n_real,
        "n_synthetic": n_syn,
        "windows": windows,
        "mae_ra_cycles": ra_cycles.tolist(),
        "mae_ra_pct": ra_pct.tolist(),
        "mae_ca_cycles": mae_cycle_average(ra_cycles),
        "mae_ca_pct": mae_cycle_average(ra_pct),
        "per_run_mae_cycles": per_run_cycles.tolist(),
        "runs": [
            {
                "run": r.run,
                "real_cells": r.real_cells,
                "validation_cells": r.validation_cells,
                "train_sizes": {str(w): r.train_sizes[w] for w in windows},
                "synthetic": [asdict(p) for p in r.synthetic],
                "errors": {str(w): r.errors[w] for w in windows},
            }
            for r in recs
        ],
    }


# -- cross validation and sensitivity ---------------------------------------

def kfold_cv(dataset: Dataset, labels: Mapping[str, Landmarks], k: int,
             model: ModelSpec | str = "gpr", target: str = "eol",
             windows: Sequence[int] = (100, 200, 300, 400), stride: int = 2,
             seed: int = 0) -> dict:
    """Per-fold MAE curves over windows plus the min/mean/max envelope."""
    spec = ModelSpec(model) if isinstance(model, str) else model
    cells = [c for c in dataset.cell_ids if target_value(labels.get(c), target) is not None]
    if not 2 <= k <= len(cells):
        raise InvalidArgument(f"k must lie in [2, {len(cells)}], got {k}")
    order = substream(seed, "kfold").permutation(len(cells))
    folds = [sorted(cells[i] for i in part) for part in np.array_split(order, k)]
    t0 = time.perf_counter()
    fold_curves = []
    for fi, held in enumerate(folds):
        train_ids = [c for c in cells if c not in held]
        curve = []
        for w in windows:
            win = InputWindow(w, stride)
            tr = [dataset.get(c) for c in train_ids if spans_window(dataset.get(c), win)]
            te = [dataset.get(c) for c in held if spans_window(dataset.get(c), win)]
            if not te or len(tr) < 2:
                curve.append(None)
                continue
            x = np.vstack([build_input(c, win) for c in tr])
            y = np.array([target_value(labels[c.cell_id], target) for c in tr], dtype=float)
            xt = np.vstack([build_input(c, win) for c in te])
            yt = np.array([target_value(labels[c.cell_id], target) for c in te], dtype=float)
            pred = _fit_predict(spec, x, y, xt, seed + 1000 * fi + w, tr[0].nominal_capacity)
            curve.append(mae(pred - yt))
        fold_curves.append(curve)
    env = []
    for j in range(len(windows)):
        vals = [fc[j] for fc in fold_curves if fc[j] is not None]
        env.append(
            {"min": min(vals), "mean": float(np.mean(vals)), "max": max(vals)} if vals else None
        )
    return {
        "schema": SCHEMA_VERSION,
        "kind": "kfold",
        "k": k,
        "target": target,
        "model": asdict(spec),
        "seed": seed,
        "windows": list(windows),
        "folds": folds,
        "fold_mae_cycles": fold_curves,
        "envelope": env,
        "wall_clock_s": time.perf_counter() - t0,
    }


def sensitivity_sweep(dataset: Dataset, labels: Mapping[str, Landmarks],
                      halfwidths: Sequence[float], scenario: Scenario,
                      model: ModelSpec | str, base_ranges: ParamRanges,
                      eol_fraction: float = 0.8) -> dict[float, dict]:
    """One scenario evaluation per elongation half-width; offset/slope ranges held fixed."""
    halfwidths = list(halfwidths)
    if not halfwidths:
        raise InvalidArgument("no elongation half-widths given")
    for h in halfwidths:
        if not 0 < h < 1:
            raise InvalidArgument(f"half-width {h} outside (0, 1)")
    return {
        h: run_scenario(dataset, labels, scenario, model, base_ranges.with_elongation(h), eol_fraction)
        for h in halfwidths
    }


# -- reports -----------------------------------------------------------------

def synthetic_leaks(report: dict) -> list[str]:
    """Synthetic cell ids that ended up in a test or validation set (should be empty)."""
    held = set(report["test_cells"])
    leaks = []
    for arm in report["arms"]:
        syn = {p["cell_id"] for r in arm["runs"] for p in r["synthetic"]}
        for r in arm["runs"]:
            held_here = held | set(r["validation_cells"])
            leaks.extend(sorted(syn & held_here))
    return leaks


def recompute_mae_ca(arm: dict) -> float:
    """MAE_c.a. rebuilt from the raw per-cell errors stored in a report arm."""
    per_run = [
        [mae(list(run["errors"][str(w)].values())) for w in arm["windows"]]
        for run in arm["runs"]
    ]
    return mae_cycle_average(mae_run_average(per_run))


def strip_wall_clock(doc):
    if isinstance(doc, dict):
        return {k: strip_wall_clock(v) for k, v in doc.items() if k != "wall_clock_s"}
    if isinstance(doc, list):
        return [strip_wall_clock(v) for v in doc]
    return doc


def dumps_report(doc: dict) -> str:
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


_REQUIRED = {
    "schema": str, "scenario": dict, "model": dict, "test_cells": list,
    "arms": list, "provenance": dict,
}
_ARM_REQUIRED = {
    "label": str, "n_real": int, "n_synthetic": int, "windows": list,
    "mae_ra_cycles": list, "mae_ra_pct": list, "mae_ca_cycles": float,
    "mae_ca_pct": float, "runs": list,
}


def validate_report(doc: dict) -> list[str]:
    """Structural problems with a scenario report (empty list when valid)."""
    problems = []
    for key, typ in _REQUIRED.items():
        if not isinstance(doc.get(key), typ):
            problems.append(f"missing or mistyped field {key!r}")
    if doc.get("schema") != SCHEMA_VERSION:
        problems.append(f"unexpected schema {doc.get('schema')!r}")
    for i, arm in enumerate(doc.get("arms") or []):
        for key, typ in _ARM_REQUIRED.items():
            val = arm.get(key)
            if typ is float and isinstance(val, int):
                continue
            if not isinstance(val, typ):
                problems.append(f"arm {i}: missing or mistyped field {key!r}")
        if len(arm.get("mae_ra_cycles", [])) != len(arm.get("windows", [])):
            problems.append(f"arm {i}: mae_ra_cycles length differs from windows")
    return problems


def write_plot_csv(path, arm: dict) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["available_cycles", "mae_ra_pct", "mae_ra_cycles"])
        for cyc, pct, cycles in zip(arm["windows"], arm["mae_ra_pct"], arm["mae_ra_cycles"]):
            w.writerow([cyc, repr(float(pct)), repr(float(cycles))])

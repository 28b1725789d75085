"""Gaussian-process regression with a Matérn (nu = 3/2) covariance.

Maps fixed-length capacity windows to landmark cycles. Targets are centred
on their training mean so predictions far from the data revert to that mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist, pdist

from .errors import IllConditioned, InsufficientData, InvalidArgument

SQRT3 = math.sqrt(3.0)


@dataclass(frozen=True)
class GprHyper:
    length_scale: float
    signal_variance: float = 1.0
    noise_variance: float = 0.0

    def __post_init__(self):
        if not self.length_scale > 0:
            raise InvalidArgument("length_scale must be > 0")
        if not self.signal_variance > 0:
            raise InvalidArgument("signal_variance must be > 0")
        if not self.noise_variance >= 0:
            raise InvalidArgument("noise_variance must be >= 0")


def matern32(a, b, hyper: GprHyper) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgument(f"feature length mismatch: {a.shape} vs {b.shape}")
    r = float(np.sqrt(np.sum((a - b) ** 2)))
    return float(matern32_from_distance(r, hyper))


def matern32_from_distance(r, hyper: GprHyper):
    z = SQRT3 * np.asarray(r, dtype=float) / hyper.length_scale
    return hyper.signal_variance * (1.0 + z) * np.exp(-z)


def kernel_matrix(a, b, hyper: GprHyper) -> np.ndarray:
    return matern32_from_distance(cdist(np.atleast_2d(a), np.atleast_2d(b)), hyper)


@dataclass
class GprModel:
    rows: np.ndarray
    targets: np.ndarray
    hyper: GprHyper
    target_mean: float
    chol: tuple
    alpha: np.ndarray

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def fit(rows, targets, hyper: GprHyper | None = None) -> GprModel:
    x = np.atleast_2d(np.asarray(rows, dtype=float))
    y = np.asarray(targets, dtype=float)
    if len(x) < 1 or len(y) != len(x):
        raise InvalidArgument("need >= 1 row and one target per row")
    if not np.all(np.isfinite(y)):
        raise InvalidArgument("targets must be finite")
    if hyper is None:
        hyper = default_hyper(x, y)
    mean = float(y.mean())
    k = kernel_matrix(x, x, hyper)
    k[np.diag_indices_from(k)] += hyper.noise_variance
    try:
        chol = cho_factor(k, lower=True, check_finite=True)
    except LinAlgError:
        raise IllConditioned(
            "kernel matrix is not positive definite; increase noise_variance"
        ) from None
    diag = np.diag(chol[0])
    if diag.min() ** 2 <= len(x) * np.finfo(float).eps * k.diagonal().max():
        raise IllConditioned("kernel matrix is numerically singular; increase noise_variance")
    alpha = cho_solve(chol, y - mean)
    return GprModel(x, y, hyper, mean, chol, alpha)


def predict(model: GprModel, rows) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent variance for each query row."""
    q = np.atleast_2d(np.asarray(rows, dtype=float))
    if q.shape[1] != model.dim:
        raise InvalidArgument(f"query rows have {q.shape[1]} features, model expects {model.dim}")
    ks = kernel_matrix(q, model.rows, model.hyper)
    mean = model.target_mean + ks @ model.alpha
    v = solve_triangular(model.chol[0], ks.T, lower=True)
    var = model.hyper.signal_variance - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)


def default_hyper(rows, targets) -> GprHyper:
    x = np.atleast_2d(np.asarray(rows, dtype=float))
    var = float(np.var(targets))
    scale = feature_scale(x)
    sig = var if var > 0 else 1.0
    return GprHyper(scale, sig, 1e-6 * var)


def feature_scale(rows) -> float:
    """Median pairwise distance between rows (1.0 when undefined)."""
    x = np.atleast_2d(np.asarray(rows, dtype=float))
    if len(x) < 2:
        return 1.0
    d = pdist(x)
    d = d[d > 0]
    return float(np.median(d)) if len(d) else 1.0


def default_grid(rows, targets, n_length: int = 9) -> list[GprHyper]:
    var = float(np.var(targets))
    sig = var if var > 0 else 1.0
    scale = feature_scale(rows)
    grid = []
    for ell in np.logspace(-1, 3, n_length) * scale:
        for noise in (1e-6, 1e-3, 1e-1):
            grid.append(GprHyper(float(ell), sig, noise * sig))
    return grid


def fold_indices(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    if k < 2:
        raise InvalidArgument("k must be >= 2")
    if n < k:
        raise InsufficientData(f"{n} rows cannot be split into {k} folds")
    order = rng.permutation(n)
    return [np.sort(f) for f in np.array_split(order, k)]


def cv_mae(rows, targets, hyper: GprHyper, folds: Sequence[np.ndarray]) -> float:
    x = np.atleast_2d(np.asarray(rows, dtype=float))
    y = np.asarray(targets, dtype=float)
    errs = []
    for hold in folds:
        train = np.setdiff1d(np.arange(len(y)), hold)
        model = fit(x[train], y[train], hyper)
        pred, _ = predict(model, x[hold])
        errs.append(float(np.mean(np.abs(pred - y[hold]))))
    return float(np.mean(errs))


@dataclass(frozen=True)
class TuneResult:
    hyper: GprHyper
    cv_mae: float
    scores: tuple[tuple[GprHyper, float], ...]


def tune(rows, targets, grid: Sequence[GprHyper] | None = None, k: int = 5,
         rng: np.random.Generator | int = 0) -> TuneResult:
    """Grid point with the lowest mean k-fold validation MAE.

    Ties prefer the smaller length scale, then the smaller signal variance.
    Grid points whose kernel cannot be factorised score +inf.
    """
    x = np.atleast_2d(np.asarray(rows, dtype=float))
    y = np.asarray(targets, dtype=float)
    if grid is None:
        grid = default_grid(x, y)
    if not grid:
        raise InvalidArgument("empty hyperparameter grid")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    folds = fold_indices(len(y), k, rng)
    scores = []
    for h in grid:
        try:
            s = cv_mae(x, y, h, folds)
        except IllConditioned:
            s = math.inf
        scores.append((h, s))
    best = min(scores, key=lambda hs: (hs[1], hs[0].length_scale, hs[0].signal_variance))
    return TuneResult(best[0], best[1], tuple(scores))


def write_summary(path, model: GprModel, cv: float | None = None) -> None:
    doc = {
        "kernel": "matern32",
        "hyper": asdict(model.hyper),
        "d": model.dim,
        "n_train": len(model.targets),
        "target_mean": model.target_mean,
        "cv_mae": cv,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

"""Tests for knee and end-of-life detection."""

from __future__ import annotations

import numpy as np
import pytest

from capfade import _kernels
from capfade.curve import CapacityCurve, Dataset
from capfade.errors import InsufficientData, InvalidArgument
from capfade.landmarks import (
    detect_eol,
    detect_knee,
    fit_two_lines,
    label_dataset,
    read_labels_csv,
    write_labels_csv,
)
from capfade.sdg import SdgParams, apply_params

from conftest import two_slope_curve


def brute_sse(x, y, min_side=3):
    out = np.full(len(x), np.inf)
    for b in range(min_side - 1, len(x) - min_side + 1):
        total = 0.0
        for xs, ys in ((x[: b + 1], y[: b + 1]), (x[b:], y[b:])):
            coef = np.polyfit(xs, ys, 1)
            total += float(np.sum((np.polyval(coef, xs) - ys) ** 2))
        out[b] = total
    return out


class TestEol:
    def test_first_crossing(self):
        c = CapacityCurve("a", [97, 98, 99, 100], [1.7, 1.65, 1.62, 1.58], 2.0)
        assert detect_eol(c) == 100

    def test_exact_threshold_counts(self):
        assert detect_eol(CapacityCurve("a", [1, 2], [2.0, 1.6], 2.0)) == 2

    def test_not_reached(self):
        assert detect_eol(CapacityCurve("a", [1, 2, 3], [2.0, 1.9, 1.85], 2.0)) is None

    def test_seventy_percent(self):
        c = CapacityCurve("a", [1, 2, 3, 4], [2.0, 1.5, 1.41, 1.4], 2.0)
        assert detect_eol(c, 0.7) == 4
        assert detect_eol(c) == 2

    def test_bad_fraction(self):
        with pytest.raises(InvalidArgument):
            detect_eol(CapacityCurve("a", [1, 2], [2.0, 1.9], 2.0), 1.2)


class TestKnee:
    def test_constructed_breakpoint(self):
        c = two_slope_curve(500, 800)
        assert abs(detect_knee(c) - 500) <= 2

    def test_linear_has_no_knee(self):
        c = CapacityCurve("a", np.arange(1, 301), 2.0 - 1e-3 * np.arange(300), 2.0)
        assert detect_knee(c) is None

    def test_offset_invariant(self):
        c = two_slope_curve(420, 900, noise=0.002, rng=np.random.default_rng(1))
        shifted = c.with_data(c.cycles, c.capacities + 0.3)
        assert detect_knee(shifted) == detect_knee(c)

    def test_stride(self):
        assert abs(detect_knee(two_slope_curve(500, 800), stride=2) - 500) <= 2

    def test_too_short(self):
        with pytest.raises(InsufficientData):
            detect_knee(CapacityCurve("a", [1, 2, 3, 4, 5], [2, 1.9, 1.8, 1.7, 1.6], 2.0))

    def test_sse_matches_polyfit(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            c = two_slope_curve(int(rng.integers(20, 60)), 80, noise=0.01, rng=rng)
            ref = brute_sse(c.cycles, c.capacities)
            np.testing.assert_allclose(_kernels.knee_sse(c.cycles, c.capacities), ref, rtol=1e-7, atol=1e-13)

    def test_split_lines(self):
        fit = fit_two_lines(two_slope_curve(300, 600))
        assert fit.early[0] == pytest.approx(-1e-3, rel=1e-9)
        assert fit.late[0] == pytest.approx(-1e-2, rel=1e-9)
        assert fit.intersection == pytest.approx(300, abs=1e-6)


class TestLabelling:
    def test_empty(self):
        assert label_dataset(Dataset("d", ())) == {}

    def test_per_cell_isolation(self):
        lin = CapacityCurve("lin", np.arange(1, 301), 2.0 - 1e-3 * np.arange(300), 2.0)
        short = CapacityCurve("short", [1, 2, 3], [2.0, 1.5, 1.2], 2.0)
        good = two_slope_curve(200, 400, cell_id="good")
        out = label_dataset(Dataset("d", (lin, short, good)))
        assert out["lin"].knee_cycle is None and out["lin"].error is None
        assert out["short"].knee_cycle is None and out["short"].eol_cycle == 2
        assert out["short"].error is not None
        assert abs(out["good"].knee_cycle - 200) <= 2

    def test_csv_round_trip(self, tmp_path):
        lin = CapacityCurve("lin", np.arange(1, 301), 2.0 - 1e-3 * np.arange(300), 2.0)
        labels = label_dataset(Dataset("d", (lin, two_slope_curve(200, 400, cell_id="g"))))
        p = tmp_path / "l.csv"
        write_labels_csv(p, labels)
        assert p.read_text().splitlines()[1] == "lin,,"
        back = read_labels_csv(p)
        assert {k: (v.knee_cycle, v.eol_cycle) for k, v in back.items()} == {
            k: (v.knee_cycle, v.eol_cycle) for k, v in labels.items()
        }

    def test_benchmark_landmarks_ordered(self, bench):
        for lm in label_dataset(bench).values():
            assert lm.knee_cycle is not None and lm.eol_cycle is not None
            assert lm.knee_cycle < lm.eol_cycle


class TestElongationMovesKnee:
    def test_knee_between_ramp_map_and_uniform_scaling(self):
        c = two_slope_curve(500, 800, late=-2e-3)
        prev = 0
        for e in (0.8, 0.9, 1.0, 1.1, 1.25):
            k = detect_knee(apply_params(c, SdgParams(0.0, 0.0, e)))
            ramp = 500 * (1 + (e - 1) * 499 / 799)  # stretch applied at the knee's sample index
            lo, hi = sorted((ramp, e * 500))
            assert lo - 2 <= k <= hi + 2
            assert k > prev
            prev = k

"""Tests for capacity curves, resampling and CSV ingest."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.interpolate import CubicSpline, PchipInterpolator

from capfade.curve import (
    CapacityCurve,
    Dataset,
    cubic_spline_resample,
    downsample,
    linear_resample,
    pchip_resample,
    read_dataset_csv,
    to_integer_cycles,
    validate,
    write_dataset_csv,
)
from capfade.errors import InvalidArgument, OutOfRange, ParseError


def curve(c, q, nominal=2.0, cid="a"):
    return CapacityCurve(cid, c, q, nominal)


class TestValidate:
    def test_well_formed(self):
        assert validate(curve([1, 2, 3], [2.0, 1.9, 1.8])) is None

    def test_repeated_cycle(self):
        assert validate(curve([1, 1, 3], [2.0, 1.9, 1.8])) == "cycles not strictly increasing"

    def test_length_mismatch(self):
        assert validate(curve([1, 2, 3], [2.0, 1.9])) == "length mismatch"

    def test_single_point(self):
        assert validate(curve([1], [2.0])) == "fewer than 2 points"

    def test_non_positive_capacity(self):
        assert validate(curve([1, 2], [2.0, 0.0])) == "non-positive capacity"

    def test_first_cycle_zero(self):
        assert validate(curve([0, 1], [2.0, 1.9])) == "first cycle below 1"

    def test_fractional_cycle(self):
        assert validate(curve([1, 2.5], [2.0, 1.9])) == "cycles not integer"

    def test_nan(self):
        assert validate(curve([1, 2], [2.0, np.nan])) == "non-finite values"


class TestDownsample:
    def test_even_length(self):
        c = curve(np.arange(1, 7), np.linspace(2, 1.5, 6))
        d = downsample(c, 2)
        assert len(d) == 3
        np.testing.assert_array_equal(d.cycles, [1, 3, 5])

    def test_odd_length(self):
        c = curve(np.arange(1, 6), np.linspace(2, 1.5, 5))
        np.testing.assert_array_equal(downsample(c, 2).cycles, [1, 3, 5])

    def test_stride_one_is_identity(self):
        c = curve(np.arange(1, 6), np.linspace(2, 1.5, 5))
        d = downsample(c, 1)
        np.testing.assert_array_equal(d.capacities, c.capacities)
        np.testing.assert_array_equal(d.cycles, c.cycles)

    def test_composition(self):
        c = curve(np.arange(1, 101), np.linspace(2, 1.5, 100))
        a = downsample(downsample(c, 2), 3)
        b = downsample(c, 6)
        np.testing.assert_array_equal(a.cycles, b.cycles)

    @pytest.mark.parametrize("stride", [0, -1, 1.5])
    def test_bad_stride(self, stride):
        with pytest.raises(InvalidArgument):
            downsample(curve([1, 2], [2.0, 1.9]), stride)


def monotone_curve(rng):
    n = int(rng.integers(3, 30))
    c = np.cumsum(rng.integers(1, 20, n)).astype(float)
    q = 2.0 - np.cumsum(rng.uniform(0.0, 0.05, n))
    # occasional flat step exercises the zero-slope branch
    if n > 4:
        q[2] = q[1]
    return curve(c, q)


class TestPchip:
    def test_knots_exact(self):
        rng = np.random.default_rng(1)
        c = monotone_curve(rng)
        out = pchip_resample(c, c.cycles)
        np.testing.assert_array_equal(out.capacities, c.capacities)

    def test_matches_reference_on_random_monotone(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            c = monotone_curve(rng)
            t = np.linspace(c.cycles[0], c.cycles[-1], 97)
            ours = pchip_resample(c, t).capacities
            ref = PchipInterpolator(c.cycles, c.capacities)(t)
            np.testing.assert_allclose(ours, ref, rtol=0, atol=1e-12)
            assert np.all(np.diff(ours) <= 1e-15)

    def test_below_span(self):
        with pytest.raises(OutOfRange):
            pchip_resample(curve([2, 3, 4], [2.0, 1.9, 1.8]), [1])

    def test_two_knots_is_linear(self):
        out = pchip_resample(curve([1, 5], [2.0, 1.6]), [1, 2, 3, 5])
        np.testing.assert_allclose(out.capacities, [2.0, 1.9, 1.8, 1.6], atol=1e-15)


class TestLinear:
    def test_knots_exact(self):
        c = curve([1, 3, 6], [2.0, 1.9, 1.8])
        np.testing.assert_array_equal(linear_resample(c, c.cycles).capacities, c.capacities)

    def test_midpoint(self):
        assert linear_resample(curve([1, 3], [2.0, 1.8]), [2]).capacities[0] == pytest.approx(1.9, abs=1e-15)

    def test_left_knot(self):
        assert linear_resample(curve([1, 3, 6], [2.0, 1.9, 1.8]), [1]).capacities[0] == 2.0


class TestSpline:
    def test_knots_exact(self):
        c = curve([1, 4, 6, 10], [2.0, 1.9, 1.85, 1.6])
        np.testing.assert_array_equal(cubic_spline_resample(c, c.cycles).capacities, c.capacities)

    def test_three_knot_closed_form(self):
        x = np.array([1.0, 4.0, 9.0])
        y = np.array([2.0, 1.9, 1.5])
        h0, h1 = np.diff(x)
        d0, d1 = np.diff(y) / np.diff(x)
        m1 = 3.0 * (d1 - d0) / (h0 + h1)  # second derivative at the middle knot

        def oracle(t):
            if t <= x[1]:
                u = t - x[0]
                return m1 * u**3 / (6 * h0) + y[0] * (x[1] - t) / h0 + (y[1] / h0 - m1 * h0 / 6) * u
            u = x[2] - t
            return m1 * u**3 / (6 * h1) + y[2] * (t - x[1]) / h1 + (y[1] / h1 - m1 * h1 / 6) * u

        t = np.linspace(1, 9, 33)
        ours = cubic_spline_resample(curve(x, y), t).capacities
        np.testing.assert_allclose(ours, [oracle(v) for v in t], rtol=0, atol=1e-12)

    def test_matches_scipy_natural(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            c = monotone_curve(rng)
            t = np.linspace(c.cycles[0], c.cycles[-1], 50)
            ref = CubicSpline(c.cycles, c.capacities, bc_type="natural")(t)
            np.testing.assert_allclose(cubic_spline_resample(c, t).capacities, ref, atol=1e-11)

    def test_two_knots_linear(self):
        out = cubic_spline_resample(curve([1, 3], [2.0, 1.8]), [2])
        assert out.capacities[0] == pytest.approx(1.9, abs=1e-15)


class TestIntegerCycles:
    def test_unit_spaced_untouched(self):
        c = curve([1, 2, 3], [2.0, 1.9, 1.8])
        assert to_integer_cycles(c) is c

    def test_fills_gaps(self):
        out = to_integer_cycles(curve([1, 3, 6], [2.0, 1.9, 1.8]), "linear")
        np.testing.assert_array_equal(out.cycles, np.arange(1, 7))


class TestDataset:
    def test_duplicate_ids(self):
        c = curve([1, 2], [2.0, 1.9])
        with pytest.raises(InvalidArgument):
            Dataset("d", (c, c))

    def test_subset_keeps_groups(self):
        a, b, d = (curve([1, 2], [2.0, 1.9], cid=i) for i in "abd")
        ds = Dataset("x", (a, b, d), {"g1": ("a", "b"), "g2": ("d",)})
        sub = ds.subset(["a", "d"])
        assert sub.groups() == [("a",), ("d",)]

    def test_single_group_default(self):
        a, b = (curve([1, 2], [2.0, 1.9], cid=i) for i in "ab")
        assert Dataset("x", (a, b)).groups() == [("a", "b")]


class TestCsv:
    def write(self, tmp_path, text):
        p = tmp_path / "d.csv"
        p.write_text(text, encoding="utf-8")
        return p

    def test_two_cells(self, tmp_path):
        p = self.write(tmp_path, "cell_id,cycle,capacity_ah\na,1,2.0\na,2,1.9\nb,1,2.1\nb,2,2.0\n")
        rep = read_dataset_csv(p, 2.0)
        assert len(rep.dataset) == 2
        assert rep.row_counts == {"a": 2, "b": 2}
        assert rep.rejected == {}

    def test_missing_header(self, tmp_path):
        p = self.write(tmp_path, "a,1,2.0\n")
        with pytest.raises(ParseError, match="cell_id,cycle,capacity_ah"):
            read_dataset_csv(p, 2.0)

    def test_unsorted_cell_rejected(self, tmp_path):
        p = self.write(tmp_path, "cell_id,cycle,capacity_ah\na,2,2.0\na,1,1.9\nb,1,2.1\nb,2,2.0\n")
        rep = read_dataset_csv(p, 2.0)
        assert rep.dataset.cell_ids == ["b"]
        assert rep.rejected == {"a": "cycles not strictly increasing"}

    def test_line_number(self, tmp_path):
        p = self.write(tmp_path, "cell_id,cycle,capacity_ah\na,1,2.0\na,x,1.9\n")
        with pytest.raises(ParseError) as err:
            read_dataset_csv(p, 2.0)
        assert err.value.line == 3

    def test_condition_column(self, tmp_path):
        p = self.write(
            tmp_path,
            "cell_id,cycle,capacity_ah,condition\na,1,2.0,hot\na,2,1.9,hot\nb,1,2.0,cold\nb,2,1.9,cold\n",
        )
        ds = read_dataset_csv(p, 2.0).dataset
        assert ds.condition_groups == {"hot": ("a",), "cold": ("b",)}

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        curves = [curve(np.arange(1, 30), 2 - rng.uniform(0, 0.1, 29).cumsum() / 10, cid=f"c{i}") for i in range(3)]
        p = tmp_path / "rt.csv"
        write_dataset_csv(p, curves)
        back = read_dataset_csv(p, 2.0).dataset
        for a, b in zip(curves, back):
            assert a.cell_id == b.cell_id
            np.testing.assert_array_equal(a.cycles, b.cycles)
            np.testing.assert_array_equal(a.capacities, b.capacities)

    def test_empty_write_is_header_only(self, tmp_path):
        p = tmp_path / "e.csv"
        write_dataset_csv(p, [])
        assert p.read_text() == "cell_id,cycle,capacity_ah\n"

"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the lines are printed in the
terminal summary. Criterion 5 needs the public datasets and is skipped
unless ``CAPFADE_DATA_DIR`` points at them (see README).
"""

from __future__ import annotations

import contextlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import gamma, kv

from capfade import cli, cnn, gpr, harness
from capfade.benchmark import make_benchmark
from capfade.curve import CapacityCurve, write_dataset_csv
from capfade.gpr import GprHyper
from capfade.harness import ModelSpec, Scenario
from capfade.landmarks import detect_eol, detect_knee, label_dataset
from capfade.sdg import (
    IDENTITY,
    SdgParams,
    apply_params,
    derive_ranges,
    estimate_params,
    generate_batch,
    pairwise_stats,
    round_half_away,
)

from conftest import ACCEPTANCE

DATA_DIR = os.environ.get("CAPFADE_DATA_DIR")


@contextlib.contextmanager
def criterion(n: int, title: str):
    """Record a PASS/FAIL line for criterion ``n``; ``info['detail']`` is appended."""
    info = {"detail": ""}
    try:
        yield info
    except BaseException as exc:
        if isinstance(exc, pytest.skip.Exception):
            ACCEPTANCE[n] = f"[SKIP] {n:2d}. {title}: {exc}"
        else:
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            ACCEPTANCE[n] = f"[FAIL] {n:2d}. {title}: {info['detail']} {msg}".rstrip()
        raise
    ACCEPTANCE[n] = f"[PASS] {n:2d}. {title}: {info['detail']}"


def random_unit_curve(rng, cid="r"):
    size = int(rng.integers(10, 1500))
    c = np.arange(1.0, size + 1)
    q = rng.uniform(1.8, 2.2) - np.cumsum(rng.uniform(0.0, 2e-4, size)) + rng.normal(0, 2e-4, size)
    return CapacityCurve(cid, c, q, 2.0)


def test_c01_sdg_identity():
    with criterion(1, "SDG identity") as info:
        rng = np.random.default_rng(101)
        curves = [random_unit_curve(rng) for _ in range(200)]
        t0 = time.perf_counter()
        worst = 0.0
        for c in curves:
            out = apply_params(c, IDENTITY)
            assert np.array_equal(out.cycles, c.cycles)
            worst = max(worst, float(np.max(np.abs(out.capacities - c.capacities))))
        dt = time.perf_counter() - t0
        info["detail"] = f"max |dQ| = {worst:.1e} over 200 curves in {dt:.3f} s"
        assert worst <= 1e-12
        assert dt < 1.0


def test_c02_sdg_algebra():
    with criterion(2, "SDG algebra") as info:
        rng = np.random.default_rng(102)
        worst_o = worst_s = 0.0
        for _ in range(1000):
            c = random_unit_curve(rng)
            o, s, e = rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0.75, 1.25)
            base = apply_params(c, SdgParams(0.0, 0.0, e))
            shifted = apply_params(c, SdgParams(o, 0.0, e))
            assert np.array_equal(base.cycles, shifted.cycles)
            worst_o = max(worst_o, float(np.max(np.abs(shifted.capacities - base.capacities - o))))
            sloped = apply_params(c, SdgParams(0.0, s, 1.0))
            law = s * np.arange(len(c)) / (len(c) - 1)
            worst_s = max(worst_s, float(np.max(np.abs(sloped.capacities - c.capacities - law))))
            assert base.last_cycle == float(round_half_away(e * c.last_cycle))
        worked = apply_params(CapacityCurve("w", [1, 2, 3], [2.0, 1.9, 1.8], 2.0), SdgParams(0, 0, 2.0))
        expect = [2.0, 1.95, 1.9, 1.9 - 0.1 / 3, 1.9 - 0.2 / 3, 1.8]
        worst_w = float(np.max(np.abs(worked.capacities - expect)))
        info["detail"] = (f"offset {worst_o:.1e}, slope {worst_s:.1e}, final cycle exact on 1000 pairs; "
                          f"e=2 example {worst_w:.1e}")
        assert worst_o <= 1e-12 and worst_s <= 1e-12 and worst_w <= 1e-12
        np.testing.assert_array_equal(worked.cycles, [1, 2, 3, 4, 5, 6])


def test_c03_round_trip():
    with criterion(3, "Round trip") as info:
        rng = np.random.default_rng(103)
        worst = 0.0
        for _ in range(300):
            c = random_unit_curve(rng)
            big_n = int(c.last_cycle)
            # offset: any parameters
            p = SdgParams(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0.75, 1.25))
            worst = max(worst, abs(estimate_params(apply_params(c, p), c, 0).offset - p.offset))
            # elongation: e * N integral, so the final cycle is not rounded
            e = int(rng.integers(math.ceil(0.75 * big_n), math.floor(1.25 * big_n) + 1)) / big_n
            if e * big_n >= 2:
                est = estimate_params(apply_params(c, SdgParams(0.0, 0.0, e)), c, 0)
                worst = max(worst, abs(est.elongation - e))
            # slope: e = 1 and n at the final cycle
            p = SdgParams(rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 1.0)
            est = estimate_params(apply_params(c, p), c, big_n)
            worst = max(worst, abs(est.offset - p.offset), abs(est.slope - p.slope), abs(est.elongation - 1.0))
        anti_ok = True
        for _ in range(300):
            a, b = random_unit_curve(rng, "a"), random_unit_curve(rng, "b")
            n = int(rng.integers(2, min(len(a), len(b)) + 1))
            p, q = estimate_params(a, b, n), estimate_params(b, a, n)
            anti_ok &= p.offset == -q.offset and p.slope == -q.slope
            anti_ok &= p.elongation == a.last_cycle / b.last_cycle and q.elongation == b.last_cycle / a.last_cycle
        info["detail"] = f"max recovery error {worst:.1e} (recoverable domains, see ledger); antisymmetry exact: {anti_ok}"
        assert worst <= 1e-9
        assert anti_ok


def constructed_knee_curve(rng):
    size = int(rng.integers(600, 1600))
    knee = int(rng.integers(int(0.45 * size), int(0.8 * size)))
    early = -rng.uniform(5e-5, 2e-4)
    late = early * rng.uniform(5.0, 20.0)
    c = np.arange(1.0, size + 1)
    q = 2.0 + np.where(c <= knee, early * (c - 1), early * (knee - 1) + late * (c - knee))
    return c, q, knee


def test_c04_knee_oracle():
    with criterion(4, "Knee oracle") as info:
        rng = np.random.default_rng(104)
        clean_hits = noisy_hits = 0
        for _ in range(100):
            c, q, knee = constructed_knee_curve(rng)
            k = detect_knee(CapacityCurve("k", c, q, 2.0))
            clean_hits += k is not None and abs(k - knee) <= 2
            noisy = q * (1.0 + rng.uniform(-0.005, 0.005, len(q)))
            k = detect_knee(CapacityCurve("k", c, noisy, 2.0))
            noisy_hits += k is not None and abs(k - knee) <= 10
        info["detail"] = f"noise-free {clean_hits}/100 within 2 cycles, noisy {noisy_hits}/100 within 10 cycles"
        assert clean_hits >= 95 and noisy_hits >= 95


FIXTURE_LANDMARKS = {("rwth", "Cell 1"): (1305, 1336), ("stanford", "Cell 9"): (409, 453)}


def test_c05_landmark_fixtures(tmp_path):
    with criterion(5, "Landmark fixtures") as info:
        if not DATA_DIR:
            pytest.skip("CAPFADE_DATA_DIR not set; public datasets absent, criterion 4 stands in")
        worst = 0
        for (name, cell), (knee, eol) in FIXTURE_LANDMARKS.items():
            src = Path(DATA_DIR) / f"{name}.csv"
            out = tmp_path / f"{name}_labels.csv"
            assert cli.main(["label", str(src), "--nominal", os.environ.get(f"CAPFADE_NOMINAL_{name.upper()}", "2.0"),
                             "-o", str(out)]) == 0
            rows = {r.split(",")[0]: r.split(",") for r in out.read_text().splitlines()[1:]}
            got = rows[cell]
            worst = max(worst, abs(int(got[1]) - knee), abs(int(got[2]) - eol))
        info["detail"] = f"max deviation {worst} cycles"
        assert worst <= 5


def test_c06_matern_equivalence():
    with criterion(6, "Matern equivalence") as info:
        rng = np.random.default_rng(106)
        r = rng.uniform(1e-3, 10.0, 100)
        ell, sig = 1.3, 2.7
        z = math.sqrt(3.0) * r / ell
        bessel = sig * 2 ** (1 - 1.5) / gamma(1.5) * z**1.5 * kv(1.5, z)
        rel = float(np.max(np.abs(gpr.matern32_from_distance(r, GprHyper(ell, sig)) - bessel) / bessel))
        x = rng.normal(size=7)
        same = gpr.matern32(x, x, GprHyper(ell, sig))
        info["detail"] = f"max rel diff {rel:.1e} at 100 distances; k(x,x) = {same!r}"
        assert rel <= 1e-9 and same == sig


def test_c07_gpr_interpolation():
    with criterion(7, "GPR interpolation") as info:
        rng = np.random.default_rng(107)
        worst = 0.0
        for _ in range(20):
            x = rng.normal(size=(10, int(rng.integers(1, 6))))
            y = rng.uniform(300, 2000, 10)
            h = GprHyper(gpr.feature_scale(x), float(np.var(y)), 1e-10)
            mean, _ = gpr.predict(gpr.fit(x, y, h), x)
            worst = max(worst, float(np.max(np.abs(mean - y) / np.abs(y))))
        info["detail"] = f"max rel error {worst:.1e} on 20 problems"
        assert worst <= 1e-4


def test_c08_cnn_gradient_check():
    with criterion(8, "CNN gradient check") as info:
        rng = np.random.default_rng(108)
        errs = []
        for i in range(3):
            arch = cli.random_tiny_arch(rng)
            rep = cnn.gradient_check(arch, rng.normal(1.0, 0.1, arch.input_length), float(rng.normal()), seed=i)
            errs.append(rep.max_rel_error)
            assert rep.checked > 0
        info["detail"] = "max rel errors " + ", ".join(f"{e:.1e}" for e in errs)
        assert max(errs) < 1e-4


def test_c09_metric_pins():
    with criterion(9, "Metric pins") as info:
        m = harness.mae([10, -10])
        s1, s2 = harness.effort_savings(15, 3), harness.effort_savings(30, 15)
        ca = harness.mae_cycle_average(harness.mae_run_average(np.full((15, 8), 37.5)))
        info["detail"] = f"mae={m}, savings={s1}%/{s2}%, constant MAE_ca={ca}"
        assert (m, s1, s2, ca) == (10.0, 80.0, 50.0, 37.5)


def landmark_r(curves):
    pairs = [(detect_eol(c), detect_knee(c)) for c in curves]
    pairs = [p for p in pairs if None not in p]
    eol, knee = np.array(pairs, dtype=float).T
    return harness.pearson(eol, knee), len(pairs)


def test_c10_correlation_preservation():
    with criterion(10, "Correlation preservation") as info:
        seed = make_benchmark(seed=0)
        r_seed, _ = landmark_r(seed)
        ranges = derive_ranges(pairwise_stats(seed, 500), 0.25)
        diffs, labelled = [], []
        for trial in range(10):
            batch = generate_batch(list(seed), ranges, 200, 1000 + trial)
            r, k = landmark_r(batch.curves)
            diffs.append(abs(r - r_seed))
            labelled.append(k)
        med = float(np.median(diffs))
        info["detail"] = (f"seed r = {r_seed:.4f}; median |r_syn - r_seed| = {med:.4f} over 10 trials "
                          f"(>= {min(labelled)}/200 curves labelled per trial)")
        assert r_seed >= 0.95
        assert med <= 0.05


def test_c11_augmentation_effect():
    with criterion(11, "Augmentation effect") as info:
        t0 = time.perf_counter()
        ds = make_benchmark(seed=0)
        labels = label_dataset(ds)
        n = 16
        sc = Scenario.partial_replacement(n, (n, n // 2), runs=15, seed=0)
        test = harness.select_test_cells(ds, labels, sc)
        train = ds.subset([c for c in ds.cell_ids if c not in test])
        ranges = derive_ranges(pairwise_stats(train, 500), 0.25)
        rep = harness.run_scenario(ds, labels, sc, ModelSpec("gpr"), ranges)
        real_arm, mixed_arm = rep["arms"]
        per_run = {a["label"]: np.mean(a["per_run_mae_cycles"], axis=1) for a in rep["arms"]}
        m_real, m_mixed = float(np.median(per_run[real_arm["label"]])), float(np.median(per_run[mixed_arm["label"]]))
        rel = abs(m_mixed - m_real) / m_real
        dt = time.perf_counter() - t0
        info["detail"] = (f"median MAE_ca over 15 runs: {real_arm['label']} real {m_real:.1f} cycles, "
                          f"{mixed_arm['label']} {m_mixed:.1f} cycles, relative difference {rel:.3f}; "
                          f"mean MAE_ca {real_arm['mae_ca_pct']:.2f}% vs {mixed_arm['mae_ca_pct']:.2f}%; {dt:.0f} s")
        assert harness.synthetic_leaks(rep) == []
        assert rel <= 0.25
        assert dt < 300


def test_c12_throughput(tmp_path):
    with criterion(12, "Throughput") as info:
        ds = make_benchmark(seed=0)
        src = tmp_path / "seed.csv"
        write_dataset_csv(src, ds.curves)
        t0 = time.perf_counter()
        code = cli.main(["generate", "--data", str(src), "--nominal", "2.0", "--count", "10000",
                         "--seed", "12", "-o", str(tmp_path / "out")])
        dt = time.perf_counter() - t0
        lines = sum(1 for _ in (tmp_path / "out" / "synthetic.provenance.jsonl").open())
        mean_len = float(np.mean([len(c) for c in ds]))
        info["detail"] = f"10000 curves from 48 seeds (mean L = {mean_len:.0f}) in {dt:.2f} s"
        assert code == 0 and lines == 10000
        assert dt < 10.0


def test_c13_determinism(tmp_path):
    with criterion(13, "Determinism") as info:
        ds = make_benchmark(seed=0)
        src = tmp_path / "seed.csv"
        write_dataset_csv(src, ds.curves)
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(
            f"dataset.path = {src}\ndataset.nominal_ah = 2.0\nseed = 13\nmodel.kind = gpr\n"
            "scenario.rep.kind = partial-replacement\nscenario.rep.total = 8\nscenario.rep.real = 8,4\n"
            "scenario.rep.runs = 3\nscenario.rep.windows = 100,300,500\n"
        )
        outs = []
        for d in ("first", "second"):
            assert cli.main(["experiment", "-c", str(cfg), "-o", str(tmp_path / d)]) == 0
            doc = json.loads((tmp_path / d / "report_rep.json").read_text())
            outs.append(harness.dumps_report(harness.strip_wall_clock(doc)).encode())
        info["detail"] = f"{len(outs[0])} bytes, identical: {outs[0] == outs[1]}"
        assert outs[0] == outs[1]

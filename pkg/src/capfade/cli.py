"""``capfade`` command line: ingest, generate, label, experiment, sensitivity, crossval, gradcheck.

Configuration is a ``key=value`` text file (``#`` starts a comment); any key
can be overridden with ``--set key=value``. Recognised keys::

    dataset.path            canonical CSV (cell_id,cycle,capacity_ah[,condition])
    dataset.nominal_ah      nominal capacity in Ah
    dataset.name            optional display name
    dataset.eol_fraction    EOL threshold as a fraction of nominal (0.8)
    dataset.labels          optional labels CSV; computed when absent
    sdg.n                   slope reference cycle, 0 disables slope (500)
    sdg.elongation_halfwidth  elongation range is 1 -/+ this (0.25)
    sdg.within_condition    pair cells only within an aging condition (true)
    scenario[.NAME].kind    seed-only | seed-plus-fixed-synthetic |
                            partial-replacement | sparse-enrichment
    scenario[.NAME].real    comma list of real-cell counts
    scenario[.NAME].synthetic  fixed synthetic count (fixed-synthetic)
    scenario[.NAME].total   training size (partial-replacement)
    scenario[.NAME].ratios  synthetic:real ratios (sparse-enrichment)
    scenario[.NAME].runs / .target / .windows / .stride / .test_cells
    model.kind              gpr | cnn
    model.gpr_tune, model.cnn_epochs, model.cnn_learning_rate, model.cnn_batch_size
    crossval.k, crossval.windows
    sensitivity.halfwidths  comma list, e.g. 0.10,0.25,0.40
    seed                    64-bit master seed
    out.dir                 output directory (default $CAPFADE_OUT_DIR or ./capfade-out)

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import _kernels, cnn, harness, sdg
from .curve import Dataset, read_dataset_csv
from .errors import (
    CapfadeError,
    GenerationFailure,
    IllConditioned,
    InvalidArgument,
    ParseError,
    TrainingFailure,
)
from .landmarks import label_dataset, read_labels_csv, write_labels_csv

log = logging.getLogger("capfade")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "CAPFADE_OUT_DIR"
DEFAULT_N = {"rwth": 500, "stanford": 200, "oxford": 500, "nasa": 0}


class UsageError(CapfadeError):
    pass


# -- configuration -----------------------------------------------------------

def parse_config_text(text: str) -> dict[str, str]:
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise UsageError(f"config line {lineno}: empty key")
        cfg[key] = value
    return cfg


def load_config(path: str | None, overrides: list[str]) -> dict[str, str]:
    cfg = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {path}")
        cfg.update(parse_config_text(p.read_text(encoding="utf-8")))
        base = p.resolve().parent
        for key in ("dataset.path", "dataset.labels"):
            if key in cfg and not Path(cfg[key]).is_absolute():
                cfg[key] = str(base / cfg[key])
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg[k.strip()] = v.strip()
    return cfg


def _get(cfg, key, cast=str, default=None):
    if key not in cfg:
        if default is None:
            raise UsageError(f"missing config key {key!r}")
        return default
    try:
        return cast(cfg[key])
    except ValueError:
        raise UsageError(f"bad value for {key!r}: {cfg[key]!r}") from None


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _seed(cfg) -> int:
    seed = _get(cfg, "seed", int, 0)
    if not 0 <= seed < 2**64:
        raise UsageError("seed must be a 64-bit unsigned value")
    return seed


def _out_dir(cfg, flag: str | None) -> Path:
    out = Path(flag or cfg.get("out.dir") or os.environ.get(OUT_ENV) or "capfade-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(cfg) -> Dataset:
    path = _get(cfg, "dataset.path")
    if not Path(path).exists():
        raise UsageError(f"dataset not found: {path}")
    nominal = _get(cfg, "dataset.nominal_ah", float)
    report = read_dataset_csv(path, nominal, cfg.get("dataset.name"))
    for cid, why in report.rejected.items():
        log.warning("rejected cell %s: %s", cid, why)
    return report.dataset


def _slope_n(cfg, dataset: Dataset) -> int:
    default = DEFAULT_N.get(dataset.name.lower(), 500)
    n = _get(cfg, "sdg.n", int, default)
    if n != 0 and n < 2:
        raise UsageError("sdg.n must be 0 or >= 2")
    return n


def _labels(cfg, dataset: Dataset):
    frac = _get(cfg, "dataset.eol_fraction", float, 0.8)
    if "dataset.labels" in cfg:
        return read_labels_csv(cfg["dataset.labels"], frac)
    return label_dataset(dataset, frac)


def _scenario_keys(cfg) -> dict[str, dict[str, str]]:
    groups: dict[str, dict[str, str]] = {}
    for key, value in cfg.items():
        if not key.startswith("scenario."):
            continue
        parts = key.split(".")
        if len(parts) == 2:
            groups.setdefault("default", {})[parts[1]] = value
        elif len(parts) == 3:
            groups.setdefault(parts[1], {})[parts[2]] = value
        else:
            raise UsageError(f"bad scenario key {key!r}")
    return groups


def build_scenario(name: str, sc: dict[str, str], seed: int) -> harness.Scenario:
    kind = sc.get("kind", "")
    if kind not in harness.KINDS:
        raise UsageError(f"scenario {name!r}: unknown kind {kind!r}; expected one of {', '.join(harness.KINDS)}")
    common = {"seed": seed, "name": name}
    try:
        if "runs" in sc:
            common["runs"] = int(sc["runs"])
        if "target" in sc:
            common["target"] = sc["target"]
        if "windows" in sc:
            common["windows"] = _ints(sc["windows"])
        if "stride" in sc:
            common["stride"] = int(sc["stride"])
        if "test_cells" in sc:
            tc = sc["test_cells"]
            common["test_cells"] = int(tc) if tc.strip().isdigit() else tuple(
                t.strip() for t in tc.split(",") if t.strip()
            )
        real = _ints(sc.get("real", ""))
        if kind == "seed-only":
            return harness.Scenario.seed_only(real, **common)
        if kind == "seed-plus-fixed-synthetic":
            return harness.Scenario.fixed_synthetic(real, int(sc.get("synthetic", 30)), **common)
        if kind == "partial-replacement":
            return harness.Scenario.partial_replacement(int(sc["total"]), real, **common)
        return harness.Scenario.sparse_enrichment(real[0], _ints(sc.get("ratios", "0,1,2,3")), **common)
    except (KeyError, ValueError, IndexError, InvalidArgument) as exc:
        raise UsageError(f"scenario {name!r}: {exc}") from None


def build_model_spec(cfg) -> harness.ModelSpec:
    kind = cfg.get("model.kind", "gpr")
    if kind not in harness.MODEL_KINDS:
        raise UsageError(f"unknown model.kind {kind!r}; expected gpr or cnn")
    return harness.ModelSpec(
        kind=kind,
        gpr_tune=_get(cfg, "model.gpr_tune", _bool, True),
        cnn_epochs=_get(cfg, "model.cnn_epochs", int, 700),
        cnn_learning_rate=_get(cfg, "model.cnn_learning_rate", float, 0.01),
        cnn_batch_size=_get(cfg, "model.cnn_batch_size", int, 16),
    )


def _ranges_for(cfg, dataset: Dataset, exclude: list[str]) -> sdg.ParamRanges:
    train = dataset.subset([c for c in dataset.cell_ids if c not in set(exclude)])
    stats = sdg.pairwise_stats(
        train, _slope_n(cfg, dataset), _get(cfg, "sdg.within_condition", _bool, True)
    )
    return sdg.derive_ranges(stats, _get(cfg, "sdg.elongation_halfwidth", float, 0.25))


def _write_json(path: Path, doc) -> None:
    path.write_text(harness.dumps_report(doc), encoding="utf-8")


# -- commands ----------------------------------------------------------------

def cmd_ingest(args) -> int:
    report = read_dataset_csv(args.csv, args.nominal, args.name)
    ds = report.dataset
    print(f"dataset {ds.name}: {len(ds)} cells loaded, {len(report.rejected)} rejected")
    for cid, count in report.row_counts.items():
        status = "rejected: " + report.rejected[cid] if cid in report.rejected else "ok"
        print(f"  {cid}\t{count} rows\t{status}")
    if ds.condition_groups:
        for g, members in sorted(ds.condition_groups.items()):
            print(f"  condition {g}: {len(members)} cells")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.data:
        cfg["dataset.path"] = args.data
    if args.nominal is not None:
        cfg["dataset.nominal_ah"] = str(args.nominal)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    seed = _seed(cfg)
    ds = _load_dataset(cfg)
    n = _slope_n(cfg, ds)
    t0 = time.perf_counter()
    stats = sdg.pairwise_stats(ds, n, _get(cfg, "sdg.within_condition", _bool, True))
    ranges = sdg.derive_ranges(stats, _get(cfg, "sdg.elongation_halfwidth", float, 0.25))
    print(f"{len(stats)} pairwise samples; ranges: {ranges.summary()}")
    batch = sdg.generate_batch(list(ds), ranges, args.count, seed)
    out = _out_dir(cfg, args.out)
    stem = args.stem
    csv_path, prov_path = out / f"{stem}.csv", out / f"{stem}.provenance.jsonl"
    sdg.write_batch(batch, csv_path, prov_path)
    dt = time.perf_counter() - t0
    print(f"wrote {len(batch)} synthetic curves to {csv_path} ({dt:.2f} s)")
    print(f"provenance: {prov_path}")
    return EXIT_OK


def cmd_label(args) -> int:
    report = read_dataset_csv(args.csv, args.nominal, args.name)
    labels = label_dataset(report.dataset, args.threshold, args.knee_stride)
    out = Path(args.out) if args.out else _out_dir({}, None) / "labels.csv"
    write_labels_csv(out, labels)
    for cid, lm in labels.items():
        knee = "" if lm.knee_cycle is None else lm.knee_cycle
        eol = "" if lm.eol_cycle is None else lm.eol_cycle
        print(f"{cid}\tknee={knee}\teol={eol}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    seed = _seed(cfg)
    scenarios = _scenario_keys(cfg)
    if not scenarios:
        raise UsageError("no scenario.* keys in config")
    built = {name: build_scenario(name, sc, seed) for name, sc in sorted(scenarios.items())}
    spec = build_model_spec(cfg)
    ds = _load_dataset(cfg)
    labels = _labels(cfg, ds)
    out = _out_dir(cfg, args.out)
    manifest = {"schema": harness.SCHEMA_VERSION, "seed": seed, "model": spec.kind, "scenarios": {}}
    status = EXIT_OK
    for name, scenario in built.items():
        entry = {"status": "ok", "files": []}
        try:
            test = harness.select_test_cells(ds, labels, scenario)
            ranges = _ranges_for(cfg, ds, test)
            report = harness.run_scenario(ds, labels, scenario, spec, ranges,
                                          _get(cfg, "dataset.eol_fraction", float, 0.8))
            path = out / f"report_{name}.json"
            _write_json(path, report)
            entry["files"].append(path.name)
            for arm in report["arms"]:
                plot = out / f"plot_{name}_{arm['label'].replace('+', 'p')}_{spec.kind}.csv"
                harness.write_plot_csv(plot, arm)
                entry["files"].append(plot.name)
                print(f"{name} [{arm['label']}] {spec.kind}: MAE_c.a. = "
                      f"{arm['mae_ca_cycles']:.1f} cycles ({arm['mae_ca_pct']:.2f}%)")
        except CapfadeError as exc:
            entry = {"status": "failed", "error": f"{type(exc).__name__}: {exc}", "files": entry["files"]}
            log.error("scenario %s failed: %s", name, exc)
            status = max(status, _exit_code(exc))
        manifest["scenarios"][name] = entry
    _write_json(out / "manifest.json", manifest)
    return status


def cmd_sensitivity(args) -> int:
    cfg = load_config(args.config, args.set)
    seed = _seed(cfg)
    scenarios = _scenario_keys(cfg)
    if len(scenarios) != 1:
        raise UsageError("sensitivity needs exactly one scenario in the config")
    (name, sc), = scenarios.items()
    scenario = build_scenario(name, sc, seed)
    halfwidths = _get(cfg, "sensitivity.halfwidths", _floats, (0.10, 0.25, 0.40))
    if not halfwidths:
        raise UsageError("sensitivity.halfwidths is empty")
    spec = build_model_spec(cfg)
    ds = _load_dataset(cfg)
    labels = _labels(cfg, ds)
    test = harness.select_test_cells(ds, labels, scenario)
    base = _ranges_for(cfg, ds, test)
    reports = harness.sensitivity_sweep(ds, labels, halfwidths, scenario, spec, base,
                                        _get(cfg, "dataset.eol_fraction", float, 0.8))
    out = _out_dir(cfg, args.out)
    for h, rep in reports.items():
        tag = f"{h:.2f}".replace(".", "p")
        _write_json(out / f"sensitivity_{name}_{tag}.json", rep)
        for arm in rep["arms"]:
            print(f"elongation +/-{h:.0%} [{arm['label']}]: MAE_c.a. = {arm['mae_ca_cycles']:.1f} cycles")
    return EXIT_OK


def cmd_crossval(args) -> int:
    cfg = load_config(args.config, args.set)
    seed = _seed(cfg)
    ds = _load_dataset(cfg)
    labels = _labels(cfg, ds)
    k = args.k or _get(cfg, "crossval.k", int, 5)
    windows = _get(cfg, "crossval.windows", _ints, (100, 200, 300, 400))
    target = args.target or cfg.get("crossval.target", "eol")
    rep = harness.kfold_cv(ds, labels, k, build_model_spec(cfg), target, windows, seed=seed)
    out = _out_dir(cfg, args.out)
    _write_json(out / f"crossval_k{k}_{target}.json", rep)
    for w, env in zip(rep["windows"], rep["envelope"]):
        if env:
            print(f"{w}: min {env['min']:.1f}  mean {env['mean']:.1f}  max {env['max']:.1f}")
    return EXIT_OK


def random_tiny_arch(rng: np.random.Generator) -> cnn.CnnArch:
    d = int(rng.integers(6, 13))
    stages = []
    m = d
    for _ in range(int(rng.integers(1, 3))):
        pool = int(rng.choice([1, 2]))
        if m // pool < 2:
            pool = 1
        stages.append(cnn.ConvStage(int(rng.choice([1, 3])), int(rng.integers(1, 4)), pool))
        m //= pool
    return cnn.CnnArch(d, tuple(stages), (0.0, 0.0), (int(rng.integers(2, 5)), 1))


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    ok = True
    for i in range(args.archs):
        arch = random_tiny_arch(rng)
        x = rng.normal(1.0, 0.1, arch.input_length)
        rep = cnn.gradient_check(arch, x, float(rng.normal()), args.tolerance, seed=args.seed + i)
        ok &= rep.passed
        print(f"arch {i}: d={arch.input_length} stages={[tuple(vars(s).values()) for s in arch.conv_stages]} "
              f"dense={arch.dense}: max rel err {rep.max_rel_error:.2e} over {rep.checked} coords, "
              f"{len(rep.excluded)} kink coords excluded -> {'pass' if rep.passed else 'FAIL'}")
    print(f"kernel backend: {_kernels.BACKEND}")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- entry point -------------------------------------------------------------

def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (UsageError, InvalidArgument)):
        return EXIT_USAGE
    if isinstance(exc, (IllConditioned, TrainingFailure, GenerationFailure, ArithmeticError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="capfade", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", "-c")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--out", "-o", help="output directory")

    p = sub.add_parser("ingest", help="parse and validate a canonical dataset CSV")
    p.add_argument("csv")
    p.add_argument("--nominal", type=float, required=True)
    p.add_argument("--name")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate", help="synthesise curves from a seed dataset")
    config_args(p)
    p.add_argument("--data", help="seed CSV (overrides dataset.path)")
    p.add_argument("--nominal", type=float)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--stem", default="synthetic")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("label", help="detect knee and EOL for each cell")
    p.add_argument("csv")
    p.add_argument("--nominal", type=float, required=True)
    p.add_argument("--name")
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--knee-stride", type=int, default=1)
    p.add_argument("--out", "-o", help="labels CSV path")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("experiment", help="run the configured augmentation scenarios")
    config_args(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sensitivity", help="sweep the elongation range for one scenario")
    config_args(p)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("crossval", help="k-fold cross validation on real cells")
    config_args(p)
    p.add_argument("-k", type=int)
    p.add_argument("--target", choices=harness.TARGETS)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the CNN backward pass")
    p.add_argument("--archs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"capfade: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"capfade: parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"capfade: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CapfadeError as exc:
        print(f"capfade: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    raise SystemExit(main())

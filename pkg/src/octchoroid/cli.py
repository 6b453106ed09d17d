"""Batch command-line frontend.

    octchoroid phantom  --out corpus --n 61 --seed 1
    octchoroid segment  corpus --out seg --backend cnn --workers 4
    octchoroid measure  corpus --maps seg --out meas
    octchoroid compare  --a truth/measurements.csv --b meas/measurements.csv --out cmp
    octchoroid augment  corpus --out aug --seed 3

Every subcommand accepts ``--config FILE`` (JSON); explicit flags override
values from the file.  Nothing is ever prompted for.  Per-image failures
are recorded in the outputs and do not change the exit code.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import shutil
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import augment as aug
from . import pipeline, stats
from .imageio import read_pmap, write_pmap, write_png
from .ingest import PreprocessConfig, read_sidecar
from .measure import MeasureConfig
from .nnexec import load_network
from .nnexec.fixture import fixture_paths
from .phantom import (analytic_measurements, area_normal_mm2, flat_spec, generate, random_suite)
from .segment import binarize, regularize

log = logging.getLogger("octchoroid")

MEASURE_UNITS = {"ct_mean_um": "um", "area_mm2": "mm^2"}
MEASURE_LABELS = {"ct_mean_um": "mean choroid thickness", "area_mm2": "choroid area"}


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    input: str = None
    out: str = "out"
    backend: str = "cnn"
    spec: str = None
    weights: str = None
    external: str = None
    maps: str = None
    fovea_col: int = None
    fovea_csv: str = None
    lateral_um: float = None
    axial_um: float = None
    threshold: float = 0.5
    window: int = 31
    workers: int = 1
    seed: int = 0
    n: int = 1
    flat: bool = False
    thickness: float = 300.0
    a: str = None
    b: str = None
    a_maps: str = None
    b_maps: str = None
    pairs: str = None
    baseline: str = None
    plots: bool = True
    save_boundaries: bool = False
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    augment: aug.AugmentConfig = field(default_factory=aug.AugmentConfig)


def _dumps(obj):
    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, tuple):
            return list(o)
        raise TypeError(f"not JSON serializable: {type(o).__name__}")

    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def _write_text(path, text):
    Path(path).write_text(text, encoding="utf-8")


def _out_dir(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _overrides(cfg):
    by_stem = pipeline.read_fovea_csv(cfg.fovea_csv) if cfg.fovea_csv else {}
    return pipeline.ScanOverrides(cfg.lateral_um, cfg.axial_um, cfg.fovea_col, by_stem)


def _images(cfg):
    if not cfg.input:
        raise CliError("an input directory is required")
    try:
        paths = pipeline.list_images(cfg.input)
    except FileNotFoundError as exc:
        raise CliError(str(exc)) from None
    if not paths:
        log.warning("no PNG/PGM images found in %s", cfg.input)
    return paths


# ---------------------------------------------------------------------------
# segment


def cmd_segment(cfg):
    """Segment every image in ``cfg.input``; writes maps, masks, timing and failures."""
    out = _out_dir(cfg)
    paths = _images(cfg)
    network = None
    if cfg.backend == "cnn":
        spec, weights = fixture_paths()
        spec = cfg.spec or spec
        weights = cfg.weights or weights
        try:
            network = load_network(spec, weights)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load network: {exc}") from None
    try:
        backend = pipeline.make_backend(cfg.backend, network, cfg.external, cfg.input,
                                        cfg.preprocess)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    state = {"backend": backend, "preprocess": cfg.preprocess, "threshold": cfg.threshold,
             "overrides": _overrides(cfg)}
    wall = time.perf_counter()
    results = pipeline.run_batch(pipeline.segment_one, paths, cfg.workers, state)
    wall = time.perf_counter() - wall

    failures, timing = [], []
    for res in results:
        timing.append({"file": res.name, "seconds": f"{res.seconds:.6f}",
                       "status": "error" if res.error else "ok"})
        if res.error:
            failures.append({"file": res.name, "error": res.error})
            log.warning("%s: %s", res.name, res.error)
            continue
        stem = pipeline.stem_of(res.name)
        write_pmap(out / f"{stem}.pmap", res.pmap)
        write_png(out / f"{stem}.mask.png", res.mask.astype(np.float64), bits=8)
    secs = np.array([r.seconds for r in results if not r.error])
    summary = {
        "n_images": len(results),
        "n_ok": int(secs.size),
        "n_failed": len(failures),
        "mean_s": float(secs.mean()) if secs.size else None,
        "sd_s": float(secs.std(ddof=1)) if secs.size > 1 else None,
        "total_s": float(secs.sum()),
        "wall_s": wall,
        "workers": cfg.workers,
        "backend": cfg.backend,
    }
    _write_text(out / "timing.csv", pipeline.rows_to_csv(timing, ("file", "seconds", "status")))
    _write_text(out / "timing_summary.json", _dumps(summary))
    _write_text(out / "failures.csv", pipeline.rows_to_csv(failures, ("file", "error")))
    if secs.size:
        sd = summary["sd_s"] or 0.0
        log.info("segmented %d/%d images: %.3f +/- %.3f s/img", secs.size, len(results),
                 summary["mean_s"], sd)
    return summary


# ---------------------------------------------------------------------------
# measure


def cmd_measure(cfg):
    """One measurement row per image, from maps in ``cfg.maps`` (default: the input dir)."""
    out = _out_dir(cfg)
    paths = _images(cfg)
    state = {"overrides": _overrides(cfg), "maps_dir": cfg.maps or cfg.input,
             "threshold": cfg.threshold, "window": cfg.window, "measure": cfg.measure}
    results = pipeline.run_batch(pipeline.measure_one, paths, cfg.workers, state)
    rows, records = [], []
    n_failed = 0
    for res in results:
        if res.error:
            n_failed += 1
            log.warning("%s: %s", res.name, res.error)
            rows.append(pipeline.measurement_row(res.name, error=res.error,
                                                 offsets=cfg.measure.thickness_offsets))
            records.append({"file": res.name, "error": res.error})
            continue
        rows.append(pipeline.measurement_row(res.name, res.measurements,
                                             offsets=cfg.measure.thickness_offsets))
        records.append({"file": res.name, **res.measurements.to_json()})
        if cfg.save_boundaries:
            bdir = out / "boundaries"
            bdir.mkdir(exist_ok=True)
            _write_text(bdir / f"{pipeline.stem_of(res.name)}.json", _dumps(res.boundaries))
    columns = list(pipeline.MEASURE_COLUMNS)
    if tuple(cfg.measure.thickness_offsets) != (-2000.0, 0.0, 2000.0):
        from .measure import offset_key
        keys = [offset_key(o) for o in cfg.measure.thickness_offsets]
        columns = ["file", "fovea_col"] + keys + ["ct_mean_um", "area_mm2", "warnings"]
    _write_text(out / "measurements.csv", pipeline.rows_to_csv(rows, columns))
    _write_text(out / "measurements.json", _dumps(records))
    return {"n_images": len(results), "n_failed": n_failed}


# ---------------------------------------------------------------------------
# compare


def _series(rows, column):
    out = {}
    for row in rows:
        value = row.get(column, "")
        if value not in ("", None):
            out[pipeline.stem_of(row["file"])] = float(value)
    return out


def _apply_pairs(rows_b, manifest):
    """Rename B rows to their A partner per an ``a,b`` CSV manifest."""
    rename = {}
    for row in pipeline.read_measurements_csv(manifest):
        if "a" not in row or "b" not in row:
            raise CliError(f"pair manifest {manifest} needs columns 'a' and 'b'")
        rename[pipeline.stem_of(row["b"])] = pipeline.stem_of(row["a"])
    out = []
    for row in rows_b:
        stem = pipeline.stem_of(row["file"])
        out.append({**row, "file": rename.get(stem, stem) + ".png"})
    return out


def _segmentation_agreement(stems, a_maps, b_maps, threshold):
    per_image = []
    for stem in stems:
        pa = pipeline.find_map(a_maps, stem)
        pb = pipeline.find_map(b_maps, stem)
        if pa is None or pb is None:
            raise CliError(f"missing map for {stem} in {a_maps if pa is None else b_maps}")
        ref = binarize(read_pmap(pa), threshold)
        prob = read_pmap(pb)
        if ref.shape != prob.shape:
            raise CliError(f"{stem}: map shapes differ {ref.shape} vs {prob.shape}")
        d = stats.dice(ref, regularize(prob, threshold))
        try:
            a = stats.auc(prob, ref)
        except stats.StatsError:
            a = None
        per_image.append({"file": stem, "dice": d, "auc": a})
    dices = [r["dice"] for r in per_image]
    aucs = [r["auc"] for r in per_image if r["auc"] is not None]
    return (float(np.mean(dices)) if dices else None,
            float(np.mean(aucs)) if aucs else None, per_image)


def _baseline_ratios(measures, baseline_path):
    """MAE of a baseline comparison (e.g. a repeat of the reference method) relative to this one."""
    try:
        base = json.loads(Path(baseline_path).read_text())["measures"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read baseline report {baseline_path}: {exc}") from None
    out = {"report": Path(baseline_path).name}
    for column, rep in measures.items():
        b = base.get(column, {}).get("mae")
        m = rep.get("mae")
        if b is None or m is None:
            continue
        ratio = b / m if m else None
        out[column] = {"baseline_mae": b, "mae": m, "mae_ratio": ratio,
                       "baseline_lower_by": None if ratio is None else 1.0 - ratio}
    return out


def _agreement_row(measure, rep):
    ba, fit = rep.bland_altman, rep.linfit

    def f(v):
        return "" if v is None else f"{v:.10g}"

    return {
        "measure": measure, "n": rep.n, "pearson_r": f(rep.pearson_r),
        "spearman_r": f(rep.spearman_r), "mae": f(rep.mae), "mean_diff": f(ba.mean_diff),
        "sd_diff": f(ba.sd_diff), "loa_low": f(ba.loa_low), "loa_high": f(ba.loa_high),
        "outside_loa": ba.outside_loa_count,
        "slope": f(fit.slope if fit else None),
        "slope_ci_low": f(fit.slope_ci95[0] if fit else None),
        "slope_ci_high": f(fit.slope_ci95[1] if fit else None),
        "intercept": f(fit.intercept if fit else None),
        "intercept_ci_low": f(fit.intercept_ci95[0] if fit else None),
        "intercept_ci_high": f(fit.intercept_ci95[1] if fit else None),
        "dice": f(rep.dice), "auc": f(rep.auc),
    }


AGREEMENT_COLUMNS = ("measure", "n", "pearson_r", "spearman_r", "mae", "mean_diff", "sd_diff",
                     "loa_low", "loa_high", "outside_loa", "slope", "slope_ci_low",
                     "slope_ci_high", "intercept", "intercept_ci_low", "intercept_ci_high",
                     "dice", "auc")


def cmd_compare(cfg):
    """Agreement between two measurement CSVs (A is the reference), with plots."""
    from . import plotting

    if not cfg.a or not cfg.b:
        raise CliError("compare needs --a and --b measurement CSVs")
    out = _out_dir(cfg)
    rows_a = pipeline.read_measurements_csv(cfg.a)
    rows_b = pipeline.read_measurements_csv(cfg.b)
    if cfg.pairs:
        rows_b = _apply_pairs(rows_b, cfg.pairs)
    files_a = {pipeline.stem_of(r["file"]) for r in rows_a}
    files_b = {pipeline.stem_of(r["file"]) for r in rows_b}
    if files_a != files_b:
        only = sorted(files_a ^ files_b)
        raise CliError(f"unpaired files: {', '.join(only[:10])}" + (" ..." if len(only) > 10 else ""))
    stems = sorted(files_a)

    dice_value = auc_value = None
    segmentation = None
    if cfg.a_maps or cfg.b_maps:
        if not (cfg.a_maps and cfg.b_maps):
            raise CliError("segmentation agreement needs both --a-maps and --b-maps")
        dice_value, auc_value, per_image = _segmentation_agreement(stems, cfg.a_maps, cfg.b_maps,
                                                                   cfg.threshold)
        segmentation = {"dice_mean": dice_value, "auc_mean": auc_value, "per_image": per_image}
        _write_text(out / "segmentation.csv",
                    pipeline.rows_to_csv([{k: ("" if v is None else v) for k, v in r.items()}
                                          for r in per_image], ("file", "dice", "auc")))

    report = {"a": Path(cfg.a).name, "b": Path(cfg.b).name, "measures": {}}
    agreement_rows = []
    for column in ("ct_mean_um", "area_mm2"):
        sa, sb = _series(rows_a, column), _series(rows_b, column)
        common = [s for s in stems if s in sa and s in sb]
        excluded = [s for s in stems if s not in common]
        if len(common) < 2:
            report["measures"][column] = {"n": len(common), "excluded": excluded,
                                          "note": "fewer than 2 complete pairs"}
            continue
        xs = np.array([sa[s] for s in common])
        ys = np.array([sb[s] for s in common])
        rep = stats.agreement_report(xs, ys, dice_value, auc_value)
        report["measures"][column] = {**rep.to_json(), "excluded": excluded}
        agreement_rows.append(_agreement_row(column, rep))
        if cfg.plots:
            plotting.correlation_plot(xs, ys, rep.linfit, out / f"correlation_{column}.svg",
                                      MEASURE_LABELS[column], MEASURE_UNITS[column])
            plotting.bland_altman_plot(xs, ys, rep.bland_altman,
                                       out / f"bland_altman_{column}.svg",
                                       MEASURE_LABELS[column], MEASURE_UNITS[column])
    if cfg.baseline:
        report["baseline"] = _baseline_ratios(report["measures"], cfg.baseline)
    if segmentation is not None:
        report["segmentation"] = segmentation
    _write_text(out / "report.json", _dumps(report))
    _write_text(out / "agreement.csv", pipeline.rows_to_csv(agreement_rows, AGREEMENT_COLUMNS))
    return report


# ---------------------------------------------------------------------------
# phantom


def cmd_phantom(cfg):
    """Write ``cfg.n`` phantoms: image, metadata sidecar, truth map and truth JSON each."""
    out = _out_dir(cfg)
    if cfg.n < 0:
        raise CliError("--n must be non-negative")
    if cfg.flat:
        rng = np.random.default_rng(cfg.seed)
        specs = [flat_spec(cfg.thickness, seed=int(rng.integers(0, 2**31 - 1)))
                 for _ in range(cfg.n)]
    else:
        specs = random_suite(cfg.n, cfg.seed)
    for i, spec in enumerate(specs):
        stem = f"phantom_{i:03d}"
        scan, _, truth = generate(spec)
        truth_meas = analytic_measurements(spec, cfg=cfg.measure)
        write_png(out / f"{stem}.png", scan.pixels, bits=16)
        _write_text(out / f"{stem}.json", _dumps(scan.meta.to_sidecar()))
        write_pmap(out / f"{stem}.pmap", truth)
        _write_text(out / f"{stem}.truth.json", _dumps({
            "spec": spec.to_json(),
            "measurements": truth_meas.to_json(),
            "area_normal_mm2": area_normal_mm2(spec, cfg.measure.area_halfwidth),
        }))
    return {"n_images": len(specs)}


def truth_csv(corpus_dir, out_path, offsets=(-2000.0, 0.0, 2000.0)):
    """Collect the analytic truth JSONs of a phantom corpus into a measurements CSV."""
    rows = []
    for p in sorted(Path(corpus_dir).glob("*.truth.json")):
        doc = json.loads(p.read_text())
        m = doc["measurements"]
        row = {"file": p.name.replace(".truth.json", ".png"), "fovea_col": str(m["fovea_col"])}
        for key, value in m["thickness_um"].items():
            row[key] = f"{value:.4f}"
        row["ct_mean_um"] = f"{m['mean_thickness_um']:.4f}"
        row["area_mm2"] = f"{m['area_mm2']:.6f}"
        row["warnings"] = " | ".join(m["warnings"])
        rows.append(row)
    _write_text(out_path, pipeline.rows_to_csv(rows, pipeline.MEASURE_COLUMNS))
    return rows


# ---------------------------------------------------------------------------
# augment


def _augment_one(item, state):
    index, path = item
    cfg = replace(state["augment"], seed=aug.derive_seed(state["seed"], index))
    scan = pipeline.load_scan(path, state["overrides"])
    out, entries = aug.apply_pipeline(scan.pixels, cfg)
    truth = None
    truth_path = Path(path).with_name(pipeline.stem_of(path) + ".pmap")
    if truth_path.exists():
        geometric = [e for e in entries if e["name"] in ("flip", "affine")]
        truth = (aug.replay(read_pmap(truth_path), geometric) >= 0.5).astype(np.float64)
    return Path(path).name, out, entries, truth, scan.meta


def cmd_augment(cfg):
    """Apply the seeded augmentation stack to every image; logs one JSONL per image."""
    out = _out_dir(cfg)
    paths = _images(cfg)
    state = {"augment": cfg.augment, "seed": cfg.seed, "overrides": _overrides(cfg)}
    results = pipeline.run_batch(_augment_one, list(enumerate(paths)), cfg.workers, state)
    for name, grid, entries, truth, meta in results:
        stem = pipeline.stem_of(name)
        write_png(out / f"{stem}.png", grid, bits=16)
        _write_text(out / f"{stem}.augment.jsonl", aug.log_to_jsonl(entries))
        sidecar = meta.to_sidecar()
        if meta.fovea_col is not None and any(e["name"] == "flip" for e in entries):
            sidecar["fovea_col"] = meta.width_px - 1 - meta.fovea_col
        _write_text(out / f"{stem}.json", _dumps(sidecar))
        if truth is not None:
            write_pmap(out / f"{stem}.pmap", truth)
    return {"n_images": len(results)}


# ---------------------------------------------------------------------------
# argument handling

COMMANDS = {
    "segment": cmd_segment,
    "measure": cmd_measure,
    "compare": cmd_compare,
    "phantom": cmd_phantom,
    "augment": cmd_augment,
}


def _common(p):
    p.add_argument("--config", help="JSON config file; explicit flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes (default 1)")
    p.add_argument("--seed", type=int, help="master random seed")
    p.add_argument("-v", "--verbose", action="store_true")


def _scan_flags(p):
    p.add_argument("input", nargs="?", help="directory of grayscale PNG/PGM B-scans")
    p.add_argument("--lateral-um", type=float, dest="lateral_um", help="lateral um per pixel")
    p.add_argument("--axial-um", type=float, dest="axial_um", help="axial um per pixel")
    p.add_argument("--fovea-col", type=int, dest="fovea_col", help="fovea column for all images")
    p.add_argument("--fovea-csv", dest="fovea_csv", help="CSV with file,fovea_col")
    p.add_argument("--threshold", type=float, help="probability threshold (default 0.5)")


def build_parser():
    parser = argparse.ArgumentParser(prog="octchoroid",
                                     description="Choroid segmentation and measurement for OCT B-scans")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="segment B-scans into choroid probability maps")
    _common(p)
    _scan_flags(p)
    p.add_argument("--backend", choices=("cnn", "external", "oracle"))
    p.add_argument("--spec", help="network spec JSON (default: shipped small-UNet fixture)")
    p.add_argument("--weights", help="network weights blob")
    p.add_argument("--external", help="external map template, e.g. 'maps/{stem}.pmap'")

    p = sub.add_parser("measure", help="thickness and area from probability maps")
    _common(p)
    _scan_flags(p)
    p.add_argument("--maps", help="directory with <stem>.pmap or <stem>.mask.png (default: input)")
    p.add_argument("--window", type=int, help="boundary smoothing window, odd (default 31)")
    p.add_argument("--area-mode", dest="area_mode", choices=("integrate", "pixels"))
    p.add_argument("--save-boundaries", dest="save_boundaries", action="store_const", const=True)

    p = sub.add_parser("compare", help="agreement statistics and plots for two measurement CSVs")
    _common(p)
    p.add_argument("--a", help="reference measurements CSV")
    p.add_argument("--b", help="compared measurements CSV")
    p.add_argument("--a-maps", dest="a_maps", help="reference maps dir (enables Dice/AUC)")
    p.add_argument("--b-maps", dest="b_maps", help="compared maps dir")
    p.add_argument("--pairs", help="CSV manifest with columns a,b pairing files explicitly")
    p.add_argument("--baseline", help="earlier report.json whose MAEs are ratioed against these")
    p.add_argument("--threshold", type=float)
    p.add_argument("--no-plots", dest="plots", action="store_const", const=False)

    p = sub.add_parser("phantom", help="write a synthetic phantom corpus with ground truth")
    _common(p)
    p.add_argument("--n", type=int, help="number of phantoms")
    p.add_argument("--flat", action="store_const", const=True, help="flat bands only")
    p.add_argument("--thickness", type=float, help="flat-band thickness in um")

    p = sub.add_parser("augment", help="apply the seeded augmentation stack")
    _common(p)
    _scan_flags(p)
    return parser


_NESTED = {"preprocess": PreprocessConfig, "measure": MeasureConfig, "augment": aug.AugmentConfig}


def resolve_config(args):
    """Merge built-in defaults, the optional JSON config file and explicit flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from None
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}")
    nested = {}
    for key, cls in _NESTED.items():
        sub = dict(values.pop(key, {}) or {})
        if key == "measure" and getattr(args, "area_mode", None):
            sub["area_mode"] = args.area_mode
        for k, v in list(sub.items()):
            if isinstance(v, list):
                sub[k] = tuple(v)
        try:
            nested[key] = cls(**sub)
        except TypeError as exc:
            raise CliError(f"bad '{key}' config: {exc}") from None
    for name in known - set(_NESTED):
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    return RunConfig(**values, **nested)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        if cfg.workers < 1:
            raise CliError("--workers must be >= 1")
        if cfg.window < 1 or cfg.window % 2 == 0:
            raise CliError("--window must be an odd integer >= 1")
        summary = COMMANDS[args.command](cfg)
    except (CliError, ValueError) as exc:
        print(f"octchoroid {args.command}: error: {exc}", file=sys.stderr)
        return 1
    failed = summary.get("n_failed", 0) if isinstance(summary, dict) else 0
    if failed:
        print(f"octchoroid {args.command}: {failed} image(s) failed; see outputs",
              file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

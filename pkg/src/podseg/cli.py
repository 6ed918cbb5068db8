"""Command-line entry point: ``podseg <command> [flags]``.

Every command writes ``report.json`` into ``--out`` holding the resolved
configuration, the seed and the result (or the error). Exit codes: 0 on
success, 1 on validation or metric-domain errors, 2 on I/O errors. The report
is written for exit codes 0 and 1.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import __version__
from .core import (
    ClassCatalog,
    DatasetManifest,
    PanopticMap,
    decode_panoptic,
    load_catalog,
    read_map,
    validate_map,
    write_json,
    write_map,
)
from .errors import PodsError

log = logging.getLogger("podseg")


class UsageError(PodsError):
    """Flags parse but make no sense together."""


class CheckFailed(PodsError):
    """A self-check command found a discrepancy."""


# ----------------------------------------------------------------- helpers


def _manifest_path(path: str) -> Path:
    p = Path(path)
    return p / "manifest.json" if p.is_dir() else p


def _load_manifest(path: str) -> DatasetManifest:
    p = _manifest_path(path)
    if not p.exists():
        raise FileNotFoundError(f"no manifest at {p}")
    return DatasetManifest.load(p)


def _require_dir(path: Optional[str], flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required for this command")
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{flag} {p} is not a directory")
    return p


def _pool_map(func: Callable, work: list, jobs: int) -> list:
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, work))
    return [func(w) for w in work]


def _parse_pair(text: str, sep: str = ",") -> tuple:
    parts = [int(v) for v in text.replace("x", sep).split(sep)]
    if len(parts) == 1:
        return parts[0], parts[0]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected one or two integers, got {text!r}")
    return tuple(parts)


def _pair_arg(text: str) -> tuple:
    try:
        return _parse_pair(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


# ----------------------------------------------------------------- commands


def cmd_evaluate(args, catalog: ClassCatalog, out: Path) -> dict:
    from .metrics import evaluate_dataset

    manifest = _load_manifest(args.gt) if args.gt else None
    if manifest is None:
        raise UsageError("--gt is required")
    pred_dir = _require_dir(args.pred, "--pred")
    predictions = {}
    for _, pan in manifest.items:
        candidate = pred_dir / Path(pan).name
        if candidate.exists():
            predictions[pan] = candidate
    report = evaluate_dataset(manifest, predictions, catalog, jobs=args.jobs, percent=True)
    result = {"metrics": report.to_json(), "n_images": len(manifest.items)}
    if args.format == "text":
        (out / "report.txt").write_text(report.format_text(catalog), encoding="utf-8")
    if args.emit_plots:
        result["plots"] = _emit_plots(manifest, report, catalog, out)
    return result


def _emit_plots(manifest: DatasetManifest, report, catalog: ClassCatalog, out: Path) -> List[str]:
    from .plots import bar_chart_svg

    freq: Dict[int, int] = {}
    for i in range(len(manifest.items)):
        for seg in decode_panoptic(manifest.load_gt(i, catalog.id_offset), catalog):
            freq[seg.class_id] = freq.get(seg.class_id, 0) + 1
    classes = sorted(freq)
    (out / "class_frequency.svg").write_text(
        bar_chart_svg("Ground-truth segments per class", [catalog.name(c) for c in classes],
                      [freq[c] for c in classes], "segments"), encoding="utf-8")
    pq_classes = sorted(report.per_class_pq)
    (out / "pq_per_class.svg").write_text(
        bar_chart_svg("PQ per class", [catalog.name(c) for c in pq_classes],
                      [report.per_class_pq[c] for c in pq_classes], "PQ (%)"), encoding="utf-8")
    return ["class_frequency.svg", "pq_per_class.svg"]


def _fusion_config(args):
    from .fusion import FusionConfig

    return FusionConfig(args.center_threshold, args.nms_kernel, args.top_k, args.stuff_area)


def _fuse_one(work):
    from .fusion import fuse_panoptic, read_bundle

    bundle_dir, stem, cfg, catalog, out_dir = work
    notes: list = []
    pmap = fuse_panoptic(read_bundle(bundle_dir, stem), cfg, catalog, notes)
    write_map(out_dir / f"{stem}.pan", pmap)
    return stem, notes


def cmd_fuse(args, catalog: ClassCatalog, out: Path) -> dict:
    from .fusion import list_bundles

    bundle_dir = _require_dir(args.bundles, "--bundles")
    stems = list_bundles(bundle_dir)
    if not stems:
        raise UsageError(f"no bundles found in {bundle_dir}")
    cfg = _fusion_config(args)
    pan_dir = out / "panoptic"
    pan_dir.mkdir(parents=True, exist_ok=True)
    results = _pool_map(_fuse_one, [(bundle_dir, s, cfg, catalog, pan_dir) for s in stems], args.jobs)
    return {"outputs": [f"panoptic/{s}.pan" for s in stems], "notes": {s: n for s, n in results if n}}


def cmd_score(args, catalog: ClassCatalog, out: Path) -> dict:
    from .fusion import fuse_semantic, read_bundle, list_bundles, semantic_argmax
    from .oodscore import apply_ood_mask, calibrate_threshold, ood_score

    bundle_dir = _require_dir(args.bundles, "--bundles")
    stems = list_bundles(bundle_dir)
    if not stems:
        raise UsageError(f"no bundles found in {bundle_dir}")
    bundles = {s: read_bundle(bundle_dir, s) for s in stems}
    for b in bundles.values():
        b.check_catalog(catalog)
    scores = {s: ood_score(b.semantic_logits, args.method, args.temperature) for s, b in bundles.items()}

    result: dict = {}
    tau = args.tau
    if tau is None:
        if not args.gt:
            raise UsageError("give --tau, or --gt to calibrate one")
        manifest = _load_manifest(args.gt)
        by_stem = {Path(pan).stem: i for i, (_, pan) in enumerate(manifest.items)}
        missing = [s for s in stems if s not in by_stem]
        if missing:
            raise UsageError(f"no ground truth for bundle(s) {missing[:5]}")
        masks = [manifest.load_gt(by_stem[s], catalog.id_offset).class_ids == catalog.ood_id for s in stems]
        tau = calibrate_threshold([scores[s] for s in stems], masks, args.objective)
        result["calibrated"] = True
    result["tau"] = tau

    sem_dir = out / "semantic"
    sem_dir.mkdir(parents=True, exist_ok=True)
    pan_dir = out / "panoptic"
    if args.fuse:
        pan_dir.mkdir(parents=True, exist_ok=True)
    cfg = _fusion_config(args)
    ood_pixels = {}
    notes_all = {}
    for s in stems:
        sem = apply_ood_mask(semantic_argmax(bundles[s], catalog), scores[s], tau, catalog)
        ood_pixels[s] = int(np.count_nonzero(sem == catalog.ood_id))
        # A semantic grid is stored as a map with instance 0 everywhere.
        write_map(sem_dir / f"{s}.sem", PanopticMap(sem.astype(np.int64) * catalog.id_offset, catalog.id_offset))
        if args.fuse:
            notes: list = []
            b = bundles[s]
            write_map(pan_dir / f"{s}.pan", fuse_semantic(sem, b.center_heatmap, b.offsets, catalog, cfg, notes))
            if notes:
                notes_all[s] = notes
    result["ood_pixels"] = ood_pixels
    if notes_all:
        result["notes"] = notes_all
    return result


def cmd_synth(args, catalog: ClassCatalog, out: Path) -> dict:
    from .synth import SynthConfig, builtin_library, load_assets, synthesize_benchmark
    from .synth.assets import DEFAULT_TEST_CATEGORIES

    cfg = SynthConfig(seed=args.seed, instances_per_image=args.per_image, n_bins=args.bins)
    if args.assets:
        assets = load_assets(_require_dir(args.assets, "--assets"))
    else:
        assets = builtin_library(args.seed)
    test_categories = (tuple(c.strip() for c in args.test_categories.split(",") if c.strip())
                       if args.test_categories else DEFAULT_TEST_CATEGORIES)
    train, test, check = synthesize_benchmark(out, cfg, catalog, args.n_train, args.n_test, args.size,
                                              assets, test_categories, args.jobs)
    summary = {}
    for name, res in (("train", train), ("test", test)):
        summary[name] = {
            "images": len(res.manifest.items),
            "ood_categories": list(res.manifest.ood_categories),
            "injected": sum(r["injected"] for r in res.reports),
            "skipped": sum(r["skipped"] for r in res.reports),
            "fallbacks": sum(r["fallbacks"] for r in res.reports),
            "per_image": list(res.reports),
        }
    result = {"synth_config": cfg.to_json(), "splits": summary,
              "disjoint": {"shared": check.shared, "warning": check.warning}}
    if not check.ok:
        raise CheckFailed(f"train and test share OOD categories {check.shared}", result)
    return result


def cmd_bins(args, catalog: ClassCatalog, out: Path) -> dict:
    from .synth import build_depth_bins

    if not args.gt:
        raise UsageError("--gt is required")
    table = build_depth_bins(_load_manifest(args.gt), catalog, args.bins)
    write_json(out / "depth_bins.json", table.to_json())
    return {"depth_bins": table.to_json()}


def cmd_gradcheck(args, catalog: ClassCatalog, out: Path) -> dict:
    from .losskit.gradcheck import BUILDERS, gradient_suite

    ops = args.op or list(BUILDERS)
    unknown = [o for o in ops if o not in BUILDERS]
    if unknown:
        raise UsageError(f"unknown op(s) {unknown}; choose from {sorted(BUILDERS)}")
    if not 1e-7 <= args.eps <= 1e-3:
        raise UsageError("--eps must lie in [1e-7, 1e-3]")
    report = gradient_suite(ops, trials=args.trials, eps=args.eps, seed=args.seed)
    for entry in report.values():
        entry["passed"] = entry["max_error"] < args.tol
    result = {"ops": report, "tolerance": args.tol}
    failed = sorted(k for k, v in report.items() if not v["passed"])
    if failed:
        raise CheckFailed(f"gradient check failed for {failed}", result)
    return result


def cmd_oracle_test(args, catalog: ClassCatalog, out: Path) -> dict:
    from .metrics import match_segments, oracle_match
    from .sampling import random_map_pair

    rng = np.random.default_rng(args.seed)
    mismatches = []
    totals = {"tp": 0, "fp": 0, "fn": 0}
    for trial in range(args.trials):
        pred, gt = random_map_pair(rng, catalog, args.size)
        fast, slow = match_segments(pred, gt, catalog), oracle_match(pred, gt, catalog)
        if fast != slow:
            mismatches.append(trial)
        for cm in slow.per_class.values():
            totals["tp"] += cm.tp
            totals["fp"] += cm.fp
            totals["fn"] += cm.fn
    result = {"trials": args.trials, "mismatched_trials": mismatches, "totals": totals}
    if mismatches:
        raise CheckFailed(f"{len(mismatches)} trial(s) disagree with the oracle", result)
    return result


def cmd_validate(args, catalog: ClassCatalog, out: Path) -> dict:
    files: List[Path] = []
    if args.gt:
        manifest = _load_manifest(args.gt)
        files += [manifest.resolve(pan) for _, pan in manifest.items]
    if args.pred:
        files += sorted(_require_dir(args.pred, "--pred").glob("*.pan"))
    if not files:
        raise UsageError("give --gt and/or --pred")
    violations = {}
    for f in files:
        found = validate_map(read_map(f, catalog.id_offset), catalog)
        if found:
            violations[str(f)] = found
    result = {"checked": len(files), "invalid": violations}
    if violations:
        raise CheckFailed(f"{len(violations)} of {len(files)} map(s) violate the encoding rules", result)
    return result


COMMANDS = {
    "evaluate": cmd_evaluate,
    "fuse": cmd_fuse,
    "score": cmd_score,
    "synth": cmd_synth,
    "bins": cmd_bins,
    "gradcheck": cmd_gradcheck,
    "oracle-test": cmd_oracle_test,
    "validate": cmd_validate,
}


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--catalog", help="class catalog JSON (default: built-in Cityscapes catalog)")
    common.add_argument("--out", required=True, help="output directory for report.json and artifacts")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1, help="worker processes; results do not depend on it")
    common.add_argument("--format", choices=("json", "text"), default="json")

    fusion = argparse.ArgumentParser(add_help=False)
    fusion.add_argument("--center-threshold", type=float, default=0.1)
    fusion.add_argument("--nms-kernel", type=int, default=3)
    fusion.add_argument("--top-k", type=int, default=200)
    fusion.add_argument("--stuff-area", type=int, default=64)

    parser = argparse.ArgumentParser(prog="podseg", description="Open-set panoptic segmentation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="POD-Q / PQ of predictions against a manifest")
    p.add_argument("--gt", help="manifest.json or the directory holding it")
    p.add_argument("--pred", help="directory of predicted .pan files, matched to ground truth by file name")
    p.add_argument("--emit-plots", action="store_true", help="also write SVG bar charts")

    p = sub.add_parser("fuse", parents=[common, fusion], help="dense prediction bundles -> panoptic maps")
    p.add_argument("--bundles", help="directory of prediction bundles")

    p = sub.add_parser("score", parents=[common, fusion], help="OOD scoring and relabeling of semantic grids")
    p.add_argument("--bundles", help="directory of prediction bundles")
    p.add_argument("--method", choices=("msp", "maxlogit", "temp"), default="msp")
    p.add_argument("--temperature", type=float)
    p.add_argument("--tau", type=float, help="threshold; calibrated on --gt when omitted")
    p.add_argument("--gt", help="manifest used for threshold calibration")
    p.add_argument("--objective", choices=("f1", "iou"), default="f1")
    p.add_argument("--fuse", action="store_true", help="also write fused panoptic maps")

    p = sub.add_parser("synth", parents=[common], help="generate OOD-augmented train/test splits")
    p.add_argument("--assets", help="asset directory (default: built-in procedural library)")
    p.add_argument("--bins", type=int, default=4, help="number of depth bins")
    p.add_argument("--per-image", type=_pair_arg, default=(1, 3), help="OOD objects per image: K or LO,HI")
    p.add_argument("--n-train", type=int, default=20)
    p.add_argument("--n-test", type=int, default=20)
    p.add_argument("--size", type=_pair_arg, default=(64, 64), help="image size HxW")
    p.add_argument("--test-categories", help="comma-separated OOD categories reserved for the test split")

    p = sub.add_parser("bins", parents=[common], help="depth-binned size statistics of a split")
    p.add_argument("--gt", help="manifest.json or the directory holding it")
    p.add_argument("--bins", type=int, default=4)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of loss gradients")
    p.add_argument("--op", action="append", help="op name; repeat for several (default: all)")
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-5)

    p = sub.add_parser("oracle-test", parents=[common], help="fast matcher vs exhaustive oracle on random maps")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--size", type=_pair_arg, default=(16, 16))

    p = sub.add_parser("validate", parents=[common], help="check maps against the panoptic encoding rules")
    p.add_argument("--gt", help="manifest.json or the directory holding it")
    p.add_argument("--pred", help="directory of .pan files")
    return parser


def _resolved_config(args, catalog: ClassCatalog) -> dict:
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())}
    cfg["catalog"] = catalog.to_json()
    cfg["catalog_file"] = args.catalog
    return cfg


def _configure_logging() -> None:
    level = os.environ.get("PODS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[List[str]] = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        catalog = load_catalog(args.catalog)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except PodsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _fail_early(args, out, exc)

    report = {"command": args.command, "version": __version__, "seed": args.seed,
              "config": _resolved_config(args, catalog)}
    try:
        report["result"] = COMMANDS[args.command](args, catalog, out)
        report["status"] = "ok"
        code = 0
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PodsError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        report["status"] = "error"
        report["error"] = {"type": type(exc).__name__, "message": str(exc.args[0]) if exc.args else str(exc)}
        if isinstance(exc, CheckFailed) and len(exc.args) > 1:
            report["result"] = exc.args[1]
        code = 1
    try:
        write_json(out / "report.json", report)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if code == 0 and args.format == "text" and (out / "report.txt").exists():
        sys.stdout.write((out / "report.txt").read_text(encoding="utf-8"))
    return code


def _fail_early(args, out: Path, exc: Exception) -> int:
    report = {"command": args.command, "version": __version__, "seed": args.seed,
              "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())},
              "status": "error", "error": {"type": type(exc).__name__, "message": str(exc)}}
    try:
        write_json(out / "report.json", report)
    except OSError:
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())

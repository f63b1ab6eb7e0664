"""Command-line entry point: ``agarcount <subcommand> ...``.

Exit status is 0 on success, 1 when input data fails validation and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path
from typing import List, Optional

from agarcount.core.agar_json import load_annotation_dir, parse_agar, write_annotation_dir
from agarcount.core.coco import to_coco
from agarcount.core.types import ColonyClass
from agarcount.errors import AgarError
from agarcount.metrics import DEFAULT_IOU_THRESHOLDS, count_report, map_report
from agarcount.postprocess import (
    DetectionRecord,
    NmsConfig,
    NmsMethod,
    Priority,
    apply_filters,
    detection_to_json,
    group_by_sample,
    group_by_window,
    merge_windows,
    read_detections,
    write_detections,
)
from agarcount.stats import count_histogram, heatmap, summarize, summary_csv_tables
from agarcount.tiler import ImageExtent, TilingPlan, plan_test_windows, plan_to_json, plan_train_patches
from agarcount.tuner import (
    GridSpec,
    ThresholdConfig,
    apply_dual_policy,
    default_workers,
    evaluate_grid,
    fit_dual_policy,
    select_pair,
)


class DataError(Exception):
    """Input files that parsed but cannot be used; exit status 1."""


def _canon(obj):
    if isinstance(obj, float):
        v = float(f"{obj:.6g}")
        return int(v) if v.is_integer() and abs(v) < 1e15 else v
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    return obj


def dump_json(obj) -> str:
    return json.dumps(_canon(obj), sort_keys=True, indent=2) + "\n"


def _emit(text: str, output: Optional[str]) -> None:
    if output and output != "-":
        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _iou_set(text: str):
    try:
        if ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
            n = int(round((stop - start) / step)) + 1
            values = tuple(round(start + i * step, 10) for i in range(n))
        else:
            values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad IoU set {text!r}; use start:stop:step") from None
    if not values or any(not 0 < v <= 1 for v in values):
        raise argparse.ArgumentTypeError("IoU thresholds must lie in (0, 1]")
    return values


def _extent(text: str) -> ImageExtent:
    try:
        w, h = text.lower().split("x")
        return ImageExtent(int(w), int(h))
    except (ValueError, AgarError):
        raise argparse.ArgumentTypeError(f"bad extent {text!r}; use WIDTHxHEIGHT") from None


def _existing_dir(text: str) -> Path:
    p = Path(text)
    if not p.is_dir():
        raise argparse.ArgumentTypeError(f"not a directory: {text}")
    return p


def _existing_file(text: str) -> Path:
    p = Path(text)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return p


def _load_gt(args):
    samples, failures = load_annotation_dir(args.gt, strict=getattr(args, "strict", False))
    if failures:
        raise DataError("; ".join(f"{name}: {exc}" for name, exc in failures[:5]))
    return samples


def _nms_from_args(args) -> NmsConfig:
    return NmsConfig(method=NmsMethod(args.method), priority=Priority(args.priority), score_floor=args.score_floor)


# --- subcommands ------------------------------------------------------------


def cmd_validate(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        samples, failures = load_annotation_dir(args.annot_dir, strict=args.strict)
    print(f"{len(samples)} samples, {len(failures)} errors, {len(caught)} warnings")
    for name, exc in failures:
        print(f"  {name}: {type(exc).__name__}: {exc}", file=sys.stderr)
    for w in caught:
        print(f"  warning: {w.message}", file=sys.stderr)
    if args.errors_json:
        report = {
            "n_samples": len(samples),
            "errors": [{"file": n, "type": type(e).__name__, "message": str(e)} for n, e in failures],
            "warnings": [str(w.message) for w in caught],
        }
        _emit(dump_json(report), args.errors_json)
    return 1 if failures else 0


def cmd_convert(args) -> int:
    samples, failures = load_annotation_dir(args.annot_dir, strict=args.strict)
    if failures:
        raise DataError(f"{len(failures)} annotation files failed to parse, e.g. {failures[0][0]}: {failures[0][1]}")
    _emit(to_coco(samples), args.output)
    return 0


def cmd_tile(args) -> int:
    extent = ImageExtent(args.width, args.height)
    if args.mode == "test":
        plan = plan_test_windows(extent, args.side, args.overlap, image_id=args.sample_id)
    else:
        if args.annotation is None:
            raise argparse.ArgumentTypeError("--annotation is required for --mode train")
        sample = parse_agar(Path(args.annotation).read_text(encoding="utf-8"), strict=args.strict)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            plan = plan_train_patches(
                extent,
                [lab.box for lab in sample.labels],
                seed=args.seed,
                empty_fraction=args.empty_fraction,
                side=args.side,
                strict=not args.lenient,
                image_id=sample.sample_id,
            )
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    _emit(plan_to_json(plan), args.output)
    return 0


def _load_plans(path) -> dict:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    manifests = obj if isinstance(obj, list) else [obj]
    plans = [TilingPlan.from_manifest(m) for m in manifests]
    if len(plans) == 1 and plans[0].image_id is None:
        return {None: plans[0]}
    return {p.image_id: p for p in plans}


def cmd_merge(args) -> int:
    plans = _load_plans(args.plan)
    config = ThresholdConfig.loads(Path(args.thresholds).read_text(encoding="utf-8"))
    if args.dual and config.auxiliary is None:
        raise DataError("--dual needs a thresholds file with an 'auxiliary' pair")
    by_sample = group_by_window(read_detections(args.detections))
    records = []
    for sid in sorted(by_sample):
        plan = plans.get(sid, plans.get(None))
        if plan is None:
            raise DataError(f"no tiling plan for sample {sid}")
        merged = merge_windows(plan, by_sample[sid], args.patch_scale)
        if args.dual:
            kept = apply_dual_policy(config.policy, merged, config.nms)
        else:
            kept = apply_filters(merged, config.pair.filter_config(config.nms))
        records.extend(DetectionRecord(sid, d) for d in kept)
    if args.output and args.output != "-":
        write_detections(args.output, records)
    else:
        for r in records:
            print(detection_to_json(r.sample_id, r.detection))
    return 0


def _preds_for(samples, pred_path):
    preds = group_by_sample(read_detections(pred_path))
    known = {s.sample_id for s in samples}
    unknown = sorted(set(preds) - known)
    if unknown:
        raise DataError(f"predictions reference unknown sample ids {unknown[:10]}")
    return {s.sample_id: preds.get(s.sample_id, []) for s in samples}


def cmd_eval_detection(args) -> int:
    samples = _load_gt(args)
    preds = _preds_for(samples, args.pred)
    gt = {s.sample_id: list(s.labels) for s in samples}
    report = map_report(gt, preds, args.iou_set, method=args.ap_method)
    _emit(dump_json(report.to_dict()), args.output)
    if args.table:
        sys.stderr.write(report.to_table())
    if args.figures:
        from agarcount.plotting import plot_pr_curves

        shown = [t for t in (0.5, 0.75) if any(abs(t - x) < 1e-9 for x in args.iou_set)] or [args.iou_set[0]]
        plot_pr_curves(report, args.figures, shown)
    return 0


def cmd_eval_counting(args) -> int:
    samples = _load_gt(args)
    preds = _preds_for(samples, args.pred)
    report = count_report(samples, preds)
    _emit(dump_json(report.to_dict()), args.output)
    if args.figures:
        from agarcount.plotting import plot_counts

        kept = [s for s in samples if s.colonies_number >= 0]
        plot_counts(
            [s.colonies_number for s in kept],
            [sum(1 for d in preds[s.sample_id] if d.cls.is_microbe) for s in kept],
            args.figures,
        )
    return 0


def cmd_tune(args) -> int:
    samples = _load_gt(args)
    preds = _preds_for(samples, args.pred)
    dataset = [(s, preds[s.sample_id]) for s in samples]
    if args.grid and Path(args.grid).is_file():
        obj = json.loads(Path(args.grid).read_text(encoding="utf-8"))
        grid = GridSpec(
            prob_values=obj["prob_values"],
            nms_values=obj["nms_values"],
            tiebreak_band=obj.get("tiebreak_band", args.band),
            relative_band=obj.get("relative_band", args.relative_band),
        )
    elif args.grid:
        grid = GridSpec.parse(args.grid, tiebreak_band=args.band, relative_band=args.relative_band)
    else:
        grid = GridSpec(tiebreak_band=args.band, relative_band=args.relative_band)
    nms = _nms_from_args(args)
    workers = default_workers()
    if args.dual:
        policy = fit_dual_policy(grid, dataset, args.switch_count, nms, workers)
        config = ThresholdConfig(policy.general, nms, policy.auxiliary, policy.switch_count)
    else:
        best = select_pair(evaluate_grid(grid, dataset, nms, workers), grid.tiebreak_band, grid.relative_band)
        config = ThresholdConfig(best.pair, nms, None, args.switch_count)
    _emit(dump_json(config.to_dict()), args.output)
    return 0


def cmd_stats(args) -> int:
    samples = _load_gt(args)
    summary = summarize(samples, args.bucket_width)
    hist = count_histogram(samples, args.bucket_width, include_empty=args.include_empty)
    report = summary.to_dict()
    report["count_histogram"] = hist.to_dict()["buckets"]
    report["count_quartiles"] = {"q1": hist.q1, "median": hist.median, "q3": hist.q3, "n_samples": hist.n_samples}
    _emit(dump_json(report), args.output)
    if args.csv_dir:
        out = Path(args.csv_dir)
        out.mkdir(parents=True, exist_ok=True)
        for stem, text in summary_csv_tables(summary, hist).items():
            (out / f"{stem}.csv").write_text(text, encoding="utf-8")
    if args.figures:
        from agarcount.plotting import plot_dataset_summary

        extent = args.plate_extent
        if extent is None:
            xs = [lab.box.x2 for s in samples for lab in s.labels] or [1.0]
            ys = [lab.box.y2 for s in samples for lab in s.labels] or [1.0]
            extent = ImageExtent(int(max(xs)) + 1, int(max(ys)) + 1)
        labels_by_sample = {s.sample_id: s.labels for s in samples}
        maps = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for c in ColonyClass:
                hm = heatmap(labels_by_sample, c, args.heatmap_resolution, extent, args.heatmap_mode)
                if hm.normalization_max > 0:
                    maps.append(hm)
        plot_dataset_summary(summary, hist, maps, args.figures)
    return 0


def cmd_synth(args) -> int:
    from agarcount.synth import SynthConfig, generate, project_to_windows

    obj = json.loads(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if args.seed is not None:
        obj["seed"] = args.seed
    if args.n_samples is not None:
        obj["n_samples"] = args.n_samples
    try:
        cfg = SynthConfig.from_dict(obj)
    except TypeError as exc:
        raise DataError(f"bad synth config: {exc}") from None
    samples = generate(cfg)
    out = Path(args.out)
    write_annotation_dir([s.annotation for s in samples], out / "annotations")
    write_detections(out / "detections_ideal.jsonl", [DetectionRecord(s.annotation.sample_id, d) for s in samples for d in s.ideal_detections])
    write_detections(out / "detections_noisy.jsonl", [DetectionRecord(s.annotation.sample_id, d) for s in samples for d in s.noisy_detections])
    (out / "config.json").write_text(dump_json(cfg.to_dict()), encoding="utf-8")
    if args.with_windows:
        manifests, records = [], []
        for s in samples:
            plan = plan_test_windows(cfg.plate_extent, image_id=s.annotation.sample_id)
            manifests.append(plan.to_manifest())
            for wd in project_to_windows(plan, s.ideal_detections):
                records.extend(DetectionRecord(s.annotation.sample_id, d, wd.window_index) for d in wd.detections)
        (out / "plans.json").write_text(json.dumps(manifests, sort_keys=True) + "\n", encoding="utf-8")
        write_detections(out / "detections_windows.jsonl", records)
    print(f"{len(samples)} samples written to {out}")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agarcount", description="Colony detection and counting pipeline tools.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, gt=False, pred=False):
        if gt:
            sp.add_argument("--gt", type=_existing_dir, required=True, help="directory of AGAR annotation JSON files")
            sp.add_argument("--strict", action="store_true", help="reject unknown fields and count mismatches")
        if pred:
            sp.add_argument("--pred", type=_existing_file, required=True, help="whole-image detections (JSON lines)")
        sp.add_argument("-o", "--output", help="output file (default: stdout)")
        sp.add_argument("--errors-json", metavar="PATH", help="write a JSON error report ('-' for stdout)")

    sp = sub.add_parser("validate", help="parse every annotation file and report problems")
    sp.add_argument("annot_dir", type=_existing_dir)
    sp.add_argument("--strict", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("convert", help="export annotations in another format")
    sp.add_argument("annot_dir", type=_existing_dir)
    sp.add_argument("--to", choices=["coco"], required=True)
    sp.add_argument("--strict", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("tile", help="plan training patches or test windows for one image")
    sp.add_argument("--mode", choices=["train", "test"], required=True)
    sp.add_argument("--width", type=int, required=True)
    sp.add_argument("--height", type=int, required=True)
    sp.add_argument("--annotation", type=_existing_file, help="AGAR JSON with the boxes to cover (train mode)")
    sp.add_argument("--sample-id", type=int, help="image id recorded in a test-mode manifest")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--empty-fraction", type=float, default=0.05)
    sp.add_argument("--side", type=int, default=512)
    sp.add_argument("--overlap", type=int, default=None, help="test-window overlap in px (default side/8)")
    sp.add_argument("--lenient", action="store_true", help="centre windows on oversized boxes instead of failing")
    sp.add_argument("--strict", action="store_true")
    common(sp)
    sp.set_defaults(func=cmd_tile)

    sp = sub.add_parser("merge", help="merge window detections and filter them")
    sp.add_argument("--plan", type=_existing_file, required=True, help="tiling manifest (object or list of objects)")
    sp.add_argument("--detections", type=_existing_file, required=True, help="window-local detections (JSON lines)")
    sp.add_argument("--thresholds", type=_existing_file, required=True, help="threshold config written by 'tune'")
    sp.add_argument("--dual", action="store_true", help="apply the general/auxiliary switching policy")
    sp.add_argument("--patch-scale", type=float, default=1.0)
    common(sp)
    sp.set_defaults(func=cmd_merge)

    sp = sub.add_parser("eval-detection", help="AP per class and IoU threshold")
    common(sp, gt=True, pred=True)
    sp.add_argument("--iou-set", type=_iou_set, default=DEFAULT_IOU_THRESHOLDS, help="start:stop:step (default 0.5:0.95:0.05)")
    sp.add_argument("--ap-method", choices=["trapezoid", "coco101"], default="trapezoid")
    sp.add_argument("--table", action="store_true", help="also print a text table to stderr")
    sp.add_argument("--figures", metavar="DIR", help="write PR-curve figures here")
    sp.set_defaults(func=cmd_eval_detection)

    sp = sub.add_parser("eval-counting", help="MAE, cMAE and sMAPE of predicted counts")
    common(sp, gt=True, pred=True)
    sp.add_argument("--figures", metavar="DIR", help="write the count scatter plot here")
    sp.set_defaults(func=cmd_eval_counting)

    sp = sub.add_parser("tune", help="grid-search the probability and NMS thresholds")
    common(sp, gt=True, pred=True)
    sp.add_argument("--grid", help="'prob=a:b:s,nms=a:b:s' or a JSON file with prob_values/nms_values")
    sp.add_argument("--method", choices=[m.value for m in NmsMethod], default=NmsMethod.SoftGaussian.value)
    sp.add_argument("--priority", choices=[p.value for p in Priority], default=Priority.Area.value)
    sp.add_argument("--score-floor", type=float, default=0.001)
    sp.add_argument("--band", type=float, default=0.1, help="sMAPE tiebreak band in percentage points")
    sp.add_argument("--relative-band", action="store_true", help="band is a percentage of the best sMAPE")
    sp.add_argument("--dual", action="store_true", help="also fit the auxiliary pair on crowded plates")
    sp.add_argument("--switch-count", type=int, default=50)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("stats", help="dataset statistics")
    common(sp, gt=True)
    sp.add_argument("--bucket-width", type=int, default=10)
    sp.add_argument("--include-empty", action="store_true", help="count empty plates in the histogram and quartiles")
    sp.add_argument("--csv-dir", metavar="DIR", help="write CSV tables here")
    sp.add_argument("--figures", metavar="DIR", help="write figures here")
    sp.add_argument("--plate-extent", type=_extent, help="WIDTHxHEIGHT used for heatmaps")
    sp.add_argument("--heatmap-resolution", type=int, default=64)
    sp.add_argument("--heatmap-mode", choices=["center", "area"], default="center")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--config", type=_existing_file, help="JSON SynthConfig (defaults otherwise)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-samples", type=int)
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--with-windows", action="store_true", help="also write test plans and window-local ideal detections")
    common(sp)
    sp.set_defaults(func=cmd_synth)
    return p


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except argparse.ArgumentTypeError as exc:
        parser.print_usage(sys.stderr)
        print(f"agarcount: error: {exc}", file=sys.stderr)
        return 2
    except (AgarError, DataError, json.JSONDecodeError, KeyError) as exc:
        print(f"agarcount: {type(exc).__name__}: {exc}", file=sys.stderr)
        if getattr(args, "errors_json", None) and args.command != "validate":
            _emit(dump_json({"errors": [{"type": type(exc).__name__, "message": str(exc)}]}), args.errors_json)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

"""
Main entry point for Fisheye Sense
Batch commands: rectify, eval, synth, compression, coverage, liftsplat, fds, schema

    python main.py synth --seed 0 --frames 5 --objects 8 --out out/synth
    python main.py eval --gt out/synth/manifest.json --pred preds.json --out report.json
"""

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from core.analysis import (
    DEFAULT_NEAR_RANGE,
    camera_coverage,
    compression_samples,
    fit_compression_curve,
    sample_per_class,
    write_compression_outputs,
    write_coverage_outputs,
)
from core.config import AppConfig, load_config
from core.data_loader import (
    DatasetLoader,
    ground_truth_by_frame,
    load_calibration,
    load_manifest,
    load_predictions,
    predictions_by_frame,
    read_image,
    save_image,
)
from core.errors import DataError, FisheyeSenseError, UsageError
from core.evaluation import EvalConfig, MetricsReport, evaluate, fds, write_class_table_csv, write_report_json
from core.frustum import BevGridSpec, DepthBinning, build_frustum, in_extent_mass, lift, merge_bev, save_bev_csv, save_bev_heatmap, splat
from core.schema import SCHEMA_MODELS
from core.synth import STANDARD_LAYOUTS, default_rig, synth_scene
from core.warp import GridCache, GridSpec, apply_grid, build_grid, rectify_image, save_grid_binary, target_rays

logger = logging.getLogger("fisheye_sense")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
RECTIFY_MODES = {"perspective": "perspective", "cylindrical": "cylindrical", "equirect": "equirectangular"}


# =========================================================
# Argument helpers
# =========================================================

def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _str_list(text: str) -> List[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _existing_file(path: Optional[str], flag: str) -> Optional[Path]:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: file not found: {p}")
    return p


def _output_dir(path: str, flag: str = "--out") -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise UsageError(f"{flag}: {p} exists and is not a directory")
    return p


def _output_file(path: str, flag: str = "--out") -> Path:
    p = Path(path)
    if p.is_dir():
        raise UsageError(f"{flag}: {p} is a directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fisheye-sense",
        description="Fisheye surround-view perception toolkit: rectification, lift-splat, evaluation and analysis",
    )
    parser.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging level (stderr)")
    parser.add_argument("--threads", type=int, default=1, help="Worker threads; outputs do not depend on it")
    parser.add_argument("--config", default=None, help="YAML config overriding config/default.yaml")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("rectify", help="Warp fisheye images into a perspective, cylindrical or equirectangular view")
    p.add_argument("--input", required=True, help="Dataset manifest JSON or a single image")
    p.add_argument("--calib", default=None, help="Rig calibration JSON (required for a single image)")
    p.add_argument("--camera", required=True, help="Camera id to rectify")
    p.add_argument("--mode", required=True, choices=list(RECTIFY_MODES), help="Target projection")
    p.add_argument("--height", type=int, default=None, help="Target height (default: source height)")
    p.add_argument("--width", type=int, default=None, help="Target width (default: source width)")
    p.add_argument("--sample-mode", choices=["bilinear", "nearest"], default=None, help="Interpolation")
    p.add_argument("--save-grid", action="store_true", help="Also write the sampling grid in binary form")
    p.add_argument("--out", required=True, help="Output directory")

    p = sub.add_parser("eval", help="Evaluate predictions against a manifest's annotations")
    p.add_argument("--gt", required=True, help="Dataset manifest JSON with annotations")
    p.add_argument("--pred", required=True, help="Predictions JSON")
    p.add_argument("--thresholds", type=_float_list, default=None, help="Matching thresholds in meters, e.g. 0.5,1,2,4")
    p.add_argument("--tp-threshold", type=float, default=None, help="Threshold for the TP errors")
    p.add_argument("--bins", type=_float_list, default=None, help="Cumulative distance bins in meters, e.g. 10,20,30")
    p.add_argument("--classes", type=_str_list, default=None, help="Evaluated classes, comma-separated")
    p.add_argument("--max-range", type=float, default=None, help="Radial range filter in meters")
    p.add_argument("--ap-mode", choices=["nuscenes", "trapezoid"], default=None, help="AP integration")
    p.add_argument("--csv", default=None, help="Optional per-class CSV table")
    p.add_argument("--out", required=True, help="Report JSON path")

    p = sub.add_parser("synth", help="Generate a deterministic synthetic dataset")
    p.add_argument("--seed", type=int, default=0, help="Random seed")
    p.add_argument("--frames", type=int, default=10, help="Number of frames")
    p.add_argument("--objects", type=int, default=8, help="Number of objects")
    p.add_argument("--rig", default=None, help="Rig layout (4xF, 6xP, 4xP-no-front-rear, 2xF-front-rear, 2xF-left-right, 4xF+6xP) or calibration JSON")
    p.add_argument("--hz", type=float, default=None, help="Frame rate")
    p.add_argument("--out", required=True, help="Output directory")

    p = sub.add_parser("compression", help="Fisheye/pinhole pixel-compression scatter and LOWESS curve")
    p.add_argument("--dataset", required=True, help="Dataset manifest JSON (rig with both lens types)")
    p.add_argument("--per-class-cap", type=int, default=None, help="Maximum objects per class")
    p.add_argument("--lowess-frac", type=float, default=None, help="LOWESS neighbourhood fraction")
    p.add_argument("--lowess-iterations", type=int, default=None, help="LOWESS robustness passes")
    p.add_argument("--edge-samples", type=int, default=None, help="Points per box edge when projecting")
    p.add_argument("--seed", type=int, default=0, help="Seed for per-class sampling")
    p.add_argument("--out", required=True, help="Output directory (scatter.csv, curve.csv, compression.svg)")

    p = sub.add_parser("coverage", help="Count the cameras observing each annotated object, per rig layout")
    p.add_argument("--dataset", required=True, help="Dataset manifest JSON (annotations only are used)")
    p.add_argument("--layouts", type=_str_list, default=None, help="Comma-separated layout names or calibration JSON paths (default: all standard layouts)")
    p.add_argument("--edge-samples", type=int, default=None, help="Points per box edge when projecting")
    p.add_argument("--near-range", type=float, default=DEFAULT_NEAR_RANGE, help="Distance below which unobserved objects are counted as blind spots")
    p.add_argument("--out", required=True, help="Output directory (coverage.csv, summary.json)")

    p = sub.add_parser("liftsplat", help="Lift one frame's images along depth shells and splat them to BEV")
    p.add_argument("--dataset", required=True, help="Dataset manifest JSON")
    p.add_argument("--frame", default=None, help="Frame id (default: first frame)")
    p.add_argument("--camera-set", type=_str_list, default=None, help="Camera ids, comma-separated (default: all)")
    p.add_argument("--binning", choices=["uniform", "quadratic"], default=None, help="Depth spacing")
    p.add_argument("--depth-bins", type=int, default=None, help="Number of depth shells")
    p.add_argument("--r-min", type=float, default=None, help="Nearest shell radius (m)")
    p.add_argument("--r-max", type=float, default=None, help="Far radius (m)")
    p.add_argument("--bev-size", type=float, default=None, help="BEV half extent in meters")
    p.add_argument("--cell-size", type=float, default=None, help="BEV cell size in meters")
    p.add_argument("--grid-height", type=int, default=32, help="Equirectangular feature grid height")
    p.add_argument("--grid-width", type=int, default=64, help="Equirectangular feature grid width")
    p.add_argument("--depth-logits", default=None, help="NPZ with one (H, W, D) array per camera id (default: uniform)")
    p.add_argument("--out", required=True, help="Output directory (bev.csv, bev.png, summary.json)")

    p = sub.add_parser("fds", help="Fisheye Detection Score from mAP and TP error components")
    p.add_argument("--map", dest="map_value", type=float, required=True, help="Mean AP")
    p.add_argument("--mate", type=float, required=True, help="Mean translation error")
    p.add_argument("--mase", type=float, required=True, help="Mean scale error")
    p.add_argument("--maoe", type=float, required=True, help="Mean orientation error")
    p.add_argument("--out", default=None, help="Optional JSON output")

    p = sub.add_parser("schema", help="Write the JSON Schema of a document type")
    p.add_argument("--kind", required=True, choices=sorted(SCHEMA_MODELS) + ["report"], help="Document type")
    p.add_argument("--out", required=True, help="Output JSON Schema path")
    return parser


# =========================================================
# Commands
# =========================================================

def _rig_camera(calib_path: Path, camera_id: str):
    try:
        return load_calibration(calib_path).camera(camera_id)
    except KeyError:
        raise DataError(f"calibration has no camera '{camera_id}'") from None


def cmd_rectify(args: argparse.Namespace, config: AppConfig) -> int:
    source = _existing_file(args.input, "--input")
    calib_path = _existing_file(args.calib, "--calib")
    out_dir = _output_dir(args.out)
    mode = args.sample_mode or config.grid.sample_mode
    height = args.height or config.grid.height
    width = args.width or config.grid.width
    if (height is not None and height < 1) or (width is not None and width < 1):
        raise UsageError("--height and --width must be positive")

    jobs = []
    if source.suffix.lower() == ".json":
        loader = DatasetLoader(source)
        fixed = _rig_camera(calib_path, args.camera) if calib_path else None
        for frame in loader.frames():
            if args.camera not in frame.images:
                continue
            cam = fixed or loader.camera(frame, args.camera)
            jobs.append((cam, lambda f=frame: loader.load_image(f, args.camera), out_dir / frame.frame_id / f"{args.camera}_{args.mode}.png"))
        if not jobs:
            raise DataError(f"no frame has an image for camera '{args.camera}'")
    else:
        if calib_path is None:
            raise UsageError("--calib is required when --input is a single image")
        cam = _rig_camera(calib_path, args.camera)
        jobs.append((cam, lambda: read_image(source), out_dir / f"{source.stem}_{args.mode}.png"))

    cache = GridCache()
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(job):
        cam, read, target = job
        spec = GridSpec.for_camera(cam, RECTIFY_MODES[args.mode], height, width)
        save_image(rectify_image(read(), cam, spec, mode, cache), target)
        return cam, spec

    with ThreadPoolExecutor(max_workers=max(args.threads, 1)) as pool:
        done = list(pool.map(run, jobs))
    if args.save_grid:
        cam, spec = done[0]
        save_grid_binary(cache.get(cam, spec), out_dir / f"grid_{args.camera}_{args.mode}.bin")
    logger.info("Rectified %d images (%s) into %s", len(done), args.mode, out_dir)
    return 0


def _eval_config(args: argparse.Namespace, config: AppConfig) -> EvalConfig:
    overrides = {
        "thresholds": args.thresholds,
        "tp_threshold": args.tp_threshold,
        "distance_bins": args.bins,
        "classes": args.classes,
        "max_range": args.max_range,
        "ap_mode": args.ap_mode,
    }
    merged = config.eval.model_dump()
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return EvalConfig.model_validate(merged)
    except ValidationError as exc:
        raise UsageError(f"evaluation flags: {exc.errors()[0]['msg']}") from None


def cmd_eval(args: argparse.Namespace, config: AppConfig) -> int:
    gt_path = _existing_file(args.gt, "--gt")
    pred_path = _existing_file(args.pred, "--pred")
    out_path = _output_file(args.out)
    csv_path = _output_file(args.csv, "--csv") if args.csv else None
    eval_config = _eval_config(args, config)

    manifest = load_manifest(gt_path)
    predictions = load_predictions(pred_path, manifest)
    report = evaluate(
        ground_truth_by_frame(manifest),
        predictions_by_frame(predictions, manifest),
        eval_config,
        threads=args.threads,
    )
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_report_json(report, out_path)
    if csv_path is not None:
        csv_path.parent.mkdir(parents=True, exist_ok=True)
        write_class_table_csv(report, csv_path)
    logger.info("FDS %.4f (mAP %.4f) written to %s", report.fds, report.mean_ap, out_path)
    return 0


def cmd_synth(args: argparse.Namespace, config: AppConfig) -> int:
    out_dir = _output_dir(args.out)
    if args.frames < 1 or args.objects < 0:
        raise UsageError("--frames must be >= 1 and --objects >= 0")
    if args.hz is not None and not args.hz > 0:
        raise UsageError("--hz must be positive")
    rig_arg = args.rig or config.synth.layout
    if rig_arg.lower().endswith(".json"):
        rig = load_calibration(_existing_file(rig_arg, "--rig"))
    else:
        try:
            rig = default_rig(rig_arg)
        except ValueError as exc:
            raise UsageError(f"--rig: {exc}") from None
    synth_scene(
        seed=args.seed,
        n_frames=args.frames,
        n_objects=args.objects,
        rig=rig,
        out_dir=out_dir,
        hz=args.hz or config.synth.hz,
        threads=args.threads,
        ego_speed=config.synth.ego_speed,
    )
    return 0


def cmd_compression(args: argparse.Namespace, config: AppConfig) -> int:
    dataset = _existing_file(args.dataset, "--dataset")
    out_dir = _output_dir(args.out)
    settings = config.lowess.model_copy(
        update={
            k: v
            for k, v in {
                "frac": args.lowess_frac,
                "iterations": args.lowess_iterations,
                "per_class_cap": args.per_class_cap,
                "edge_samples": args.edge_samples,
            }.items()
            if v is not None
        }
    )
    if (
        not 0 < settings.frac <= 1
        or settings.iterations < 0
        or settings.per_class_cap < 1
        or settings.edge_samples < 1
    ):
        raise UsageError("invalid LOWESS fraction or iterations, per-class cap or edge samples")

    loader = DatasetLoader(dataset)
    by_calibration: Dict[str, list] = {}
    for frame in loader.frames():
        by_calibration.setdefault(frame.calibration_id, []).append((frame.frame_id, frame.boxes()))
    samples, skipped = [], 0
    for calib_id in sorted(by_calibration):
        cams = loader.calibration(calib_id).camera_models()
        found, missed = compression_samples(by_calibration[calib_id], cams, settings.edge_samples)
        samples.extend(found)
        skipped += missed
    samples = sample_per_class(samples, settings.per_class_cap, args.seed)
    if len(samples) < 3:
        raise DataError(f"only {len(samples)} objects are visible in both lens types; need at least 3")
    curve = fit_compression_curve(samples, settings.frac, settings.iterations)
    write_compression_outputs(samples, curve, out_dir)
    logger.info("Compression analysis: %d samples (%d skipped) -> %s", len(samples), skipped, out_dir)
    return 0


def cmd_coverage(args: argparse.Namespace, config: AppConfig) -> int:
    dataset = _existing_file(args.dataset, "--dataset")
    out_dir = _output_dir(args.out)
    edge_samples = args.edge_samples if args.edge_samples is not None else config.lowess.edge_samples
    if edge_samples < 1 or not args.near_range > 0:
        raise UsageError("--edge-samples must be >= 1 and --near-range positive")
    rigs = {}
    for name in args.layouts or STANDARD_LAYOUTS:
        if name.lower().endswith(".json"):
            rig = load_calibration(_existing_file(name, "--layouts"))
            rigs[rig.calibration_id] = rig
            continue
        try:
            rigs[name] = default_rig(name)
        except ValueError as exc:
            raise UsageError(f"--layouts: {exc}") from None

    frames = [(frame.frame_id, frame.boxes()) for frame in DatasetLoader(dataset).frames()]
    per_layout = {name: camera_coverage(frames, rig.camera_models(), edge_samples) for name, rig in rigs.items()}
    write_coverage_outputs(per_layout, out_dir, args.near_range)
    logger.info("Coverage analysis: %d layouts, %d frames -> %s", len(per_layout), len(frames), out_dir)
    return 0


def cmd_liftsplat(args: argparse.Namespace, config: AppConfig) -> int:
    dataset = _existing_file(args.dataset, "--dataset")
    logits_path = _existing_file(args.depth_logits, "--depth-logits")
    out_dir = _output_dir(args.out)
    if args.grid_height < 1 or args.grid_width < 1:
        raise UsageError("--grid-height and --grid-width must be positive")

    binning_cfg = config.binning.model_copy(
        update={
            k: v
            for k, v in {"spacing": args.binning, "count": args.depth_bins, "r_min": args.r_min, "r_max": args.r_max}.items()
            if v is not None
        }
    )
    bev_cfg = config.bev.model_copy(
        update={k: v for k, v in {"half_extent": args.bev_size, "cell_size": args.cell_size}.items() if v is not None}
    )
    try:
        binning: DepthBinning = binning_cfg.build()
        bev_spec: BevGridSpec = bev_cfg.build()
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    loader = DatasetLoader(dataset)
    frame = loader.frame(args.frame) if args.frame else loader.frames()[0]
    camera_ids = args.camera_set or [c.id for c in loader.cameras(frame)]
    logits = dict(np.load(logits_path)) if logits_path else {}

    def lift_camera(camera_id: str):
        cam = loader.camera(frame, camera_id)
        spec = GridSpec.for_camera(cam, "equirectangular", args.grid_height, args.grid_width)
        features = apply_grid(loader.load_image(frame, camera_id) / 255.0, build_grid(spec, cam))
        depth_logits = logits.get(camera_id, np.zeros(features.shape[:2] + (binning.count,)))
        volume = lift(features, depth_logits)
        frustum = build_frustum(target_rays(spec), binning, cam.extrinsics, cam.id)
        return splat(volume, frustum, bev_spec), in_extent_mass(volume, frustum, bev_spec)

    with ThreadPoolExecutor(max_workers=max(args.threads, 1)) as pool:
        results = list(pool.map(lift_camera, camera_ids))
    bev = merge_bev(grid for grid, _ in results)
    mass = float(sum(m for _, m in results))

    out_dir.mkdir(parents=True, exist_ok=True)
    save_bev_csv(bev, out_dir / "bev.csv")
    save_bev_heatmap(bev, out_dir / "bev.png")
    summary = {
        "frame_id": frame.frame_id,
        "cameras": list(camera_ids),
        "bev_total": bev.total,
        "in_extent_mass": mass,
        "shape": list(bev.values.shape),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("Lift-splat of frame %s over %d cameras: BEV mass %.6g", frame.frame_id, len(camera_ids), bev.total)
    return 0


def cmd_fds(args: argparse.Namespace, config: AppConfig) -> int:
    try:
        score = fds(args.map_value, args.mate, args.mase, args.maoe)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(f"{score:.6f}")
    if args.out:
        out = _output_file(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        components = {"fds": score, "mean_ap": args.map_value, "mate": args.mate, "mase": args.mase, "maoe": args.maoe}
        out.write_text(json.dumps(components, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_schema(args: argparse.Namespace, config: AppConfig) -> int:
    out = _output_file(args.out)
    model = MetricsReport if args.kind == "report" else SCHEMA_MODELS[args.kind]
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(model.model_json_schema(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return 0


COMMANDS = {
    "rectify": cmd_rectify,
    "eval": cmd_eval,
    "synth": cmd_synth,
    "compression": cmd_compression,
    "coverage": cmd_coverage,
    "liftsplat": cmd_liftsplat,
    "fds": cmd_fds,
    "schema": cmd_schema,
}


def _report_error(exc: BaseException, code: int) -> None:
    detail = " ".join(str(exc).split()).replace('"', '\\"')
    sys.stderr.write(f'error code={code} kind={type(exc).__name__} detail="{detail}"\n')


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, stream=sys.stderr, force=True)
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        config = load_config(_existing_file(args.config, "--config"))
        return COMMANDS[args.command](args, config)
    except FisheyeSenseError as exc:
        _report_error(exc, exc.exit_code)
        return exc.exit_code
    except ValueError as exc:
        # argument checks raise UsageError; what remains came from the data
        _report_error(exc, DataError.exit_code)
        return DataError.exit_code
    except OSError as exc:
        _report_error(exc, 3)
        return 3


if __name__ == "__main__":
    sys.exit(main())

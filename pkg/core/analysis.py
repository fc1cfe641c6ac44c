"""
Pixel-compression analysis
Compares the largest projected bbox of every object across fisheye and
pinhole cameras and smooths the area ratio against distance with LOWESS.
Also counts the cameras of each rig layout that observe every object.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")

import numpy as np
import pandas as pd
from matplotlib.figure import Figure
from scipy import linalg

from .boxes import Box3D, project_box
from .errors import DataError
from .geometry import CameraModel

logger = logging.getLogger(__name__)

DEFAULT_LOWESS_FRAC = 0.5
DEFAULT_LOWESS_ITERATIONS = 3
SVG_HASH_SALT = "fisheye-sense"


@dataclass(frozen=True)
class CompressionSample:
    object_id: str
    label: str
    distance: float
    fisheye_area: float
    pinhole_area: float
    ratio: float


def area_ratio(fisheye_w: float, fisheye_h: float, pinhole_w: float, pinhole_h: float) -> float:
    """Fisheye bbox area over pinhole bbox area"""
    pinhole_area = pinhole_w * pinhole_h
    if pinhole_area <= 0:
        raise ValueError("pinhole bbox area must be positive")
    return (fisheye_w * fisheye_h) / pinhole_area


def _max_area(box: Box3D, cameras: Sequence[CameraModel], edge_samples: int) -> float:
    best = 0.0
    for cam in cameras:
        bbox = project_box(box, cam, edge_samples)
        if bbox is not None:
            best = max(best, bbox.area)
    return best


def compression_samples(
    frames: Iterable[Tuple[str, Sequence[Box3D]]],
    cameras: Sequence[CameraModel],
    edge_samples: int = 1,
) -> Tuple[List[CompressionSample], int]:
    """
    Largest fisheye bbox area / largest pinhole bbox area for every object

    Args:
        frames: (frame id, annotations in the reference frame) pairs
        cameras: Rig containing both lens types

    Returns:
        (samples, number of objects skipped because one lens type missed them)

    Raises:
        DataError: the rig lacks one of the lens types
    """
    fisheyes = [c for c in cameras if c.lens == "fisheye"]
    pinholes = [c for c in cameras if c.lens == "pinhole"]
    if not fisheyes or not pinholes:
        raise DataError("compression analysis needs at least one fisheye and one pinhole camera")

    samples: List[CompressionSample] = []
    skipped = 0
    for frame_id, boxes in frames:
        for index, box in enumerate(boxes):
            fisheye_area = _max_area(box, fisheyes, edge_samples)
            pinhole_area = _max_area(box, pinholes, edge_samples)
            if fisheye_area <= 0 or pinhole_area <= 0:
                skipped += 1
                continue
            samples.append(
                CompressionSample(
                    object_id=f"{frame_id}/{box.track_id or index}",
                    label=box.label,
                    distance=float(np.linalg.norm(box.center)),
                    fisheye_area=fisheye_area,
                    pinhole_area=pinhole_area,
                    ratio=fisheye_area / pinhole_area,
                )
            )
    logger.info("Collected %d compression samples, skipped %d objects", len(samples), skipped)
    return samples, skipped


def sample_per_class(samples: Sequence[CompressionSample], cap: int, seed: int = 0) -> List[CompressionSample]:
    """At most `cap` samples per class, drawn without replacement with a seeded generator"""
    rng = np.random.default_rng(seed)
    by_label: Dict[str, List[CompressionSample]] = {}
    for sample in samples:
        by_label.setdefault(sample.label, []).append(sample)
    kept = []
    for label in sorted(by_label):
        group = by_label[label]
        if len(group) > cap:
            picks = np.sort(rng.choice(len(group), size=cap, replace=False))
            group = [group[i] for i in picks]
        kept.extend(group)
    return kept


# =========================================================
# LOWESS
# =========================================================

def _bisquare(u: np.ndarray) -> np.ndarray:
    return np.where(np.abs(u) < 1.0, (1.0 - u ** 2) ** 2, 0.0)


def _tricube(u: np.ndarray) -> np.ndarray:
    return np.where(u < 1.0, (1.0 - u ** 3) ** 3, 0.0)


def _residual_scale_negligible(scale: float, y: np.ndarray) -> bool:
    return scale <= 1e-12 * max(1.0, float(np.mean(np.abs(y))))


def _robust_mean(y: np.ndarray, iterations: int) -> float:
    level = float(np.mean(y))
    for _ in range(iterations):
        residuals = y - level
        scale = float(np.median(np.abs(residuals)))
        if _residual_scale_negligible(scale, y):
            break
        weights = _bisquare(residuals / (6.0 * scale))
        level = float(np.sum(weights * y) / np.sum(weights))
    return level


def _local_linear(x: np.ndarray, y: np.ndarray, weights: np.ndarray, at: float) -> float:
    xc = x - at
    sw = weights.sum()
    a = np.array(
        [
            [sw, np.sum(weights * xc)],
            [np.sum(weights * xc), np.sum(weights * xc * xc)],
        ]
    )
    b = np.array([np.sum(weights * y), np.sum(weights * xc * y)])
    det = a[0, 0] * a[1, 1] - a[0, 1] ** 2
    if det <= 1e-12 * a[0, 0] * a[1, 1]:
        return float(b[0] / sw)
    try:
        beta = linalg.solve(a, b, assume_a="pos", check_finite=False)
    except np.linalg.LinAlgError:
        return float(b[0] / sw)
    return float(beta[0])


def lowess(
    x: Sequence[float],
    y: Sequence[float],
    frac: float = DEFAULT_LOWESS_FRAC,
    iterations: int = DEFAULT_LOWESS_ITERATIONS,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Robust locally weighted linear regression

    Each point is fitted by a weighted line over its ceil(frac * n) nearest
    neighbours (tricube weights scaled by the distance to the farthest of
    them), followed by `iterations` bisquare reweighting passes.

    Args:
        x, y: Scatter points (at least 3)
        frac: Neighbourhood fraction in (0, 1]
        iterations: Robustness passes

    Returns:
        (x sorted ascending, fitted values at those x)
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if len(x) < 3:
        raise ValueError("LOWESS needs at least 3 points")
    if not 0 < frac <= 1:
        raise ValueError("LOWESS fraction must lie in (0, 1]")
    if iterations < 0:
        raise ValueError("robustness iterations must be >= 0")

    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    n = len(x)
    if np.ptp(x) == 0:
        return x, np.full(n, _robust_mean(y, iterations))

    neighbours = min(max(int(math.ceil(frac * n)), 2), n)
    # one row at a time; no n x n distance matrix
    bandwidth = np.empty(n)
    for i in range(n):
        d = np.abs(x - x[i])
        h = np.partition(d, neighbours - 1)[neighbours - 1]
        bandwidth[i] = h if h > 0 else d[d > 0].min()

    robustness = np.ones(n)
    fitted = np.zeros(n)
    for step in range(iterations + 1):
        for i in range(n):
            local = _tricube(np.abs(x - x[i]) / bandwidth[i])
            weights = local * robustness
            if weights.sum() <= 0:
                weights = local
            fitted[i] = _local_linear(x, y, weights, x[i])
        if step == iterations:
            break
        residuals = y - fitted
        scale = float(np.median(np.abs(residuals)))
        if _residual_scale_negligible(scale, y):
            break
        robustness = _bisquare(residuals / (6.0 * scale))
    return x, fitted


def fit_compression_curve(
    samples: Sequence[CompressionSample],
    frac: float = DEFAULT_LOWESS_FRAC,
    iterations: int = DEFAULT_LOWESS_ITERATIONS,
) -> Tuple[np.ndarray, np.ndarray]:
    distances = [s.distance for s in samples]
    ratios = [s.ratio for s in samples]
    return lowess(distances, ratios, frac, iterations)


# =========================================================
# Outputs
# =========================================================

def write_compression_outputs(
    samples: Sequence[CompressionSample],
    curve: Tuple[np.ndarray, np.ndarray],
    out_dir: Union[str, Path],
) -> Dict[str, Path]:
    """
    Writes scatter.csv, curve.csv and compression.svg into out_dir
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "scatter": out_dir / "scatter.csv",
        "curve": out_dir / "curve.csv",
        "plot": out_dir / "compression.svg",
    }
    scatter = pd.DataFrame([asdict(s) for s in samples], columns=list(CompressionSample.__dataclass_fields__))
    scatter = scatter.rename(columns={"label": "class"})
    scatter[["distance", "ratio", "class", "object_id", "fisheye_area", "pinhole_area"]].to_csv(
        paths["scatter"], index=False, float_format="%.10g", lineterminator="\n"
    )
    pd.DataFrame({"distance": curve[0], "fitted_ratio": curve[1]}).to_csv(
        paths["curve"], index=False, float_format="%.10g", lineterminator="\n"
    )
    _plot_svg(samples, curve, paths["plot"])
    return paths


def _plot_svg(samples: Sequence[CompressionSample], curve: Tuple[np.ndarray, np.ndarray], path: Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig = Figure(figsize=(6.0, 4.0))
        ax = fig.add_subplot(1, 1, 1)
        for label in sorted({s.label for s in samples}):
            group = [s for s in samples if s.label == label]
            ax.scatter([s.distance for s in group], [s.ratio for s in group], s=6, alpha=0.6, label=label)
        ax.plot(curve[0], curve[1], color="black", linewidth=1.5, label="LOWESS")
        ax.axhline(1.0, color="grey", linestyle="--", linewidth=0.8)
        ax.set_xlabel("3D distance to ego (m)")
        ax.set_ylabel("fisheye / pinhole bbox area")
        ax.legend(loc="upper right", fontsize=7)
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})


# =========================================================
# Camera coverage
# =========================================================

DEFAULT_NEAR_RANGE = 5.0


@dataclass(frozen=True)
class CoverageRecord:
    object_id: str
    label: str
    distance: float
    azimuth_deg: float
    cameras: Tuple[str, ...]

    @property
    def observers(self) -> int:
        return len(self.cameras)


def observing_cameras(box: Box3D, cameras: Sequence[CameraModel], edge_samples: int = 1) -> Tuple[str, ...]:
    """Ids of the cameras whose image the box projects into, in rig order"""
    return tuple(cam.id for cam in cameras if project_box(box, cam, edge_samples) is not None)


def camera_coverage(
    frames: Iterable[Tuple[str, Sequence[Box3D]]],
    cameras: Sequence[CameraModel],
    edge_samples: int = 1,
) -> List[CoverageRecord]:
    """
    Which cameras of a rig see each annotated object

    Occlusion is ignored; an object counts as observed by a camera when any
    of its sample points lands inside that camera's image.
    """
    records = []
    for frame_id, boxes in frames:
        for index, box in enumerate(boxes):
            x, y = float(box.center[0]), float(box.center[1])
            records.append(
                CoverageRecord(
                    object_id=f"{frame_id}/{box.track_id or index}",
                    label=box.label,
                    distance=float(np.linalg.norm(box.center)),
                    azimuth_deg=math.degrees(math.atan2(y, x)),
                    cameras=observing_cameras(box, cameras, edge_samples),
                )
            )
    return records


def coverage_summary(records: Sequence[CoverageRecord], near_range: float = DEFAULT_NEAR_RANGE) -> Dict[str, object]:
    """
    Counts of unobserved, single-view and multi-view objects

    `near_unobserved` counts blind objects closer than `near_range` meters.
    """
    counts = [r.observers for r in records]
    histogram: Dict[str, int] = {}
    for count in sorted(counts):
        histogram[str(count)] = histogram.get(str(count), 0) + 1
    return {
        "objects": len(records),
        "unobserved": sum(c == 0 for c in counts),
        "single_view": sum(c == 1 for c in counts),
        "multi_view": sum(c >= 2 for c in counts),
        "mean_observers": float(np.mean(counts)) if counts else 0.0,
        "near_range": near_range,
        "near_unobserved": sum(r.observers == 0 and r.distance < near_range for r in records),
        "observer_histogram": histogram,
    }


def write_coverage_outputs(
    per_layout: Dict[str, Sequence[CoverageRecord]],
    out_dir: Union[str, Path],
    near_range: float = DEFAULT_NEAR_RANGE,
) -> Dict[str, Path]:
    """
    Writes coverage.csv (one row per layout and object) and summary.json
    (one entry per layout) into out_dir
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"table": out_dir / "coverage.csv", "summary": out_dir / "summary.json"}
    rows = [
        {
            "layout": layout,
            "object_id": r.object_id,
            "class": r.label,
            "distance": r.distance,
            "azimuth_deg": r.azimuth_deg,
            "observers": r.observers,
            "cameras": ";".join(r.cameras),
        }
        for layout, records in per_layout.items()
        for r in records
    ]
    columns = ["layout", "object_id", "class", "distance", "azimuth_deg", "observers", "cameras"]
    pd.DataFrame(rows, columns=columns).to_csv(paths["table"], index=False, float_format="%.10g", lineterminator="\n")
    summary = {layout: coverage_summary(records, near_range) for layout, records in per_layout.items()}
    paths["summary"].write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    for layout, entry in summary.items():
        logger.info(
            "Coverage %s: %d objects, %d unobserved, %.2f cameras per object",
            layout, entry["objects"], entry["unobserved"], entry["mean_observers"],
        )
    return paths

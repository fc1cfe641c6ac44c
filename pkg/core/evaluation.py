"""
Detection evaluation: greedy center-distance matching, AP per class and
threshold, true-positive error means, the Fisheye Detection Score and
distance-binned breakdowns
"""

import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator

from .boxes import Box3D, aligned_iou, center_distance_2d, yaw_error
from .errors import DataError, MisalignedFrames

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
DEFAULT_CLASSES = ("car", "van", "truck", "bus", "pedestrian", "cyclist")
DEFAULT_TP_THRESHOLD = 2.0
MIN_RECALL = 0.1
MIN_PRECISION = 0.1
RECALL_SAMPLES = 101
WORST_TP_ERROR = 1.0
REPORT_SCHEMA_VERSION = "1.0"


# =========================================================
# Configuration
# =========================================================

class DetectionRange(BaseModel):
    """Axis-aligned cuboid (reference frame) outside which boxes are ignored"""

    x: Tuple[float, float] = (-48.0, 48.0)
    y: Tuple[float, float] = (-48.0, 48.0)
    z: Tuple[float, float] = (-5.0, 5.0)

    def contains(self, center: Sequence[float]) -> bool:
        return all(lo <= c <= hi for c, (lo, hi) in zip(center, (self.x, self.y, self.z)))


class EvalConfig(BaseModel):
    """Evaluation protocol parameters"""

    thresholds: List[float] = Field(default_factory=lambda: list(DEFAULT_THRESHOLDS), description="Matching thresholds in meters")
    classes: List[str] = Field(default_factory=lambda: list(DEFAULT_CLASSES), description="Evaluated class names")
    tp_threshold: float = Field(DEFAULT_TP_THRESHOLD, gt=0, description="Threshold at which TP errors are measured")
    max_range: Optional[float] = Field(None, gt=0, description="Radial (x, y) range filter in meters")
    detection_range: Optional[DetectionRange] = Field(default_factory=DetectionRange)
    distance_bins: List[float] = Field(default_factory=list, description="Cumulative 0-R sub-evaluations")
    ap_mode: Literal["nuscenes", "trapezoid"] = "nuscenes"

    @field_validator("thresholds")
    @classmethod
    def _sorted_positive(cls, values: List[float]) -> List[float]:
        if not values or any(v <= 0 for v in values):
            raise ValueError("thresholds must be positive and non-empty")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("thresholds must be strictly increasing")
        return values

    @field_validator("classes")
    @classmethod
    def _non_empty_unique(cls, values: List[str]) -> List[str]:
        if not values or len(set(values)) != len(values):
            raise ValueError("class set must be non-empty and unique")
        return values

    @field_validator("distance_bins")
    @classmethod
    def _increasing_bins(cls, values: List[float]) -> List[float]:
        if any(v <= 0 for v in values) or any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("distance bins must be positive and increasing")
        return values


def threshold_key(threshold: float) -> str:
    return f"{threshold:g}"


# =========================================================
# Matching
# =========================================================

@dataclass(frozen=True)
class MatchedPair:
    gt_index: int
    pred_index: int
    translation_error: float
    scale_error: float
    orientation_error: float


@dataclass
class MatchResult:
    """Greedy assignment for one frame, class and threshold"""

    label: str
    threshold: float
    frame_id: str = ""
    pairs: List[MatchedPair] = field(default_factory=list)
    # predictions of this class in descending score order
    pred_indices: List[int] = field(default_factory=list)
    pred_scores: List[float] = field(default_factory=list)
    pred_is_tp: List[bool] = field(default_factory=list)
    num_gt: int = 0

    @property
    def num_tp(self) -> int:
        return len(self.pairs)

    @property
    def false_positives(self) -> int:
        return len(self.pred_indices) - len(self.pairs)

    @property
    def unmatched_gt(self) -> int:
        return self.num_gt - len(self.pairs)


def match_greedy(
    gts: Sequence[Box3D],
    preds: Sequence[Box3D],
    label: str,
    threshold: float,
    frame_id: str = "",
) -> MatchResult:
    """
    Score-ordered greedy assignment within one frame

    Each prediction of `label`, highest score first, claims the nearest
    unclaimed ground truth of the same label if it lies within `threshold`
    meters (2D center distance). Distance ties go to the earlier gt index,
    score ties to the earlier prediction index.
    """
    gt_indices = [i for i, g in enumerate(gts) if g.label == label]
    pred_indices = [j for j, p in enumerate(preds) if p.label == label]
    for j in pred_indices:
        if preds[j].score is None:
            raise DataError(f"prediction {j} in frame '{frame_id}' has no score")
    order = sorted(pred_indices, key=lambda j: -preds[j].score)

    result = MatchResult(label=label, threshold=threshold, frame_id=frame_id, num_gt=len(gt_indices))
    claimed = set()
    for j in order:
        best, best_dist = None, math.inf
        for i in gt_indices:
            if i in claimed:
                continue
            dist = center_distance_2d(gts[i], preds[j])
            if dist < best_dist:
                best, best_dist = i, dist
        is_tp = best is not None and best_dist <= threshold
        if is_tp:
            claimed.add(best)
            result.pairs.append(
                MatchedPair(
                    gt_index=best,
                    pred_index=j,
                    translation_error=best_dist,
                    scale_error=1.0 - aligned_iou(gts[best], preds[j]),
                    orientation_error=yaw_error(gts[best], preds[j]),
                )
            )
        result.pred_indices.append(j)
        result.pred_scores.append(float(preds[j].score))
        result.pred_is_tp.append(is_tp)
    return result


# =========================================================
# Metrics
# =========================================================

def rank_matches(matches: Iterable[MatchResult]) -> Tuple[List[bool], int]:
    """
    Merge per-frame results into one ranked TP/FP list

    Returns:
        (is_tp flags sorted by descending score, total ground truth count)
    """
    entries = []
    num_gt = 0
    for frame_order, match in enumerate(matches):
        num_gt += match.num_gt
        for rank, (score, is_tp) in enumerate(zip(match.pred_scores, match.pred_is_tp)):
            entries.append((-score, frame_order, rank, is_tp))
    entries.sort(key=lambda e: e[:3])
    return [e[3] for e in entries], num_gt


def average_precision(
    matches: Iterable[MatchResult],
    mode: Literal["nuscenes", "trapezoid"] = "nuscenes",
) -> Optional[float]:
    """
    AP from the ranked precision-recall curve of one class and threshold

    nuscenes: precision sampled on a 101-point recall grid, recall <= 10% and
    precision below 10% discarded, normalized by 0.9.
    trapezoid: plain trapezoidal area under the raw curve.

    Returns:
        AP in [0, 1]; 0 when predictions exist without ground truth; None
        when the class has neither
    """
    ranked, num_gt = rank_matches(matches)
    if num_gt == 0:
        return 0.0 if ranked else None
    if not ranked:
        return 0.0

    flags = np.asarray(ranked, dtype=bool)
    tp = np.cumsum(flags).astype(np.float64)
    fp = np.cumsum(~flags).astype(np.float64)
    precision = tp / (tp + fp)
    recall = tp / num_gt

    if mode == "trapezoid":
        r = np.concatenate([[0.0], recall])
        p = np.concatenate([[precision[0]], precision])
        return float(np.sum((r[1:] - r[:-1]) * (p[1:] + p[:-1]) / 2.0))

    recall_grid = np.linspace(0.0, 1.0, RECALL_SAMPLES)
    sampled = np.interp(recall_grid, recall, precision, right=0.0)
    sampled = sampled[round(100 * MIN_RECALL) + 1:] - MIN_PRECISION
    sampled[sampled < 0] = 0.0
    return float(np.mean(sampled) / (1.0 - MIN_PRECISION))


@dataclass
class TpErrors:
    mate: float
    mase: float
    maoe: float
    per_class: Dict[str, Tuple[float, float, float]] = field(default_factory=dict)
    worst_clamped: bool = False


def tp_errors(matches: Iterable[MatchResult]) -> TpErrors:
    """
    mATE / mASE / mAOE from matches at the TP threshold

    Means are taken per class first, then over classes with at least one
    match. Without any match all three are clamped to 1.0 and flagged.
    """
    per_label: Dict[str, List[MatchedPair]] = defaultdict(list)
    for match in matches:
        per_label[match.label].extend(match.pairs)

    per_class = {}
    for label in sorted(per_label):
        pairs = per_label[label]
        if not pairs:
            continue
        per_class[label] = (
            float(np.mean([p.translation_error for p in pairs])),
            float(np.mean([p.scale_error for p in pairs])),
            float(np.mean([p.orientation_error for p in pairs])),
        )

    if not per_class:
        logger.warning("No true positives at the TP threshold; errors clamped to %.1f", WORST_TP_ERROR)
        return TpErrors(WORST_TP_ERROR, WORST_TP_ERROR, WORST_TP_ERROR, {}, worst_clamped=True)

    means = np.mean(np.array(list(per_class.values())), axis=0)
    return TpErrors(float(means[0]), float(means[1]), float(means[2]), per_class)


def mean_ap(table: Mapping[str, Mapping[str, Optional[float]]]) -> float:
    """mAP = mean of AP over every (class, threshold) entry; excluded classes hold None"""
    values = [ap for per_threshold in table.values() for ap in per_threshold.values() if ap is not None]
    return float(np.mean(values)) if values else 0.0


def fds(mean_ap_value: float, mate: float, mase: float, maoe: float) -> float:
    """
    Fisheye Detection Score: (3 mAP + sum(1 - min(1, mTP))) / 6
    """
    if not 0.0 <= mean_ap_value <= 1.0:
        raise ValueError("mAP must lie in [0, 1]")
    if min(mate, mase, maoe) < 0:
        raise ValueError("TP errors must be non-negative")
    tp_terms = sum(1.0 - min(1.0, err) for err in (mate, mase, maoe))
    return (3.0 * mean_ap_value + tp_terms) / 6.0


# =========================================================
# Report
# =========================================================

class ClassSummary(BaseModel):
    ap: Optional[float] = Field(None, description="Mean AP over thresholds")
    ate: Optional[float] = None
    ase: Optional[float] = None
    aoe: Optional[float] = None
    num_gt: int = 0
    num_pred: int = 0
    num_tp: int = Field(0, description="True positives at the TP threshold")


class MetricsReport(BaseModel):
    schema_version: str = REPORT_SCHEMA_VERSION
    ap: Dict[str, Dict[str, Optional[float]]]
    mean_ap: float
    mate: float
    mase: float
    maoe: float
    fds: float
    tp_errors_worst_clamped: bool
    evaluated_classes: List[str]
    per_class: Dict[str, ClassSummary]
    num_frames: int
    num_gt: int
    num_pred: int
    unknown_class_predictions: Dict[str, int] = Field(default_factory=dict)
    distance_bins: Dict[str, "MetricsReport"] = Field(default_factory=dict)
    config: EvalConfig


MetricsReport.model_rebuild()


def _filter_boxes(boxes: Sequence[Box3D], config: EvalConfig, max_range: Optional[float]) -> List[Box3D]:
    kept = []
    for box in boxes:
        if box.label not in config.classes:
            continue
        if max_range is not None and math.hypot(box.center[0], box.center[1]) > max_range:
            continue
        if config.detection_range is not None and not config.detection_range.contains(box.center):
            continue
        kept.append(box)
    return kept


def evaluate(
    gts: Mapping[str, Sequence[Box3D]],
    preds: Mapping[str, Sequence[Box3D]],
    config: Optional[EvalConfig] = None,
    threads: int = 1,
) -> MetricsReport:
    """
    Full protocol over every frame, class and threshold

    Args:
        gts: Ground truth boxes per frame id (frame order = evaluation order)
        preds: Scored predictions per frame id
        config: Protocol parameters
        threads: Worker threads for per-frame matching

    Returns:
        MetricsReport, with cumulative 0-R sub-reports when distance bins are set

    Raises:
        MisalignedFrames: the two inputs do not cover the same frame ids
    """
    config = config or EvalConfig()
    missing = [f for f in gts if f not in preds]
    extra = [f for f in preds if f not in gts]
    if missing or extra:
        raise MisalignedFrames(
            f"frame ids differ: {len(missing)} without predictions (e.g. {missing[:3]}), "
            f"{len(extra)} unknown (e.g. {extra[:3]})"
        )

    unknown: Dict[str, int] = defaultdict(int)
    for boxes in preds.values():
        for box in boxes:
            if box.label not in config.classes:
                unknown[box.label] += 1
    if unknown:
        logger.warning("Excluding predictions of unknown classes: %s", dict(sorted(unknown.items())))

    report = _evaluate_filtered(gts, preds, config, config.max_range, threads)
    report.unknown_class_predictions = dict(sorted(unknown.items()))

    for radius in config.distance_bins:
        limit = radius if config.max_range is None else min(radius, config.max_range)
        sub_config = config.model_copy(update={"max_range": limit, "distance_bins": []})
        sub = _evaluate_filtered(gts, preds, sub_config, limit, threads)
        report.distance_bins[f"0-{radius:g}"] = sub
    return report


def _evaluate_filtered(
    gts: Mapping[str, Sequence[Box3D]],
    preds: Mapping[str, Sequence[Box3D]],
    config: EvalConfig,
    max_range: Optional[float],
    threads: int,
) -> MetricsReport:
    frame_ids = list(gts)
    frames = [
        (fid, _filter_boxes(gts[fid], config, max_range), _filter_boxes(preds[fid], config, max_range))
        for fid in frame_ids
    ]
    thresholds = sorted(set(config.thresholds) | {config.tp_threshold})

    def match_frame(frame):
        fid, frame_gts, frame_preds = frame
        return {
            (label, thr): match_greedy(frame_gts, frame_preds, label, thr, fid)
            for label in config.classes
            for thr in thresholds
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_frame = list(pool.map(match_frame, frames))
    else:
        per_frame = [match_frame(frame) for frame in frames]

    def collect(label: str, thr: float) -> List[MatchResult]:
        return [matches[(label, thr)] for matches in per_frame]

    ap_table: Dict[str, Dict[str, Optional[float]]] = {}
    per_class: Dict[str, ClassSummary] = {}
    evaluated = []
    for label in config.classes:
        row = {threshold_key(t): average_precision(collect(label, t), config.ap_mode) for t in config.thresholds}
        ap_table[label] = row
        tp_matches = collect(label, config.tp_threshold)
        summary = ClassSummary(
            num_gt=sum(m.num_gt for m in tp_matches),
            num_pred=sum(len(m.pred_indices) for m in tp_matches),
            num_tp=sum(m.num_tp for m in tp_matches),
        )
        defined = [v for v in row.values() if v is not None]
        if defined:
            evaluated.append(label)
            summary.ap = float(np.mean(defined))
        per_class[label] = summary

    errors = tp_errors(m for label in config.classes for m in collect(label, config.tp_threshold))
    for label, (ate, ase, aoe) in errors.per_class.items():
        per_class[label].ate, per_class[label].ase, per_class[label].aoe = ate, ase, aoe

    map_value = mean_ap(ap_table)
    score = fds(map_value, errors.mate, errors.mase, errors.maoe)
    logger.info(
        "Evaluated %d frames (range %s): mAP %.4f mATE %.4f mASE %.4f mAOE %.4f FDS %.4f",
        len(frames), "all" if max_range is None else f"{max_range:g} m",
        map_value, errors.mate, errors.mase, errors.maoe, score,
    )
    return MetricsReport(
        ap=ap_table,
        mean_ap=map_value,
        mate=errors.mate,
        mase=errors.mase,
        maoe=errors.maoe,
        fds=score,
        tp_errors_worst_clamped=errors.worst_clamped,
        evaluated_classes=evaluated,
        per_class=per_class,
        num_frames=len(frames),
        num_gt=sum(len(f[1]) for f in frames),
        num_pred=sum(len(f[2]) for f in frames),
        config=config,
    )


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def write_report_json(report: MetricsReport, path: Union[str, Path]) -> None:
    Path(path).write_text(report_to_json(report), encoding="utf-8")


def class_table(report: MetricsReport) -> pd.DataFrame:
    """One row per class: AP per threshold, mean AP, TP errors and counts"""
    rows = []
    for label, summary in report.per_class.items():
        row = {"class": label}
        row.update({f"ap@{key}": value for key, value in report.ap[label].items()})
        row.update(summary.model_dump())
        rows.append(row)
    return pd.DataFrame(rows)


def write_class_table_csv(report: MetricsReport, path: Union[str, Path]) -> None:
    class_table(report).to_csv(path, index=False, float_format="%.10g", lineterminator="\n")

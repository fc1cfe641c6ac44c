"""
Dataset I/O
Reads and writes manifests, rig calibrations and prediction files as
canonical JSON, loads frame images, and derives the subsampled, split and
noisy views of a dataset used by evaluation.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Type, TypeVar, Union

import cv2
import numpy as np
from pydantic import BaseModel, ValidationError

from .boxes import Box3D
from .errors import DataError, SchemaError
from .geometry import CameraModel
from .schema import (
    BoxRecord,
    DatasetManifest,
    FrameRecord,
    PredictionsFile,
    RigCalibration,
    SceneRecord,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Model = TypeVar("Model", bound=BaseModel)

US_PER_SECOND = 1_000_000


# =========================================================
# Canonical JSON
# =========================================================

def canonical_json(model: BaseModel) -> str:
    """Sorted keys, 2-space indent, trailing newline"""
    return json.dumps(model.model_dump(mode="json"), sort_keys=True, indent=2) + "\n"


def _pointer(loc: Sequence[Union[str, int]]) -> str:
    return "/" + "/".join(str(part) for part in loc)


def parse_document(model: Type[Model], data: object, source: str = "<document>") -> Model:
    """
    Validate parsed JSON against a schema model

    Raises:
        SchemaError: with one JSON pointer per violation
    """
    try:
        return model.model_validate(data)
    except ValidationError as exc:
        errors = exc.errors()
        pointers = [_pointer(err["loc"]) for err in errors]
        first = errors[0]["msg"] if errors else "invalid document"
        raise SchemaError(f"{source}: {first}", pointers) from exc


def _read_document(model: Type[Model], path: PathLike) -> Model:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"file not found: {path}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from exc
    return parse_document(model, data, str(path))


def _write_document(model: BaseModel, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(model), encoding="utf-8")


def load_manifest(path: PathLike) -> DatasetManifest:
    return _read_document(DatasetManifest, path)


def save_manifest(manifest: DatasetManifest, path: PathLike) -> None:
    _write_document(manifest, path)


def load_calibration(path: PathLike) -> RigCalibration:
    return _read_document(RigCalibration, path)


def save_calibration(calibration: RigCalibration, path: PathLike) -> None:
    _write_document(calibration, path)


def load_predictions(path: PathLike, manifest: Optional[DatasetManifest] = None) -> PredictionsFile:
    """
    Load a predictions file; when a manifest is given every frame id must exist in it

    Raises:
        SchemaError: malformed file or unknown frame ids
    """
    predictions = _read_document(PredictionsFile, path)
    if manifest is not None:
        known = {f.frame_id for f in manifest.frames()}
        unknown = [fid for fid in predictions.frames if fid not in known]
        if unknown:
            raise SchemaError(
                f"{path}: {len(unknown)} frame ids are not in the manifest",
                [_pointer(("frames", fid)) for fid in unknown[:5]],
            )
    return predictions


def save_predictions(predictions: PredictionsFile, path: PathLike) -> None:
    _write_document(predictions, path)


# =========================================================
# Dataset access
# =========================================================

class DatasetLoader:
    """
    Read-only view of a dataset directory rooted at its manifest

    Calibrations are parsed once and shared; image reads are independent
    so a loader can be used from several threads.
    """

    def __init__(self, manifest_path: PathLike):
        self.manifest_path = Path(manifest_path)
        self.root = self.manifest_path.parent
        self.manifest = load_manifest(self.manifest_path)
        self._calibrations: Dict[str, RigCalibration] = {}
        for calib_id, relpath in sorted(self.manifest.calibrations.items()):
            calibration = load_calibration(self.root / relpath)
            if calibration.calibration_id != calib_id:
                raise DataError(
                    f"calibration file {relpath} declares id '{calibration.calibration_id}', "
                    f"manifest expects '{calib_id}'"
                )
            self._calibrations[calib_id] = calibration
        logger.info(
            "Loaded manifest %s: %d scenes, %d frames, %d calibrations",
            self.manifest_path, len(self.manifest.scenes), len(self.frames()), len(self._calibrations),
        )

    def frames(self) -> List[FrameRecord]:
        return self.manifest.frames()

    def frame(self, frame_id: str) -> FrameRecord:
        for frame in self.frames():
            if frame.frame_id == frame_id:
                return frame
        raise DataError(f"unknown frame id '{frame_id}'")

    def calibration(self, calibration_id: str) -> RigCalibration:
        try:
            return self._calibrations[calibration_id]
        except KeyError:
            raise DataError(f"unknown calibration id '{calibration_id}'") from None

    def cameras(self, frame: FrameRecord) -> List[CameraModel]:
        return self.calibration(frame.calibration_id).camera_models()

    def camera(self, frame: FrameRecord, camera_id: str) -> CameraModel:
        try:
            return self.calibration(frame.calibration_id).camera(camera_id)
        except KeyError:
            raise DataError(f"frame '{frame.frame_id}' has no camera '{camera_id}'") from None

    def image_path(self, frame: FrameRecord, camera_id: str) -> Path:
        if camera_id not in frame.images:
            raise DataError(f"frame '{frame.frame_id}' has no image for camera '{camera_id}'")
        return self.root / frame.images[camera_id]

    def load_image(self, frame: FrameRecord, camera_id: str) -> np.ndarray:
        """8-bit RGB image (H, W, 3)"""
        return read_image(self.image_path(frame, camera_id))

    def ground_truth(self) -> Dict[str, List[Box3D]]:
        return ground_truth_by_frame(self.manifest)


def read_image(path: PathLike) -> np.ndarray:
    """8-bit RGB image (H, W, 3) from any format cv2 reads"""
    image = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if image is None:
        raise DataError(f"could not read image {path}")
    return cv2.cvtColor(image, cv2.COLOR_BGR2RGB)


def save_image(image: np.ndarray, path: PathLike) -> None:
    """Write an 8-bit RGB (or grayscale) image as lossless PNG"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = cv2.cvtColor(image, cv2.COLOR_RGB2BGR) if image.ndim == 3 else image
    if not cv2.imwrite(str(path), data):
        raise DataError(f"could not write image {path}")


def ground_truth_by_frame(manifest: DatasetManifest) -> Dict[str, List[Box3D]]:
    """Annotations per frame id, in manifest order"""
    return {frame.frame_id: frame.boxes() for frame in manifest.frames()}


def predictions_by_frame(
    predictions: PredictionsFile,
    manifest: Optional[DatasetManifest] = None,
) -> Dict[str, List[Box3D]]:
    """
    Scored boxes per frame id; ordered like the manifest when one is given
    """
    def boxes(fid: str) -> List[Box3D]:
        return [record.to_box(fid) for record in predictions.frames[fid]]

    if manifest is None:
        return {fid: boxes(fid) for fid in predictions.frames}
    ordered = [f.frame_id for f in manifest.frames() if f.frame_id in predictions.frames]
    return {fid: boxes(fid) for fid in ordered}


def predictions_file(
    predictions: Mapping[str, Sequence[Box3D]],
    manifest: Optional[str] = None,
) -> PredictionsFile:
    return PredictionsFile(
        manifest=manifest,
        frames={fid: [BoxRecord.from_box(b) for b in boxes] for fid, boxes in predictions.items()},
    )


# =========================================================
# Subsampling and splitting
# =========================================================

def native_rate(scene: SceneRecord) -> Optional[float]:
    """Frame rate in Hz from the median timestamp step; None for a single frame"""
    if len(scene.frames) < 2:
        return None
    steps = np.diff([f.timestamp_us for f in scene.frames])
    return US_PER_SECOND / float(np.median(steps))


def _subsample_scene(scene: SceneRecord, hz: float) -> SceneRecord:
    if len(scene.frames) < 2:
        return scene
    stamps = np.array([f.timestamp_us for f in scene.frames], dtype=np.float64)
    period = US_PER_SECOND / hz
    count = int(math.floor((stamps[-1] - stamps[0]) / period + 1e-9)) + 1
    grid = stamps[0] + period * np.arange(count)

    # nearest frame per grid point, ties to the earlier frame
    right = np.clip(np.searchsorted(stamps, grid, side="left"), 1, len(stamps) - 1)
    left = right - 1
    picks = np.where(grid - stamps[left] <= stamps[right] - grid, left, right)
    keep = sorted(set(int(i) for i in picks))
    return scene.model_copy(update={"frames": [scene.frames[i] for i in keep]})


def subsample(manifest: DatasetManifest, hz: float) -> DatasetManifest:
    """
    Keep, per scene, the frames nearest to a regular grid at `hz` starting at
    the first frame

    Raises:
        ValueError: hz <= 0 or above a scene's native rate
    """
    if not hz > 0:
        raise ValueError("subsample rate must be positive")
    scenes = []
    for scene in manifest.scenes:
        rate = native_rate(scene)
        if rate is not None and hz > rate * (1 + 1e-6):
            raise ValueError(f"scene '{scene.scene_id}' is recorded at {rate:g} Hz; cannot subsample to {hz:g} Hz")
        scenes.append(_subsample_scene(scene, hz))
    result = manifest.model_copy(update={"scenes": scenes})
    logger.info("Subsampled to %g Hz: %d -> %d frames", hz, len(manifest.frames()), len(result.frames()))
    return result


@dataclass
class SplitResult:
    train: DatasetManifest
    test: DatasetManifest
    # scenes that contributed no training frame
    degenerate_scenes: List[str] = field(default_factory=list)


def split(manifest: DatasetManifest, train_fraction: float) -> SplitResult:
    """
    Temporal split per scene: the first floor(n * fraction) frames train,
    the rest test
    """
    if not 0 < train_fraction < 1:
        raise ValueError("train fraction must lie in (0, 1)")
    train_scenes, test_scenes, degenerate = [], [], []
    for scene in manifest.scenes:
        cut = int(math.floor(len(scene.frames) * train_fraction + 1e-9))
        if cut == 0:
            degenerate.append(scene.scene_id)
        train_scenes.append(scene.model_copy(update={"frames": scene.frames[:cut]}))
        test_scenes.append(scene.model_copy(update={"frames": scene.frames[cut:]}))
    if degenerate:
        logger.warning("Scenes with no training frames: %s", ", ".join(degenerate))
    return SplitResult(
        train=manifest.model_copy(update={"scenes": train_scenes}),
        test=manifest.model_copy(update={"scenes": test_scenes}),
        degenerate_scenes=degenerate,
    )


# =========================================================
# Noisy predictions
# =========================================================

def make_noisy_predictions(
    gts: Mapping[str, Sequence[Box3D]],
    seed: int = 0,
    center_sigma: float = 0.3,
    size_sigma: float = 0.05,
    yaw_sigma: float = 0.1,
    drop_rate: float = 0.1,
    false_rate: float = 0.1,
    score_jitter: float = 0.15,
) -> Dict[str, List[Box3D]]:
    """
    Perturbed copies of the ground truth, for exercising the evaluation

    Centers get Gaussian noise (meters), sizes multiplicative log-normal
    noise, yaw Gaussian noise; each box is dropped with `drop_rate`, and
    each frame gets about `false_rate` false positives per box. Scores
    start at 0.9 (0.3 for false positives) plus uniform jitter.
    """
    rng = np.random.default_rng(seed)
    out: Dict[str, List[Box3D]] = {}
    for fid, boxes in gts.items():
        frame_preds = []
        for box in boxes:
            draws = rng.normal(size=7)
            keep = rng.random() >= drop_rate
            score = float(np.clip(0.9 + rng.uniform(-score_jitter, score_jitter), 0.0, 1.0))
            if not keep:
                continue
            center = np.asarray(box.center) + center_sigma * draws[:3]
            size = np.asarray(box.size) * np.exp(size_sigma * draws[3:6])
            frame_preds.append(
                Box3D(center, size, box.yaw + yaw_sigma * draws[6], box.label, score, box.track_id, fid)
            )
        for _ in range(rng.poisson(false_rate * max(len(boxes), 1))):
            template = boxes[int(rng.integers(len(boxes)))] if boxes else None
            label = template.label if template else "car"
            size = template.size if template else (4.5, 1.9, 1.6)
            center = (rng.uniform(-40, 40), rng.uniform(-40, 40), size[2] / 2)
            score = float(np.clip(0.3 + rng.uniform(-score_jitter, score_jitter), 0.0, 1.0))
            frame_preds.append(Box3D(center, size, rng.uniform(-np.pi, np.pi), label, score, "", fid))
        out[fid] = frame_preds
    return out

"""
On-disk schemas (JSON, schema-versioned) for calibration, dataset manifests
and prediction files, with converters to the runtime geometry types
"""

import math
from pathlib import PurePosixPath
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from .boxes import Box3D
from .geometry import CameraModel, Extrinsics, FisheyeIntrinsics, PinholeIntrinsics

SCHEMA_VERSION = "1.0"

Matrix4 = List[List[float]]

# layout tag -> (fisheye count, pinhole count); None means unconstrained
RIG_LAYOUTS: Dict[str, Optional[Tuple[int, int]]] = {
    "4xF": (4, 0),
    "6xP": (0, 6),
    "4xP-no-front-rear": (0, 4),
    "2xF-front-rear": (2, 0),
    "2xF-left-right": (2, 0),
    "4xF+6xP": (4, 6),
    "custom": None,
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _check_matrix4(value: Matrix4) -> Matrix4:
    if len(value) != 4 or any(len(row) != 4 for row in value):
        raise ValueError("expected a 4x4 matrix")
    return value


# =========================================================
# Calibration
# =========================================================

class FisheyeIntrinsicsSpec(_Strict):
    k: List[float] = Field(..., min_length=5, max_length=5, description="Kannala-Brandt k0..k4")
    cx: float
    cy: float
    fov_deg: float = Field(..., gt=0, lt=360)


class PinholeIntrinsicsSpec(_Strict):
    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float
    cy: float


def _runtime_intrinsics(spec: Union[FisheyeIntrinsicsSpec, PinholeIntrinsicsSpec]):
    """Geometry intrinsics; raises ValueError when the lens is unusable"""
    if isinstance(spec, FisheyeIntrinsicsSpec):
        return FisheyeIntrinsics(k=tuple(spec.k), cx=spec.cx, cy=spec.cy, fov=float(np.radians(spec.fov_deg)))
    return PinholeIntrinsics(**spec.model_dump())


class CameraSpec(_Strict):
    id: str = Field(..., min_length=1)
    lens: Literal["pinhole", "fisheye"]
    width: int = Field(..., gt=0)
    height: int = Field(..., gt=0)
    intrinsics: Union[FisheyeIntrinsicsSpec, PinholeIntrinsicsSpec]
    extrinsics: Matrix4 = Field(..., description="Camera-to-reference 4x4 transform, meters")

    @field_validator("intrinsics")
    @classmethod
    def _intrinsics_usable(cls, value, info: ValidationInfo):
        _runtime_intrinsics(value)
        width, height = info.data.get("width"), info.data.get("height")
        if width is not None and height is not None and not (0 <= value.cx <= width and 0 <= value.cy <= height):
            raise ValueError(f"principal point ({value.cx}, {value.cy}) lies outside the {width}x{height} image")
        return value

    @field_validator("extrinsics")
    @classmethod
    def _rigid(cls, value: Matrix4) -> Matrix4:
        Extrinsics(np.array(_check_matrix4(value), dtype=np.float64))
        return value

    @model_validator(mode="after")
    def _lens_matches(self):
        expected = FisheyeIntrinsicsSpec if self.lens == "fisheye" else PinholeIntrinsicsSpec
        if not isinstance(self.intrinsics, expected):
            raise ValueError(f"lens '{self.lens}' needs {expected.__name__} intrinsics")
        return self

    def to_camera(self) -> CameraModel:
        extrinsics = Extrinsics(np.array(self.extrinsics, dtype=np.float64))
        intr = _runtime_intrinsics(self.intrinsics)
        return CameraModel(self.id, self.lens, intr, extrinsics, self.width, self.height)

    @classmethod
    def from_camera(cls, cam: CameraModel) -> "CameraSpec":
        if cam.lens == "fisheye":
            i = cam.intrinsics
            intr = FisheyeIntrinsicsSpec(k=list(i.k), cx=i.cx, cy=i.cy, fov_deg=float(np.degrees(i.fov)))
        else:
            i = cam.intrinsics
            intr = PinholeIntrinsicsSpec(fx=i.fx, fy=i.fy, cx=i.cx, cy=i.cy)
        return cls(
            id=cam.id,
            lens=cam.lens,
            width=cam.width,
            height=cam.height,
            intrinsics=intr,
            extrinsics=cam.extrinsics.matrix.tolist(),
        )


class RigCalibration(_Strict):
    schema_version: str = SCHEMA_VERSION
    calibration_id: str = Field(..., min_length=1)
    layout: str = Field(..., description="One of " + ", ".join(RIG_LAYOUTS))
    cameras: List[CameraSpec] = Field(..., min_length=1)

    @model_validator(mode="after")
    def _consistent(self):
        ids = [c.id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValueError("camera ids must be unique")
        if self.layout not in RIG_LAYOUTS:
            raise ValueError(f"unknown rig layout '{self.layout}'")
        expected = RIG_LAYOUTS[self.layout]
        if expected is not None:
            counts = (
                sum(c.lens == "fisheye" for c in self.cameras),
                sum(c.lens == "pinhole" for c in self.cameras),
            )
            if counts != expected:
                raise ValueError(
                    f"layout '{self.layout}' needs {expected[0]} fisheye + {expected[1]} pinhole cameras, got {counts}"
                )
        return self

    def camera_models(self) -> List[CameraModel]:
        return [c.to_camera() for c in self.cameras]

    def camera(self, camera_id: str) -> CameraModel:
        for spec in self.cameras:
            if spec.id == camera_id:
                return spec.to_camera()
        raise KeyError(camera_id)


# =========================================================
# Annotations and manifest
# =========================================================

class BoxRecord(_Strict):
    center: List[float] = Field(..., min_length=3, max_length=3)
    size: List[float] = Field(..., min_length=3, max_length=3)
    yaw: float
    label: str
    score: Optional[float] = Field(None, ge=0, le=1)
    track_id: str = ""

    @field_validator("size")
    @classmethod
    def _positive(cls, value: List[float]) -> List[float]:
        if not all(0 < s < math.inf for s in value):
            raise ValueError("sizes must be positive and finite")
        return value

    @field_validator("center")
    @classmethod
    def _finite_center(cls, value: List[float]) -> List[float]:
        if not all(math.isfinite(c) for c in value):
            raise ValueError("center must be finite")
        return value

    @field_validator("yaw")
    @classmethod
    def _finite_yaw(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("yaw must be finite")
        return value

    def to_box(self, frame_id: str = "") -> Box3D:
        return Box3D(
            center=tuple(self.center),
            size=tuple(self.size),
            yaw=self.yaw,
            label=self.label,
            score=self.score,
            track_id=self.track_id,
            frame_id=frame_id,
        )

    @classmethod
    def from_box(cls, box: Box3D) -> "BoxRecord":
        return cls(
            center=list(box.center),
            size=list(box.size),
            yaw=box.yaw,
            label=box.label,
            score=box.score,
            track_id=box.track_id,
        )


def _relative_path(value: str) -> str:
    path = PurePosixPath(value)
    if path.is_absolute() or ".." in path.parts or "\\" in value:
        raise ValueError(f"path '{value}' must be relative to the manifest root")
    return value


class FrameRecord(_Strict):
    frame_id: str = Field(..., min_length=1)
    timestamp_us: int = Field(..., ge=0)
    ego_pose: Matrix4
    calibration_id: str
    images: Dict[str, str] = Field(default_factory=dict, description="camera id -> image path")
    annotations: List[BoxRecord] = Field(default_factory=list)

    _pose = field_validator("ego_pose")(_check_matrix4)

    @field_validator("images")
    @classmethod
    def _relative(cls, value: Dict[str, str]) -> Dict[str, str]:
        for path in value.values():
            _relative_path(path)
        return value

    def boxes(self) -> List[Box3D]:
        return [a.to_box(self.frame_id) for a in self.annotations]


class SceneRecord(_Strict):
    scene_id: str = Field(..., min_length=1)
    frames: List[FrameRecord] = Field(default_factory=list)

    @field_validator("frames")
    @classmethod
    def _increasing(cls, frames: List[FrameRecord]) -> List[FrameRecord]:
        for prev, cur in zip(frames, frames[1:]):
            if cur.timestamp_us <= prev.timestamp_us:
                raise ValueError(
                    f"timestamps must strictly increase: frame '{cur.frame_id}' "
                    f"({cur.timestamp_us}) follows '{prev.frame_id}' ({prev.timestamp_us})"
                )
        return frames


class DatasetManifest(_Strict):
    schema_version: str = SCHEMA_VERSION
    calibrations: Dict[str, str] = Field(..., description="calibration id -> calibration JSON path")
    scenes: List[SceneRecord] = Field(default_factory=list)

    @field_validator("calibrations")
    @classmethod
    def _relative(cls, value: Dict[str, str]) -> Dict[str, str]:
        for path in value.values():
            _relative_path(path)
        return value

    @model_validator(mode="after")
    def _references_resolve(self):
        seen = set()
        for scene in self.scenes:
            for frame in scene.frames:
                if frame.calibration_id not in self.calibrations:
                    raise ValueError(
                        f"frame '{frame.frame_id}' references unknown calibration '{frame.calibration_id}'"
                    )
                if frame.frame_id in seen:
                    raise ValueError(f"duplicate frame id '{frame.frame_id}'")
                seen.add(frame.frame_id)
        return self

    def frames(self) -> List[FrameRecord]:
        return [f for scene in self.scenes for f in scene.frames]


class PredictionsFile(_Strict):
    schema_version: str = SCHEMA_VERSION
    manifest: Optional[str] = Field(None, description="Manifest the predictions refer to")
    frames: Dict[str, List[BoxRecord]]

    @model_validator(mode="after")
    def _scored(self):
        for frame_id, boxes in self.frames.items():
            for box in boxes:
                if box.score is None:
                    raise ValueError(f"prediction in frame '{frame_id}' has no score")
        return self


SCHEMA_MODELS = {
    "calibration": RigCalibration,
    "manifest": DatasetManifest,
    "predictions": PredictionsFile,
}

"""
Oriented 3D boxes: corners, image-plane projection and the aligned
overlap / distance / orientation measures used by evaluation
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .geometry import CameraModel

logger = logging.getLogger(__name__)

# Bottom face then top face, counter-clockwise seen from above
_CORNER_SIGNS = np.array(
    [
        [1, 1, -1], [-1, 1, -1], [-1, -1, -1], [1, -1, -1],
        [1, 1, 1], [-1, 1, 1], [-1, -1, 1], [1, -1, 1],
    ],
    dtype=np.float64,
)
_HORIZONTAL_EDGES = [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5), (5, 6), (6, 7), (7, 4)]
_VERTICAL_EDGES = [(0, 4), (1, 5), (2, 6), (3, 7)]


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]"""
    return math.pi - (math.pi - angle) % (2 * math.pi)


@dataclass(frozen=True)
class Box3D:
    """
    Oriented box in the reference frame

    Args:
        center: (x, y, z) meters
        size: (length, width, height) meters; length runs along the heading
        yaw: Heading about +z, wrapped to (-pi, pi]
        label: Class name
        score: Confidence in [0, 1]; None for ground truth
        track_id: Object identity across frames
        frame_id: Frame the box belongs to
    """

    center: Tuple[float, float, float]
    size: Tuple[float, float, float]
    yaw: float
    label: str
    score: Optional[float] = None
    track_id: str = ""
    frame_id: str = ""

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("box center and size need three components")
        if not all(math.isfinite(c) for c in center):
            raise ValueError("box center must be finite")
        if not all(0 < s < math.inf for s in size):
            raise ValueError("box sizes must be positive and finite")
        if not math.isfinite(float(self.yaw)):
            raise ValueError("box yaw must be finite")
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError("box score must lie in [0, 1]")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @property
    def is_prediction(self) -> bool:
        return self.score is not None

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def box_corners(b: Box3D) -> np.ndarray:
    """(8, 3) corners of the yaw-rotated cuboid"""
    half = 0.5 * np.asarray(b.size)
    return (_CORNER_SIGNS * half) @ yaw_rotation(b.yaw).T + np.asarray(b.center)


def box_sample_points(b: Box3D, edge_samples: int = 1) -> np.ndarray:
    """
    Corners plus evenly spaced points on the edges

    With edge_samples == 1 the 8 horizontal edges get their midpoint (16
    points in total); larger values densify all 12 edges.
    """
    corners = box_corners(b)
    edges = _HORIZONTAL_EDGES if edge_samples <= 1 else _HORIZONTAL_EDGES + _VERTICAL_EDGES
    steps = np.arange(1, max(edge_samples, 1) + 1) / (max(edge_samples, 1) + 1)
    extra = [
        corners[i] + t * (corners[j] - corners[i])
        for i, j in edges
        for t in steps
    ]
    return np.vstack([corners, np.asarray(extra)])


@dataclass(frozen=True)
class BBox2D:
    """Axis-aligned image box in continuous pixel coordinates"""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    @property
    def width(self) -> float:
        return self.u_max - self.u_min

    @property
    def height(self) -> float:
        return self.v_max - self.v_min

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    @property
    def center(self) -> Tuple[float, float]:
        return 0.5 * (self.u_min + self.u_max), 0.5 * (self.v_min + self.v_max)

    def iou(self, other: "BBox2D") -> float:
        iw = min(self.u_max, other.u_max) - max(self.u_min, other.u_min)
        ih = min(self.v_max, other.v_max) - max(self.v_min, other.v_min)
        inter = max(iw, 0.0) * max(ih, 0.0)
        union = self.area + other.area - inter
        return inter / union if union > 0 else 0.0


def project_box(b: Box3D, cam: CameraModel, edge_samples: int = 1) -> Optional[BBox2D]:
    """
    Tight image bbox of the box's sample points as seen by one camera

    Points outside the field of view are dropped; the bbox is clipped to the
    image. Returns None when no sample point lands in the image.
    """
    points = cam.reference_to_camera(box_sample_points(b, edge_samples))
    uv, in_fov = cam.project_masked(points, require_in_image=False)
    if not np.any(in_fov & cam.in_image(uv)):
        return None
    uv = uv[in_fov]
    u_min, v_min = uv.min(axis=0)
    u_max, v_max = uv.max(axis=0)
    return BBox2D(
        float(np.clip(u_min, 0, cam.width)),
        float(np.clip(v_min, 0, cam.height)),
        float(np.clip(u_max, 0, cam.width)),
        float(np.clip(v_max, 0, cam.height)),
    )


def aligned_iou(gt: Box3D, pred: Box3D) -> float:
    """3D IoU after aligning centers and headings (sizes only)"""
    inter = 1.0
    for a, b in zip(gt.size, pred.size):
        inter *= min(a, b)
    union = gt.volume + pred.volume - inter
    return inter / union


def center_distance_2d(gt: Box3D, pred: Box3D) -> float:
    """Euclidean distance between centers over (x, y)"""
    return math.hypot(gt.center[0] - pred.center[0], gt.center[1] - pred.center[1])


def yaw_error(gt: Box3D, pred: Box3D) -> float:
    """Smallest absolute heading difference, in [0, pi]"""
    return abs(wrap_angle(gt.yaw - pred.yaw))

"""
Synthetic surround-view scenes
Default camera rigs, an analytic ray-cast renderer (textured ground plane,
flat-shaded cuboids, distance fog) that goes through the exact camera
models, and a seeded generator that writes a complete dataset.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .boxes import Box3D, yaw_rotation
from .data_loader import save_calibration, save_image, save_manifest
from .evaluation import DEFAULT_CLASSES
from .geometry import CameraModel, Extrinsics, FisheyeIntrinsics, PinholeIntrinsics
from .schema import BoxRecord, CameraSpec, DatasetManifest, FrameRecord, RigCalibration, SceneRecord

logger = logging.getLogger(__name__)

DEFAULT_HZ = 10.0
DEFAULT_EGO_SPEED = 2.0

FISHEYE_SIZE = 800
FISHEYE_FOV = math.radians(220.0)
FISHEYE_HIGHER_ORDER = (-2.0, 0.1, 0.0, 0.0)
PINHOLE_WIDTH, PINHOLE_HEIGHT = 1280, 720
PINHOLE_HFOV = math.radians(70.0)

# Renderer look
CHECKER_SIZE = 2.0
CHECKER_SHARPNESS = 2.0
FOG_DISTANCE = 10.0
GROUND_DARK = np.array([90.0, 90.0, 95.0])
GROUND_LIGHT = np.array([160.0, 160.0, 150.0])
SKY = np.array([185.0, 205.0, 230.0])
LIGHT_DIRECTION = np.array([0.3, 0.2, 1.0]) / np.linalg.norm([0.3, 0.2, 1.0])

CLASS_SIZES: Dict[str, Tuple[float, float, float]] = {
    "car": (4.5, 1.9, 1.6),
    "van": (5.0, 2.0, 2.2),
    "truck": (8.0, 2.5, 3.2),
    "bus": (11.0, 2.6, 3.2),
    "pedestrian": (0.7, 0.7, 1.75),
    "cyclist": (1.8, 0.7, 1.7),
}
CLASS_COLORS: Dict[str, Tuple[float, float, float]] = {
    "car": (200.0, 40.0, 40.0),
    "van": (40.0, 160.0, 60.0),
    "truck": (230.0, 170.0, 30.0),
    "bus": (40.0, 80.0, 200.0),
    "pedestrian": (220.0, 90.0, 200.0),
    "cyclist": (30.0, 200.0, 200.0),
}
MAX_SPEED = {"car": 3.0, "van": 3.0, "truck": 2.0, "bus": 2.0, "pedestrian": 1.0, "cyclist": 2.0}


# =========================================================
# Rigs
# =========================================================

_FISHEYE_MOUNTS = {
    "fisheye_front": ((2.0, 0.0, 1.0), 0.0),
    "fisheye_left": ((0.0, 1.0, 1.0), math.pi / 2),
    "fisheye_rear": ((-2.0, 0.0, 1.0), math.pi),
    "fisheye_right": ((0.0, -1.0, 1.0), -math.pi / 2),
}
_PINHOLE_MOUNTS = {
    "cam_front": ((1.5, 0.0, 1.6), 0.0),
    "cam_front_left": ((1.3, 0.5, 1.6), math.radians(55.0)),
    "cam_back_left": ((-0.5, 0.8, 1.6), math.radians(110.0)),
    "cam_back": ((-1.5, 0.0, 1.6), math.pi),
    "cam_back_right": ((-0.5, -0.8, 1.6), math.radians(-110.0)),
    "cam_front_right": ((1.3, -0.5, 1.6), math.radians(-55.0)),
}
_LAYOUT_CAMERAS = {
    "4xF": list(_FISHEYE_MOUNTS),
    "6xP": list(_PINHOLE_MOUNTS),
    "4xP-no-front-rear": ["cam_front_left", "cam_back_left", "cam_back_right", "cam_front_right"],
    "2xF-front-rear": ["fisheye_front", "fisheye_rear"],
    "2xF-left-right": ["fisheye_left", "fisheye_right"],
    "4xF+6xP": list(_FISHEYE_MOUNTS) + list(_PINHOLE_MOUNTS),
}
STANDARD_LAYOUTS = tuple(_LAYOUT_CAMERAS)


def default_fisheye(camera_id: str, translation: Sequence[float], yaw: float, pitch: float = 0.0) -> CameraModel:
    """800x800 fisheye, 220 deg FoV, image circle filling the frame"""
    half = FISHEYE_SIZE / 2
    intrinsics = FisheyeIntrinsics.fit_image_circle(FISHEYE_FOV, half, half, half, FISHEYE_HIGHER_ORDER)
    return CameraModel(
        camera_id, "fisheye", intrinsics, Extrinsics.from_mount(translation, yaw, pitch), FISHEYE_SIZE, FISHEYE_SIZE
    )


def default_pinhole(camera_id: str, translation: Sequence[float], yaw: float, pitch: float = 0.0) -> CameraModel:
    """1280x720 pinhole with a 70 deg horizontal FoV"""
    focal = (PINHOLE_WIDTH / 2) / math.tan(PINHOLE_HFOV / 2)
    intrinsics = PinholeIntrinsics(focal, focal, PINHOLE_WIDTH / 2, PINHOLE_HEIGHT / 2)
    return CameraModel(
        camera_id, "pinhole", intrinsics, Extrinsics.from_mount(translation, yaw, pitch), PINHOLE_WIDTH, PINHOLE_HEIGHT
    )


def default_rig(layout: str = "4xF+6xP") -> RigCalibration:
    """Calibration for one of the standard surround layouts"""
    if layout not in _LAYOUT_CAMERAS:
        raise ValueError(f"no default rig for layout '{layout}'")
    cameras = []
    for camera_id in _LAYOUT_CAMERAS[layout]:
        if camera_id in _FISHEYE_MOUNTS:
            translation, yaw = _FISHEYE_MOUNTS[camera_id]
            cameras.append(default_fisheye(camera_id, translation, yaw))
        else:
            translation, yaw = _PINHOLE_MOUNTS[camera_id]
            cameras.append(default_pinhole(camera_id, translation, yaw))
    return RigCalibration(
        calibration_id=f"rig-{layout}",
        layout=layout,
        cameras=[CameraSpec.from_camera(c) for c in cameras],
    )


# =========================================================
# Renderer
# =========================================================

@dataclass(frozen=True, eq=False)
class RenderResult:
    """8-bit RGB image and per-pixel box index (-1 for ground, sky and outside the lens)"""

    image: np.ndarray
    ids: np.ndarray

    def silhouette(self, index: int) -> Optional[Tuple[float, float, float, float]]:
        """(u_min, v_min, u_max, v_max) of the pixels showing box `index`"""
        rows, cols = np.nonzero(self.ids == index)
        if rows.size == 0:
            return None
        return float(cols.min()), float(rows.min()), float(cols.max() + 1), float(rows.max() + 1)


def ground_texture(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Softened checkerboard in [0, 1]; squares of CHECKER_SIZE meters"""
    wave = np.sin(np.pi * x / CHECKER_SIZE) * np.sin(np.pi * y / CHECKER_SIZE)
    return 0.5 + 0.5 * np.tanh(CHECKER_SHARPNESS * wave) / np.tanh(CHECKER_SHARPNESS)


def _intersect_box(origin: np.ndarray, dirs: np.ndarray, box: Box3D) -> Tuple[np.ndarray, np.ndarray]:
    """Slab test; returns (entry distance or inf, outward normal of the entry face)"""
    rot = yaw_rotation(box.yaw)
    o = (origin - np.asarray(box.center)) @ rot
    d = dirs @ rot
    half = 0.5 * np.asarray(box.size)
    d_safe = np.where(np.abs(d) < 1e-15, 1e-15, d)
    t1 = (-half - o) / d_safe
    t2 = (half - o) / d_safe
    t_near = np.minimum(t1, t2)
    t_far = np.maximum(t1, t2)
    enter = t_near.max(axis=-1)
    leave = t_far.min(axis=-1)
    hit = (enter > 0) & (leave >= enter)

    axis = t_near.argmax(axis=-1)
    picked = np.take_along_axis(d, axis[..., None], axis=-1)[..., 0]
    normal = np.zeros_like(d)
    np.put_along_axis(normal, axis[..., None], -np.sign(picked)[..., None], axis=-1)
    return np.where(hit, enter, np.inf), normal @ rot.T


def render_camera(
    cam: CameraModel,
    boxes: Sequence[Box3D],
    ground_offset: Tuple[float, float] = (0.0, 0.0),
) -> RenderResult:
    """
    Ray-cast one camera

    Args:
        cam: Camera, extrinsics relative to the ego (reference) frame
        boxes: Objects in the reference frame
        ground_offset: Ego position in the world, so the ground texture
            stays fixed while the ego moves

    Returns:
        RenderResult; pixels outside a fisheye image circle are black
    """
    rays, valid = cam.unproject_masked(cam.pixel_centers())
    dirs = rays @ cam.extrinsics.rotation.T
    origin = cam.center

    depth = np.full(valid.shape, np.inf)
    color = np.broadcast_to(SKY, valid.shape + (3,)).copy()
    ids = np.full(valid.shape, -1, dtype=np.int32)

    dz = dirs[..., 2]
    if origin[2] > 0:
        downward = dz < -1e-12
        t_hit = -origin[2] / np.where(downward, dz, -1.0)
        hit_x = np.where(downward, origin[0] + t_hit * dirs[..., 0] + ground_offset[0], 0.0)
        hit_y = np.where(downward, origin[1] + t_hit * dirs[..., 1] + ground_offset[1], 0.0)
        t_ground = np.where(downward, t_hit, np.inf)
        texture = ground_texture(hit_x, hit_y)
        ground = GROUND_DARK + texture[..., None] * (GROUND_LIGHT - GROUND_DARK)
        color = np.where(downward[..., None], ground, color)
        depth = t_ground

    for index, box in enumerate(boxes):
        t_box, normal = _intersect_box(origin, dirs, box)
        closer = t_box < depth
        if not np.any(closer):
            continue
        shade = 0.35 + 0.65 * np.clip(normal @ LIGHT_DIRECTION, 0.0, 1.0)
        surface = shade[..., None] * np.asarray(CLASS_COLORS.get(box.label, (128.0, 128.0, 128.0)))
        color = np.where(closer[..., None], surface, color)
        depth = np.where(closer, t_box, depth)
        ids = np.where(closer, index, ids)

    fog = np.exp(-depth / FOG_DISTANCE)[..., None]
    color = fog * color + (1.0 - fog) * SKY
    image = np.clip(np.rint(color), 0, 255).astype(np.uint8)
    image[~valid] = 0
    ids[~valid] = -1
    return RenderResult(image, ids)


# =========================================================
# Scene generation
# =========================================================

@dataclass(frozen=True)
class SceneObject:
    """
    Cuboid moving on a straight line with a sinusoidal sideways sway,
    in world coordinates (the ego starts at the origin heading +x)
    """

    track_id: str
    label: str
    size: Tuple[float, float, float]
    start: Tuple[float, float]
    heading: float
    speed: float = 0.0
    sway: float = 0.0
    sway_period: float = 4.0
    base_height: float = 0.0

    def _velocity(self, t: float) -> np.ndarray:
        forward = np.array([math.cos(self.heading), math.sin(self.heading)])
        side = np.array([-math.sin(self.heading), math.cos(self.heading)])
        omega = 2 * math.pi / self.sway_period
        return self.speed * forward + self.sway * omega * math.cos(omega * t) * side

    def center_at(self, t: float) -> np.ndarray:
        forward = np.array([math.cos(self.heading), math.sin(self.heading)])
        side = np.array([-math.sin(self.heading), math.cos(self.heading)])
        omega = 2 * math.pi / self.sway_period
        xy = np.asarray(self.start) + self.speed * t * forward + self.sway * math.sin(omega * t) * side
        return np.array([xy[0], xy[1], self.base_height + self.size[2] / 2])

    def yaw_at(self, t: float) -> float:
        velocity = self._velocity(t)
        if np.hypot(*velocity) < 1e-9:
            return self.heading
        return math.atan2(velocity[1], velocity[0])

    def box_at(self, t: float, ego_position: Sequence[float], frame_id: str = "") -> Box3D:
        """Annotation in the ego frame at time t"""
        center = self.center_at(t) - np.asarray(ego_position)
        return Box3D(center, self.size, self.yaw_at(t), self.label, None, self.track_id, frame_id)

    @classmethod
    def on_optical_axis(
        cls,
        cam: CameraModel,
        distance: float,
        label: str = "car",
        track_id: str = "axis",
    ) -> "SceneObject":
        """Static object whose center sits on `cam`'s optical axis at time 0"""
        axis = cam.extrinsics.rotation[:, 0]
        center = cam.center + distance * axis
        size = CLASS_SIZES[label]
        return cls(
            track_id=track_id,
            label=label,
            size=size,
            start=(float(center[0]), float(center[1])),
            heading=math.atan2(axis[1], axis[0]),
            base_height=float(center[2] - size[2] / 2),
        )


def random_objects(
    rng: np.random.Generator,
    count: int,
    classes: Sequence[str] = DEFAULT_CLASSES,
    min_radius: float = 6.0,
    max_radius: float = 30.0,
) -> List[SceneObject]:
    """Non-overlapping objects in an annulus around the ego start"""
    objects: List[SceneObject] = []
    attempts = 0
    while len(objects) < count and attempts < 100 * max(count, 1):
        attempts += 1
        label = classes[int(rng.integers(len(classes)))]
        size = CLASS_SIZES.get(label, CLASS_SIZES["car"])
        radius = rng.uniform(min_radius, max_radius)
        bearing = rng.uniform(-math.pi, math.pi)
        start = (radius * math.cos(bearing), radius * math.sin(bearing))
        reach = 0.5 * math.hypot(size[0], size[1])
        clear = all(
            math.hypot(start[0] - o.start[0], start[1] - o.start[1]) > reach + 0.5 * math.hypot(o.size[0], o.size[1]) + 1.0
            for o in objects
        )
        heading = rng.uniform(-math.pi, math.pi)
        speed = rng.uniform(0.0, MAX_SPEED.get(label, 2.0))
        sway = rng.uniform(0.0, 0.5)
        period = rng.uniform(3.0, 6.0)
        if not clear:
            continue
        objects.append(
            SceneObject(f"obj{len(objects):03d}", label, size, start, heading, speed, sway, period)
        )
    if len(objects) < count:
        logger.warning("Placed only %d of %d objects", len(objects), count)
    return objects


def synth_scene(
    seed: int,
    n_frames: int,
    n_objects: int,
    rig: Optional[RigCalibration] = None,
    out_dir: Union[str, Path, None] = None,
    hz: float = DEFAULT_HZ,
    threads: int = 1,
    objects: Optional[Sequence[SceneObject]] = None,
    ego_speed: float = DEFAULT_EGO_SPEED,
) -> DatasetManifest:
    """
    Generate one deterministic scene

    Args:
        seed: Drives object placement and motion
        n_frames: Frames at `hz`
        n_objects: Random objects (ignored when `objects` is given)
        rig: Calibration; the full 4xF+6xP rig by default
        out_dir: When set, writes manifest.json, the calibration and one PNG
            per frame and camera
        threads: Cameras rendered in parallel

    Returns:
        The manifest (image paths relative to out_dir)
    """
    if n_frames < 1:
        raise ValueError("a scene needs at least one frame")
    if not hz > 0:
        raise ValueError("frame rate must be positive")
    rig = rig or default_rig()
    rng = np.random.default_rng(seed)
    objects = list(objects) if objects is not None else random_objects(rng, n_objects)
    cameras = rig.camera_models()
    scene_id = f"synth-{seed}"
    calib_path = f"calibration/{rig.calibration_id}.json"

    frames = []
    for index in range(n_frames):
        t = index / hz
        frame_id = f"{scene_id}-{index:04d}"
        ego = np.array([ego_speed * t, 0.0, 0.0])
        pose = np.eye(4)
        pose[:3, 3] = ego
        boxes = [obj.box_at(t, ego, frame_id) for obj in objects]
        frames.append(
            FrameRecord(
                frame_id=frame_id,
                timestamp_us=int(round(t * 1_000_000)),
                ego_pose=pose.tolist(),
                calibration_id=rig.calibration_id,
                images={cam.id: f"images/{frame_id}/{cam.id}.png" for cam in cameras},
                annotations=[BoxRecord.from_box(b) for b in boxes],
            )
        )
    manifest = DatasetManifest(
        calibrations={rig.calibration_id: calib_path},
        scenes=[SceneRecord(scene_id=scene_id, frames=frames)],
    )
    if out_dir is None:
        return manifest

    out_dir = Path(out_dir)
    save_calibration(rig, out_dir / calib_path)
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        for frame in frames:
            boxes = frame.boxes()
            offset = (frame.ego_pose[0][3], frame.ego_pose[1][3])
            renders = pool.map(lambda cam: render_camera(cam, boxes, offset), cameras)
            for cam, render in zip(cameras, renders):
                save_image(render.image, out_dir / frame.images[cam.id])
            logger.debug("Rendered frame %s", frame.frame_id)
    save_manifest(manifest, out_dir / "manifest.json")
    logger.info(
        "Wrote scene %s: %d frames x %d cameras, %d objects to %s",
        scene_id, n_frames, len(cameras), len(objects), out_dir,
    )
    return manifest
"""
Sampling grids from equirectangular / cylindrical / perspective target views
to fisheye (or pinhole) source pixels, and the resampling that applies them
"""

import logging
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Literal, Optional, Tuple, Union

import numpy as np

from .errors import DimensionMismatch
from .geometry import CameraModel, cylindrical_to_camera, direction_cylindrical

logger = logging.getLogger(__name__)

GridKind = Literal["equirectangular", "cylindrical", "perspective"]
SampleMode = Literal["bilinear", "nearest"]

GRID_MAGIC = b"FSGRID01"
MAX_CYLINDER_ELEVATION = np.radians(80.0)
MAX_PERSPECTIVE_FOV = np.radians(120.0)


@dataclass(frozen=True)
class GridSpec:
    """
    Target view description

    Angular bounds are used by the equirectangular and cylindrical kinds
    (the cylindrical vertical axis spans [tan(theta_min), tan(theta_max)]);
    `focal` and `yaw` are used by the perspective kind.
    """

    kind: GridKind
    height: int
    width: int
    phi_min: float = -np.pi / 2
    phi_max: float = np.pi / 2
    theta_min: float = -np.pi / 4
    theta_max: float = np.pi / 4
    focal: Optional[float] = None
    yaw: float = 0.0

    def __post_init__(self):
        if self.kind not in ("equirectangular", "cylindrical", "perspective"):
            raise ValueError(f"unknown grid kind '{self.kind}'")
        if self.height < 1 or self.width < 1:
            raise ValueError("grid height and width must be >= 1")
        if self.kind == "perspective":
            if self.focal is None or not self.focal > 0:
                raise ValueError("perspective grids need a positive focal length")
            return
        if not self.phi_max > self.phi_min or not self.theta_max > self.theta_min:
            raise ValueError("angular bounds must satisfy max > min")
        if self.phi_min < -np.pi - 1e-12 or self.phi_max > np.pi + 1e-12:
            raise ValueError("azimuth bounds must lie in [-pi, pi]")
        if self.kind == "cylindrical" and max(abs(self.theta_min), abs(self.theta_max)) >= np.pi / 2:
            raise ValueError("cylindrical elevation bounds must lie inside (-pi/2, pi/2)")

    @classmethod
    def for_camera(
        cls,
        cam: CameraModel,
        kind: GridKind,
        height: Optional[int] = None,
        width: Optional[int] = None,
    ) -> "GridSpec":
        """
        Default patch for one camera: equirectangular spans +-fov/2 on both
        axes, cylindrical clamps elevation to +-80 deg, perspective keeps at
        most a 120 deg horizontal view. Size defaults to the source size.
        """
        height = height or cam.height
        width = width or cam.width
        half = min(cam.fov / 2, np.pi)
        if kind == "equirectangular":
            return cls(kind, height, width, -half, half, -half, half)
        if kind == "cylindrical":
            elevation = min(half, MAX_CYLINDER_ELEVATION)
            return cls(kind, height, width, -half, half, -elevation, elevation)
        hfov = min(cam.fov, MAX_PERSPECTIVE_FOV)
        return cls(kind, height, width, focal=(width / 2) / np.tan(hfov / 2))


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    """
    Normalized source coordinates per target pixel plus a validity mask

    coords[..., 0] is x (column), coords[..., 1] is y (row), both in [-1, 1]
    for valid cells; invalid cells hold 0 and are never sampled.
    """

    coords: np.ndarray
    valid: np.ndarray
    source_width: int
    source_height: int

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if coords.ndim != 3 or coords.shape[2] != 2 or valid.shape != coords.shape[:2]:
            raise DimensionMismatch("grid coords must be (H, W, 2) with an (H, W) mask")
        if np.any(np.abs(coords[valid]) > 1.0):
            raise ValueError("valid grid entries must lie in [-1, 1]")
        coords[~valid] = 0.0
        coords.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.valid.shape

    @classmethod
    def identity(cls, height: int, width: int) -> "SamplingGrid":
        """Grid mapping every cell onto itself"""
        rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        coords = np.stack([normalize_coords(cols, width), normalize_coords(rows, height)], axis=-1)
        return cls(coords, np.ones((height, width), dtype=bool), width, height)


def normalize_coords(index_coord: np.ndarray, size: int) -> np.ndarray:
    """Pixel-index coordinate -> [-1, 1] with center-of-pixel alignment"""
    return 2.0 * (np.asarray(index_coord, dtype=np.float64) + 0.5) / size - 1.0


def denormalize_coords(normalized: np.ndarray, size: int) -> np.ndarray:
    return ((np.asarray(normalized, dtype=np.float64) + 1.0) * size - 1.0) / 2.0


def _spherical_rays(phi: np.ndarray, theta: np.ndarray) -> np.ndarray:
    cos_t = np.cos(theta)
    return np.stack([cos_t * np.cos(phi), np.sin(theta), cos_t * np.sin(phi)], axis=-1)


def target_angles(spec: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Per-cell (phi, theta) of an equirectangular or cylindrical grid; row 0 is the top"""
    cols = (np.arange(spec.width) + 0.5) / spec.width
    rows = (np.arange(spec.height) + 0.5) / spec.height
    phi = spec.phi_min + cols * (spec.phi_max - spec.phi_min)
    theta = spec.theta_max - rows * (spec.theta_max - spec.theta_min)
    theta_grid, phi_grid = np.meshgrid(theta, phi, indexing="ij")
    return phi_grid, theta_grid


def target_rays(spec: GridSpec) -> np.ndarray:
    """
    Unit rays (H, W, 3) in the camera frame for every target pixel
    """
    if spec.kind == "equirectangular":
        # patches wider than +-90 deg in elevation wrap over the pole
        phi, theta = target_angles(spec)
        return _spherical_rays(phi, theta)

    if spec.kind == "cylindrical":
        phi, _ = target_angles(spec)
        lo, hi = np.tan(spec.theta_min), np.tan(spec.theta_max)
        rows = (np.arange(spec.height) + 0.5) / spec.height
        heights = np.broadcast_to((hi - rows * (hi - lo))[:, None], phi.shape)
        rays = cylindrical_to_camera(direction_cylindrical(phi, heights))
        return rays / np.linalg.norm(rays, axis=-1, keepdims=True)

    u, v = np.meshgrid(np.arange(spec.width) + 0.5, np.arange(spec.height) + 0.5)
    rays = np.stack(
        [
            np.full(u.shape, spec.focal),
            -(v - spec.height / 2),
            u - spec.width / 2,
        ],
        axis=-1,
    )
    if spec.yaw:
        c, s = np.cos(spec.yaw), np.sin(spec.yaw)
        x, z = rays[..., 0].copy(), rays[..., 2].copy()
        rays[..., 0] = c * x - s * z
        rays[..., 2] = s * x + c * z
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def build_grid(spec: GridSpec, cam: CameraModel) -> SamplingGrid:
    """
    Source-image coordinates, normalized to [-1, 1], for every target pixel

    Args:
        spec: Target view
        cam: Source camera

    Returns:
        SamplingGrid; rays outside the lens FoV or the image are invalid
    """
    rays = target_rays(spec)
    uv, valid = cam.project_masked(rays, require_in_image=True)
    coords = np.stack(
        [
            normalize_coords(uv[..., 0] - 0.5, cam.width),
            normalize_coords(uv[..., 1] - 0.5, cam.height),
        ],
        axis=-1,
    )
    coords = np.clip(coords, -1.0, 1.0)
    logger.debug(
        "Built %s grid %dx%d for camera %s (%.1f%% valid)",
        spec.kind, spec.height, spec.width, cam.id, 100.0 * valid.mean(),
    )
    return SamplingGrid(np.where(valid[..., None], coords, 0.0), valid, cam.width, cam.height)


def apply_grid(src: np.ndarray, grid: SamplingGrid, mode: SampleMode = "bilinear") -> np.ndarray:
    """
    Resample a feature map (H, W, C) or (H, W) through a grid

    Invalid cells are zero in every channel. Nearest mode keeps the source
    dtype; bilinear returns float64.

    Raises:
        DimensionMismatch: source size differs from the grid's source size
    """
    src = np.asarray(src)
    squeeze = src.ndim == 2
    if squeeze:
        src = src[..., None]
    if src.ndim != 3 or src.shape[:2] != (grid.source_height, grid.source_width):
        raise DimensionMismatch(
            f"feature map {src.shape[:2]} does not match grid source "
            f"{(grid.source_height, grid.source_width)}"
        )
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown sampling mode '{mode}'")
    if np.issubdtype(src.dtype, np.floating) and not np.all(np.isfinite(src)):
        raise ValueError("feature map contains non-finite values")

    height, width = grid.shape
    x = denormalize_coords(grid.coords[..., 0], grid.source_width)
    y = denormalize_coords(grid.coords[..., 1], grid.source_height)
    valid = grid.valid[..., None]

    if mode == "nearest":
        ix = np.clip(np.floor(x + 0.5).astype(np.int64), 0, grid.source_width - 1)
        iy = np.clip(np.floor(y + 0.5).astype(np.int64), 0, grid.source_height - 1)
        out = np.where(valid, src[iy, ix], np.zeros((), dtype=src.dtype))
    else:
        data = src.astype(np.float64, copy=False)
        x0, y0 = np.floor(x), np.floor(y)
        wx, wy = (x - x0)[..., None], (y - y0)[..., None]
        x0 = x0.astype(np.int64)
        y0 = y0.astype(np.int64)
        x0c, x1c = np.clip(x0, 0, grid.source_width - 1), np.clip(x0 + 1, 0, grid.source_width - 1)
        y0c, y1c = np.clip(y0, 0, grid.source_height - 1), np.clip(y0 + 1, 0, grid.source_height - 1)
        out = (
            (1 - wy) * ((1 - wx) * data[y0c, x0c] + wx * data[y0c, x1c])
            + wy * ((1 - wx) * data[y1c, x0c] + wx * data[y1c, x1c])
        )
        out = np.where(valid, out, 0.0)

    out = out.reshape(height, width, src.shape[2])
    return out[..., 0] if squeeze else out


def rectify_image(
    image: np.ndarray,
    cam: CameraModel,
    spec: GridSpec,
    mode: SampleMode = "bilinear",
    cache: Optional["GridCache"] = None,
) -> np.ndarray:
    """
    Resample an 8-bit image into the target view, rounding half-to-even
    """
    image = np.asarray(image)
    if image.shape[:2] != (cam.height, cam.width):
        raise DimensionMismatch(
            f"image {image.shape[:2]} does not match camera {cam.id} ({cam.height}, {cam.width})"
        )
    grid = cache.get(cam, spec) if cache is not None else build_grid(spec, cam)
    out = apply_grid(image.astype(np.float64), grid, mode)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


class GridCache:
    """
    Grids are built once per lens and target view and shared across frames

    The key holds everything `build_grid` reads from the camera, so two
    calibrations that reuse a camera id never share a grid.
    """

    def __init__(self):
        self._grids: Dict[Tuple, SamplingGrid] = {}
        self._lock = threading.Lock()

    @staticmethod
    def key(cam: CameraModel, spec: GridSpec) -> Tuple:
        # camera-frame rays: extrinsics do not enter the grid
        return (cam.id, cam.lens, cam.intrinsics, cam.width, cam.height, spec)

    def get(self, cam: CameraModel, spec: GridSpec) -> SamplingGrid:
        key = self.key(cam, spec)
        with self._lock:
            grid = self._grids.get(key)
        if grid is None:
            grid = build_grid(spec, cam)
            with self._lock:
                grid = self._grids.setdefault(key, grid)
        return grid

    def __len__(self) -> int:
        return len(self._grids)


# =========================================================
# Binary dump for cross-implementation comparison
# =========================================================

def save_grid_binary(grid: SamplingGrid, path: Union[str, Path]) -> None:
    """
    Little-endian layout: magic, uint32 H, W, source W, source H,
    float32 (x, y) pairs row-major, validity bitmap packed LSB-first
    """
    height, width = grid.shape
    header = np.array([height, width, grid.source_width, grid.source_height], dtype="<u4")
    payload = b"".join(
        [
            GRID_MAGIC,
            header.tobytes(),
            grid.coords.astype("<f4").tobytes(),
            np.packbits(grid.valid.ravel(), bitorder="little").tobytes(),
        ]
    )
    Path(path).write_bytes(payload)


def load_grid_binary(path: Union[str, Path]) -> SamplingGrid:
    raw = Path(path).read_bytes()
    if raw[: len(GRID_MAGIC)] != GRID_MAGIC:
        raise ValueError(f"{path} is not a sampling grid dump")
    offset = len(GRID_MAGIC)
    height, width, src_w, src_h = (int(v) for v in np.frombuffer(raw, dtype="<u4", count=4, offset=offset))
    offset += 16
    n = height * width
    coords = np.frombuffer(raw, dtype="<f4", count=2 * n, offset=offset).reshape(height, width, 2)
    offset += 8 * n
    bits = np.frombuffer(raw, dtype=np.uint8, offset=offset)
    valid = np.unpackbits(bits, count=n, bitorder="little").astype(bool).reshape(height, width)
    return SamplingGrid(np.clip(coords.astype(np.float64), -1.0, 1.0), valid, src_w, src_h)

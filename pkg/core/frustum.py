"""
Spherical-shell depth discretization, frustum anchors, depth-probability
lift and sum-pooled splat onto a bird's-eye-view grid
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Union

import cv2
import numpy as np
import pandas as pd
from scipy.special import softmax

from .errors import DimensionMismatch
from .geometry import Extrinsics, transform_point

logger = logging.getLogger(__name__)

Spacing = Literal["uniform", "quadratic"]

DEFAULT_R_MIN = 1.0
DEFAULT_R_MAX = 68.0
DEFAULT_DEPTH_BINS = 67
RAY_NORM_TOL = 1e-6


@dataclass(frozen=True)
class DepthBinning:
    """Radial depth levels between r_min and r_max (meters)"""

    r_min: float = DEFAULT_R_MIN
    r_max: float = DEFAULT_R_MAX
    count: int = DEFAULT_DEPTH_BINS
    spacing: Spacing = "uniform"

    def __post_init__(self):
        if not 0 < self.r_min < self.r_max:
            raise ValueError("depth binning needs 0 < r_min < r_max")
        if self.count < 1:
            raise ValueError("depth binning needs at least one bin")
        if self.spacing not in ("uniform", "quadratic"):
            raise ValueError(f"unknown depth spacing '{self.spacing}'")


def depth_levels(binning: DepthBinning) -> np.ndarray:
    """
    Radii of the D shells

    uniform:   r_d = r_min + d * (r_max - r_min) / D,          d = 0 .. D-1
    quadratic: r_d = r_min + (r_max - r_min) d(d+1) / (D(D+1)), d = 1 .. D
    """
    n = binning.count
    span = binning.r_max - binning.r_min
    if binning.spacing == "uniform":
        d = np.arange(n, dtype=np.float64)
        return binning.r_min + d * (span / n)
    d = np.arange(1, n + 1, dtype=np.float64)
    return binning.r_min + span / (n * (n + 1)) * (d * (d + 1))


@dataclass(frozen=True, eq=False)
class FrustumShellSet:
    """D x H x W anchor points in the frame named by `frame`"""

    points: np.ndarray
    radii: np.ndarray
    origin: np.ndarray
    camera_id: str
    frame: str = "reference"

    @property
    def shape(self):
        return self.points.shape[:3]


def build_frustum(
    rays: np.ndarray,
    binning: DepthBinning,
    extrinsics: Extrinsics,
    camera_id: str = "",
) -> FrustumShellSet:
    """
    points[d, h, w] = M [r_d * ray[h, w], 1]

    Args:
        rays: (H, W, 3) unit rays in the camera frame
        binning: Depth levels
        extrinsics: Camera-to-reference transform

    Returns:
        FrustumShellSet in the reference frame
    """
    rays = np.asarray(rays, dtype=np.float64)
    if rays.ndim != 3 or rays.shape[2] != 3:
        raise DimensionMismatch("rays must be (H, W, 3)")
    if np.any(np.abs(np.linalg.norm(rays, axis=-1) - 1.0) > RAY_NORM_TOL):
        raise ValueError("frustum rays must be unit length")
    radii = depth_levels(binning)
    cam_points = radii[:, None, None, None] * rays[None]
    points = transform_point(cam_points, extrinsics)
    return FrustumShellSet(points, radii, extrinsics.translation.copy(), camera_id)


@dataclass(frozen=True, eq=False)
class LiftedVolume:
    """features (D, H, W, C) and the depth distribution alpha (D, H, W)"""

    features: np.ndarray
    alpha: np.ndarray

    @property
    def shape(self):
        return self.features.shape[:3]


def lift(features: np.ndarray, depth_logits: np.ndarray) -> LiftedVolume:
    """
    c_d = alpha_d * c with alpha = softmax over the depth channels

    Args:
        features: (H, W, C) context features
        depth_logits: (H, W, D) unnormalized depth scores
    """
    features = np.asarray(features, dtype=np.float64)
    depth_logits = np.asarray(depth_logits, dtype=np.float64)
    if features.ndim != 3 or depth_logits.ndim != 3 or features.shape[:2] != depth_logits.shape[:2]:
        raise DimensionMismatch(
            f"features {features.shape} and depth logits {depth_logits.shape} disagree spatially"
        )
    alpha = np.moveaxis(softmax(depth_logits, axis=-1), -1, 0)
    return LiftedVolume(alpha[..., None] * features[None], alpha)


@dataclass(frozen=True)
class BevGridSpec:
    """Metric BEV extent; x forward, y left, cell (ix, iy) covers [x_min + ix*cell, ...)"""

    x_min: float = -48.0
    x_max: float = 48.0
    y_min: float = -48.0
    y_max: float = 48.0
    cell_size: float = 0.5
    z_min: float = -5.0
    z_max: float = 5.0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min and self.z_max >= self.z_min):
            raise ValueError("BEV extent must satisfy max > min")
        if not self.cell_size > 0:
            raise ValueError("BEV cell size must be positive")
        for span in (self.x_max - self.x_min, self.y_max - self.y_min):
            cells = span / self.cell_size
            if abs(cells - round(cells)) > 1e-9:
                raise ValueError("BEV extent must divide into whole cells")

    @property
    def nx(self) -> int:
        return int(round((self.x_max - self.x_min) / self.cell_size))

    @property
    def ny(self) -> int:
        return int(round((self.y_max - self.y_min) / self.cell_size))


@dataclass(frozen=True, eq=False)
class BevGrid:
    """Accumulated features, values[ix, iy, c]"""

    spec: BevGridSpec
    values: np.ndarray

    @property
    def total(self) -> float:
        return float(self.values.sum())


def _cell_indices(points: np.ndarray, spec: BevGridSpec):
    x, y, z = points[..., 0], points[..., 1], points[..., 2]
    ix = np.floor((x - spec.x_min) / spec.cell_size).astype(np.int64)
    iy = np.floor((y - spec.y_min) / spec.cell_size).astype(np.int64)
    inside = (
        (ix >= 0) & (ix < spec.nx) & (iy >= 0) & (iy < spec.ny)
        & (z >= spec.z_min) & (z <= spec.z_max)
    )
    return ix, iy, inside


def splat(volume: LiftedVolume, frustum: FrustumShellSet, spec: BevGridSpec) -> BevGrid:
    """
    Sum-pool every (d, h, w) feature into the BEV cell under its anchor point;
    anchors outside the extent or the z range are dropped
    """
    if frustum.frame != "reference":
        raise ValueError("splat expects frustum points in the reference frame")
    if volume.shape != frustum.shape:
        raise DimensionMismatch(f"volume {volume.shape} and frustum {frustum.shape} disagree")
    channels = volume.features.shape[-1]
    ix, iy, inside = _cell_indices(frustum.points, spec)
    flat = (ix * spec.ny + iy)[inside]
    feats = volume.features[inside]
    values = np.zeros((spec.nx * spec.ny, channels))
    for c in range(channels):
        values[:, c] = np.bincount(flat, weights=feats[:, c], minlength=spec.nx * spec.ny)
    logger.debug("Splatted %d of %d anchors into %dx%d BEV", int(inside.sum()), inside.size, spec.nx, spec.ny)
    return BevGrid(spec, values.reshape(spec.nx, spec.ny, channels))


def in_extent_mass(volume: LiftedVolume, frustum: FrustumShellSet, spec: BevGridSpec) -> float:
    """Total feature mass of the anchors that land inside the BEV extent"""
    _, _, inside = _cell_indices(frustum.points, spec)
    return float(volume.features[inside].sum())


def merge_bev(grids: Iterable[BevGrid]) -> BevGrid:
    """Sum per-camera BEV grids in the given order"""
    grids = list(grids)
    if not grids:
        raise ValueError("nothing to merge")
    spec = grids[0].spec
    total = np.zeros_like(grids[0].values)
    for grid in grids:
        if grid.spec != spec or grid.values.shape != total.shape:
            raise DimensionMismatch("BEV grids to merge must share spec and channels")
        total = total + grid.values
    return BevGrid(spec, total)


# =========================================================
# Export
# =========================================================

def bev_to_frame(grid: BevGrid) -> pd.DataFrame:
    """Long table: ix, iy, channel, value (row-major, channel fastest)"""
    nx, ny, channels = grid.values.shape
    ix, iy, ch = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(channels), indexing="ij")
    return pd.DataFrame(
        {
            "ix": ix.ravel(),
            "iy": iy.ravel(),
            "channel": ch.ravel(),
            "value": grid.values.ravel(),
        }
    )


def save_bev_csv(grid: BevGrid, path: Union[str, Path]) -> None:
    bev_to_frame(grid).to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def bev_heatmap(grid: BevGrid) -> np.ndarray:
    """
    Channel-summed, max-normalized 8-bit image; row 0 is the far +x edge,
    column 0 the +y (left) edge
    """
    energy = np.abs(grid.values.sum(axis=-1))
    peak = energy.max()
    scaled = energy / peak if peak > 0 else energy
    image = np.rint(scaled * 255.0).astype(np.uint8)
    return image[::-1, ::-1]


def save_bev_heatmap(grid: BevGrid, path: Union[str, Path]) -> None:
    if not cv2.imwrite(str(path), bev_heatmap(grid)):
        raise OSError(f"could not write heatmap to {path}")

"""
Camera geometry for surround-view rigs
Kannala-Brandt fisheye and pinhole projection, spherical/cylindrical ray
parameterizations and rigid camera-to-reference transforms.

Frames (see docs/CONVENTIONS.md):
- camera: x forward (optical axis), y up, z right
- reference (ego / LiDAR): x forward, y left, z up
- pixels: continuous, pixel (i, j) covers [i, i+1) x [j, j+1)
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import BehindCamera, InvalidAngle, NumericalFailure, OutOfFieldOfView

logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

ANGLE_EPS = 1e-12
RIGID_TOL = 1e-9
MONOTONICITY_SAMPLES = 10_000
NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 30
BISECTION_MAX_ITER = 200
INVERSE_TOL = 1e-9

# Columns are the camera axes expressed in the reference frame
CAMERA_TO_REFERENCE_AXES = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0],
        [0.0, 1.0, 0.0],
    ]
)


def _as_float(value: np.ndarray) -> Union[float, np.ndarray]:
    return float(value) if np.ndim(value) == 0 else value


# =========================================================
# Angular parameterizations
# =========================================================

@dataclass(frozen=True)
class SphericalDirection:
    """Azimuth / elevation pair in radians"""

    phi: float
    theta: float

    def __post_init__(self):
        _check_angles(np.asarray(self.phi), np.asarray(self.theta))

    def vector(self) -> np.ndarray:
        return direction_from_angles(self.phi, self.theta)


def _check_angles(phi: np.ndarray, theta: Optional[np.ndarray] = None):
    if np.any(~np.isfinite(phi)) or np.any(np.abs(phi) > np.pi + ANGLE_EPS):
        raise InvalidAngle("azimuth must lie in [-pi, pi]")
    if theta is not None:
        if np.any(~np.isfinite(theta)) or np.any(np.abs(theta) > np.pi / 2 + ANGLE_EPS):
            raise InvalidAngle("elevation must lie in [-pi/2, pi/2]")


def direction_from_angles(phi: ArrayLike, theta: ArrayLike) -> np.ndarray:
    """
    Unit direction for azimuth phi and elevation theta, camera frame

    Args:
        phi: Azimuth in [-pi, pi], positive towards the camera's right
        theta: Elevation in [-pi/2, pi/2], positive up

    Returns:
        Array (..., 3) = [cos(theta)cos(phi), sin(theta), cos(theta)sin(phi)]
    """
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    _check_angles(phi, theta)
    phi, theta = np.broadcast_arrays(phi, theta)
    cos_t = np.cos(theta)
    return np.stack([cos_t * np.cos(phi), np.sin(theta), cos_t * np.sin(phi)], axis=-1)


def direction_cylindrical(phi: ArrayLike, y: ArrayLike) -> np.ndarray:
    """
    Cylindrical direction [sin(phi), y, cos(phi)]

    The vector is written with the optical axis on its third component;
    `cylindrical_to_camera` permutes it into the x-forward camera frame.
    """
    phi = np.asarray(phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_angles(phi)
    phi, y = np.broadcast_arrays(phi, y)
    return np.stack([np.sin(phi), y, np.cos(phi)], axis=-1)


def cylindrical_to_camera(vectors: np.ndarray) -> np.ndarray:
    """Swap the first and third components (optical-axis-z -> x-forward)"""
    vectors = np.asarray(vectors, dtype=np.float64)
    return vectors[..., ::-1].copy()


# =========================================================
# Intrinsics
# =========================================================

def _kb_poly(theta: np.ndarray, k: Tuple[float, ...]) -> np.ndarray:
    t2 = theta * theta
    return theta * (k[0] + t2 * (k[1] + t2 * (k[2] + t2 * (k[3] + t2 * k[4]))))


def _kb_derivative(theta: np.ndarray, k: Tuple[float, ...]) -> np.ndarray:
    t2 = theta * theta
    return k[0] + t2 * (3 * k[1] + t2 * (5 * k[2] + t2 * (7 * k[3] + t2 * 9 * k[4])))


@dataclass(frozen=True)
class FisheyeIntrinsics:
    """
    Kannala-Brandt intrinsics: r(theta) = k0 theta + k1 theta^3 + ... + k4 theta^9

    Args:
        k: Five coefficients, k0 in pixels/radian
        cx, cy: Principal point in pixels
        fov: Full field of view in radians
    """

    k: Tuple[float, float, float, float, float]
    cx: float
    cy: float
    fov: float

    def __post_init__(self):
        k = tuple(float(c) for c in self.k)
        if len(k) != 5:
            raise ValueError(f"Kannala-Brandt needs 5 coefficients, got {len(k)}")
        object.__setattr__(self, "k", k)
        if not k[0] > 0:
            raise ValueError("k0 must be positive")
        if not 0 < self.fov < 2 * np.pi:
            raise ValueError("fov must lie in (0, 2*pi)")
        samples = np.linspace(0.0, self.theta_max, MONOTONICITY_SAMPLES + 1)
        if np.any(_kb_derivative(samples, k) <= 0):
            raise ValueError("r(theta) is not strictly increasing on [0, fov/2]")

    @property
    def theta_max(self) -> float:
        return self.fov / 2

    @property
    def radius_max(self) -> float:
        return float(_kb_poly(np.float64(self.theta_max), self.k))

    @classmethod
    def fit_image_circle(
        cls,
        fov: float,
        radius_px: float,
        cx: float,
        cy: float,
        higher_order: Sequence[float] = (0.0, 0.0, 0.0, 0.0),
    ) -> "FisheyeIntrinsics":
        """
        Choose k0 so that r(fov/2) equals radius_px for the given k1..k4
        """
        t = fov / 2
        tail = sum(c * t ** (2 * i + 3) for i, c in enumerate(higher_order))
        k0 = (radius_px - tail) / t
        return cls(k=(k0, *higher_order), cx=cx, cy=cy, fov=fov)


@dataclass(frozen=True)
class PinholeIntrinsics:
    """Focal lengths and principal point, all in pixels"""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")


# =========================================================
# Kannala-Brandt radial model and its inverse
# =========================================================

def fisheye_radius(theta: ArrayLike, k: FisheyeIntrinsics) -> Union[float, np.ndarray]:
    """
    Radial image distance in pixels for incident angle theta

    Raises:
        OutOfFieldOfView: theta outside [0, fov/2]
    """
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(theta < -ANGLE_EPS) or np.any(theta > k.theta_max + ANGLE_EPS):
        raise OutOfFieldOfView(f"incident angle outside [0, {k.theta_max:.6f}] rad")
    return _as_float(_kb_poly(theta, k.k))


def fisheye_derivative(theta: ArrayLike, k: FisheyeIntrinsics) -> Union[float, np.ndarray]:
    """dr/dtheta of the Kannala-Brandt polynomial"""
    return _as_float(_kb_derivative(np.asarray(theta, dtype=np.float64), k.k))


def fisheye_theta(radius: ArrayLike, k: FisheyeIntrinsics) -> Union[float, np.ndarray]:
    """
    Invert r(theta) with damped Newton, falling back to bisection

    Args:
        radius: Radial distance(s) in pixels, within the image circle
        k: Fisheye intrinsics (monotone by construction)

    Returns:
        Incident angle(s) in [0, fov/2]

    Raises:
        OutOfFieldOfView: radius beyond the image circle
        NumericalFailure: no root within tolerance (cannot happen for monotone intrinsics)
    """
    r = np.asarray(radius, dtype=np.float64)
    r_max = k.radius_max
    if np.any(~np.isfinite(r)) or np.any(r < 0) or np.any(r > r_max * (1 + 1e-12) + 1e-12):
        raise OutOfFieldOfView(f"radius outside image circle [0, {r_max:.6f}] px")
    r = np.clip(r, 0.0, r_max)
    theta_max = k.theta_max

    theta = np.clip(r / k.k[0], 0.0, theta_max)
    tol = NEWTON_TOL * np.maximum(1.0, r)
    converged = np.zeros(r.shape, dtype=bool)
    for _ in range(NEWTON_MAX_ITER):
        f = _kb_poly(theta, k.k) - r
        converged = np.abs(f) <= tol
        if converged.all():
            break
        step = np.where(converged, 0.0, f / _kb_derivative(theta, k.k))
        candidate = np.clip(theta - step, 0.0, theta_max)
        for _ in range(NEWTON_MAX_HALVINGS):
            worse = np.abs(_kb_poly(candidate, k.k) - r) > np.abs(f)
            if not worse.any():
                break
            step = np.where(worse, step * 0.5, step)
            candidate = np.clip(theta - step, 0.0, theta_max)
        theta = candidate

    pending = ~converged
    if pending.any():
        logger.debug("Newton left %d radii unconverged, bisecting", int(pending.sum()))
        target = r[pending]
        lo = np.zeros_like(target)
        hi = np.full_like(target, theta_max)
        for _ in range(BISECTION_MAX_ITER):
            mid = 0.5 * (lo + hi)
            below = _kb_poly(mid, k.k) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo, initial=0.0) < 1e-15:
                break
        theta = theta.copy()
        theta[pending] = 0.5 * (lo + hi)

    residual = np.abs(_kb_poly(theta, k.k) - r)
    if np.any(residual >= INVERSE_TOL * np.maximum(1.0, r)):
        raise NumericalFailure("Kannala-Brandt inversion did not converge")
    return _as_float(theta)


# =========================================================
# Extrinsics
# =========================================================

@dataclass(frozen=True, eq=False)
class Extrinsics:
    """
    Camera-to-reference rigid transform as a 4x4 homogeneous matrix
    (translation in meters)
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (4, 4) or not np.all(np.isfinite(m)):
            raise ValueError("extrinsics must be a finite 4x4 matrix")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=RIGID_TOL, rtol=0.0):
            raise ValueError("extrinsics last row must be [0, 0, 0, 1]")
        rot = m[:3, :3]
        if not np.allclose(rot.T @ rot, np.eye(3), atol=RIGID_TOL, rtol=0.0):
            raise ValueError("extrinsics rotation block is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > RIGID_TOL:
            raise ValueError("extrinsics rotation must have determinant +1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    @classmethod
    def identity(cls) -> "Extrinsics":
        return cls(np.eye(4))

    @classmethod
    def from_rotation_translation(cls, rotation: np.ndarray, translation: Sequence[float]) -> "Extrinsics":
        m = np.eye(4)
        m[:3, :3] = rotation
        m[:3, 3] = translation
        return cls(m)

    @classmethod
    def from_mount(
        cls,
        translation: Sequence[float],
        yaw: float = 0.0,
        pitch: float = 0.0,
        roll: float = 0.0,
    ) -> "Extrinsics":
        """
        Camera mounted at `translation` (reference frame), looking along
        heading `yaw` (counter-clockwise from +x), tilted down by `pitch`
        and rolled by `roll` about its optical axis
        """
        mount = Rotation.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
        return cls.from_rotation_translation(mount @ CAMERA_TO_REFERENCE_AXES, translation)

    def compose(self, inner: "Extrinsics") -> "Extrinsics":
        """Transform applying `inner` first, then self"""
        return Extrinsics(self.matrix @ inner.matrix)

    def inverse(self) -> "Extrinsics":
        rot_t = self.rotation.T
        return Extrinsics.from_rotation_translation(rot_t, -rot_t @ self.translation)


def transform_point(p: ArrayLike, m: Extrinsics) -> np.ndarray:
    """Homogeneous multiply [p, 1] by M and keep the first three coordinates"""
    p = np.asarray(p, dtype=np.float64)
    homogeneous = np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)
    return (homogeneous @ m.matrix.T)[..., :3]


# =========================================================
# Camera model
# =========================================================

Intrinsics = Union[FisheyeIntrinsics, PinholeIntrinsics]


@dataclass(frozen=True, eq=False)
class CameraModel:
    """One calibrated camera of a rig"""

    id: str
    lens: Literal["pinhole", "fisheye"]
    intrinsics: Intrinsics
    extrinsics: Extrinsics
    width: int
    height: int

    def __post_init__(self):
        expected = FisheyeIntrinsics if self.lens == "fisheye" else PinholeIntrinsics
        if self.lens not in ("pinhole", "fisheye") or not isinstance(self.intrinsics, expected):
            raise ValueError(f"camera {self.id}: lens '{self.lens}' does not match its intrinsics")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"camera {self.id}: image size must be positive")
        cx, cy = self.intrinsics.cx, self.intrinsics.cy
        if not (0 <= cx <= self.width and 0 <= cy <= self.height):
            raise ValueError(f"camera {self.id}: principal point outside the image")

    @property
    def fov(self) -> float:
        """Full field of view (horizontal for pinhole) in radians"""
        if self.lens == "fisheye":
            return self.intrinsics.fov
        return 2 * float(np.arctan(self.width / (2 * self.intrinsics.fx)))

    def project(self, p: ArrayLike) -> np.ndarray:
        if self.lens == "fisheye":
            return project_fisheye(p, self)
        return project_pinhole(p, self)

    def unproject(self, uv: ArrayLike) -> np.ndarray:
        if self.lens == "fisheye":
            return unproject_fisheye(uv, self)
        return unproject_pinhole(uv, self)

    def project_masked(self, p: ArrayLike, require_in_image: bool = True) -> Tuple[np.ndarray, np.ndarray]:
        """
        Project without raising

        Returns:
            (uv, valid) where invalid entries hold finite placeholders
        """
        p = np.asarray(p, dtype=np.float64)
        if self.lens == "fisheye":
            uv, theta, nonzero = _fisheye_project_raw(p, self.intrinsics)
            valid = nonzero & (theta <= self.intrinsics.theta_max + ANGLE_EPS)
        else:
            depth = p[..., 0]
            valid = depth > 1e-12
            safe = np.where(valid, depth, 1.0)
            uv = _pinhole_from_depth(p, safe, self.intrinsics)
        if require_in_image:
            valid = valid & self.in_image(uv)
        return uv, valid

    def unproject_masked(self, uv: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        """Rays for all pixels; pixels outside the image circle are flagged invalid"""
        uv = np.asarray(uv, dtype=np.float64)
        if self.lens == "pinhole":
            return unproject_pinhole(uv, self), np.ones(uv.shape[:-1], dtype=bool)
        intr = self.intrinsics
        du, dv = uv[..., 0] - intr.cx, uv[..., 1] - intr.cy
        radius = np.hypot(du, dv)
        valid = radius <= intr.radius_max
        theta = np.asarray(fisheye_theta(np.minimum(radius, intr.radius_max), intr))
        return _ray_from_theta_psi(theta, np.arctan2(dv, du)), valid

    def in_image(self, uv: np.ndarray) -> np.ndarray:
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)

    def pixel_centers(self) -> np.ndarray:
        """(H, W, 2) continuous coordinates of every pixel's sample point"""
        u, v = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        return np.stack([u, v], axis=-1)

    def reference_to_camera(self, p: ArrayLike) -> np.ndarray:
        return transform_point(p, self.extrinsics.inverse())

    def camera_to_reference(self, p: ArrayLike) -> np.ndarray:
        return transform_point(p, self.extrinsics)

    @property
    def center(self) -> np.ndarray:
        """Camera origin in the reference frame"""
        return self.extrinsics.translation.copy()


def _fisheye_project_raw(p: np.ndarray, intr: FisheyeIntrinsics) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(y, z)
    nonzero = (rho > 0) | (x != 0)
    theta = np.arctan2(rho, x)
    psi = np.arctan2(-y, z)
    radius = _kb_poly(np.minimum(theta, intr.theta_max), intr.k)
    uv = np.stack([intr.cx + radius * np.cos(psi), intr.cy + radius * np.sin(psi)], axis=-1)
    return uv, theta, nonzero


def _ray_from_theta_psi(theta: np.ndarray, psi: np.ndarray) -> np.ndarray:
    sin_t = np.sin(theta)
    return np.stack([np.cos(theta), -sin_t * np.sin(psi), sin_t * np.cos(psi)], axis=-1)


def _pinhole_from_depth(p: np.ndarray, depth: np.ndarray, intr: PinholeIntrinsics) -> np.ndarray:
    return np.stack(
        [intr.cx + intr.fx * p[..., 2] / depth, intr.cy - intr.fy * p[..., 1] / depth],
        axis=-1,
    )


def project_fisheye(p: ArrayLike, cam: CameraModel) -> np.ndarray:
    """
    Project camera-frame point(s) through the Kannala-Brandt model

    Raises:
        OutOfFieldOfView: point at the origin or beyond fov/2 from the optical axis
    """
    p = np.asarray(p, dtype=np.float64)
    uv, theta, nonzero = _fisheye_project_raw(p, cam.intrinsics)
    if not np.all(nonzero):
        raise OutOfFieldOfView("cannot project the camera origin")
    if np.any(theta > cam.intrinsics.theta_max + ANGLE_EPS):
        raise OutOfFieldOfView(f"point outside the {np.degrees(cam.intrinsics.fov):.1f} deg field of view")
    return uv


def unproject_fisheye(uv: ArrayLike, cam: CameraModel) -> np.ndarray:
    """
    Unit ray (camera frame) for pixel(s) inside the image circle

    Raises:
        OutOfFieldOfView: pixel outside the image circle
    """
    uv = np.asarray(uv, dtype=np.float64)
    intr = cam.intrinsics
    du, dv = uv[..., 0] - intr.cx, uv[..., 1] - intr.cy
    theta = np.asarray(fisheye_theta(np.hypot(du, dv), intr))
    return _ray_from_theta_psi(theta, np.arctan2(dv, du))


def project_pinhole(p: ArrayLike, cam: CameraModel) -> np.ndarray:
    """
    Perspective division u = cx + fx z/x, v = cy - fy y/x

    Raises:
        BehindCamera: non-positive forward depth
    """
    p = np.asarray(p, dtype=np.float64)
    depth = p[..., 0]
    if np.any(depth <= 0):
        raise BehindCamera("point has non-positive forward depth")
    return _pinhole_from_depth(p, depth, cam.intrinsics)


def unproject_pinhole(uv: ArrayLike, cam: CameraModel) -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64)
    intr = cam.intrinsics
    rays = np.stack(
        [
            np.ones(uv.shape[:-1]),
            -(uv[..., 1] - intr.cy) / intr.fy,
            (uv[..., 0] - intr.cx) / intr.fx,
        ],
        axis=-1,
    )
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)

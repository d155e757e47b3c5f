"""Pinhole camera model, rigid SE(3) poses, and the differentiable warp.

The warp chain (backproject -> rigid transform -> project -> bilinear
sample) synthesizes a target view from a source frame, a predicted depth
map, and a target-to-source pose, and is differentiable with respect to
the depth, the pose parameters (when given as tensors), and the source.

Conventions: integer pixel coordinates address pixel centers; depth is the
camera-frame Z coordinate; poses map target-frame points into the source
frame. Camera-frame points with Z <= 1e-6 after the transform are marked
invalid via a sentinel coordinate instead of being clamped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Z_EPS = 1e-6
_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def pixel_rays(self) -> np.ndarray:
        """K^-1 applied to every homogeneous pixel center, shape (3, H, W)."""
        u, v = np.meshgrid(np.arange(self.width, dtype=np.float64), np.arange(self.height, dtype=np.float64))
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy, np.ones_like(u)])


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform x -> R x + t with an orthonormality guarantee."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not 1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis_angle, translation) -> "PoseSE3":
        return PoseSE3(rotation_matrix(np.asarray(axis_angle, dtype=np.float64)), translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """self after other: x -> self(other(x))."""
        return PoseSE3(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "PoseSE3":
        rt = self.rotation.T
        return PoseSE3(rt, -rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (3, ...)."""
        flat = points.reshape(3, -1)
        return (self.rotation @ flat + self.translation[:, None]).reshape(points.shape)


def rotation_matrix(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues rotation from an axis-angle 3-vector (plain numpy)."""
    theta = float(np.linalg.norm(axis_angle))
    k = _skew(axis_angle)
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def _skew(w) -> np.ndarray:
    return np.array(
        [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]], dtype=np.float64
    )


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0."""
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(r[i, i] - r[j, j] - r[k, k] + 1.0) * 2.0
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class DepthMap:
    """Positive, finite per-pixel depth in scene units."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"depth map must be 2-d, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("depth map values must be positive and finite")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _depth_tensor(depth) -> Tensor:
    if isinstance(depth, DepthMap):
        return Tensor(depth.values)
    t = ad.as_tensor(depth)
    if t.ndim != 2:
        raise ValueError(f"depth must be 2-d, got shape {t.shape}")
    if np.any(t.data <= 0):
        raise ValueError("depth values must be positive")
    return t


# -- differentiable rotation from axis-angle ----------------------------------------------------


def rotation_from_axis_angle(axis_angle: Tensor) -> Tensor:
    """Differentiable Rodrigues rotation from an axis-angle 3-vector tensor.

    Uses the series form of sin(t)/t and (1-cos t)/t^2 below t=1e-4, so the
    map stays smooth through zero rotation.
    """
    w = ad.as_tensor(axis_angle)
    if w.shape != (3,):
        raise ValueError(f"axis-angle must have shape (3,), got {w.shape}")
    theta_sq = ad.tsum(w * w)
    k = _skew_tensor(w)
    k2 = ad.matmul(k, k)
    if theta_sq.item() < 1e-8:
        # sin(t)/t = 1 - t^2/6 + t^4/120,  (1-cos t)/t^2 = 1/2 - t^2/24 + t^4/720
        a = 1.0 - theta_sq * (1.0 / 6.0) + theta_sq * theta_sq * (1.0 / 120.0)
        b = 0.5 - theta_sq * (1.0 / 24.0) + theta_sq * theta_sq * (1.0 / 720.0)
    else:
        theta = ad.tsqrt(theta_sq)
        a = ad.tsin(theta) / theta
        b = (1.0 - ad.tcos(theta)) / theta_sq
    eye = Tensor(np.eye(3))
    return eye + ad.broadcast_to(ad.reshape(a, (1, 1)), (3, 3)) * k + ad.broadcast_to(
        ad.reshape(b, (1, 1)), (3, 3)
    ) * k2


def _skew_tensor(w: Tensor) -> Tensor:
    zero = Tensor(0.0)
    wx = ad.reshape(ad.slice_axis(w, 0, 0, 1), ())
    wy = ad.reshape(ad.slice_axis(w, 0, 1, 2), ())
    wz = ad.reshape(ad.slice_axis(w, 0, 2, 3), ())
    rows = [zero, -wz, wy, wz, zero, -wx, -wy, wx, zero]
    return ad.reshape(ad.concat([ad.reshape(r, (1,)) for r in rows], axis=0), (3, 3))


# -- projection chain ------------------------------------------------------------------------------


def backproject(depth, cam: CameraModel) -> Tensor:
    """Lift every pixel to a camera-frame 3-D point: depth * K^-1 (u, v, 1)."""
    d = _depth_tensor(depth)
    h, w = d.shape
    if (h, w) != (cam.height, cam.width):
        raise ValueError(f"depth shape {d.shape} does not match camera {cam.height}x{cam.width}")
    rays = Tensor(cam.pixel_rays())
    d3 = ad.broadcast_to(ad.reshape(d, (1, h, w)), (3, h, w))
    return rays * d3


def project(points: Tensor, cam: CameraModel) -> Tensor:
    """Pinhole projection of (3, H, W) camera-frame points to a sampling grid.

    Points with Z <= 1e-6 receive a sentinel coordinate far outside the
    image so downstream sampling marks them invalid.
    """
    points = ad.as_tensor(points)
    if points.ndim != 3 or points.shape[0] != 3:
        raise ValueError(f"project needs (3, H, W) points, got {points.shape}")
    _, h, w = points.shape
    x = ad.slice_axis(points, 0, 0, 1)
    y = ad.slice_axis(points, 0, 1, 2)
    z = ad.slice_axis(points, 0, 2, 3)
    behind = points.data[2:3] <= Z_EPS
    z_safe = ad.mask_fill(z, behind, 1.0)
    u = x / z_safe * cam.fx + cam.cx
    v = y / z_safe * cam.fy + cam.cy
    u = ad.mask_fill(u, behind, -float(cam.width + 2))
    v = ad.mask_fill(v, behind, -float(cam.height + 2))
    return ad.concat([u, v], axis=0)


def transform_points(points: Tensor, rotation, translation) -> Tensor:
    """Apply x -> R x + t to (3, H, W) points; R and t may carry gradients."""
    points = ad.as_tensor(points)
    r = ad.as_tensor(rotation)
    t = ad.as_tensor(translation)
    _, h, w = points.shape
    flat = ad.reshape(points, (3, h * w))
    moved = ad.matmul(r, flat) + ad.broadcast_to(ad.reshape(t, (3, 1)), (3, h * w))
    return ad.reshape(moved, (3, h, w))


def warp_frame(source, depth, pose_t_to_s, cam: CameraModel) -> tuple[Tensor, Tensor]:
    """Synthesize the target view by sampling the source frame.

    source: (C, H, W) tensor; depth: target-frame depth (DepthMap, tensor,
    or array); pose_t_to_s: a PoseSE3 or an (rotation, translation) pair of
    tensors for a differentiable pose. Returns (synthesized, validity).
    """
    source = ad.as_tensor(source)
    if isinstance(pose_t_to_s, PoseSE3):
        rotation, translation = pose_t_to_s.rotation, pose_t_to_s.translation
    else:
        rotation, translation = pose_t_to_s
    if source.ndim != 3:
        raise ValueError(f"source must be (C, H, W), got {source.shape}")
    if source.shape[1] != cam.height or source.shape[2] != cam.width:
        raise ValueError(f"source {source.shape} does not match camera {cam.height}x{cam.width}")
    points = backproject(depth, cam)
    moved = transform_points(points, rotation, translation)
    grid = project(moved, cam)
    return ad.bilinear_sample(source, grid)

"""On-disk formats: PFM depth rasters, PPM images, PGM label masks,
trajectory text files, intrinsics files, and scene directories.

PFM follows the grayscale "Pf" convention: float32 payload, bottom-up row
order, negative scale marking little-endian. Trajectories are text lines
"index tx ty tz qw qx qy qz" (w-first unit quaternion) storing
camera-to-world poses.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .evalmetrics import Trajectory
from .geometry import CameraModel, PoseSE3, quaternion_to_rotation, rotation_to_quaternion


# -- PFM ----------------------------------------------------------------------------


def write_pfm(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float32)
    if values.ndim != 2:
        raise ValueError(f"PFM writer needs a 2-d raster, got shape {values.shape}")
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.flipud(values).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise ValueError(f"not a grayscale PFM file: magic {magic!r}")
        dims = fh.readline().decode("ascii").split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().decode("ascii").strip())
        count = w * h
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(count * 4), dtype=dtype, count=count)
    return np.flipud(data.reshape(h, w)).astype(np.float64)


# -- PPM / PGM -----------------------------------------------------------------------


def _read_netpbm_header(fh, magic: bytes) -> tuple[int, int]:
    def token():
        tok = b""
        while True:
            ch = fh.read(1)
            if ch == b"#":
                fh.readline()
                continue
            if ch.isspace():
                if tok:
                    return tok
                continue
            if not ch:
                raise ValueError("truncated netpbm header")
            tok += ch

    got = token()
    if got != magic:
        raise ValueError(f"expected {magic!r}, got {got!r}")
    w = int(token())
    h = int(token())
    maxval = int(token())
    if maxval != 255:
        raise ValueError(f"only 8-bit rasters supported, got maxval {maxval}")
    return w, h


def write_ppm(path, image: np.ndarray) -> None:
    """image: (3, H, W) floats in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"PPM writer needs a (3, H, W) image, got {image.shape}")
    h, w = image.shape[1:]
    bytes_img = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(bytes_img.transpose(1, 2, 0).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_netpbm_header(fh, b"P6")
        data = np.frombuffer(fh.read(w * h * 3), dtype=np.uint8)
    return data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, labels: np.ndarray) -> None:
    """labels: (H, W) small nonnegative integers."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"PGM writer needs a 2-d raster, got {labels.shape}")
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("labels must fit in one byte")
    h, w = labels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(labels.astype(np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        w, h = _read_netpbm_header(fh, b"P5")
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w).astype(np.int64)


# -- trajectories ----------------------------------------------------------------------


def write_trajectory(path, traj: Trajectory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for idx, pose in zip(traj.indices, traj.poses):
            q = rotation_to_quaternion(pose.rotation)
            t = pose.translation
            fh.write(
                f"{idx} {t[0]:.17g} {t[1]:.17g} {t[2]:.17g} "
                f"{q[0]:.17g} {q[1]:.17g} {q[2]:.17g} {q[3]:.17g}\n"
            )


def read_trajectory(path) -> Trajectory:
    indices = []
    poses = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 8:
                raise ValueError(f"trajectory line {lineno}: expected 8 fields, got {len(parts)}")
            idx = int(parts[0])
            tx, ty, tz, qw, qx, qy, qz = (float(v) for v in parts[1:])
            indices.append(idx)
            poses.append(PoseSE3(quaternion_to_rotation([qw, qx, qy, qz]), [tx, ty, tz]))
    return Trajectory(tuple(indices), tuple(poses))


# -- intrinsics ---------------------------------------------------------------------------


def write_intrinsics(path, cam: CameraModel) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{cam.fx:.17g} {cam.fy:.17g} {cam.cx:.17g} {cam.cy:.17g}\n")
        fh.write(f"{cam.width} {cam.height}\n")


def read_intrinsics(path) -> CameraModel:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().split()
        second = fh.readline().split()
    if len(first) != 4 or len(second) != 2:
        raise ValueError("intrinsics file must hold 'fx fy cx cy' then 'width height'")
    fx, fy, cx, cy = (float(v) for v in first)
    return CameraModel(fx=fx, fy=fy, cx=cx, cy=cy, width=int(second[0]), height=int(second[1]))


# -- scene directories -----------------------------------------------------------------------


def write_scene(directory, scene) -> None:
    """Lay a scene out as numbered PPM/PFM/PGM files plus trajectory and
    intrinsics text files."""
    os.makedirs(directory, exist_ok=True)
    write_intrinsics(os.path.join(directory, "intrinsics.txt"), scene.cam)
    from .scene import gt_trajectory

    write_trajectory(os.path.join(directory, "trajectory.txt"), gt_trajectory(scene))
    for k in range(len(scene)):
        write_ppm(os.path.join(directory, f"frame_{k:03d}.ppm"), scene.frames[k])
        write_pfm(os.path.join(directory, f"depth_{k:03d}.pfm"), scene.depths[k])
        write_pgm(os.path.join(directory, f"labels_{k:03d}.pgm"), scene.labels[k])
    with open(os.path.join(directory, "meta.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"kind={scene.kind}\nframes={len(scene)}\nseed={scene.seed}\n")


class SceneOnDisk:
    """Scene-shaped view over a directory written by write_scene (or any
    matching external data): frames, depths, labels, poses, cam."""

    def __init__(self, directory):
        self.directory = str(directory)
        self.cam = read_intrinsics(os.path.join(directory, "intrinsics.txt"))
        traj = read_trajectory(os.path.join(directory, "trajectory.txt"))
        self.poses = tuple(p.inverse() for p in traj.poses)  # back to world-to-camera
        pattern = re.compile(r"frame_(\d+)\.ppm$")
        ids = sorted(
            int(m.group(1)) for m in (pattern.match(f) for f in os.listdir(directory)) if m
        )
        if not ids:
            raise ValueError(f"no frame_*.ppm files in {directory}")
        self.frames = tuple(read_ppm(os.path.join(directory, f"frame_{k:03d}.ppm")) for k in ids)
        self.depths = tuple(
            read_pfm(os.path.join(directory, f"depth_{k:03d}.pfm"))
            for k in ids
            if os.path.exists(os.path.join(directory, f"depth_{k:03d}.pfm"))
        ) or None
        self.labels = tuple(
            read_pgm(os.path.join(directory, f"labels_{k:03d}.pgm"))
            for k in ids
            if os.path.exists(os.path.join(directory, f"labels_{k:03d}.pgm"))
        ) or None

    def __len__(self) -> int:
        return len(self.frames)

"""Depth map <-> point cloud conversion and ASCII PLY export.

Camera convention: +z forward, +x right, +y down, aligned with pixel
coordinates (u right, v down).  Pixels with depth <= 0 are treated as
missing and never become points.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from .data import CameraIntrinsics
from .errors import ContractError, FormatError

PLY_COMMENT = "camera convention: +z forward, +x right, +y down"


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) float32 metres
    colors: np.ndarray  # (N, 3) uint8

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.points) != len(self.colors):
            raise ContractError(
                f"{len(self.points)} points but {len(self.colors)} colors")
        if not np.isfinite(self.points).all():
            raise ContractError("point coordinates must be finite")

    def __len__(self) -> int:
        return len(self.points)


def depth_to_pointcloud(depth: np.ndarray, rgb: np.ndarray,
                        intr: CameraIntrinsics) -> PointCloud:
    """Back-project every positive-depth pixel through the pinhole model.

    Points appear in row-major pixel order; colors copy the RGB image.
    """
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    if rgb.shape[:2] != (h, w):
        raise ContractError(f"rgb {rgb.shape} does not cover depth {depth.shape}")
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    hit = depth > 0
    z = depth[hit]
    x = (u[hit] - intr.cx) * z / intr.fx
    y = (v[hit] - intr.cy) * z / intr.fy
    return PointCloud(points=np.stack([x, y, z], axis=1),
                      colors=rgb[hit])


def pointcloud_to_depth(pc: PointCloud, intr: CameraIntrinsics,
                        extents: Tuple[int, int]) -> np.ndarray:
    """Project points back to a (H, W) depth map, keeping the nearest hit.

    Points must sit in front of the camera (z > 0); pixels nothing projects
    to read 0.
    """
    h, w = extents
    out = np.full((h, w), np.inf, dtype=np.float64)
    if len(pc):
        pts = pc.points.astype(np.float64)
        z = pts[:, 2]
        if (z <= 0).any():
            raise ContractError("all points must have z > 0 to project")
        u = np.rint(pts[:, 0] * intr.fx / z + intr.cx).astype(np.int64)
        v = np.rint(pts[:, 1] * intr.fy / z + intr.cy).astype(np.int64)
        ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        np.minimum.at(out, (v[ok], u[ok]), z[ok])
    out[~np.isfinite(out)] = 0.0
    return out.astype(np.float32)


def write_ply(pc: PointCloud, path) -> None:
    """ASCII PLY with float x/y/z and uchar red/green/blue properties."""
    lines = [
        "ply",
        "format ascii 1.0",
        f"comment {PLY_COMMENT}",
        f"element vertex {len(pc)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for (x, y, z), (r, g, b) in zip(pc.points, pc.colors):
        lines.append(f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> PointCloud:
    """Parse the subset of PLY written by :func:`write_ply`."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise FormatError(f"{path}: not a PLY file")
    n_vertices = None
    body_at = None
    for i, line in enumerate(text[1:], start=1):
        token = line.strip()
        if token.startswith("element vertex"):
            n_vertices = int(token.split()[-1])
        elif token == "end_header":
            body_at = i + 1
            break
        elif token.startswith("format") and "ascii" not in token:
            raise FormatError(f"{path}: only ascii PLY is supported")
    if n_vertices is None or body_at is None:
        raise FormatError(f"{path}: missing vertex element or end_header")
    rows = [ln.split() for ln in text[body_at:body_at + n_vertices]]
    if len(rows) != n_vertices:
        raise FormatError(f"{path}: expected {n_vertices} vertices, "
                          f"found {len(rows)}")
    if n_vertices == 0:
        return PointCloud(points=np.zeros((0, 3), np.float32),
                          colors=np.zeros((0, 3), np.uint8))
    arr = np.array(rows, dtype=np.float64)
    return PointCloud(points=arr[:, :3].astype(np.float32),
                      colors=arr[:, 3:6].astype(np.uint8))

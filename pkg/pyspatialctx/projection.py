#
# Copyright (C) 2025 Kris Kirby
#
# This file is part of PySpatialCtx.
#
# PySpatialCtx is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# You should have received a copy of the GNU General Public License
# along with PySpatialCtx. If not, see <http://www.gnu.org/licenses/>.
#

"""
Point-cloud readout: renders the labeled cloud into RGB + instance + depth
point maps seen from stored or canonical cameras.

Cameras look along their local -z axis with +y up (right-handed).
"""

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from PIL import Image

from .config import RenderConfig
from .context import LabeledPointCloud
from .errors import EmptyCloud, IoError, ParseError
from .geometry import AABB, SimilarityTransform

logger = logging.getLogger(__name__)

FRAMING_MARGIN = 1.1

# --- Numba JIT-Compiled Splatting Kernel ---

@njit(cache=True)
def _numba_splat_kernel(u, v, depth, labels, colors, radius, rgb, instance, zbuf):
    """
    Writes a disc of ``radius`` pixels per projected point into the three
    layers. Nearest depth wins; on equal depth the earlier point is kept.
    """
    height, width = zbuf.shape
    r2 = radius * radius
    for i in range(len(u)):
        d = depth[i]
        if not (d > 0.0) or not np.isfinite(d) or not np.isfinite(u[i]) or not np.isfinite(v[i]):
            continue
        px = int(np.floor(u[i]))
        py = int(np.floor(v[i]))
        if px < 0 or px >= width or py < 0 or py >= height:
            continue
        for dy in range(-radius, radius + 1):
            y = py + dy
            if y < 0 or y >= height:
                continue
            for dx in range(-radius, radius + 1):
                if dx * dx + dy * dy > r2:
                    continue
                x = px + dx
                if x < 0 or x >= width:
                    continue
                if d < zbuf[y, x]:
                    zbuf[y, x] = d
                    instance[y, x] = labels[i]
                    rgb[y, x, 0] = colors[i, 0]
                    rgb[y, x, 1] = colors[i, 1]
                    rgb[y, x, 2] = colors[i, 2]


# --- Cameras ---

@dataclass(frozen=True, eq=False)
class Camera:
    """
    Pinhole or orthographic camera.

    :param pose: Rigid world-from-camera transform.
    :param kind: ``"perspective"`` or ``"orthographic"``.
    :param fov_y: Vertical field of view in radians (perspective).
    :param half_height: Half of the visible height in scene units (orthographic).
    :param width: Image width in pixels.
    :param height: Image height in pixels.
    :param name: Label used for exported file names.
    """

    pose: SimilarityTransform = field(default_factory=SimilarityTransform.identity)
    kind: str = "perspective"
    fov_y: float = np.pi / 3
    half_height: float = 1.0
    width: int = 512
    height: int = 512
    name: str = "view"

    def __post_init__(self):
        if not self.pose.is_rigid:
            raise ValueError("camera pose must be rigid (scale 1)")
        if self.kind == "perspective":
            if not 0.0 < self.fov_y < np.pi:
                raise ValueError("fov_y must lie in (0, pi)")
        elif self.kind == "orthographic":
            if not self.half_height > 0:
                raise ValueError("half_height must be positive")
        else:
            raise ValueError(f"unknown camera kind {self.kind!r}")
        if self.width < 16 or self.height < 16:
            raise ValueError("camera resolution must be at least 16x16")

    @property
    def forward(self) -> np.ndarray:
        """World direction the camera looks along (its local -z)."""
        return -self.pose.rotation[:, 2]

    def project(self, points) -> tuple:
        """
        Projects world points.

        :returns: ``(u, v, depth)`` arrays; pixel column/row coordinates and
            distance along the viewing direction (<= 0 means behind).
        """
        cam = (np.asarray(points, dtype=np.float64) - self.pose.translation) @ self.pose.rotation
        depth = -cam[:, 2]
        if self.kind == "perspective":
            focal = 0.5 * self.height / np.tan(0.5 * self.fov_y)
            with np.errstate(divide="ignore", invalid="ignore"):
                u = 0.5 * self.width + focal * cam[:, 0] / depth
                v = 0.5 * self.height - focal * cam[:, 1] / depth
        else:
            scale = 0.5 * self.height / self.half_height
            u = 0.5 * self.width + scale * cam[:, 0]
            v = 0.5 * self.height - scale * cam[:, 1]
        return u, v, depth

    def to_dict(self) -> dict:
        data = {
            "name": self.name,
            "kind": self.kind,
            "rotation": [float(c) for c in self.pose.quaternion()],
            "translation": [float(c) for c in self.pose.translation],
            "width": int(self.width),
            "height": int(self.height),
        }
        if self.kind == "perspective":
            data["fov_y"] = float(self.fov_y)
        else:
            data["half_height"] = float(self.half_height)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "Camera":
        try:
            pose = SimilarityTransform.from_quaternion(data["rotation"], data["translation"])
            return cls(pose=pose, kind=data["kind"], fov_y=float(data.get("fov_y", np.pi / 3)),
                       half_height=float(data.get("half_height", 1.0)),
                       width=int(data["width"]), height=int(data["height"]),
                       name=str(data.get("name", "view")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"bad camera record: {exc}") from exc


def _look_frame(right, up, back) -> np.ndarray:
    return np.column_stack([right, up, back]).astype(np.float64)


def _ortho_camera(name, center, rotation, distance, horiz_half, vert_half, width, height) -> Camera:
    aspect = width / height
    half_height = FRAMING_MARGIN * max(vert_half, horiz_half / aspect)
    position = center + rotation[:, 2] * distance
    return Camera(SimilarityTransform(1.0, rotation, position), "orthographic",
                  half_height=max(half_height, 1e-3), width=width, height=height, name=name)


def _finite_aabb(cloud: LabeledPointCloud) -> AABB:
    if len(cloud) == 0:
        raise EmptyCloud("cannot frame an empty cloud")
    finite = np.all(np.isfinite(cloud.positions), axis=1)
    if not finite.any():
        raise EmptyCloud("cloud has no finite points")
    return AABB.of(cloud.positions[finite])


def canonical_cameras(cloud: LabeledPointCloud, width: int = 512, height: int = 512) -> list:
    """
    Three orthographic cameras framing the cloud's AABB with a 10% margin:
    ``top`` looks along -y (image up = world -z, the scene's forward),
    ``side_px`` looks along +x and ``side_nx`` along -x (image up = +y).
    """
    box = _finite_aabb(cloud)
    c, half = box.center, 0.5 * box.extent
    reach = FRAMING_MARGIN * float(np.linalg.norm(half)) + 1.0
    top = _look_frame([1, 0, 0], [0, 0, -1], [0, 1, 0])
    side_px = _look_frame([0, 0, 1], [0, 1, 0], [-1, 0, 0])
    side_nx = _look_frame([0, 0, -1], [0, 1, 0], [1, 0, 0])
    return [
        _ortho_camera("top", c, top, reach, half[0], half[2], width, height),
        _ortho_camera("side_px", c, side_px, reach, half[2], half[1], width, height),
        _ortho_camera("side_nx", c, side_nx, reach, half[2], half[1], width, height),
    ]


def instance_front_camera(cloud: LabeledPointCloud, label: int, width: int = 512,
                          height: int = 512) -> Camera:
    """Fixed front view (looking along -z) framing one instance segment."""
    segment = cloud.select(cloud.labels == int(label))
    box = _finite_aabb(segment)
    half = 0.5 * box.extent
    reach = FRAMING_MARGIN * float(np.linalg.norm(half)) + 1.0
    return _ortho_camera(f"front_{int(label)}", box.center, np.eye(3), reach, half[0], half[1],
                         width, height)


# --- Point Maps ---

@dataclass(frozen=True, eq=False)
class PointMap:
    """
    :param rgb: (H, W, 3) colors in ``[0, 1]``.
    :param instance: (H, W) labels, 0 = empty/background.
    :param depth: (H, W) depths, ``+inf`` = empty.
    """

    rgb: np.ndarray
    instance: np.ndarray
    depth: np.ndarray

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    def equals(self, other: "PointMap") -> bool:
        return (np.array_equal(self.rgb, other.rgb) and np.array_equal(self.instance, other.instance)
                and np.array_equal(self.depth, other.depth))


def render_pointmap(cloud: LabeledPointCloud, camera: Camera, splat_radius: int = 1) -> PointMap:
    """
    Z-buffered splat of every point in front of the camera.

    :raises EmptyCloud: The cloud has no points.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot render an empty cloud")
    u, v, depth = camera.project(cloud.positions)
    rgb = np.zeros((camera.height, camera.width, 3), dtype=np.float64)
    instance = np.zeros((camera.height, camera.width), dtype=np.int64)
    zbuf = np.full((camera.height, camera.width), np.inf, dtype=np.float64)
    _numba_splat_kernel(np.ascontiguousarray(u), np.ascontiguousarray(v), np.ascontiguousarray(depth),
                        np.ascontiguousarray(cloud.labels), np.ascontiguousarray(cloud.colors),
                        int(splat_radius), rgb, instance, zbuf)
    return PointMap(rgb, instance, zbuf)


def render_views(cloud: LabeledPointCloud, cameras, config: RenderConfig = None) -> dict:
    """Renders several cameras; returns ``{camera.name: PointMap}``."""
    config = config or RenderConfig()
    return {cam.name: render_pointmap(cloud, cam, config.splat_radius) for cam in cameras}


# --- Export ---

def export_pointmap(pointmap: PointMap, base_path) -> dict:
    """
    Writes ``<base>_rgb.png`` (8-bit RGB), ``<base>_instance.png`` (16-bit
    gray), ``<base>_depth.f32`` (little-endian float32) and its sidecar
    ``<base>_depth.txt`` holding ``"width height"``.

    :returns: Mapping of layer name to written path.
    """
    base = str(base_path)
    paths = {
        "rgb": base + "_rgb.png",
        "instance": base + "_instance.png",
        "depth": base + "_depth.f32",
        "depth_header": base + "_depth.txt",
    }
    labels = pointmap.instance
    if labels.size and labels.max() > 0xFFFF:
        logger.warning("instance labels above 65535 are clipped in %s", paths["instance"])
        labels = np.minimum(labels, 0xFFFF)
    try:
        rgb8 = np.clip(np.round(pointmap.rgb * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(rgb8, mode="RGB").save(paths["rgb"])
        Image.fromarray(labels.astype(np.uint16)).save(paths["instance"])
        pointmap.depth.astype("<f4").tofile(paths["depth"])
        with open(paths["depth_header"], "w") as fh:
            fh.write(f"{pointmap.width} {pointmap.height}\n")
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot export point map to {base}: {exc}") from exc
    return paths


def read_instance_png(path) -> np.ndarray:
    """Reads an exported instance layer back as an int64 label grid."""
    try:
        with Image.open(path) as img:
            return np.asarray(img).astype(np.int64)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def read_depth(base_path) -> np.ndarray:
    """Reads ``<base>_depth.f32`` using the sizes in its sidecar."""
    base = str(base_path)
    try:
        with open(base + "_depth.txt") as fh:
            width, height = (int(t) for t in fh.read().split()[:2])
        data = np.fromfile(base + "_depth.f32", dtype="<f4")
    except OSError as exc:
        raise IoError(f"cannot read depth {base}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"bad depth sidecar for {base}: {exc}") from exc
    if data.size != width * height:
        raise ParseError(f"depth file holds {data.size} values, sidecar says {width}x{height}")
    return data.reshape(height, width).astype(np.float64)


def export_views(cloud: LabeledPointCloud, cameras, out_dir, config: RenderConfig = None) -> list:
    """
    Renders and exports every camera into ``out_dir``.

    :returns: Written rgb/instance paths, in camera order.
    """
    os.makedirs(out_dir, exist_ok=True)
    refs = []
    for name, pmap in render_views(cloud, cameras, config).items():
        paths = export_pointmap(pmap, os.path.join(out_dir, name))
        refs.extend([paths["rgb"], paths["instance"], paths["depth"]])
    return refs

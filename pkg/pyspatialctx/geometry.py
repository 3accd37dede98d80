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
Shared geometric kernels: similarity transforms, bounding boxes, closed-form
alignment, nearest-neighbour queries and surface sampling.
"""

import itertools
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from .errors import DegenerateGeometry, EmptyPointSet, InvalidTransform, IoError, ParseError

logger = logging.getLogger(__name__)

ORTHONORMAL_TOL = 1e-9


def _frozen_array(values, dtype=np.float64, shape=None) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.flags.writeable = False
    return arr


def as_points(points) -> np.ndarray:
    """Coerces a point sequence to a float64 (N, 3) array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.size == 0:
        return np.zeros((0, 3), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) point array, got shape {arr.shape}")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    """The portable 64-bit generator (PCG64) used by every seeded operation."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def hinge(x):
    """The hinge function ``[x]+ = max(0, x)``; works on scalars and arrays."""
    if np.ndim(x) == 0:
        return max(0.0, float(x))
    return np.maximum(0.0, x)


# --- Similarity Transforms ---

@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """
    ``x -> s * R @ x + t`` with ``s > 0`` and ``R`` a proper rotation.

    :param scale: Positive scale factor ``s``.
    :param rotation: 3x3 rotation matrix ``R`` (orthonormal, det = +1).
    :param translation: Translation 3-vector ``t``.
    """

    scale: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        scale = float(self.scale)
        if not np.isfinite(scale) or scale <= 0:
            raise InvalidTransform(f"scale must be a positive finite number, got {scale}")
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3) or not np.all(np.isfinite(rot)):
            raise InvalidTransform("rotation must be a finite 3x3 matrix")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHONORMAL_TOL:
            raise InvalidTransform("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > ORTHONORMAL_TOL:
            raise InvalidTransform("rotation is not proper (det != +1)")
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(trans)):
            raise InvalidTransform("translation must be finite")
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", _frozen_array(rot))
        object.__setattr__(self, "translation", _frozen_array(trans))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @classmethod
    def from_quaternion(cls, quat, translation=(0.0, 0.0, 0.0), scale: float = 1.0,
                        tol: float = 1e-6) -> "SimilarityTransform":
        """
        Builds a transform from a (w, x, y, z) quaternion.

        :raises InvalidTransform: If the quaternion norm differs from 1 by more than ``tol``.
        """
        q = np.asarray(quat, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(q)
        if not np.isfinite(norm) or abs(norm - 1.0) > tol:
            raise InvalidTransform(f"quaternion must have unit norm, got |q| = {norm}")
        return cls(scale, quaternion_to_matrix(q), translation)

    @classmethod
    def from_matrix(cls, matrix) -> "SimilarityTransform":
        """Decomposes a 4x4 homogeneous similarity matrix."""
        m = np.asarray(matrix, dtype=np.float64)
        linear = m[:3, :3]
        scale = np.cbrt(np.linalg.det(linear))
        if not scale > 0:
            raise InvalidTransform("matrix does not encode a positive-scale similarity")
        return cls(scale, linear / scale, m[:3, 3])

    def quaternion(self) -> np.ndarray:
        """Rotation as a unit (w, x, y, z) quaternion with ``w >= 0``."""
        return matrix_to_quaternion(self.rotation)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def is_rigid(self) -> bool:
        return self.scale == 1.0

    def apply(self, points) -> np.ndarray:
        """Applies the transform to a 3-vector or an (N, 3) array."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            return self.scale * (self.rotation @ pts) + self.translation
        return self.scale * (pts @ self.rotation.T) + self.translation

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """``self ∘ other``: apply ``other`` first."""
        return compose(self, other)

    def inverse(self) -> "SimilarityTransform":
        return invert(self)

    def allclose(self, other: "SimilarityTransform", atol: float = 1e-9) -> bool:
        return (abs(self.scale - other.scale) <= atol
                and np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
                and np.allclose(self.translation, other.translation, atol=atol, rtol=0))

    def __repr__(self):
        q = np.round(self.quaternion(), 9).tolist()
        t = np.round(self.translation, 9).tolist()
        return f"SimilarityTransform(scale={self.scale!r}, quat={q}, translation={t})"


def quaternion_to_matrix(quat) -> np.ndarray:
    """(w, x, y, z) quaternion to a rotation matrix (the quaternion is normalized)."""
    w, x, y, z = np.asarray(quat, dtype=np.float64).reshape(4)
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def matrix_to_quaternion(rotation) -> np.ndarray:
    """Rotation matrix to a (w, x, y, z) quaternion with non-negative ``w``."""
    x, y, z, w = Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    if q[0] < 0:
        q = -q
    return q


def yaw_matrix(angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about the vertical (+y) axis."""
    return Rotation.from_rotvec([0.0, angle, 0.0]).as_matrix()


def rotvec_matrix(rotvec) -> np.ndarray:
    """Axis-angle 3-vector to a rotation matrix."""
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()


def rotation_angle_between(r_a, r_b) -> float:
    """Geodesic angle (radians) between two rotation matrices."""
    rel = np.asarray(r_a).T @ np.asarray(r_b)
    return float(np.linalg.norm(Rotation.from_matrix(rel).as_rotvec()))


def apply_similarity(transform: SimilarityTransform, p) -> np.ndarray:
    """Returns ``s * R @ p + t``."""
    return transform.apply(p)


def compose(a: SimilarityTransform, b: SimilarityTransform) -> SimilarityTransform:
    """Transform equivalent to applying ``b`` and then ``a``."""
    rotation = a.rotation @ b.rotation
    # re-orthonormalize so long composition chains stay within tolerance
    u, _, vt = np.linalg.svd(rotation)
    rotation = u @ vt
    return SimilarityTransform(
        a.scale * b.scale,
        rotation,
        a.scale * (a.rotation @ b.translation) + a.translation,
    )


def invert(transform: SimilarityTransform) -> SimilarityTransform:
    """The inverse similarity: ``(1/s) R^T (x - t)``."""
    inv_scale = 1.0 / transform.scale
    rot_t = transform.rotation.T
    return SimilarityTransform(inv_scale, rot_t, -inv_scale * (rot_t @ transform.translation))


def cube_rotations() -> list:
    """The 24 proper rotations mapping coordinate axes onto signed coordinate axes."""
    rotations = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1.0, -1.0), repeat=3):
            m = np.zeros((3, 3))
            for row, col in enumerate(perm):
                m[row, col] = signs[row]
            if np.linalg.det(m) > 0:
                rotations.append(m)
    return rotations


# --- Bounding Boxes ---

@dataclass(frozen=True, eq=False)
class AABB:
    """Axis-aligned bounding box ``[min, max]``."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min", _frozen_array(self.min, shape=3))
        object.__setattr__(self, "max", _frozen_array(self.max, shape=3))

    @classmethod
    def of(cls, points) -> "AABB":
        pts = as_points(points)
        if len(pts) == 0:
            raise EmptyPointSet("cannot bound an empty point set")
        return cls(pts.min(axis=0), pts.max(axis=0))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def iou(self, other: "AABB") -> float:
        """Volume intersection-over-union; 0 for disjoint or flat boxes."""
        overlap = np.clip(np.minimum(self.max, other.max) - np.maximum(self.min, other.min), 0, None)
        inter = float(np.prod(overlap))
        union = self.volume + other.volume - inter
        return inter / union if union > 0 else 0.0

    def __eq__(self, other):
        return (isinstance(other, AABB) and np.array_equal(self.min, other.min)
                and np.array_equal(self.max, other.max))

    def __repr__(self):
        return f"AABB(min={self.min.tolist()}, max={self.max.tolist()})"


@dataclass(frozen=True, eq=False)
class OBB:
    """
    Oriented bounding box.

    :param center: Box center.
    :param axes: 3x3 right-handed orthonormal frame; column ``k`` is axis ``k``.
    :param half_extents: Non-negative half sizes along each axis.
    """

    center: np.ndarray
    axes: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen_array(self.center, shape=3))
        object.__setattr__(self, "axes", _frozen_array(self.axes, shape=(3, 3)))
        object.__setattr__(self, "half_extents", _frozen_array(self.half_extents, shape=3))

    @property
    def diagonal(self) -> float:
        return float(2.0 * np.linalg.norm(self.half_extents))

    def contains(self, points, slack: float = 1e-9) -> np.ndarray:
        """Boolean mask of points inside the box (with ``slack``)."""
        local = (as_points(points) - self.center) @ self.axes
        return np.all(np.abs(local) <= self.half_extents + slack, axis=1)


def _sign_fix(axis: np.ndarray) -> np.ndarray:
    # first component clearly away from zero (x, then y, then z) made positive
    for c in axis:
        if abs(c) > 1e-12:
            return axis if c > 0 else -axis
    return axis


def pca_obb(points) -> OBB:
    """
    PCA oriented bounding box.

    Axes are the covariance eigenvectors sorted by descending eigenvalue. The
    first two axes are sign-fixed so their first non-zero component (x, y, z
    order) is positive; the third is their cross product, so the frame is
    always right-handed. Planar sets are accepted (zero third extent).

    :raises DegenerateGeometry: Fewer than 3 points or collinear points.
    """
    pts = as_points(points)
    if len(pts) < 3:
        raise DegenerateGeometry(f"OBB fitting needs >= 3 points, got {len(pts)}")
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / len(pts)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(-eigvals, kind="stable")
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    if eigvals[0] <= 0 or eigvals[1] <= 1e-12 * eigvals[0]:
        raise DegenerateGeometry("point covariance is rank-deficient (collinear or coincident points)")
    a0 = _sign_fix(eigvecs[:, 0])
    a1 = _sign_fix(eigvecs[:, 1])
    a2 = np.cross(a0, a1)
    axes = np.column_stack([a0, a1, a2 / np.linalg.norm(a2)])
    local = centered @ axes
    lo, hi = local.min(axis=0), local.max(axis=0)
    center = mean + axes @ (0.5 * (lo + hi))
    return OBB(center, axes, 0.5 * (hi - lo))


# --- Closed-Form Alignment ---

def umeyama_align(src, dst, with_scale: bool = True) -> SimilarityTransform:
    """
    Least-squares similarity (or rigid) transform mapping ``src`` onto ``dst``.

    :param src: (N, 3) source points.
    :param dst: (N, 3) matched destination points.
    :param with_scale: Estimate the scale factor; otherwise ``s = 1``.
    :raises DegenerateGeometry: Fewer than 3 pairs, mismatched sizes or a
        cross-covariance of rank < 2.
    """
    x = as_points(src)
    y = as_points(dst)
    if x.shape != y.shape:
        raise DegenerateGeometry(f"point sets differ in size: {x.shape} vs {y.shape}")
    n = len(x)
    if n < 3:
        raise DegenerateGeometry(f"alignment needs >= 3 pairs, got {n}")

    ux = x.mean(axis=0)
    uy = y.mean(axis=0)
    dx = x - ux
    dy = y - uy
    var_x = np.sum(dx * dx) / n
    if var_x <= 0:
        raise DegenerateGeometry("source points are coincident")

    sigma = dy.T @ dx / n
    u, d, vt = np.linalg.svd(sigma)
    if d[0] <= 0 or d[1] <= 1e-12 * d[0]:
        raise DegenerateGeometry("cross-covariance has rank < 2")
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    rotation = u @ s @ vt

    scale = float(np.sum(d * np.diag(s)) / var_x) if with_scale else 1.0
    if not scale > 0:
        raise DegenerateGeometry("alignment produced a non-positive scale")
    return SimilarityTransform(scale, rotation, uy - scale * (rotation @ ux))


# --- Spatial Index ---

class SpatialIndex:
    """
    kd-tree over a fixed point set (``scipy.spatial.cKDTree``).

    :py:meth:`nearest` returns exactly what a linear scan returns, including
    the lowest-index tie break. Read-only queries are thread-safe.
    """

    def __init__(self, points):
        pts = as_points(points)
        if len(pts) == 0:
            raise EmptyPointSet("cannot index an empty point set")
        self.points = _frozen_array(pts)
        self._tree = cKDTree(self.points)

    def __len__(self):
        return len(self.points)

    def nearest(self, q) -> tuple:
        """
        :param q: Query 3-vector.
        :returns: ``(point_index, distance)`` of the closest stored point.
        """
        q = np.asarray(q, dtype=np.float64).reshape(3)
        dist, _ = self._tree.query(q)
        radius = dist * (1.0 + 1e-9) + 1e-12
        candidates = np.array(sorted(self._tree.query_ball_point(q, radius)), dtype=np.int64)
        dists = np.sqrt(np.sum((self.points[candidates] - q) ** 2, axis=1))
        best = int(np.argmin(dists))
        return int(candidates[best]), float(dists[best])

    def query(self, queries) -> tuple:
        """
        Vectorized nearest-neighbour query for many points.

        :returns: ``(indices, distances)`` arrays.
        """
        dists, idx = self._tree.query(as_points(queries))
        return np.asarray(idx, dtype=np.int64), np.asarray(dists, dtype=np.float64)


def build_index(points) -> SpatialIndex:
    return SpatialIndex(points)


def nearest(index: SpatialIndex, q) -> tuple:
    return index.nearest(q)


# --- Sampling ---

def subsample_indices(count: int, n: int, seed: int) -> np.ndarray:
    """Sorted indices of ``n`` items drawn uniformly without replacement from ``count``."""
    if n < 1:
        raise ValueError("subsample size must be >= 1")
    if n >= count:
        return np.arange(count)
    return np.sort(make_rng(seed).choice(count, size=n, replace=False))


def uniform_subsample(points, n: int, seed: int) -> np.ndarray:
    """
    ``n`` points drawn uniformly without replacement (input order kept), or all
    points when ``n >= len(points)``.
    """
    pts = as_points(points)
    return pts[subsample_indices(len(pts), n, seed)]


def chamfer_distance(a, b) -> float:
    """Symmetric chamfer distance: the mean of both mean nearest-neighbour distances."""
    pa, pb = as_points(a), as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise EmptyPointSet("chamfer distance needs two non-empty point sets")
    _, d_ab = SpatialIndex(pb).query(pa)
    _, d_ba = SpatialIndex(pa).query(pb)
    return 0.5 * float(d_ab.mean() + d_ba.mean())


# --- Meshes ---

@dataclass(frozen=True, eq=False)
class MeshInstance:
    """
    Triangle mesh of one instance, stored in its local (asset) frame.

    :param vertices: (V, 3) vertex positions.
    :param triangles: (F, 3) vertex indices.
    :param label: Instance id the mesh belongs to.
    """

    vertices: np.ndarray
    triangles: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    label: int = 0

    def __post_init__(self):
        verts = as_points(self.vertices)
        if len(verts) == 0:
            raise DegenerateGeometry("a mesh needs at least one vertex")
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(tris) and (tris.min() < 0 or tris.max() >= len(verts)):
            raise DegenerateGeometry("triangle index out of range")
        object.__setattr__(self, "vertices", _frozen_array(verts))
        object.__setattr__(self, "triangles", _frozen_array(tris, dtype=np.int64))
        object.__setattr__(self, "label", int(self.label))

    def triangle_areas(self) -> np.ndarray:
        if len(self.triangles) == 0:
            return np.zeros(0)
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def with_label(self, label: int) -> "MeshInstance":
        return MeshInstance(self.vertices, self.triangles, label)

    def __eq__(self, other):
        return (isinstance(other, MeshInstance) and self.label == other.label
                and np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles))


def sample_surface(mesh: MeshInstance, n: int, seed: int) -> np.ndarray:
    """
    ``n`` points sampled area-proportionally over the triangles, uniformly
    (barycentric) within each triangle.

    :raises DegenerateGeometry: The mesh has zero total area.
    """
    areas = mesh.triangle_areas()
    total = float(areas.sum())
    if not total > 0:
        raise DegenerateGeometry("mesh has zero surface area")
    rng = make_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a, b, c = (mesh.vertices[mesh.triangles[tri, k]] for k in range(3))
    return ((1.0 - r1)[:, None] * a
            + (r1 * (1.0 - r2))[:, None] * b
            + (r1 * r2)[:, None] * c)


def load_obj(path, label: int = 0) -> MeshInstance:
    """
    Reads the OBJ subset ``v x y z`` / ``f i j k ...``. Polygons are fan
    triangulated, ``i/j/k`` tokens use the vertex index, negative indices are
    relative; every other directive is ignored.
    """
    vertices, triangles = [], []
    try:
        with open(path, "r") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "v":
            try:
                vertices.append([float(v) for v in parts[1:4]])
            except ValueError:
                raise ParseError(f"bad vertex in {os.path.basename(str(path))}", lineno, 1)
        elif parts[0] == "f":
            idx = []
            for token in parts[1:]:
                try:
                    i = int(token.split("/")[0])
                except ValueError:
                    raise ParseError(f"bad face index {token!r}", lineno, raw.find(token) + 1)
                idx.append(i - 1 if i > 0 else len(vertices) + i)
            for k in range(1, len(idx) - 1):
                triangles.append([idx[0], idx[k], idx[k + 1]])
    if not vertices:
        raise ParseError(f"{path}: no vertices")
    return MeshInstance(np.array(vertices), np.array(triangles, dtype=np.int64).reshape(-1, 3), label)


def save_obj(mesh: MeshInstance, path):
    """Writes vertices and triangles losslessly (``repr`` floats, 1-based faces)."""
    try:
        with open(path, "w") as fh:
            for v in mesh.vertices:
                fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
            for t in mesh.triangles:
                fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc

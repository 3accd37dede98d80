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
Synthetic scenes for tests, documentation and the ``demo`` subcommand.

``bedroom``: a 4 x 4 room split by a partition wall whose doorway is blocked
by a chair, so no path leads from the bed to the desk until the chair moves
(see :py:data:`MOVE_CHAIR`).

``two-cubes``: two unit cube meshes one unit apart joined by a contact edge.
"""

import logging
import os

import numpy as np

from .context import (HyperEdge, LabeledPointCloud, RelationParams, SceneHypergraph, SceneNode,
                      ScenePortrait, SpatialContext)
from .errors import IoError
from .geometry import MeshInstance, SimilarityTransform, sample_surface
from .scene_io import save_bundle

logger = logging.getLogger(__name__)

BED, DESK, CHAIR, WALL = 1, 2, 3, 4

# Edit batch clearing the doorway: the chair goes next to the bed.
MOVE_CHAIR = "move 3 t=(1.0,0.0,-1.0)\n"

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # -z
    [4, 5, 6], [4, 6, 7],  # +z
    [0, 1, 5], [0, 5, 4],  # -y
    [3, 7, 6], [3, 6, 2],  # +y
    [0, 4, 7], [0, 7, 3],  # -x
    [1, 2, 6], [1, 6, 5],  # +x
], dtype=np.int64)


def box_mesh(size, center=(0.0, 0.0, 0.0), label: int = 0) -> MeshInstance:
    """Axis-aligned box with outward-facing triangles."""
    half = 0.5 * np.asarray(size, dtype=np.float64)
    c = np.asarray(center, dtype=np.float64)
    corners = np.array([
        [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
        [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
    ], dtype=np.float64)
    return MeshInstance(c + corners * half, _BOX_FACES, label)


def box_surface_points(size, center, n: int, seed: int) -> np.ndarray:
    return sample_surface(box_mesh(size, center), n, seed)


def _segment(points: np.ndarray, label: int, color) -> LabeledPointCloud:
    return LabeledPointCloud(points, np.tile(np.asarray(color, dtype=np.float64), (len(points), 1)),
                             np.full(len(points), label))


def _floor(extent: float, spacing: float) -> LabeledPointCloud:
    ticks = np.arange(0.0, extent + 0.5 * spacing, spacing)
    xs, zs = np.meshgrid(ticks, ticks, indexing="ij")
    pts = np.column_stack([xs.ravel(), np.zeros(xs.size), zs.ravel()])
    return _segment(pts, 0, (0.6, 0.6, 0.6))


def build_demo_bedroom(seed: int = 0) -> SpatialContext:
    """The blocked-doorway bedroom (no meshes, no poses)."""
    parts = [
        _floor(4.0, 0.1),
        _segment(box_surface_points((1.4, 0.6, 1.2), (1.0, 0.3, 0.8), 1500, seed + BED), BED,
                 (0.8, 0.2, 0.2)),
        _segment(box_surface_points((1.0, 0.8, 0.6), (3.2, 0.4, 3.4), 1000, seed + DESK), DESK,
                 (0.2, 0.4, 0.8)),
        _segment(box_surface_points((0.5, 0.5, 0.5), (2.0, 0.25, 2.0), 600, seed + CHAIR), CHAIR,
                 (0.2, 0.7, 0.2)),
        _segment(box_surface_points((1.6, 2.0, 0.1), (0.8, 1.0, 2.0), 4000, seed + 10 * WALL), WALL,
                 (0.9, 0.9, 0.8)),
        _segment(box_surface_points((1.6, 2.0, 0.1), (3.2, 1.0, 2.0), 4000, seed + 10 * WALL + 1), WALL,
                 (0.9, 0.9, 0.8)),
    ]
    cloud = parts[0]
    for part in parts[1:]:
        cloud = cloud.concat(part)
    graph = SceneHypergraph(
        [SceneNode(BED, "bed"), SceneNode(DESK, "desk"), SceneNode(CHAIR, "chair"),
         SceneNode(WALL, "partition wall", fixed=True)],
        [HyperEdge("clearance", (CHAIR,), 0.5, RelationParams(clearance_radius=0.6)),
         HyperEdge("alignment", (BED, DESK), 1.0, RelationParams(axes="y"))],
    )
    portrait = ScenePortrait(
        "A small bedroom. The bed stands by the west wall, a desk sits in the far corner "
        "behind a partition wall, and a chair has been left in the partition doorway.")
    return SpatialContext(portrait, cloud, graph)


def build_two_cube_contact(gap: float = 1.0, samples: int = 800, seed: int = 0,
                           epsilon: float = 0.01) -> SpatialContext:
    """Two unit cubes ``gap`` apart along x, resting on y = 0, with a contact edge."""
    meshes = {label: box_mesh((1.0, 1.0, 1.0), label=label) for label in (1, 2)}
    poses = {
        1: SimilarityTransform(translation=(0.0, 0.5, 0.0)),
        2: SimilarityTransform(translation=(1.0 + gap, 0.5, 0.0)),
    }
    cloud = LabeledPointCloud.empty()
    for label, color in ((1, (0.8, 0.4, 0.0)), (2, (0.0, 0.4, 0.8))):
        local = sample_surface(meshes[label], samples, seed + label)
        cloud = cloud.concat(_segment(poses[label].apply(local), label, color))
    graph = SceneHypergraph([SceneNode(1, "left cube"), SceneNode(2, "right cube")],
                            [HyperEdge("contact", (1, 2), 1.0, RelationParams(epsilon=epsilon))])
    portrait = ScenePortrait("Two cubes on the floor that should touch each other.")
    return SpatialContext(portrait, cloud, graph, poses, meshes)


DEMOS = {
    "bedroom": build_demo_bedroom,
    "two-cubes": build_two_cube_contact,
}


def write_demo(name: str, out_dir) -> SpatialContext:
    """
    Saves a demo bundle; ``bedroom`` also gets ``move_chair.txt`` holding
    :py:data:`MOVE_CHAIR`.
    """
    if name not in DEMOS:
        raise KeyError(f"unknown demo {name!r}; choose from {sorted(DEMOS)}")
    context = DEMOS[name]()
    save_bundle(context, out_dir)
    if name == "bedroom":
        try:
            with open(os.path.join(str(out_dir), "move_chair.txt"), "w") as fh:
                fh.write(MOVE_CHAIR)
        except OSError as exc:
            raise IoError(f"cannot write demo script: {exc}") from exc
    logger.info("wrote demo %s to %s", name, out_dir)
    return context

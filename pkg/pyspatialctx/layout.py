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
Coarse layout planning: per-instance similarity transforms that place each
mesh onto its point-cloud segment.

Each instance is initialized by matching centroids, OBB axes and OBB
diagonals, then refined by ICP minimizing

    E(s, R, t) = sum_i || s R m_i + t - NN(s R m_i + t) ||^2

over a fixed mesh subsample.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .config import IcpParams
from .context import LabeledPointCloud, SpatialContext, extract_instance
from .errors import (DegenerateGeometry, EmptyPointSet, IoError, NonFinite, ParseError,
                     PlanningError, SpatialContextError)
from .geometry import (MeshInstance, SimilarityTransform, SpatialIndex, as_points,
                       chamfer_distance, cube_rotations, pca_obb, rotvec_matrix,
                       subsample_indices, umeyama_align)

logger = logging.getLogger(__name__)

# Objective decreases below this are treated as no progress.
ABSOLUTE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    """
    :param transform: Mesh local frame -> world.
    :param objective: Final objective on the mesh subsample.
    :param iterations: ICP iterations performed.
    :param converged: The relative tolerance (not the iteration cap) ended the run.
    :param history: Accepted objective values, starting with the initial one.
    :param chamfer: Symmetric chamfer distance between the aligned mesh
        subsample and the target subsample.
    """

    transform: SimilarityTransform
    objective: float
    iterations: int
    converged: bool
    history: tuple = ()
    chamfer: float = float("nan")


@dataclass
class LayoutReport:
    """Per-instance outcome of :py:func:`plan_layout`."""

    results: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [f"{label}: objective={r.objective:.6g} iterations={r.iterations} "
                 f"converged={r.converged} chamfer={r.chamfer:.6g}"
                 for label, r in sorted(self.results.items())]
        lines.extend(f"{label}: FAILED {err}" for label, err in sorted(self.failures.items()))
        return "\n".join(lines)


def _target_points(target) -> np.ndarray:
    if isinstance(target, LabeledPointCloud):
        return np.asarray(target.positions)
    return as_points(target)


def alignment_objective(transform: SimilarityTransform, mesh_pts, target: SpatialIndex) -> float:
    """
    Sum of squared distances from each transformed mesh point to its nearest
    target point.

    :raises EmptyPointSet: ``mesh_pts`` is empty.
    """
    pts = as_points(mesh_pts)
    if len(pts) == 0:
        raise EmptyPointSet("alignment objective needs mesh points")
    _, dists = target.query(transform.apply(pts))
    return float(np.sum(dists * dists))


def _subsamples(mesh: MeshInstance, target_pts: np.ndarray, params: IcpParams, round_: int = 0):
    verts = mesh.vertices
    mesh_sub = verts[subsample_indices(len(verts), params.subsample_mesh, params.seed + round_)]
    target_sub = target_pts[subsample_indices(len(target_pts), params.subsample_target, params.seed + 1)]
    return mesh_sub, target_sub


def _gravity_frame(axes: np.ndarray) -> tuple:
    """
    Reorders OBB axes into a right-handed frame ``(h, v, h x v)`` whose middle
    column is the axis closest to world +y (flipped to point up).
    """
    vert = int(np.argmax(np.abs(axes[1, :])))
    v = axes[:, vert] if axes[1, vert] >= 0 else -axes[:, vert]
    h = axes[:, min(k for k in range(3) if k != vert)]
    return np.column_stack([h, v, np.cross(h, v)]), v


def _candidate_rotations(mesh_axes: np.ndarray, target_axes: np.ndarray, full_search: bool) -> list:
    frame_m, _ = _gravity_frame(mesh_axes)
    frame_t, up_t = _gravity_frame(target_axes)
    if full_search:
        return [frame_t @ c @ frame_m.T for c in cube_rotations()]
    base = frame_t @ frame_m.T
    return [rotvec_matrix(up_t * (k * np.pi / 2)) @ base for k in range(4)]


def init_alignment(mesh: MeshInstance, target, params: IcpParams = None) -> SimilarityTransform:
    """
    Initial transform: centroids matched, OBB axes matched under the 4 yaw
    assignments about the target's vertical axis (or all 24 with
    ``full_orientation_search``), scale from the OBB diagonal ratio. The
    candidate with the lowest objective wins; ties keep the earlier one.

    :raises DegenerateGeometry: Fewer than 3 or collinear points on either side.
    """
    params = params or IcpParams()
    target_pts = _target_points(target)
    obb_m = pca_obb(mesh.vertices)
    obb_t = pca_obb(target_pts)
    if not obb_m.diagonal > 0:
        raise DegenerateGeometry("mesh has zero extent")
    scale = obb_t.diagonal / obb_m.diagonal if params.with_scale else 1.0
    c_m = np.mean(mesh.vertices, axis=0)
    c_t = np.mean(target_pts, axis=0)

    mesh_sub, target_sub = _subsamples(mesh, target_pts, params)
    index = SpatialIndex(target_sub)
    best, best_obj = None, np.inf
    for k, rotation in enumerate(_candidate_rotations(obb_m.axes, obb_t.axes,
                                                      params.full_orientation_search)):
        candidate = SimilarityTransform(scale, rotation, c_t - scale * (rotation @ c_m))
        obj = alignment_objective(candidate, mesh_sub, index)
        logger.debug("init candidate %d: objective %.6g", k, obj)
        if obj < best_obj:
            best, best_obj = candidate, obj
    if best is None:
        raise NonFinite("every initialization candidate has a non-finite objective")
    return best


def _clamped_update(src: np.ndarray, dst: np.ndarray, params: IcpParams) -> SimilarityTransform:
    update = umeyama_align(src, dst, params.with_scale)
    lo, hi = params.scale_bounds
    if params.with_scale and not lo <= update.scale <= hi:
        scale = float(np.clip(update.scale, lo, hi))
        translation = dst.mean(axis=0) - scale * (update.rotation @ src.mean(axis=0))
        update = SimilarityTransform(scale, update.rotation, translation)
    return update


def icp_refine(mesh: MeshInstance, target, initial: SimilarityTransform,
               params: IcpParams = None) -> AlignmentResult:
    """
    ICP from ``initial``: nearest-neighbour correspondences followed by a
    closed-form Umeyama update. An update that would raise the objective is
    rejected and ends the run, so the accepted objectives never increase on
    the fixed subsample. A rejected run reports ``converged`` only when the
    rise is itself below ``rel_tolerance``.

    :raises DegenerateGeometry: Correspondences become degenerate.
    :raises NonFinite: The objective becomes NaN or infinite.
    """
    params = params or IcpParams()
    target_pts = _target_points(target)
    mesh_sub, target_sub = _subsamples(mesh, target_pts, params)
    index = SpatialIndex(target_sub)

    transform = initial
    objective = alignment_objective(transform, mesh_sub, index)
    if not np.isfinite(objective):
        raise NonFinite("initial objective is not finite")
    history = [objective]
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        if params.resample_each_iteration and iterations > 1:
            mesh_sub, _ = _subsamples(mesh, target_pts, params, iterations)
            objective = alignment_objective(transform, mesh_sub, index)

        idx, dists = index.query(transform.apply(mesh_sub))
        src, dst = mesh_sub, index.points[idx]
        if params.trim_fraction > 0:
            keep = max(3, len(src) - int(params.trim_fraction * len(src)))
            order = np.argsort(dists, kind="stable")[:keep]
            src, dst = src[order], dst[order]

        candidate = _clamped_update(src, dst, params)
        new_objective = alignment_objective(candidate, mesh_sub, index)
        if not np.isfinite(new_objective):
            raise NonFinite(f"objective became {new_objective} at iteration {iterations}")
        logger.debug("icp iteration %d: %.9g -> %.9g", iterations, objective, new_objective)
        if new_objective > objective:
            # a rise within tolerance still counts as convergence
            converged = new_objective - objective <= params.rel_tolerance * max(objective, ABSOLUTE_FLOOR)
            logger.debug("icp iteration %d: update rejected (converged=%s)", iterations, converged)
            break
        decrease = objective - new_objective
        transform, objective = candidate, new_objective
        history.append(objective)
        if decrease <= params.rel_tolerance * max(history[-2], ABSOLUTE_FLOOR):
            converged = True
            break

    chamfer = chamfer_distance(transform.apply(mesh_sub), target_sub)
    return AlignmentResult(transform, objective, iterations, converged, tuple(history), chamfer)


def align_instance(mesh: MeshInstance, target, params: IcpParams = None) -> AlignmentResult:
    """Initialization followed by ICP refinement."""
    params = params or IcpParams()
    return icp_refine(mesh, target, init_alignment(mesh, target, params), params)


def plan_layout(context: SpatialContext, meshes: Optional[Mapping[int, MeshInstance]] = None,
                params: IcpParams = None) -> tuple:
    """
    Aligns every mesh to its instance segment independently (in id order),
    storing the transforms as world poses and the meshes in the context.
    Instances without a mesh are left alone. A failing instance is recorded
    in the report and the others are still processed.

    :param meshes: Meshes keyed by instance id; defaults to ``context.meshes``.
    :returns: ``(context, LayoutReport)``.
    """
    params = params or IcpParams()
    meshes = dict(context.meshes if meshes is None else meshes)
    poses = dict(context.poses)
    stored = dict(context.meshes)
    report = LayoutReport()
    for label in sorted(meshes):
        mesh = meshes[label].with_label(label)
        try:
            segment = extract_instance(context, label)
            result = align_instance(mesh, segment, params)
        except (SpatialContextError, np.linalg.LinAlgError) as exc:
            report.failures[label] = PlanningError(label, exc)
            logger.warning("layout of instance %d failed: %s", label, exc)
            continue
        report.results[label] = result
        poses[label] = result.transform
        stored[label] = mesh
        logger.info("instance %d aligned: scale %.4f, objective %.6g, %d iteration(s)",
                    label, result.transform.scale, result.objective, result.iterations)
    return context.replace(poses=poses, meshes=stored), report


# --- Layout File ---

def layout_records(poses: Mapping[int, SimilarityTransform]) -> list:
    return [{
        "id": int(label),
        "scale": float(pose.scale),
        "rotation": [float(c) for c in pose.quaternion()],
        "translation": [float(c) for c in pose.translation],
    } for label, pose in sorted(poses.items())]


def write_layout_json(poses: Mapping[int, SimilarityTransform], path):
    """Writes ``[{id, scale, rotation [w,x,y,z], translation [x,y,z]}, ...]`` sorted by id."""
    try:
        with open(path, "w") as fh:
            json.dump(layout_records(poses), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write layout {path}: {exc}") from exc


def parse_layout_records(records) -> dict:
    if not isinstance(records, list):
        raise ParseError("layout must be a JSON array")
    poses = {}
    for record in records:
        try:
            label = int(record["id"])
            poses[label] = SimilarityTransform.from_quaternion(
                record["rotation"], record["translation"], float(record.get("scale", 1.0)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SpatialContextError):
                raise
            raise ParseError(f"bad layout record {record!r}: {exc}") from exc
    return poses


def read_layout_json(path) -> dict:
    """Reads a layout file into ``{id: SimilarityTransform}``."""
    try:
        with open(path, "r") as fh:
            records = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read layout {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"layout is not valid JSON: {exc.msg}", exc.lineno, exc.colno) from exc
    return parse_layout_records(records)

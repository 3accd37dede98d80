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
Hypergraph-driven ergonomic adjustment.

Every hyperedge contributes ``weight * L_relation`` to the scene energy:

* contact      ``[min ||p - q|| - eps]+^2`` over sampled surfaces
* clearance    ``sum_{v' != v} [d_min - ||o_v - o_v'||]+^2``
* alignment    ``||A (o_i - o_j)||^2`` on the selected axes
* symmetry     ``||A_r ((o_i + o_j) / 2 - o_k)||^2``
* equidistance ``(a.(o_i - o_k) - a.(o_j - o_k))^2``

where ``o`` are transformed AABB centers. :py:func:`optimize_poses` moves the
non-fixed instances to lower the energy by finite-difference gradient descent.
"""

import csv
import logging
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np
from numba import njit

from .config import (DEFAULT_ALIGNMENT_AXES, DEFAULT_CONTACT_EPSILON, DEFAULT_EQUIDISTANCE_AXIS,
                     DEFAULT_SYMMETRY_AXIS, OptimizerConfig)
from .context import PoseSet, SpatialContext, instance_center, instance_mask, transform_instance
from .errors import (DuplicateMembers, EmptyPointSet, IoError, MissingMesh, MissingPose, NonFinite,
                     NonUnitAxis, UnknownInstance)
from .geometry import (AABB, SimilarityTransform, as_points, hinge, rotvec_matrix, sample_surface,
                       yaw_matrix)

logger = logging.getLogger(__name__)

AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
UNIT_AXIS_TOL = 1e-9

# --- Numba JIT-Compiled Distance Kernels ---

@njit(cache=True)
def _numba_min_pair_distance(p, q):
    """Smallest Euclidean distance over all pairs of rows of ``p`` and ``q``."""
    best = np.inf
    for i in range(p.shape[0]):
        for j in range(q.shape[0]):
            dx = p[i, 0] - q[j, 0]
            dy = p[i, 1] - q[j, 1]
            dz = p[i, 2] - q[j, 2]
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best:
                best = d2
    return np.sqrt(best)


@njit(cache=True)
def _numba_soft_min_distance(p, q, temperature):
    """Log-sum-exp soft-min of all pair distances (tends to the hard min as T -> 0)."""
    dmin = np.inf
    for i in range(p.shape[0]):
        for j in range(q.shape[0]):
            dx = p[i, 0] - q[j, 0]
            dy = p[i, 1] - q[j, 1]
            dz = p[i, 2] - q[j, 2]
            d = np.sqrt(dx * dx + dy * dy + dz * dz)
            if d < dmin:
                dmin = d
    acc = 0.0
    for i in range(p.shape[0]):
        for j in range(q.shape[0]):
            dx = p[i, 0] - q[j, 0]
            dy = p[i, 1] - q[j, 1]
            dz = p[i, 2] - q[j, 2]
            d = np.sqrt(dx * dx + dy * dy + dz * dz)
            acc += np.exp(-(d - dmin) / temperature)
    return dmin - temperature * np.log(acc)


# --- Relation Losses ---

def _posed(points, pose) -> np.ndarray:
    pts = as_points(points)
    return np.ascontiguousarray(pts if pose is None else pose.apply(pts))


def contact_distance(points_i, points_j, pose_i: SimilarityTransform = None,
                     pose_j: SimilarityTransform = None, temperature: float = 0.0) -> float:
    """
    Minimum distance between the two transformed sample sets (soft-min when
    ``temperature > 0``).

    :raises EmptyPointSet: Either set is empty.
    """
    p = _posed(points_i, pose_i)
    q = _posed(points_j, pose_j)
    if len(p) == 0 or len(q) == 0:
        raise EmptyPointSet("contact needs two non-empty sample sets")
    if temperature > 0:
        return float(_numba_soft_min_distance(p, q, float(temperature)))
    return float(_numba_min_pair_distance(p, q))


def contact_loss(points_i, points_j, pose_i: SimilarityTransform = None,
                 pose_j: SimilarityTransform = None, epsilon: float = DEFAULT_CONTACT_EPSILON,
                 temperature: float = 0.0) -> float:
    """``[min ||p~ - q~|| - eps]+^2``."""
    if not epsilon > 0:
        raise ValueError("contact epsilon must be positive")
    return hinge(contact_distance(points_i, points_j, pose_i, pose_j, temperature) - epsilon) ** 2


def _moved_center(poses: PoseSet, centers: Mapping[int, np.ndarray], label: int) -> np.ndarray:
    pose = poses.get(label)
    center = np.asarray(centers[label], dtype=np.float64)
    return center if pose is None else pose.apply(center)


def clearance_loss(poses: PoseSet, centers: Mapping[int, np.ndarray], v: int, d_min: float) -> float:
    """
    Penalty for every other instance whose transformed center lies closer
    than ``d_min`` to instance ``v``'s. Instances without a pose stay put.

    :raises UnknownInstance: ``v`` has no center.
    """
    if v not in centers:
        raise UnknownInstance(v)
    if not d_min > 0:
        raise ValueError("d_min must be positive")
    o_v = _moved_center(poses, centers, v)
    total = 0.0
    for other in sorted(centers):
        if other == v:
            continue
        dist = float(np.linalg.norm(o_v - _moved_center(poses, centers, other)))
        total += hinge(d_min - dist) ** 2
    return total


def _axis_selector(axes: str) -> list:
    if not axes or set(axes) - set(AXIS_INDEX):
        raise ValueError(f"axes must be a non-empty subset of xyz, got {axes!r}")
    return sorted(AXIS_INDEX[a] for a in set(axes))


def alignment_loss(pose_i: SimilarityTransform, pose_j: SimilarityTransform, center_i, center_j,
                   axes: str = DEFAULT_ALIGNMENT_AXES) -> float:
    """Squared distance between the transformed centers on the selected axes."""
    sel = _axis_selector(axes)
    o_i = _posed(center_i, pose_i)[0]
    o_j = _posed(center_j, pose_j)[0]
    diff = (o_i - o_j)[sel]
    return float(np.dot(diff, diff))


def symmetry_loss(members, poses: PoseSet, centers: Mapping[int, np.ndarray],
                  axis: str = DEFAULT_SYMMETRY_AXIS) -> float:
    """
    ``members = (i, j, k)`` with ``k`` the reference: the midpoint of ``i``
    and ``j`` should sit on ``k`` along ``axis``.

    :raises DuplicateMembers: The three ids are not distinct.
    """
    i, j, k = members
    if len({i, j, k}) != 3:
        raise DuplicateMembers(f"symmetry members must be distinct, got {tuple(members)}")
    sel = _axis_selector(axis)
    mid = 0.5 * (_moved_center(poses, centers, i) + _moved_center(poses, centers, j))
    diff = (mid - _moved_center(poses, centers, k))[sel]
    return float(np.dot(diff, diff))


def equidistance_loss(members, poses: PoseSet, centers: Mapping[int, np.ndarray],
                      axis=DEFAULT_EQUIDISTANCE_AXIS) -> float:
    """
    ``members = (i, j, k)``: ``i`` and ``j`` should have the same signed
    offset from reference ``k`` along the unit ``axis``. Mirrored placements
    (equal distance on opposite sides) are not zero-loss.

    :raises NonUnitAxis: ``|axis|`` differs from 1 by more than 1e-9.
    """
    a = np.asarray(axis, dtype=np.float64).reshape(3)
    if abs(float(np.linalg.norm(a)) - 1.0) > UNIT_AXIS_TOL:
        raise NonUnitAxis(f"equidistance axis must have unit norm, got {a.tolist()}")
    i, j, k = members
    o_k = _moved_center(poses, centers, k)
    value = float(a @ (_moved_center(poses, centers, i) - o_k)) - float(a @ (_moved_center(poses, centers, j) - o_k))
    return value * value


# --- Scene Energy ---

class EdgeEnergy(NamedTuple):
    ordinal: int
    relation: str
    value: float


@dataclass(frozen=True)
class EnergyBreakdown:
    total: float
    per_edge: tuple = ()


class EnergyModel:
    """
    Everything :py:func:`total_energy` needs that does not depend on poses:
    instance centers, contact surface samples and resolved edge constants.
    Poses map the context's current world geometry.
    """

    def __init__(self, context: SpatialContext, config: OptimizerConfig = None):
        self.context = context
        self.config = config or OptimizerConfig()
        self.centers = {}
        for label in context.graph.nodes:
            if instance_mask(context, label).any() or label in context.meshes:
                self.centers[label] = instance_center(context, label)
        self._samples = {}

    def samples(self, label: int) -> np.ndarray:
        """World-space contact samples of a meshed instance (seeded per instance)."""
        if label not in self._samples:
            mesh = self.context.meshes.get(label)
            if mesh is None:
                raise MissingMesh(f"contact edge references instance {label} without a mesh")
            if mesh.triangle_areas().sum() > 0:
                local = sample_surface(mesh, self.config.contact_samples, self.config.seed + label)
            else:
                local = np.asarray(mesh.vertices)
            pose = self.context.poses.get(label)
            self._samples[label] = np.ascontiguousarray(local if pose is None else pose.apply(local))
        return self._samples[label]

    def default_clearance(self, label: int) -> float:
        """Half the instance's largest AABB extent."""
        mask = instance_mask(self.context, label)
        if mask.any():
            box = AABB.of(self.context.cloud.positions[mask])
        else:
            mesh = self.context.meshes[label]
            pose = self.context.poses.get(label, SimilarityTransform.identity())
            box = AABB.of(pose.apply(mesh.vertices))
        return max(0.5 * float(np.max(box.extent)), 1e-9)

    def edge_loss(self, edge, poses: PoseSet) -> float:
        p = edge.params
        m = edge.members
        if edge.relation == "contact":
            eps = DEFAULT_CONTACT_EPSILON if p.epsilon is None else p.epsilon
            return contact_loss(self.samples(m[0]), self.samples(m[1]), poses[m[0]], poses[m[1]],
                                eps, self.config.soft_min_temperature)
        if edge.relation == "clearance":
            d_min = self.default_clearance(m[0]) if p.clearance_radius is None else p.clearance_radius
            return clearance_loss(poses, self.centers, m[0], d_min)
        if edge.relation == "alignment":
            return alignment_loss(poses[m[0]], poses[m[1]], self.centers[m[0]], self.centers[m[1]],
                                  p.axes or DEFAULT_ALIGNMENT_AXES)
        if edge.relation == "symmetry":
            return symmetry_loss(m, poses, self.centers, p.axes or DEFAULT_SYMMETRY_AXIS)
        return equidistance_loss(m, poses, self.centers,
                                 DEFAULT_EQUIDISTANCE_AXIS if p.axis is None else p.axis)

    def evaluate(self, poses: PoseSet) -> EnergyBreakdown:
        """
        :raises MissingPose: An edge member has no pose.
        :raises MissingMesh: A contact member has no mesh.
        """
        terms = []
        for ordinal, edge in enumerate(self.context.graph.edges):
            for member in edge.members:
                if member not in poses:
                    raise MissingPose(f"edge {ordinal} ({edge.relation}) member {member} has no pose")
                if member not in self.centers:
                    raise UnknownInstance(member, f"edge {ordinal} member {member} has no geometry")
            terms.append(EdgeEnergy(ordinal, edge.relation, edge.weight * self.edge_loss(edge, poses)))
        return EnergyBreakdown(float(sum(t.value for t in terms)), tuple(terms))


def identity_poses(context: SpatialContext) -> dict:
    """Identity pose for every node (the current state)."""
    return {label: SimilarityTransform.identity() for label in context.graph.nodes}


def total_energy(context: SpatialContext, poses: PoseSet, config: OptimizerConfig = None) -> EnergyBreakdown:
    """``sum_e weight_e * L_e`` with every term reported."""
    return EnergyModel(context, config).evaluate(poses)


# --- Optimizer ---

class TraceEntry(NamedTuple):
    iteration: int
    total_energy: float
    step_size: float
    accepted: bool


@dataclass
class OptimizationTrace:
    """Energy per iteration; entry 0 is the starting energy."""

    entries: list = field(default_factory=list)
    reason: str = ""

    @property
    def iterations(self) -> int:
        return sum(1 for e in self.entries if e.iteration > 0)

    @property
    def energies(self) -> list:
        return [e.total_energy for e in self.entries]

    def write_csv(self, path):
        try:
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(TraceEntry._fields)
                for e in self.entries:
                    writer.writerow([e.iteration, repr(e.total_energy), repr(e.step_size),
                                     "true" if e.accepted else "false"])
        except OSError as exc:
            raise IoError(f"cannot write trace {path}: {exc}") from exc


def movable_instances(context: SpatialContext) -> list:
    """Edge members that are not ``fixed``, in id order."""
    labels = {m for e in context.graph.edges for m in e.members if m in context.graph}
    return sorted(v for v in labels if not context.graph.nodes[v].fixed)


class _PoseParameters:
    """Maps a flat parameter vector to per-instance poses about each AABB center."""

    def __init__(self, labels, centers, config: OptimizerConfig):
        self.labels = labels
        self.centers = centers
        self.axes = [AXIS_INDEX[a] for a in "xyz" if a in config.translation_axes]
        self.rot_dofs = {"yaw": 1, "full": 3, "none": 0}[config.rotation_dofs]
        self.block = len(self.axes) + self.rot_dofs
        self.size = self.block * len(labels)

    def pose(self, x: np.ndarray, i: int) -> SimilarityTransform:
        chunk = x[i * self.block:(i + 1) * self.block]
        offset = np.zeros(3)
        offset[self.axes] = chunk[:len(self.axes)]
        rot = chunk[len(self.axes):]
        if self.rot_dofs == 1:
            rotation = yaw_matrix(float(rot[0]))
        elif self.rot_dofs == 3:
            rotation = rotvec_matrix(rot)
        else:
            rotation = np.eye(3)
        c = self.centers[self.labels[i]]
        return SimilarityTransform(1.0, rotation, c + offset - rotation @ c)

    def poses(self, x: np.ndarray, base: dict) -> dict:
        result = dict(base)
        for i, label in enumerate(self.labels):
            result[label] = self.pose(x, i)
        return result


def optimize_poses(context: SpatialContext, config: OptimizerConfig = None) -> tuple:
    """
    Gradient descent on the pose parameters of all movable instances
    (translation on ``translation_axes`` plus yaw or axis-angle rotation
    about the instance center). Gradients are central differences; each
    iteration backtracks from ``step_size`` by halving until the energy
    strictly drops. Stops on a small gradient, the iteration cap or when no
    step improves.

    :returns: ``(context, OptimizationTrace)`` with the instances moved.
    :raises NonFinite: Energy or gradient became NaN/inf.
    """
    config = config or OptimizerConfig()
    model = EnergyModel(context, config)
    base = identity_poses(context)
    labels = [v for v in movable_instances(context) if v in model.centers]
    params = _PoseParameters(labels, model.centers, config)

    def energy(x):
        value = model.evaluate(params.poses(x, base)).total
        if not np.isfinite(value):
            raise NonFinite(f"energy became {value}")
        return value

    x = np.zeros(params.size)
    current = energy(x)
    trace = OptimizationTrace([TraceEntry(0, current, 0.0, True)])
    if not context.graph.edges or params.size == 0:
        trace.reason = "nothing to optimize"
        return context, trace

    h = config.fd_step
    trace.reason = "max iterations"
    for iteration in range(1, config.max_iterations + 1):
        grad = np.zeros(params.size)
        for k in range(params.size):
            step = np.zeros(params.size)
            step[k] = h
            grad[k] = (energy(x + step) - energy(x - step)) / (2.0 * h)
        if not np.all(np.isfinite(grad)):
            raise NonFinite("gradient is not finite")
        if np.linalg.norm(grad) < config.grad_tolerance:
            trace.reason = "gradient tolerance"
            break

        step_size = config.step_size
        accepted = False
        for _ in range(config.max_backtracks):
            candidate = x - step_size * grad
            value = energy(candidate)
            if value < current:
                x, current, accepted = candidate, value, True
                break
            step_size *= 0.5
        trace.entries.append(TraceEntry(iteration, current, step_size, accepted))
        logger.debug("iteration %d: energy %.9g step %.3g accepted %s", iteration, current,
                     step_size, accepted)
        if not accepted:
            trace.reason = "no improvement"
            break

    result = context
    for i, label in enumerate(labels):
        result = transform_instance(result, label, params.pose(x, i))
    logger.info("optimizer stopped (%s) after %d iteration(s): energy %.6g -> %.6g", trace.reason,
                trace.iterations, trace.entries[0].total_energy, current)
    return result, trace

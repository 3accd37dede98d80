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
# PySpatialCtx is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with PySpatialCtx. If not, see <http://www.gnu.org/licenses/>.
#

"""
The spatial context: scene portrait, labeled point cloud and scene hypergraph,
plus per-instance poses and meshes.

Every value here is immutable. Updates (``replace_instance``,
``transform_instance``, ...) return a new :py:class:`SpatialContext` and leave
the input untouched, so contexts can be snapshotted and shared between
threads freely.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterator, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .config import DEFAULT_RELATION_WEIGHTS, RELATION_ARITY, RELATIONS
from .errors import (AmbiguousName, DuplicateInstance, EmptyInstance, LabelMismatch,
                     UnknownInstance, UnknownEdge, UnknownRelation, ValidationFailed)
from .geometry import AABB, MeshInstance, SimilarityTransform, _frozen_array, as_points

logger = logging.getLogger(__name__)

BACKGROUND = 0

# PoseSet: instance id -> world pose. Rigid poses are the scale == 1 case.
PoseSet = Mapping[int, SimilarityTransform]


# --- Labeled Point Cloud ---

class LabeledPoint(NamedTuple):
    position: np.ndarray
    color: np.ndarray
    label: int


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    """
    Points with position, RGB color in ``[0, 1]`` and instance label
    (0 = background). Stored as parallel read-only arrays; iteration order is
    the storage order.

    :param positions: (N, 3) float64 coordinates in scene units.
    :param colors: (N, 3) float64 RGB channels in ``[0, 1]``.
    :param labels: (N,) non-negative instance ids.
    :param unit_scale: Meters per scene unit.
    """

    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    unit_scale: float = 1.0

    def __post_init__(self):
        pos = as_points(self.positions)
        n = len(pos)
        colors = np.full((n, 3), 0.5) if self.colors is None else np.asarray(self.colors, dtype=np.float64)
        labels = np.zeros(n, dtype=np.int64) if self.labels is None else np.asarray(self.labels)
        colors = colors.reshape(-1, 3) if colors.size else np.zeros((0, 3))
        labels = labels.reshape(-1).astype(np.int64)
        if len(colors) != n or len(labels) != n:
            raise ValueError("positions, colors and labels must have the same length")
        if n and (np.nanmin(colors) < 0.0 or np.nanmax(colors) > 1.0):
            raise ValueError("color channels must lie in [0, 1]")
        if n and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if not self.unit_scale > 0:
            raise ValueError("unit_scale must be positive")
        object.__setattr__(self, "positions", _frozen_array(pos))
        object.__setattr__(self, "colors", _frozen_array(colors))
        object.__setattr__(self, "labels", _frozen_array(labels, dtype=np.int64))
        object.__setattr__(self, "unit_scale", float(self.unit_scale))

    @classmethod
    def from_points(cls, points: Sequence[LabeledPoint], unit_scale: float = 1.0) -> "LabeledPointCloud":
        if not points:
            return cls.empty(unit_scale)
        return cls(np.array([p.position for p in points]),
                   np.array([p.color for p in points]),
                   np.array([p.label for p in points]), unit_scale)

    @classmethod
    def empty(cls, unit_scale: float = 1.0) -> "LabeledPointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64), unit_scale)

    def __len__(self):
        return len(self.labels)

    def __iter__(self) -> Iterator[LabeledPoint]:
        for i in range(len(self)):
            yield LabeledPoint(self.positions[i], self.colors[i], int(self.labels[i]))

    def select(self, mask) -> "LabeledPointCloud":
        """Sub-cloud of the masked (or indexed) points, order preserved."""
        return LabeledPointCloud(self.positions[mask], self.colors[mask], self.labels[mask], self.unit_scale)

    def concat(self, other: "LabeledPointCloud") -> "LabeledPointCloud":
        return LabeledPointCloud(np.vstack([self.positions, other.positions]),
                                 np.vstack([self.colors, other.colors]),
                                 np.concatenate([self.labels, other.labels]), self.unit_scale)

    def with_positions(self, positions) -> "LabeledPointCloud":
        return LabeledPointCloud(positions, self.colors, self.labels, self.unit_scale)

    def relabeled(self, label: int) -> "LabeledPointCloud":
        return LabeledPointCloud(self.positions, self.colors, np.full(len(self), label), self.unit_scale)

    def instance_labels(self) -> list:
        """Sorted distinct non-background labels."""
        return sorted(int(v) for v in np.unique(self.labels) if v != BACKGROUND)

    def bitwise_equal(self, other: "LabeledPointCloud") -> bool:
        return (np.array_equal(self.positions, other.positions)
                and np.array_equal(self.colors, other.colors)
                and np.array_equal(self.labels, other.labels))

    def _sorted_rows(self) -> np.ndarray:
        rows = np.column_stack([self.positions, self.colors, self.labels.astype(np.float64)])
        return rows[np.lexsort(rows.T[::-1])] if len(rows) else rows

    def multiset_equal(self, other: "LabeledPointCloud") -> bool:
        """Equal as multisets of (position, color, label) rows."""
        return len(self) == len(other) and np.array_equal(self._sorted_rows(), other._sorted_rows())


# --- Portrait / Hypergraph ---

@dataclass(frozen=True)
class ScenePortrait:
    """High-level blueprint: free text plus references to portrait images."""

    description: str = ""
    image_refs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "image_refs", tuple(str(p) for p in self.image_refs))


@dataclass(frozen=True)
class RelationParams:
    """
    Relation-specific constants supplied by the agent.

    :param epsilon: Soft contact margin (contact).
    :param clearance_radius: ``d_min(v)`` (clearance).
    :param axes: Subset of ``"xyz"`` selecting axes (alignment, symmetry).
    :param axis: Unit comparison axis (equidistance).
    """

    epsilon: Optional[float] = None
    clearance_radius: Optional[float] = None
    axes: Optional[str] = None
    axis: Optional[tuple] = None

    def __post_init__(self):
        if self.epsilon is not None:
            if not float(self.epsilon) > 0:
                raise ValueError("eps must be positive")
            object.__setattr__(self, "epsilon", float(self.epsilon))
        if self.clearance_radius is not None:
            if not float(self.clearance_radius) > 0:
                raise ValueError("dmin must be positive")
            object.__setattr__(self, "clearance_radius", float(self.clearance_radius))
        if self.axes is not None:
            axes = "".join(a for a in "xyz" if a in self.axes)
            if not axes or set(self.axes) - set("xyz") or len(set(self.axes)) != len(self.axes):
                raise ValueError(f"axes must be a non-empty subset of xyz, got {self.axes!r}")
            object.__setattr__(self, "axes", axes)
        if self.axis is not None:
            axis = tuple(float(c) for c in self.axis)
            if len(axis) != 3 or abs(float(np.linalg.norm(axis)) - 1.0) > 1e-9:
                raise ValueError(f"axis must be a unit 3-vector, got {self.axis!r}")
            object.__setattr__(self, "axis", axis)


@dataclass(frozen=True)
class HyperEdge:
    """
    Typed relation over 1-3 instances.

    Members are kept as given so that :py:func:`validate` can report arity
    problems; for symmetry/equidistance the third member is the reference.
    A missing weight takes the relation's default.
    """

    relation: str
    members: tuple
    weight: Optional[float] = None
    params: RelationParams = field(default_factory=RelationParams)

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise UnknownRelation(f"unknown relation {self.relation!r}")
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))
        weight = DEFAULT_RELATION_WEIGHTS[self.relation] if self.weight is None else float(self.weight)
        if not weight >= 0:
            raise ValueError("edge weight must be non-negative")
        object.__setattr__(self, "weight", weight)

    @property
    def arity(self) -> int:
        return RELATION_ARITY[self.relation]


@dataclass(frozen=True)
class SceneNode:
    """
    Hypergraph node.

    :param planned: Instance has no points yet (to be added by a later stage).
    :param fixed: Instance is never moved by the ergonomic optimizer.
    """

    id: int
    name: str = ""
    planned: bool = False
    fixed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "id", int(self.id))
        if self.id <= BACKGROUND:
            raise ValueError("node ids must be positive (0 is the background label)")


class SceneHypergraph:
    """
    Scene hypergraph ``G = (V, E)``: nodes keyed by instance id and an
    ordered list of hyperedges. Immutable; the ``with_*`` methods return
    modified copies.
    """

    def __init__(self, nodes: Sequence[SceneNode] = (), edges: Sequence[HyperEdge] = ()):
        table = {}
        for node in nodes:
            if node.id in table:
                raise DuplicateInstance(f"node {node.id} declared twice")
            table[node.id] = node
        self._nodes = MappingProxyType(dict(sorted(table.items())))
        self._edges = tuple(edges)

    @property
    def nodes(self) -> Mapping[int, SceneNode]:
        return self._nodes

    @property
    def edges(self) -> tuple:
        return self._edges

    def node_ids(self) -> list:
        return list(self._nodes)

    def __contains__(self, label) -> bool:
        return label in self._nodes

    def with_node(self, node: SceneNode) -> "SceneHypergraph":
        return SceneHypergraph(list(self._nodes.values()) + [node], self._edges)

    def with_edge(self, edge: HyperEdge) -> "SceneHypergraph":
        return SceneHypergraph(self._nodes.values(), self._edges + (edge,))

    def without_edge(self, ordinal: int) -> "SceneHypergraph":
        if not 0 <= ordinal < len(self._edges):
            raise UnknownEdge(f"edge ordinal {ordinal} out of range (0..{len(self._edges) - 1})")
        return SceneHypergraph(self._nodes.values(), self._edges[:ordinal] + self._edges[ordinal + 1:])

    def edges_of(self, label: int) -> list:
        return [e for e in self._edges if label in e.members]

    def __eq__(self, other):
        return (isinstance(other, SceneHypergraph) and dict(self._nodes) == dict(other._nodes)
                and self._edges == other._edges)

    def __repr__(self):
        return f"SceneHypergraph({len(self._nodes)} nodes, {len(self._edges)} edges)"


# --- Spatial Context ---

@dataclass(frozen=True, eq=False)
class SpatialContext:
    """
    The complete spatial context ``C = (S, P, G)`` plus per-instance world
    poses (mesh local frame -> world) and meshes in their local frames.
    """

    portrait: ScenePortrait
    cloud: LabeledPointCloud
    graph: SceneHypergraph
    poses: Mapping[int, SimilarityTransform] = field(default_factory=dict)
    meshes: Mapping[int, MeshInstance] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "poses", MappingProxyType(dict(sorted(self.poses.items()))))
        object.__setattr__(self, "meshes", MappingProxyType(dict(sorted(self.meshes.items()))))

    def replace(self, **changes) -> "SpatialContext":
        return dataclasses.replace(self, **changes)

    def with_poses(self, poses: Mapping[int, SimilarityTransform]) -> "SpatialContext":
        merged = dict(self.poses)
        merged.update(poses)
        return self.replace(poses=merged)


# --- Validation ---

@dataclass(frozen=True)
class Finding:
    """One violated invariant."""

    kind: str
    message: str
    subject: object = None

    def __str__(self):
        return f"{self.kind}: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple = ()

    @property
    def ok(self) -> bool:
        return not self.findings

    def kinds(self) -> list:
        return [f.kind for f in self.findings]

    def __str__(self):
        return "OK" if self.ok else "\n".join(str(f) for f in self.findings)


def validate(context: SpatialContext) -> ValidationReport:
    """
    Lists every violated context invariant. Never raises; an empty report
    means the context is well-formed.
    """
    findings = []
    try:
        _collect_findings(context, findings)
    except Exception as exc:  # malformed objects handed in from outside
        findings.append(Finding("Malformed", f"{type(exc).__name__}: {exc}"))
    return ValidationReport(tuple(findings))


def _collect_findings(context: SpatialContext, findings: list):
    graph, cloud = context.graph, context.cloud
    portrait = context.portrait
    if not portrait.description.strip() and not portrait.image_refs:
        findings.append(Finding("EmptyPortrait", "portrait has neither description nor images"))

    if len(cloud):
        bad = ~np.all(np.isfinite(cloud.positions), axis=1)
        if bad.any():
            findings.append(Finding("NonFiniteCoordinate",
                                    f"{int(bad.sum())} point(s) have NaN/inf coordinates",
                                    np.flatnonzero(bad).tolist()))

    present = set(cloud.instance_labels())
    for node in graph.nodes.values():
        if node.id not in present and not node.planned and node.id not in context.meshes:
            findings.append(Finding("UnplacedNode", f"node {node.id} ({node.name!r}) has no points "
                                    "and is not planned", node.id))

    for ordinal, edge in enumerate(graph.edges):
        if len(edge.members) != edge.arity:
            findings.append(Finding("ArityMismatch", f"edge {ordinal} ({edge.relation}) has "
                                    f"{len(edge.members)} members, needs {edge.arity}", ordinal))
        for member in edge.members:
            if member not in graph:
                findings.append(Finding("DanglingMember", f"edge {ordinal} ({edge.relation}) "
                                        f"references missing node {member}", ordinal))
        if len(set(edge.members)) != len(edge.members):
            findings.append(Finding("DuplicateMembers", f"edge {ordinal} ({edge.relation}) repeats "
                                    "a member", ordinal))

    for label in context.poses:
        if label not in graph:
            findings.append(Finding("OrphanPose", f"pose for missing node {label}", label))
    for label, mesh in context.meshes.items():
        if label not in graph:
            findings.append(Finding("OrphanMesh", f"mesh for missing node {label}", label))
        elif mesh.label != label:
            findings.append(Finding("MeshLabelMismatch", f"mesh stored under {label} carries "
                                    f"label {mesh.label}", label))


def require_valid(context: SpatialContext) -> SpatialContext:
    """Returns the context unchanged or raises :py:class:`ValidationFailed`."""
    report = validate(context)
    if not report.ok:
        raise ValidationFailed(report)
    return context


# --- Instance Operations ---

def _require_node(context: SpatialContext, label: int) -> int:
    label = int(label)
    if label not in context.graph:
        raise UnknownInstance(label)
    return label


def instance_mask(context: SpatialContext, label: int) -> np.ndarray:
    return context.cloud.labels == _require_node(context, label)


def extract_instance(context: SpatialContext, label: int) -> LabeledPointCloud:
    """
    The instance segment ``P_v = {p | l = v}``, in cloud order.

    :raises UnknownInstance: ``label`` is not a hypergraph node.
    :raises EmptyInstance: The node has no points.
    """
    mask = instance_mask(context, label)
    if not mask.any():
        raise EmptyInstance(int(label))
    return context.cloud.select(mask)


def replace_instance(context: SpatialContext, label: int,
                     replacement: LabeledPointCloud) -> SpatialContext:
    """
    ``P <- (P \\ P_v) ∪ P̂_v``: drops the instance's points and appends the
    replacement. Untouched points keep their relative order and values.

    :raises LabelMismatch: A replacement point carries another label.
    """
    mask = instance_mask(context, label)
    if len(replacement) and np.any(replacement.labels != int(label)):
        wrong = sorted(set(int(v) for v in replacement.labels) - {int(label)})
        raise LabelMismatch(f"replacement for instance {label} carries labels {wrong}")
    kept = context.cloud.select(~mask)
    logger.debug("replace instance %s: %d -> %d points", label, int(mask.sum()), len(replacement))
    return context.replace(cloud=kept.concat(replacement))


def instance_aabb(context: SpatialContext, label: int) -> AABB:
    """Componentwise min/max over the instance's points."""
    return AABB.of(extract_instance(context, label).positions)


def instance_center(context: SpatialContext, label: int) -> np.ndarray:
    """
    World AABB center of an instance: from its cloud segment, or from its
    posed mesh vertices when the segment is empty.
    """
    mask = instance_mask(context, label)
    if mask.any():
        return AABB.of(context.cloud.positions[mask]).center
    mesh = context.meshes.get(int(label))
    if mesh is None:
        raise EmptyInstance(int(label))
    pose = context.poses.get(int(label), SimilarityTransform.identity())
    return AABB.of(pose.apply(mesh.vertices)).center


def transform_instance(context: SpatialContext, label: int,
                       transform: SimilarityTransform) -> SpatialContext:
    """
    Applies a world-space similarity to the instance's points and composes it
    into the instance pose (creating the pose when the instance has a mesh).
    All other points are left bitwise unchanged.
    """
    mask = instance_mask(context, label)
    positions = np.array(context.cloud.positions)
    positions[mask] = transform.apply(positions[mask])
    cloud = context.cloud.with_positions(positions)
    label = int(label)
    poses = dict(context.poses)
    if label in poses:
        poses[label] = transform.compose(poses[label])
    elif label in context.meshes:
        poses[label] = transform
    return context.replace(cloud=cloud, poses=poses)


def add_instance(context: SpatialContext, node: SceneNode,
                 points: Optional[LabeledPointCloud] = None) -> SpatialContext:
    """
    Adds a node, optionally with its labeled points appended to the cloud.

    :raises DuplicateInstance: The id is already a node.
    :raises LabelMismatch: ``points`` carry another label.
    :raises ValidationFailed: No points given and the node is not planned.
    """
    if node.id in context.graph:
        raise DuplicateInstance(f"node {node.id} already exists")
    cloud = context.cloud
    if points is not None and len(points):
        if np.any(points.labels != node.id):
            raise LabelMismatch(f"points for new instance {node.id} carry other labels")
        cloud = cloud.concat(points)
    result = context.replace(cloud=cloud, graph=context.graph.with_node(node))
    return require_valid(result)


def resolve_instance(context: SpatialContext, name_or_id) -> int:
    """
    Resolves an instance by id (int or digit string) or by unique
    case-insensitive name.

    :raises UnknownInstance: Nothing matches.
    :raises AmbiguousName: Several nodes share the name.
    """
    if isinstance(name_or_id, (int, np.integer)) or str(name_or_id).strip().isdigit():
        return _require_node(context, int(name_or_id))
    wanted = str(name_or_id).strip().lower()
    matches = [n.id for n in context.graph.nodes.values() if n.name.lower() == wanted]
    if not matches:
        raise UnknownInstance(name_or_id)
    if len(matches) > 1:
        raise AmbiguousName(f"name {name_or_id!r} matches instances {matches}")
    return matches[0]


# --- Multi-View Label Merging ---

def merge_labelings(cloud_a: LabeledPointCloud, names_a: Mapping[int, str],
                    cloud_b: LabeledPointCloud, names_b: Mapping[int, str],
                    iou_threshold: float = 0.5) -> tuple:
    """
    Merges two independently labeled clouds. An instance of ``b`` joins an
    instance of ``a`` when their AABB IoU exceeds ``iou_threshold`` and the
    category names are identical; otherwise it gets a fresh id.

    :returns: ``(merged_cloud, names)`` with ``names`` mapping id -> category.
    """
    boxes_a = {lab: AABB.of(cloud_a.positions[cloud_a.labels == lab]) for lab in cloud_a.instance_labels()}
    names = {int(k): v for k, v in names_a.items()}
    next_id = max([0] + list(names) + list(boxes_a)) + 1
    mapping = {BACKGROUND: BACKGROUND}
    for lab in cloud_b.instance_labels():
        box = AABB.of(cloud_b.positions[cloud_b.labels == lab])
        name = names_b.get(lab, "")
        best, best_iou = None, iou_threshold
        for cand, cand_box in boxes_a.items():
            if names.get(cand) != name:
                continue
            iou = box.iou(cand_box)
            if iou > best_iou:
                best, best_iou = cand, iou
        if best is None:
            best = next_id
            next_id += 1
            names[best] = name
        mapping[lab] = best
        logger.debug("merge: view-b instance %d (%s) -> %d", lab, name, best)
    relabeled = np.array([mapping[int(v)] for v in cloud_b.labels], dtype=np.int64)
    merged_b = LabeledPointCloud(cloud_b.positions, cloud_b.colors, relabeled, cloud_b.unit_scale)
    return cloud_a.concat(merged_b), names

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
Persistence: labeled PLY clouds and context bundles.

A bundle is a directory::

    manifest.json   {format_version, unit_scale, created_by}
    cloud.ply       labeled point cloud
    graph.txt       scene hypergraph (protocol grammar)
    portrait.txt    description + "image: <path>" lines
    layout.json     optional instance poses
    meshes/<id>.obj optional meshes in their local frames
    cameras.json    optional input-view cameras
"""

import json
import logging
import os

import numpy as np

from . import __version__
from .config import FORMAT_VERSION, SUPPORTED_FORMAT_VERSIONS
from .context import LabeledPointCloud, SpatialContext
from .errors import IoError, ParseError, VersionMismatch
from .geometry import load_obj, save_obj
from .layout import read_layout_json, write_layout_json
from .projection import Camera
from .protocol import format_hypergraph, format_portrait, parse_hypergraph, parse_portrait

logger = logging.getLogger(__name__)

PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
PLY_FORMATS = {"ascii": None, "binary_little_endian": "<", "binary_big_endian": ">"}
REQUIRED_PROPERTIES = ("x", "y", "z", "red", "green", "blue", "instance")

CLOUD_VERTEX_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
    ("instance", "<u4"),
])

MANIFEST = "manifest.json"
CLOUD = "cloud.ply"
GRAPH = "graph.txt"
PORTRAIT = "portrait.txt"
LAYOUT = "layout.json"
MESHES = "meshes"
CAMERAS = "cameras.json"


# --- PLY ---

def _read_header(fh) -> tuple:
    """:returns: ``(format, elements)``; elements are ``(name, count, [(type, name) | None])``."""
    if fh.readline().strip() != b"ply":
        raise ParseError("not a PLY file (missing 'ply' magic)", 1, 1)
    fmt, elements, lineno = None, [], 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise ParseError("PLY header has no end_header", lineno, 1)
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "format":
            if len(parts) < 3 or parts[1] not in PLY_FORMATS or parts[2] != "1.0":
                raise ParseError(f"unsupported PLY format {' '.join(parts[1:])!r}", lineno, 8)
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3 or not parts[2].isdigit():
                raise ParseError("malformed element line", lineno, 1)
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element", lineno, 1)
            if parts[1] == "list":
                elements[-1][2].append(None)
            elif len(parts) == 3 and parts[1] in PLY_TYPES:
                elements[-1][2].append((PLY_TYPES[parts[1]], parts[2]))
            else:
                raise ParseError(f"unsupported property {' '.join(parts[1:])!r}", lineno, 10)
        else:
            raise ParseError(f"unknown header keyword {parts[0]!r}", lineno, 1)
    if fmt is None:
        raise ParseError("PLY header has no format line")
    return fmt, elements


def _vertex_element(elements, binary: bool) -> tuple:
    """
    Vertex element, plus what precedes it: a byte count (binary) or a row
    count (ascii).
    """
    skipped = 0
    for name, count, props in elements:
        if name == "vertex":
            return count, props, skipped
        if not binary:
            skipped += count
            continue
        if any(p is None for p in props):
            raise ParseError(f"list properties in element {name!r} before the vertices are unsupported")
        skipped += count * sum(np.dtype(t).itemsize for t, _ in props)
    raise ParseError("PLY file has no vertex element")


def load_cloud(path) -> LabeledPointCloud:
    """
    Reads a labeled PLY cloud (ascii or binary). Extra vertex properties
    and trailing elements are ignored; uchar colors map to ``[0, 1]`` by /255.

    :raises ParseError: Malformed PLY or a missing vertex property.
    :raises IoError: The file cannot be read.
    """
    try:
        with open(path, "rb") as fh:
            fmt, elements = _read_header(fh)
            body = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    order = PLY_FORMATS[fmt]
    count, props, skipped = _vertex_element(elements, order is not None)
    if any(p is None for p in props):
        raise ParseError("list properties in the vertex element are unsupported")
    names = [name for _, name in props]
    for required in REQUIRED_PROPERTIES:
        if required not in names:
            raise ParseError(f"PLY vertex element is missing property {required!r}")

    if order is None:
        rows = body.decode("ascii", errors="replace").split("\n")
        tokens = [r.split() for r in rows if r.strip()][skipped:]
        if len(tokens) < count:
            raise ParseError(f"PLY declares {count} vertices, found {len(tokens)}")
        dtype = np.dtype([(name, t) for t, name in props])
        data = np.zeros(count, dtype=dtype)
        for i in range(count):
            row = tokens[i]
            if len(row) < len(props):
                raise ParseError(f"vertex {i} has {len(row)} values, expected {len(props)}")
            for (t, name), token in zip(props, row):
                try:
                    data[name][i] = float(token) if t.startswith("f") else int(token)
                except ValueError:
                    raise ParseError(f"vertex {i}: bad {name} value {token!r}") from None
    else:
        dtype = np.dtype([(name, order + t) for t, name in props])
        need = skipped + count * dtype.itemsize
        if len(body) < need:
            raise ParseError(f"PLY body holds {len(body)} bytes, {need} needed")
        data = np.frombuffer(body, dtype=dtype, count=count, offset=skipped)

    positions = np.column_stack([data["x"], data["y"], data["z"]]).astype(np.float64)
    colors = np.column_stack([data["red"], data["green"], data["blue"]]).astype(np.float64)
    if data.dtype["red"].kind in "iu":
        colors /= 255.0
    return LabeledPointCloud(positions, colors, data["instance"].astype(np.int64))


def save_cloud(cloud: LabeledPointCloud, path):
    """
    Writes binary little-endian PLY (float32 xyz, uchar rgb, uint32 instance).
    Colors are quantized to 1/255.
    """
    data = np.zeros(len(cloud), dtype=CLOUD_VERTEX_DTYPE)
    for k, axis in enumerate("xyz"):
        data[axis] = cloud.positions[:, k]
    rgb = np.clip(np.round(cloud.colors * 255.0), 0, 255).astype(np.uint8)
    for k, channel in enumerate(("red", "green", "blue")):
        data[channel] = rgb[:, k]
    data["instance"] = cloud.labels
    header = "\n".join([
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "property uint instance",
        "end_header",
    ]) + "\n"
    try:
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(data.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# --- Bundles ---

def _read_text(path) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def _write_text(path, text: str):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_manifest(bundle_dir) -> dict:
    """
    :raises VersionMismatch: Unsupported ``format_version``.
    """
    path = os.path.join(str(bundle_dir), MANIFEST)
    try:
        manifest = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{MANIFEST}: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(manifest, dict):
        raise ParseError(f"{MANIFEST} must hold a JSON object")
    version = manifest.get("format_version")
    if version not in SUPPORTED_FORMAT_VERSIONS:
        raise VersionMismatch(f"bundle format_version {version!r} is not supported "
                              f"(supported: {list(SUPPORTED_FORMAT_VERSIONS)})")
    return manifest


def _mesh_files(mesh_dir) -> dict:
    found = {}
    if not os.path.isdir(mesh_dir):
        return found
    for entry in sorted(os.listdir(mesh_dir)):
        stem, ext = os.path.splitext(entry)
        if ext.lower() != ".obj":
            continue
        if not stem.isdigit():
            logger.warning("ignoring mesh file %s (stem is not an instance id)", entry)
            continue
        found[int(stem)] = os.path.join(mesh_dir, entry)
    return found


def load_meshes(mesh_dir) -> dict:
    """Every ``<id>.obj`` in a directory, keyed by instance id."""
    return {label: load_obj(path, label) for label, path in _mesh_files(str(mesh_dir)).items()}


def load_bundle(bundle_dir) -> SpatialContext:
    """
    Loads a context bundle. The context is not validated here; see
    :py:func:`pyspatialctx.context.validate`.

    :raises VersionMismatch: Unsupported manifest version.
    :raises ParseError: A member file does not parse.
    :raises IoError: A required file is missing or unreadable.
    """
    bundle_dir = str(bundle_dir)
    manifest = read_manifest(bundle_dir)
    cloud = load_cloud(os.path.join(bundle_dir, CLOUD))
    unit_scale = float(manifest.get("unit_scale", 1.0))
    cloud = LabeledPointCloud(cloud.positions, cloud.colors, cloud.labels, unit_scale)
    graph = parse_hypergraph(_read_text(os.path.join(bundle_dir, GRAPH)))
    portrait_path = os.path.join(bundle_dir, PORTRAIT)
    portrait = parse_portrait(_read_text(portrait_path)) if os.path.exists(portrait_path) else parse_portrait("")
    layout_path = os.path.join(bundle_dir, LAYOUT)
    poses = read_layout_json(layout_path) if os.path.exists(layout_path) else {}
    meshes = load_meshes(os.path.join(bundle_dir, MESHES))
    logger.debug("loaded bundle %s: %d points, %d nodes, %d edges", bundle_dir, len(cloud),
                 len(graph.nodes), len(graph.edges))
    return SpatialContext(portrait, cloud, graph, poses, meshes)


def save_bundle(context: SpatialContext, bundle_dir, cameras=None):
    """
    Writes a bundle; identical contexts give byte-identical files. Stale
    ``layout.json`` and mesh files from an earlier save are removed.
    """
    bundle_dir = str(bundle_dir)
    try:
        os.makedirs(bundle_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {bundle_dir}: {exc}") from exc
    manifest = {
        "format_version": FORMAT_VERSION,
        "unit_scale": context.cloud.unit_scale,
        "created_by": f"pyspatialctx {__version__}",
    }
    _write_text(os.path.join(bundle_dir, MANIFEST), json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    save_cloud(context.cloud, os.path.join(bundle_dir, CLOUD))
    _write_text(os.path.join(bundle_dir, GRAPH), format_hypergraph(context.graph))
    _write_text(os.path.join(bundle_dir, PORTRAIT), format_portrait(context.portrait))

    layout_path = os.path.join(bundle_dir, LAYOUT)
    if context.poses:
        write_layout_json(context.poses, layout_path)
    elif os.path.exists(layout_path):
        os.remove(layout_path)

    mesh_dir = os.path.join(bundle_dir, MESHES)
    for label, path in _mesh_files(mesh_dir).items():
        if label not in context.meshes:
            os.remove(path)
    if context.meshes:
        os.makedirs(mesh_dir, exist_ok=True)
        for label, mesh in context.meshes.items():
            save_obj(mesh, os.path.join(mesh_dir, f"{label}.obj"))
    if cameras is not None:
        save_cameras(cameras, bundle_dir)


def load_cameras(bundle_dir) -> list:
    """Input-view cameras of a bundle (empty when it has no ``cameras.json``)."""
    path = os.path.join(str(bundle_dir), CAMERAS)
    if not os.path.exists(path):
        return []
    try:
        records = json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{CAMERAS}: {exc.msg}", exc.lineno, exc.colno) from exc
    if not isinstance(records, list):
        raise ParseError(f"{CAMERAS} must hold a JSON array")
    return [Camera.from_dict(r) for r in records]


def save_cameras(cameras, bundle_dir):
    _write_text(os.path.join(str(bundle_dir), CAMERAS),
                json.dumps([c.to_dict() for c in cameras], indent=2) + "\n")

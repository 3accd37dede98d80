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
PySpatialCtx: a spatial context engine.

A spatial context bundles a semantically labeled point cloud, a scene
hypergraph of spatial relations and a scene portrait. The package reads it
out as text and point maps, applies edit commands, plans a coarse layout by
aligning meshes to instance segments, optimizes poses against the
hypergraph's ergonomic losses and plans top-down paths.
"""

# scene_io stamps bundles with this; keep it above the submodule imports
__version__ = "0.1.0"

from .config import IcpParams, NavigationConfig, OptimizerConfig, RenderConfig
from .context import (HyperEdge, LabeledPointCloud, RelationParams, SceneHypergraph, SceneNode,
                      ScenePortrait, SpatialContext, validate)
from .errors import SpatialContextError
from .geometry import MeshInstance, SimilarityTransform
from .layout import plan_layout
from .ergonomics import optimize_poses
from .navigation import build_occupancy, plan_path
from .protocol import apply_edits, parse_edit_commands, run_session, serialize_readout
from .scene_io import load_bundle, save_bundle

__all__ = [
    "__version__",
    "IcpParams", "NavigationConfig", "OptimizerConfig", "RenderConfig",
    "HyperEdge", "LabeledPointCloud", "RelationParams", "SceneHypergraph", "SceneNode",
    "ScenePortrait", "SpatialContext", "validate",
    "SpatialContextError", "MeshInstance", "SimilarityTransform",
    "plan_layout", "optimize_poses", "build_occupancy", "plan_path",
    "apply_edits", "parse_edit_commands", "run_session", "serialize_readout",
    "load_bundle", "save_bundle",
]

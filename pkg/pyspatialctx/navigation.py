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
Top-down occupancy grids over the x/z plane and 8-connected A* paths
between instances.
"""

import heapq
import json
import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from PIL import Image
from scipy.ndimage import binary_dilation

from .config import NavigationConfig
from .context import BACKGROUND, SpatialContext, instance_center, resolve_instance
from .errors import EmptyCloud, GoalOccupied, IoError, NoPath, OutOfBounds, StartOccupied

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)

# (dx, dz, cost) for the 8 neighbours
NEIGHBOURS = (
    (1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0),
    (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2),
)

# --- Numba JIT-Compiled Binning Kernel ---

@njit(cache=True)
def _numba_bin_points(xs, zs, x0, z0, resolution, cells):
    nx, nz = cells.shape
    for i in range(xs.shape[0]):
        ix = int(np.floor((xs[i] - x0) / resolution))
        iz = int(np.floor((zs[i] - z0) / resolution))
        if ix >= 0 and ix < nx and iz >= 0 and iz < nz:
            cells[ix, iz] = True


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """
    :param origin: World ``(x, z)`` of the corner of cell ``(0, 0)``.
    :param resolution: Scene units per cell.
    :param cells: ``(nx, nz)`` booleans indexed ``[ix, iz]``; True = occupied.
    """

    origin: tuple
    resolution: float
    cells: np.ndarray

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive")
        cells = np.array(self.cells, dtype=bool)
        if cells.ndim != 2 or min(cells.shape) < 1:
            raise ValueError("occupancy grid needs at least one cell")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "resolution", float(self.resolution))

    @property
    def shape(self) -> tuple:
        return self.cells.shape

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.shape[0] and 0 <= cell[1] < self.shape[1]

    def world_to_cell(self, point) -> tuple:
        """
        :raises OutOfBounds: The point lies outside the grid.
        """
        ix = int(math.floor((float(point[0]) - self.origin[0]) / self.resolution))
        iz = int(math.floor((float(point[1]) - self.origin[1]) / self.resolution))
        if not self.in_bounds((ix, iz)):
            raise OutOfBounds(f"point ({point[0]}, {point[1]}) is outside the occupancy grid")
        return ix, iz

    def cell_to_world(self, cell) -> tuple:
        """World ``(x, z)`` of a cell center."""
        return (self.origin[0] + (cell[0] + 0.5) * self.resolution,
                self.origin[1] + (cell[1] + 0.5) * self.resolution)

    def occupied(self, cell) -> bool:
        return bool(self.cells[cell[0], cell[1]])

    def write_pgm(self, path):
        """Binary PGM: one row per z cell, occupied = 0, free = 255."""
        image = np.where(self.cells.T, 0, 255).astype(np.uint8)
        try:
            Image.fromarray(image, mode="L").save(path, format="PPM")
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc


def build_occupancy(context: SpatialContext, resolution: float = None, height_band: tuple = None,
                    inflate: float = None, config: NavigationConfig = None,
                    exclude=()) -> OccupancyGrid:
    """
    Bins non-background points inside the height band into x/z cells over
    the cloud's AABB, then dilates occupied cells by
    ``ceil(inflate / resolution)`` cells (square structuring element).

    :param height_band: ``(min_y, max_y)``; defaults to the configured
        fractions of the cloud's y-extent.
    :param exclude: Instance ids left out of the grid (typically the path
        endpoints, whose anchors lie inside their own footprint).
    :raises EmptyCloud: The cloud has no finite points.
    """
    config = config or NavigationConfig()
    resolution = config.resolution if resolution is None else float(resolution)
    inflate = config.inflate if inflate is None else float(inflate)
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    if inflate < 0:
        raise ValueError("inflate must be >= 0")

    cloud = context.cloud
    finite = np.all(np.isfinite(cloud.positions), axis=1) if len(cloud) else np.zeros(0, dtype=bool)
    if not finite.any():
        raise EmptyCloud("cannot build an occupancy grid from an empty cloud")
    pos = cloud.positions[finite]
    labels = cloud.labels[finite]
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    if height_band is None:
        f0, f1 = config.band_fractions
        height_band = (lo[1] + f0 * (hi[1] - lo[1]), lo[1] + f1 * (hi[1] - lo[1]))
    min_y, max_y = float(height_band[0]), float(height_band[1])
    if not min_y < max_y:
        raise ValueError("height band needs min_y < max_y")

    x0, z0 = float(lo[0]), float(lo[2])
    nx = int(math.floor((hi[0] - x0) / resolution)) + 1
    nz = int(math.floor((hi[2] - z0) / resolution)) + 1
    cells = np.zeros((nx, nz), dtype=np.bool_)
    band = (labels != BACKGROUND) & (pos[:, 1] >= min_y) & (pos[:, 1] <= max_y)
    if len(exclude):
        band &= ~np.isin(labels, np.asarray(list(exclude), dtype=np.int64))
    _numba_bin_points(np.ascontiguousarray(pos[band, 0]), np.ascontiguousarray(pos[band, 2]),
                      x0, z0, resolution, cells)

    radius = int(math.ceil(inflate / resolution - 1e-9)) if inflate > 0 else 0
    if radius > 0 and cells.any():
        cells = binary_dilation(cells, structure=np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool))
    logger.debug("occupancy %dx%d, band [%.3f, %.3f], %d occupied", nx, nz, min_y, max_y,
                 int(cells.sum()))
    return OccupancyGrid((x0, z0), resolution, cells)


@dataclass(frozen=True)
class PlannedPath:
    """
    :param waypoints: World ``(x, z)`` cell centers from start to goal.
    :param cells: Grid cells of the waypoints.
    :param length: Sum of segment lengths in scene units.
    """

    waypoints: tuple
    cells: tuple
    length: float

    def to_json(self) -> dict:
        return {"waypoints": [[float(x), float(z)] for x, z in self.waypoints],
                "length": float(self.length)}

    def write_json(self, path):
        try:
            with open(path, "w") as fh:
                json.dump(self.to_json(), fh, indent=2)
                fh.write("\n")
        except OSError as exc:
            raise IoError(f"cannot write path {path}: {exc}") from exc


def _octile(a, b) -> float:
    dx, dz = abs(a[0] - b[0]), abs(a[1] - b[1])
    return (SQRT2 - 1.0) * min(dx, dz) + max(dx, dz)


def _astar(grid: OccupancyGrid, start: tuple, goal: tuple) -> list:
    cells = grid.cells
    nx, nz = cells.shape
    g_cost = {start: 0.0}
    parent = {start: None}
    counter = 0
    heap = [(_octile(start, goal), 0, counter, start)]
    closed = set()
    while heap:
        _, _, _, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        if cell == goal:
            path = []
            while cell is not None:
                path.append(cell)
                cell = parent[cell]
            return path[::-1]
        closed.add(cell)
        cx, cz = cell
        for dx, dz, cost in NEIGHBOURS:
            x, z = cx + dx, cz + dz
            if not (0 <= x < nx and 0 <= z < nz) or cells[x, z]:
                continue
            # no corner cutting between two occupied orthogonal cells
            if dx and dz and cells[cx + dx, cz] and cells[cx, cz + dz]:
                continue
            nxt = (x, z)
            g = g_cost[cell] + cost
            if g < g_cost.get(nxt, math.inf):
                g_cost[nxt] = g
                parent[nxt] = cell
                counter += 1
                h = _octile(nxt, goal)
                heapq.heappush(heap, (g + h, h, counter, nxt))
    return []


def plan_path(grid: OccupancyGrid, start, goal) -> PlannedPath:
    """
    Octile-optimal 8-connected path between two world ``(x, z)`` points.

    :raises OutOfBounds: Start or goal lies outside the grid.
    :raises StartOccupied: The start cell is occupied.
    :raises GoalOccupied: The goal cell is occupied.
    :raises NoPath: Start and goal are not connected.
    """
    s = grid.world_to_cell(start)
    g = grid.world_to_cell(goal)
    if grid.occupied(s):
        raise StartOccupied(f"start cell {s} is occupied")
    if grid.occupied(g):
        raise GoalOccupied(f"goal cell {g} is occupied")
    cells = _astar(grid, s, g)
    if not cells:
        raise NoPath(f"no collision-free path from cell {s} to cell {g}")
    waypoints = tuple(grid.cell_to_world(c) for c in cells)
    length = 0.0
    for a, b in zip(waypoints, waypoints[1:]):
        length += math.hypot(b[0] - a[0], b[1] - a[1])
    logger.info("path with %d waypoint(s), length %.4f", len(waypoints), length)
    return PlannedPath(waypoints, tuple(cells), length)


def instance_anchor(context: SpatialContext, name_or_id) -> tuple:
    """World ``(x, z)`` of an instance's AABB center, by id or unique name."""
    center = instance_center(context, resolve_instance(context, name_or_id))
    return float(center[0]), float(center[2])

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
Parameter objects and defaults for every stage of the pipeline.

Each parameter class validates its values on construction and is read-only
afterwards, so one instance can be shared between threads. Use
:py:meth:`Params.replace` to derive a modified copy.
"""

# --- Format / Protocol Constants ---

FORMAT_VERSION = 1
SUPPORTED_FORMAT_VERSIONS = (1,)

# Environment variable holding the bearer token of the external agent transport.
AGENT_TOKEN_ENV = "PYSPATIALCTX_AGENT_TOKEN"

# --- Relation Defaults ---

RELATIONS = ("clearance", "contact", "alignment", "equidistance", "symmetry")

RELATION_ARITY = {
    "clearance": 1,
    "contact": 2,
    "alignment": 2,
    "equidistance": 3,
    "symmetry": 3,
}

DEFAULT_RELATION_WEIGHTS = {
    "contact": 1.0,
    "clearance": 0.5,
    "alignment": 1.0,
    "symmetry": 1.0,
    "equidistance": 1.0,
}

DEFAULT_CONTACT_EPSILON = 0.01

# Selectors used when an edge carries none.
DEFAULT_ALIGNMENT_AXES = "xz"
DEFAULT_SYMMETRY_AXIS = "x"
DEFAULT_EQUIDISTANCE_AXIS = (1.0, 0.0, 0.0)


class Params:
    """
    Base class for validated, read-only parameter bundles.

    Subclasses list their fields (with defaults) in ``_defaults`` and
    implement ``_validate``.
    """

    _defaults: dict = {}

    def __init__(self, **kwargs):
        unknown = set(kwargs) - set(self._defaults)
        if unknown:
            raise TypeError(f"{type(self).__name__} got unknown parameters: {sorted(unknown)}")
        for name, default in self._defaults.items():
            object.__setattr__(self, name, kwargs.get(name, default))
        self._validate()
        object.__setattr__(self, "_frozen", True)

    def __setattr__(self, name, value):
        if getattr(self, "_frozen", False):
            raise AttributeError(f"{type(self).__name__} is read-only; use replace()")
        object.__setattr__(self, name, value)

    def _validate(self):
        pass

    def replace(self, **changes) -> "Params":
        """Returns a copy with the given fields changed."""
        values = self.as_dict()
        values.update(changes)
        return type(self)(**values)

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in self._defaults}

    def __eq__(self, other):
        return type(self) is type(other) and self.as_dict() == other.as_dict()

    def __repr__(self):
        body = ", ".join(f"{k}={v!r}" for k, v in self.as_dict().items())
        return f"{type(self).__name__}({body})"


class IcpParams(Params):
    """
    Coarse layout planner parameters (centroid/OBB initialization + ICP).

    :param max_iterations: Upper bound on ICP iterations.
    :param rel_tolerance: Stop once the relative objective decrease falls below this.
    :param subsample_mesh: Number of mesh vertices used per instance.
    :param subsample_target: Number of target cloud points used per instance.
    :param with_scale: Estimate a similarity (True) or a rigid transform (False).
    :param seed: Seed of the subsampling generator.
    :param trim_fraction: Fraction of worst correspondences dropped per update.
    :param resample_each_iteration: Draw a fresh subsample every iteration
        (descent is then no longer guaranteed).
    :param full_orientation_search: Try all 24 axis assignments at
        initialization instead of the 4 yaw candidates.
    :param scale_bounds: Clamp range for the per-update scale.
    """

    _defaults = {
        "max_iterations": 50,
        "rel_tolerance": 1e-6,
        "subsample_mesh": 2048,
        "subsample_target": 2048,
        "with_scale": True,
        "seed": 0,
        "trim_fraction": 0.0,
        "resample_each_iteration": False,
        "full_orientation_search": False,
        "scale_bounds": (0.1, 10.0),
    }

    def _validate(self):
        if self.max_iterations < 1 or self.subsample_mesh < 1 or self.subsample_target < 1:
            raise ValueError("iteration and subsample counts must be >= 1.")
        if not self.rel_tolerance > 0:
            raise ValueError("rel_tolerance must be positive.")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise ValueError("trim_fraction must lie in [0, 1).")
        lo, hi = self.scale_bounds
        if not 0 < lo <= hi:
            raise ValueError("scale_bounds must satisfy 0 < lo <= hi.")


class OptimizerConfig(Params):
    """
    Ergonomic pose optimizer parameters.

    :param rotation_dofs: ``"yaw"`` (rotation about +y only) or ``"full"``
        (axis-angle 3-vector).
    :param max_iterations: Upper bound on descent iterations.
    :param step_size: Initial step of every iteration; halved on rejection.
    :param grad_tolerance: Stop once the gradient norm falls below this.
    :param contact_samples: Surface samples drawn per meshed instance.
    :param seed: Seed of the contact surface sampler.
    :param fd_step: Central-difference step (scene units / radians).
    :param translation_axes: World axes along which instances may translate.
    :param soft_min_temperature: 0 uses the hard min of the contact loss,
        a positive value a log-sum-exp soft-min.
    :param max_backtracks: Step halvings tried before declaring no improvement.
    """

    _defaults = {
        "rotation_dofs": "yaw",
        "max_iterations": 500,
        "step_size": 1e-2,
        "grad_tolerance": 1e-6,
        "contact_samples": 512,
        "seed": 0,
        "fd_step": 1e-4,
        "translation_axes": "xyz",
        "soft_min_temperature": 0.0,
        "max_backtracks": 30,
    }

    def _validate(self):
        if self.rotation_dofs not in ("yaw", "full", "none"):
            raise ValueError("rotation_dofs must be 'yaw', 'full' or 'none'.")
        if self.max_iterations < 0 or self.contact_samples < 1 or self.max_backtracks < 1:
            raise ValueError("iteration, sample and backtrack counts must be positive.")
        if not (self.step_size > 0 and self.grad_tolerance > 0 and self.fd_step > 0):
            raise ValueError("step_size, grad_tolerance and fd_step must be positive.")
        if not set(self.translation_axes) <= set("xyz"):
            raise ValueError("translation_axes must be a subset of 'xyz'.")
        if self.soft_min_temperature < 0:
            raise ValueError("soft_min_temperature must be >= 0.")


class RenderConfig(Params):
    """
    Point-map rendering parameters.

    :param width: Image width in pixels (>= 16).
    :param height: Image height in pixels (>= 16).
    :param splat_radius: Disc radius written per projected point, in pixels.
    """

    _defaults = {"width": 512, "height": 512, "splat_radius": 1}

    def _validate(self):
        if self.width < 16 or self.height < 16:
            raise ValueError("resolution must be at least 16x16.")
        if self.splat_radius < 0:
            raise ValueError("splat_radius must be >= 0.")


class NavigationConfig(Params):
    """
    Occupancy grid parameters.

    :param resolution: Scene units per grid cell.
    :param inflate: Obstacle inflation radius in scene units.
    :param band_fractions: Height band as fractions of the cloud's y-extent.
    """

    _defaults = {"resolution": 0.05, "inflate": 0.1, "band_fractions": (0.05, 0.6)}

    def _validate(self):
        if not self.resolution > 0:
            raise ValueError("resolution must be positive.")
        if self.inflate < 0:
            raise ValueError("inflate must be >= 0.")
        lo, hi = self.band_fractions
        if not lo < hi:
            raise ValueError("band_fractions must satisfy lo < hi.")

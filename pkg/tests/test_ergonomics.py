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

import csv
import os
import tempfile
import unittest

import numpy as np
from scipy.spatial.distance import cdist

from pyspatialctx.config import OptimizerConfig
from pyspatialctx.context import (HyperEdge, LabeledPointCloud, RelationParams, SceneHypergraph, SceneNode,
                                  ScenePortrait, SpatialContext)
from pyspatialctx.demo import box_mesh, build_demo_bedroom, build_two_cube_contact
from pyspatialctx.errors import DuplicateMembers, MissingMesh, MissingPose, NonUnitAxis
from pyspatialctx.ergonomics import (EnergyModel, alignment_loss, clearance_loss, contact_distance,
                                     contact_loss, equidistance_loss, identity_poses, movable_instances,
                                     optimize_poses, symmetry_loss, total_energy)
from pyspatialctx.geometry import MeshInstance, SimilarityTransform, compose, make_rng, yaw_matrix


def shift(x=0.0, y=0.0, z=0.0):
    return SimilarityTransform(translation=(x, y, z))


def mesh_context(meshes, poses, edges):
    nodes = [SceneNode(label, f"obj{label}") for label in sorted(meshes)]
    return SpatialContext(ScenePortrait("test scene"), LabeledPointCloud.empty(),
                          SceneHypergraph(nodes, edges), poses, meshes)


def mixed_context():
    """Three unit cubes with one edge of every relation."""
    meshes = {label: box_mesh((1.0, 1.0, 1.0), label=label) for label in (1, 2, 3)}
    poses = {1: shift(0.0, 0.5, 0.0), 2: shift(2.5, 0.5, 0.3), 3: shift(1.0, 0.5, 2.0)}
    edges = [
        HyperEdge("contact", (1, 2), 2.0, RelationParams(epsilon=0.05)),
        HyperEdge("clearance", (3,), 0.5, RelationParams(clearance_radius=3.0)),
        HyperEdge("alignment", (1, 3), 1.0, RelationParams(axes="xz")),
        HyperEdge("symmetry", (1, 2, 3), 1.5, RelationParams(axes="x")),
        HyperEdge("equidistance", (1, 2, 3), 1.0, RelationParams(axis=(0.0, 0.0, 1.0))),
    ]
    return mesh_context(meshes, poses, edges)


def random_poses(rng, labels):
    return {v: SimilarityTransform(1.0, yaw_matrix(float(rng.uniform(-3, 3))), rng.normal(size=3))
            for v in labels}


class TestRelationLosses(unittest.TestCase):

    def test_contact_closed_form(self):
        p = np.array([[0.0, 0.0, 0.0]])
        q = np.array([[1.0, 0.0, 0.0]])
        self.assertAlmostEqual(contact_loss(p, q, epsilon=0.1), 0.81)
        self.assertEqual(contact_loss(p, q, shift(0.95), None, epsilon=0.1), 0.0)
        self.assertAlmostEqual(contact_loss(p, q, None, shift(2.0), epsilon=0.5), 6.25)
        with self.assertRaises(ValueError):
            contact_loss(p, q, epsilon=0.0)

    def test_contact_matches_brute_force(self):
        rng = make_rng(6)
        for _ in range(100):
            p = rng.normal(size=(512, 3))
            q = rng.normal(size=(512, 3)) + 2.0
            pose = SimilarityTransform(1.0, yaw_matrix(float(rng.uniform(-3, 3))), rng.normal(size=3))
            expected = cdist(pose.apply(p), q).min()
            self.assertLess(abs(contact_distance(p, q, pose, None) - expected), 1e-9)

    def test_soft_min_bounds(self):
        rng = make_rng(7)
        p, q = rng.normal(size=(30, 3)), rng.normal(size=(40, 3)) + 1.0
        hard = contact_distance(p, q)
        soft = contact_distance(p, q, temperature=1e-4)
        self.assertLessEqual(soft, hard)
        self.assertLess(hard - soft, 1e-4 * np.log(30 * 40) + 1e-12)

    def test_clearance(self):
        centers = {1: np.zeros(3), 2: np.array([0.5, 0, 0]), 3: np.array([5.0, 0, 0])}
        poses = {1: shift(), 2: shift(), 3: shift()}
        self.assertAlmostEqual(clearance_loss(poses, centers, 1, 1.0), 0.25)
        self.assertEqual(clearance_loss(poses, centers, 3, 1.0), 0.0)
        self.assertAlmostEqual(clearance_loss({2: shift(x=0.5)}, centers, 1, 1.0), 0.0)

    def test_alignment(self):
        self.assertAlmostEqual(alignment_loss(shift(), shift(), [0, 1, 0], [3, 4, 5], "y"), 9.0)
        self.assertAlmostEqual(alignment_loss(shift(), shift(), [0, 1, 0], [3, 4, 5], "xz"), 34.0)
        self.assertAlmostEqual(alignment_loss(shift(y=3), shift(), [0, 1, 0], [3, 4, 5], "y"), 0.0)

    def test_symmetry(self):
        centers = {1: np.array([-1.0, 0, 0]), 2: np.array([1.0, 0, 0]), 3: np.zeros(3)}
        poses = {v: shift() for v in centers}
        self.assertEqual(symmetry_loss((1, 2, 3), poses, centers, "x"), 0.0)
        poses[3] = shift(x=0.5, y=2.0)
        self.assertAlmostEqual(symmetry_loss((1, 2, 3), poses, centers, "x"), 0.25)
        with self.assertRaises(DuplicateMembers):
            symmetry_loss((1, 1, 3), poses, centers, "x")

    def test_equidistance(self):
        centers = {1: np.array([2.0, 0, 0]), 2: np.array([3.0, 0, 0]), 3: np.zeros(3)}
        poses = {v: shift() for v in centers}
        self.assertAlmostEqual(equidistance_loss((1, 2, 3), poses, centers, (1, 0, 0)), 1.0)
        # mirrored placement is not zero-loss
        centers[1] = np.array([-3.0, 0, 0])
        self.assertAlmostEqual(equidistance_loss((1, 2, 3), poses, centers, (1, 0, 0)), 36.0)
        with self.assertRaises(NonUnitAxis):
            equidistance_loss((1, 2, 3), poses, centers, (1, 1, 0))


    def test_hinge_zero_regions(self):
        rng = make_rng(30)
        for _ in range(200):
            p, q = rng.normal(size=(20, 3)), rng.normal(size=(20, 3)) + rng.normal(size=3)
            pose_i, pose_j = random_poses(rng, (1, 2)).values()
            d = contact_distance(p, q, pose_i, pose_j)
            self.assertEqual(contact_loss(p, q, pose_i, pose_j, epsilon=d + float(rng.uniform(0, 1))), 0.0)
            self.assertEqual(contact_loss(p, q, pose_i, pose_j, epsilon=d), 0.0)
            centers = {v: rng.normal(size=3) * 3.0 for v in range(1, 6)}
            poses = random_poses(rng, centers)
            moved = [poses[v].apply(c) for v, c in centers.items()]
            nearest = min(np.linalg.norm(moved[0] - m) for m in moved[1:])
            self.assertEqual(clearance_loss(poses, centers, 1, nearest * float(rng.uniform(0.1, 1.0))), 0.0)

    def test_contact_bounded_by_farthest_pair(self):
        rng = make_rng(31)
        for _ in range(100):
            p, q = rng.normal(size=(30, 3)), rng.normal(size=(40, 3)) + 3.0 * rng.normal(size=3)
            pose_i, pose_j = random_poses(rng, (1, 2)).values()
            eps = float(rng.uniform(0.01, 0.5))
            far = cdist(pose_i.apply(p), pose_j.apply(q)).max()
            self.assertLessEqual(contact_loss(p, q, pose_i, pose_j, epsilon=eps), (far - eps) ** 2 + 1e-12)

    def test_equidistance_ignores_reference(self):
        rng = make_rng(32)
        for _ in range(100):
            centers = {v: rng.normal(size=3) for v in (1, 2, 3)}
            poses = random_poses(rng, centers)
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            base = equidistance_loss((1, 2, 3), poses, centers, axis)
            poses[3] = compose(SimilarityTransform(1.0, yaw_matrix(float(rng.uniform(-3, 3))),
                                                   rng.normal(size=3) * 5.0), poses[3])
            self.assertAlmostEqual(equidistance_loss((1, 2, 3), poses, centers, axis), base,
                                   delta=1e-11 * max(1.0, base))


class TestSceneEnergy(unittest.TestCase):

    def test_weighted_contact(self):
        meshes = {1: MeshInstance([[0.0, 0.0, 0.0]], label=1), 2: MeshInstance([[2.0, 0.0, 0.0]], label=2)}
        ctx = mesh_context(meshes, {}, [HyperEdge("contact", (1, 2), 2.0, RelationParams(epsilon=0.5))])
        breakdown = total_energy(ctx, identity_poses(ctx))
        self.assertAlmostEqual(breakdown.total, 4.5, places=12)
        self.assertEqual(total_energy(mesh_context(meshes, {}, []), identity_poses(ctx)).total, 0.0)

    def test_mixed_graph_decomposes(self):
        ctx = mixed_context()
        poses = random_poses(make_rng(33), (1, 2, 3))
        breakdown = total_energy(ctx, poses)
        self.assertEqual([t.relation for t in breakdown.per_edge],
                         ["contact", "clearance", "alignment", "symmetry", "equidistance"])
        model = EnergyModel(ctx)
        c = model.centers
        expected = [
            2.0 * contact_loss(model.samples(1), model.samples(2), poses[1], poses[2], epsilon=0.05),
            0.5 * clearance_loss(poses, c, 3, 3.0),
            1.0 * alignment_loss(poses[1], poses[3], c[1], c[3], "xz"),
            1.5 * symmetry_loss((1, 2, 3), poses, c, "x"),
            1.0 * equidistance_loss((1, 2, 3), poses, c, (0.0, 0.0, 1.0)),
        ]
        for term, value in zip(breakdown.per_edge, expected):
            self.assertAlmostEqual(term.value, value, places=12)
        self.assertAlmostEqual(breakdown.total, sum(expected), delta=1e-9)

    def test_global_translation_invariance(self):
        rng = make_rng(34)
        ctx = mixed_context()
        for _ in range(20):
            poses = random_poses(rng, (1, 2, 3))
            offset = shift(*rng.normal(size=3) * 10.0)
            moved = {v: compose(offset, pose) for v, pose in poses.items()}
            base = total_energy(ctx, poses).total
            self.assertAlmostEqual(total_energy(ctx, moved).total, base, delta=1e-9 * max(1.0, base))

    def test_two_cube_energy(self):
        ctx = build_two_cube_contact()
        breakdown = total_energy(ctx, identity_poses(ctx))
        self.assertEqual(len(breakdown.per_edge), 1)
        self.assertEqual(breakdown.per_edge[0].relation, "contact")
        model = EnergyModel(ctx)
        d = contact_distance(model.samples(1), model.samples(2))
        self.assertGreaterEqual(d, 1.0)
        self.assertAlmostEqual(breakdown.total, (d - 0.01) ** 2)

    def test_missing_pose_and_mesh(self):
        ctx = build_two_cube_contact()
        with self.assertRaises(MissingPose):
            total_energy(ctx, {1: shift()})
        bedroom = build_demo_bedroom()
        bedroom = bedroom.replace(graph=bedroom.graph.with_edge(HyperEdge("contact", (1, 2))))
        with self.assertRaises(MissingMesh):
            total_energy(bedroom, identity_poses(bedroom))

    def test_default_clearance_radius(self):
        ctx = build_demo_bedroom()
        # half of the chair's largest extent
        self.assertAlmostEqual(EnergyModel(ctx).default_clearance(3), 0.25)

    def test_movable_instances(self):
        ctx = build_demo_bedroom()
        self.assertEqual(movable_instances(ctx), [1, 2, 3])
        ctx = ctx.replace(graph=ctx.graph.with_edge(HyperEdge("clearance", (4,))))
        self.assertEqual(movable_instances(ctx), [1, 2, 3])


class TestOptimizer(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def one_dof_context(self):
        ctx = build_two_cube_contact()
        graph = SceneHypergraph(
            [SceneNode(1, "left cube", fixed=True), SceneNode(2, "right cube")],
            [HyperEdge("clearance", (2,), 1.0, RelationParams(clearance_radius=2.5)),
             HyperEdge("alignment", (1, 2), 0.1, RelationParams(axes="x"))])
        return ctx.replace(graph=graph)

    def test_one_dof_matches_grid_search(self):
        ctx = self.one_dof_context()
        config = OptimizerConfig(rotation_dofs="none", translation_axes="x", step_size=0.1)
        grid = [total_energy(ctx, {1: shift(), 2: shift(x=dx)}).total for dx in np.linspace(-1, 2, 10001)]
        out, trace = optimize_poses(ctx, config)
        self.assertLessEqual(trace.energies[-1], min(grid) + 1e-4)
        self.assertAlmostEqual(trace.energies[-1], 0.1 * 2.5 ** 2 / 1.1, places=6)
        # the fixed cube never moves
        mask = ctx.cloud.labels == 1
        np.testing.assert_array_equal(out.cloud.positions[mask], ctx.cloud.positions[mask])
        center_x = out.poses[2].apply([0.0, 0.0, 0.0])[0]
        self.assertAlmostEqual(center_x, 2.5 / 1.1, places=3)

    def test_trace_is_non_increasing(self):
        ctx = build_two_cube_contact()
        _, trace = optimize_poses(ctx, OptimizerConfig(max_iterations=40))
        energies = np.array(trace.energies)
        self.assertTrue(np.all(np.diff(energies) <= 0.0))
        self.assertEqual(trace.entries[0].iteration, 0)
        self.assertLessEqual(trace.iterations, 40)
        path = os.path.join(self.tmp.name, "trace.csv")
        trace.write_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        self.assertEqual(rows[0], ["iteration", "total_energy", "step_size", "accepted"])
        self.assertEqual(len(rows), len(trace.entries) + 1)

    def test_two_cubes_reach_contact(self):
        ctx = build_two_cube_contact()
        out, trace = optimize_poses(ctx)
        model = EnergyModel(out)
        self.assertLessEqual(contact_distance(model.samples(1), model.samples(2)), 0.01 + 1e-3)
        self.assertLess(trace.energies[-1], trace.energies[0])

    def test_nothing_to_optimize(self):
        ctx = build_two_cube_contact()
        ctx = ctx.replace(graph=SceneHypergraph([SceneNode(1, fixed=True), SceneNode(2, fixed=True)],
                                                ctx.graph.edges))
        out, trace = optimize_poses(ctx)
        self.assertIs(out, ctx)
        self.assertEqual(trace.reason, "nothing to optimize")
        self.assertEqual(trace.iterations, 0)


if __name__ == '__main__':
    unittest.main()

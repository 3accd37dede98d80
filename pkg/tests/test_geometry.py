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

import os
import tempfile
import unittest

import numpy as np
from scipy.spatial.transform import Rotation

from pyspatialctx.demo import box_mesh
from pyspatialctx.errors import DegenerateGeometry, EmptyPointSet, InvalidTransform
from pyspatialctx.geometry import (AABB, MeshInstance, SimilarityTransform, apply_similarity,
                                   build_index, chamfer_distance, compose, cube_rotations, hinge,
                                   invert, load_obj, make_rng, nearest, pca_obb, sample_surface,
                                   save_obj, umeyama_align, uniform_subsample)


def random_transform(rng, scale_range=(0.5, 2.0)):
    rot = Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix()
    return SimilarityTransform(rng.uniform(*scale_range), rot, rng.normal(size=3))


def linear_scan(points, q):
    d = np.sqrt(np.sum((points - q) ** 2, axis=1))
    i = int(np.argmin(d))  # argmin returns the first minimum
    return i, float(d[i])


class TestSimilarityTransform(unittest.TestCase):

    def setUp(self):
        self.rng = make_rng(7)

    def test_identity_and_direct_evaluation(self):
        np.testing.assert_array_equal(apply_similarity(SimilarityTransform.identity(), [1, 2, 3]), [1, 2, 3])
        t = SimilarityTransform(2.0, np.eye(3), (1.0, 0.0, 0.0))
        np.testing.assert_allclose(apply_similarity(t, [1, 1, 1]), [3, 2, 2])

    def test_inverse_round_trip(self):
        for _ in range(50):
            t = random_transform(self.rng)
            p = self.rng.normal(size=3)
            np.testing.assert_allclose(invert(t).apply(t.apply(p)), p, atol=1e-9)

    def test_composition_law(self):
        for _ in range(100):
            a, b = random_transform(self.rng), random_transform(self.rng)
            p = self.rng.normal(size=3)
            np.testing.assert_allclose(compose(a, b).apply(p), a.apply(b.apply(p)), atol=1e-9)

    def test_compose_with_identity(self):
        t = random_transform(self.rng)
        self.assertTrue(compose(t, SimilarityTransform.identity()).allclose(t))
        self.assertTrue(invert(SimilarityTransform.identity()).allclose(SimilarityTransform.identity()))

    def test_distance_ratio_preserved(self):
        t = random_transform(self.rng)
        p, q = self.rng.normal(size=(2, 3))
        self.assertAlmostEqual(np.linalg.norm(t.apply(p) - t.apply(q)),
                               t.scale * np.linalg.norm(p - q), delta=1e-9)

    def test_rejects_bad_parameters(self):
        with self.assertRaises(InvalidTransform):
            SimilarityTransform(0.0)
        with self.assertRaises(InvalidTransform):
            SimilarityTransform(1.0, np.diag([1.0, 1.0, -1.0]))
        with self.assertRaises(InvalidTransform):
            SimilarityTransform(1.0, 2 * np.eye(3))
        with self.assertRaises(InvalidTransform):
            SimilarityTransform.from_quaternion([1.0, 0.1, 0.0, 0.0])

    def test_quaternion_round_trip(self):
        t = random_transform(self.rng)
        back = SimilarityTransform.from_quaternion(t.quaternion(), t.translation, t.scale)
        self.assertTrue(back.allclose(t, atol=1e-12))
        self.assertGreaterEqual(t.quaternion()[0], 0.0)

    def test_matrix_round_trip(self):
        t = random_transform(self.rng)
        self.assertTrue(SimilarityTransform.from_matrix(t.matrix()).allclose(t, atol=1e-12))

    def test_cube_rotations(self):
        rots = cube_rotations()
        self.assertEqual(len(rots), 24)
        keys = {tuple(r.astype(int).ravel()) for r in rots}
        self.assertEqual(len(keys), 24)


class TestBoundingBoxes(unittest.TestCase):

    def setUp(self):
        self.corners = np.array([[x, y, z] for x in (0.0, 2.0) for y in (0.0, 1.0) for z in (0.0, 0.5)])

    def test_axis_aligned_obb(self):
        obb = pca_obb(self.corners)
        np.testing.assert_allclose(np.abs(obb.axes), np.eye(3), atol=1e-9)
        np.testing.assert_allclose(obb.half_extents, [1.0, 0.5, 0.25], atol=1e-9)
        np.testing.assert_allclose(obb.center, [1.0, 0.5, 0.25], atol=1e-9)
        self.assertAlmostEqual(np.linalg.det(obb.axes), 1.0, places=9)

    def test_rotated_obb_contains_points(self):
        rot = Rotation.from_euler("xyz", [0.3, -0.7, 1.1]).as_matrix()
        pts = self.corners @ rot.T + [3.0, -1.0, 2.0]
        obb = pca_obb(pts)
        self.assertTrue(np.all(obb.contains(pts)))
        # every recovered axis is parallel to one of the rotated box axes
        overlap = np.abs(rot.T @ obb.axes)
        np.testing.assert_allclose(np.sort(overlap.max(axis=0)), [1.0, 1.0, 1.0], atol=1e-9)
        self.assertAlmostEqual(np.linalg.det(obb.axes), 1.0, places=9)

    def test_random_cloud_containment(self):
        pts = make_rng(3).normal(size=(500, 3)) * [3.0, 1.0, 0.2]
        self.assertTrue(np.all(pca_obb(pts).contains(pts)))

    def test_degenerate_inputs(self):
        with self.assertRaises(DegenerateGeometry):
            pca_obb(self.corners[:2])
        with self.assertRaises(DegenerateGeometry):
            pca_obb([[0, 0, 0], [1, 1, 1], [2, 2, 2], [3, 3, 3]])

    def test_aabb_iou(self):
        a = AABB([0, 0, 0], [2, 2, 2])
        b = AABB([1, 0, 0], [3, 2, 2])
        self.assertAlmostEqual(a.iou(b), 4.0 / 12.0)
        self.assertEqual(a.iou(AABB([5, 5, 5], [6, 6, 6])), 0.0)
        with self.assertRaises(EmptyPointSet):
            AABB.of(np.zeros((0, 3)))


class TestUmeyama(unittest.TestCase):

    def setUp(self):
        self.rng = make_rng(11)
        self.src = self.rng.normal(size=(50, 3))

    def test_identity(self):
        self.assertTrue(umeyama_align(self.src, self.src).allclose(SimilarityTransform.identity(), atol=1e-9))

    def test_constructed_case(self):
        t = umeyama_align(self.src, 2.0 * self.src + [1.0, 0.0, 0.0])
        self.assertAlmostEqual(t.scale, 2.0, delta=1e-9)
        np.testing.assert_allclose(t.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(t.translation, [1.0, 0.0, 0.0], atol=1e-9)

    def test_recovers_random_transforms(self):
        for _ in range(20):
            truth = random_transform(self.rng)
            self.assertTrue(umeyama_align(self.src, truth.apply(self.src)).allclose(truth, atol=1e-6))

    def test_rigid_mode_keeps_unit_scale(self):
        t = umeyama_align(self.src, 3.0 * self.src, with_scale=False)
        self.assertEqual(t.scale, 1.0)

    def test_residual_is_locally_optimal(self):
        dst = random_transform(self.rng).apply(self.src) + 0.05 * self.rng.normal(size=self.src.shape)
        best = umeyama_align(self.src, dst)

        def residual(t):
            return float(np.sum((t.apply(self.src) - dst) ** 2))

        base = residual(best)
        for _ in range(200):
            delta = Rotation.from_rotvec(0.01 * self.rng.normal(size=3)).as_matrix()
            other = SimilarityTransform(best.scale * np.exp(0.01 * self.rng.normal()),
                                        delta @ best.rotation,
                                        best.translation + 0.01 * self.rng.normal(size=3))
            self.assertGreaterEqual(residual(other), base - 1e-12)

    def test_degenerate(self):
        with self.assertRaises(DegenerateGeometry):
            umeyama_align(self.src[:2], self.src[:2])
        with self.assertRaises(DegenerateGeometry):
            umeyama_align(self.src[:5], self.src[:6])
        line = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
        with self.assertRaises(DegenerateGeometry):
            umeyama_align(line, line)


class TestSpatialIndex(unittest.TestCase):

    def test_exact_hit_and_simple_case(self):
        idx = build_index([[0, 0, 0], [10, 0, 0]])
        self.assertEqual(nearest(idx, [10, 0, 0]), (1, 0.0))
        i, d = nearest(idx, [1, 0, 0])
        self.assertEqual(i, 0)
        self.assertAlmostEqual(d, 1.0)

    def test_tie_breaks_on_lowest_index(self):
        idx = build_index([[2, 0, 0], [-1, 0, 0], [1, 0, 0], [0, 1, 0]])
        self.assertEqual(nearest(idx, [0, 0, 0])[0], 1)

    def test_matches_linear_scan(self):
        rng = make_rng(5)
        pts = rng.uniform(-1, 1, size=(5000, 3))
        idx = build_index(pts)
        for q in rng.uniform(-1.2, 1.2, size=(1000, 3)):
            i, d = nearest(idx, q)
            j, e = linear_scan(pts, q)
            self.assertEqual(i, j)
            self.assertAlmostEqual(d, e, delta=1e-12)

    def test_duplicates_tie_break(self):
        pts = make_rng(6).integers(0, 3, size=(200, 3)).astype(float)
        idx = build_index(pts)
        for q in pts[:50]:
            self.assertEqual(nearest(idx, q)[0], linear_scan(pts, q)[0])

    def test_empty(self):
        with self.assertRaises(EmptyPointSet):
            build_index(np.zeros((0, 3)))


class TestSampling(unittest.TestCase):

    def test_subsample_all_points(self):
        pts = make_rng(1).normal(size=(20, 3))
        np.testing.assert_array_equal(uniform_subsample(pts, 20, 0), pts)
        np.testing.assert_array_equal(uniform_subsample(pts, 50, 0), pts)

    def test_subsample_deterministic(self):
        pts = make_rng(1).normal(size=(500, 3))
        np.testing.assert_array_equal(uniform_subsample(pts, 100, 9), uniform_subsample(pts, 100, 9))

    def test_subsample_inclusion_frequency(self):
        pts = np.column_stack([np.arange(10000.0), np.zeros(10000), np.zeros(10000)])
        counts = np.zeros(10000)
        for seed in range(100):
            counts[uniform_subsample(pts, 1000, seed)[:, 0].astype(int)] += 1
        self.assertEqual(counts.mean(), 10.0)
        # Binomial(100, 0.1): sigma = 3
        self.assertTrue(2.7 < counts.std() < 3.3)
        self.assertLessEqual(counts.max(), 10 + 6 * 3)

    def test_triangle_containment(self):
        tri = MeshInstance([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        pts = sample_surface(tri, 3, 0)
        self.assertEqual(pts.shape, (3, 3))
        np.testing.assert_allclose(pts[:, 2], 0.0)
        self.assertTrue(np.all(pts[:, :2] >= -1e-12))
        self.assertTrue(np.all(pts[:, 0] + pts[:, 1] <= 1.0 + 1e-12))

    def test_cube_face_proportions(self):
        pts = sample_surface(box_mesh((1.0, 1.0, 1.0)), 6000, 4)
        axis = np.argmax(np.abs(pts), axis=1)
        face = 2 * axis + (pts[np.arange(len(pts)), axis] > 0)
        counts = np.bincount(face, minlength=6)
        sigma = np.sqrt(6000 * (1 / 6) * (5 / 6))
        self.assertTrue(np.all(np.abs(counts - 1000) <= 4 * sigma), counts)

    def test_zero_area(self):
        flat = MeshInstance([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
        with self.assertRaises(DegenerateGeometry):
            sample_surface(flat, 10, 0)

    def test_chamfer(self):
        a = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        self.assertEqual(chamfer_distance(a, a), 0.0)
        self.assertAlmostEqual(chamfer_distance(a, a + [0.0, 0.5, 0.0]), 0.5)

    def test_hinge(self):
        self.assertEqual(hinge(-1.0), 0.0)
        self.assertEqual(hinge(0.0), 0.0)
        self.assertEqual(hinge(2.5), 2.5)
        np.testing.assert_array_equal(hinge(np.array([-1.0, 3.0])), [0.0, 3.0])


class TestObj(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        mesh = box_mesh((0.3, 1.7, 2.1), (0.1, 0.2, 0.3), label=4)
        path = os.path.join(self.tmp.name, "4.obj")
        save_obj(mesh, path)
        self.assertEqual(load_obj(path, 4), mesh)

    def test_polygon_fan_and_ignored_directives(self):
        path = os.path.join(self.tmp.name, "quad.obj")
        with open(path, "w") as fh:
            fh.write("# quad\no quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n")
        mesh = load_obj(path)
        np.testing.assert_array_equal(mesh.triangles, [[0, 1, 2], [0, 2, 3]])


if __name__ == '__main__':
    unittest.main()

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

import json
import os
import tempfile
import unittest

import numpy as np

from pyspatialctx import __version__
from pyspatialctx.context import LabeledPointCloud
from pyspatialctx.demo import build_demo_bedroom, build_two_cube_contact
from pyspatialctx.errors import IoError, ParseError, VersionMismatch
from pyspatialctx.geometry import make_rng
from pyspatialctx.projection import canonical_cameras
from pyspatialctx.scene_io import load_bundle, load_cameras, load_cloud, read_manifest, save_bundle, save_cloud

ASCII_PLY = """ply
format ascii 1.0
comment three labeled points
element vertex 3
property float x
property float y
property float z
property float nx
property uchar red
property uchar green
property uchar blue
property int instance
element face 1
property list uchar int vertex_indices
end_header
0 0 0 9 255 0 0 1
1.5 2 -3 9 0 255 0 2
0.25 0.5 0.75 9 0 0 51 0
3 0 1 2
"""


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestPly(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = os.path.join(self.tmp.name, name)
        with open(path, "w") as fh:
            fh.write(text)
        return path

    def test_ascii_three_points(self):
        cloud = load_cloud(self.write("three.ply", ASCII_PLY))
        self.assertEqual(len(cloud), 3)
        np.testing.assert_array_equal(cloud.positions[1], [1.5, 2.0, -3.0])
        np.testing.assert_array_equal(cloud.labels, [1, 2, 0])
        np.testing.assert_allclose(cloud.colors[0], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(cloud.colors[2], [0.0, 0.0, 0.2])

    def test_binary_round_trip(self):
        rng = make_rng(10)
        n = 10000
        cloud = LabeledPointCloud(rng.normal(scale=5.0, size=(n, 3)), rng.random((n, 3)),
                                  rng.integers(0, 40, size=n))
        path = os.path.join(self.tmp.name, "cloud.ply")
        save_cloud(cloud, path)
        back = load_cloud(path)
        np.testing.assert_array_equal(back.positions, cloud.positions.astype(np.float32))
        np.testing.assert_array_equal(back.labels, cloud.labels)
        self.assertLessEqual(float(np.max(np.abs(back.colors - cloud.colors))), 0.5 / 255 + 1e-12)
        # a second save of the loaded cloud is byte-identical
        again = os.path.join(self.tmp.name, "again.ply")
        save_cloud(back, again)
        self.assertEqual(read_bytes(path), read_bytes(again))

    def test_missing_property(self):
        text = ASCII_PLY.replace("property int instance\n", "")
        with self.assertRaises(ParseError) as cm:
            load_cloud(self.write("bad.ply", text))
        self.assertIn("instance", str(cm.exception))

    def test_malformed_files(self):
        with self.assertRaises(ParseError):
            load_cloud(self.write("magic.ply", "plx\nend_header\n"))
        with self.assertRaises(ParseError):
            load_cloud(self.write("nofmt.ply", "ply\nelement vertex 0\nend_header\n"))
        with self.assertRaises(ParseError):
            load_cloud(self.write("short.ply", ASCII_PLY.replace("element vertex 3", "element vertex 9")))
        path = os.path.join(self.tmp.name, "trunc.ply")
        save_cloud(LabeledPointCloud(np.zeros((4, 3))), path)
        with open(path, "rb+") as fh:
            fh.truncate(len(read_bytes(path)) - 5)
        with self.assertRaises(ParseError):
            load_cloud(path)
        with self.assertRaises(IoError):
            load_cloud(os.path.join(self.tmp.name, "absent.ply"))


class TestBundle(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.tmp.name, *parts)

    def test_round_trip(self):
        ctx = build_two_cube_contact()
        save_bundle(ctx, self.path("a"))
        back = load_bundle(self.path("a"))
        self.assertEqual(back.graph, ctx.graph)
        self.assertEqual(back.portrait, ctx.portrait)
        np.testing.assert_array_equal(back.cloud.positions, ctx.cloud.positions.astype(np.float32))
        np.testing.assert_array_equal(back.cloud.labels, ctx.cloud.labels)
        self.assertEqual(sorted(back.meshes), [1, 2])
        for label in (1, 2):
            self.assertEqual(back.meshes[label], ctx.meshes[label])
            self.assertTrue(back.poses[label].allclose(ctx.poses[label], atol=1e-12))

    def test_saves_are_deterministic(self):
        ctx = build_two_cube_contact()
        save_bundle(ctx, self.path("a"))
        save_bundle(ctx, self.path("b"))
        for name in ("manifest.json", "cloud.ply", "graph.txt", "portrait.txt", "layout.json",
                     os.path.join("meshes", "1.obj")):
            self.assertEqual(read_bytes(self.path("a", name)), read_bytes(self.path("b", name)))
        manifest = read_manifest(self.path("a"))
        self.assertEqual(manifest["format_version"], 1)
        self.assertEqual(manifest["created_by"], f"pyspatialctx {__version__}")

    def test_stale_files_are_removed(self):
        save_bundle(build_two_cube_contact(), self.path("a"))
        save_bundle(build_demo_bedroom(), self.path("a"))
        self.assertFalse(os.path.exists(self.path("a", "layout.json")))
        self.assertEqual(os.listdir(self.path("a", "meshes")), [])
        back = load_bundle(self.path("a"))
        self.assertEqual(dict(back.poses), {})
        self.assertEqual(len(back.graph.edges), 2)

    def test_version_mismatch(self):
        save_bundle(build_demo_bedroom(), self.path("a"))
        with open(self.path("a", "manifest.json"), "w") as fh:
            json.dump({"format_version": 999}, fh)
        with self.assertRaises(VersionMismatch):
            load_bundle(self.path("a"))

    def test_missing_graph(self):
        save_bundle(build_demo_bedroom(), self.path("a"))
        os.remove(self.path("a", "graph.txt"))
        with self.assertRaises(IoError):
            load_bundle(self.path("a"))

    def test_cameras(self):
        ctx = build_two_cube_contact()
        self.assertEqual(load_cameras(self.path("none")), [])
        cameras = canonical_cameras(ctx.cloud, 64, 48)
        save_bundle(ctx, self.path("a"), cameras)
        back = load_cameras(self.path("a"))
        self.assertEqual([c.name for c in back], ["top", "side_px", "side_nx"])
        self.assertTrue(back[0].pose.allclose(cameras[0].pose, atol=1e-12))


if __name__ == '__main__':
    unittest.main()

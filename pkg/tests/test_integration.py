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

import contextlib
import io
import json
import os
import tempfile
import unittest

import numpy as np

from pyspatialctx.cli import main
from pyspatialctx.context import LabeledPointCloud
from pyspatialctx.demo import DEMOS
from pyspatialctx.ergonomics import EnergyModel, contact_distance
from pyspatialctx.scene_io import load_bundle, save_cloud


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def path(self, *parts):
        return os.path.join(self.tmp.name, *parts)

    def run_cli(self, *argv):
        out, err = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            code = main([str(a) for a in argv])
        return code, out.getvalue(), err.getvalue()

    def read(self, *parts):
        with open(self.path(*parts), "rb") as fh:
            return fh.read()


class TestDoorwayScenario(CliTestCase):

    def test_blocked_doorway_is_cleared_by_a_session(self):
        bundle = self.path("bedroom")
        code, out, _ = self.run_cli("demo", "bedroom", "-o", bundle)
        self.assertEqual(code, 0)
        self.assertTrue(os.path.exists(self.path("bedroom", "move_chair.txt")))

        code, out, _ = self.run_cli("validate", bundle)
        self.assertEqual((code, out.strip()), (0, "OK"))

        code, _, err = self.run_cli("path", bundle, "--from", "bed", "--to", "desk")
        self.assertEqual(code, 1)
        self.assertIn("NoPath: ", err)

        moved = self.path("moved")
        transcript = self.path("session.txt")
        code, out, _ = self.run_cli("session", bundle, "--script", self.path("bedroom", "move_chair.txt"),
                                    "--transcript", transcript, "-o", moved)
        self.assertEqual(code, 0)
        self.assertIn("1 round(s)", out)
        text = self.read("session.txt").decode("utf-8")
        self.assertIn("=== readout 0 ===", text)
        self.assertIn("=== response 1 ===\nmove 3 t=(1.0,0.0,-1.0)\n", text)
        self.assertIn("=== readout 1 ===", text)

        code, out, _ = self.run_cli("--json", "path", moved, "--from", "bed", "--to", "2",
                                    "-o", self.path("path.json"), "--pgm", self.path("grid.pgm"))
        self.assertEqual(code, 0)
        printed = json.loads(out)
        with open(self.path("path.json")) as fh:
            saved = json.load(fh)
        self.assertEqual(printed, saved)
        self.assertGreater(len(saved["waypoints"]), 2)
        self.assertTrue(self.read("grid.pgm").startswith(b"P5"))

        # the same move applied as an edit batch gives the same bundle
        edited = self.path("edited")
        code, _, _ = self.run_cli("edit", bundle, "--commands", self.path("bedroom", "move_chair.txt"),
                                  "-o", edited)
        self.assertEqual(code, 0)
        for name in ("cloud.ply", "graph.txt"):
            self.assertEqual(self.read("edited", name), self.read("moved", name))
        # the source bundle is untouched
        self.assertEqual(self.run_cli("path", bundle, "--from", "bed", "--to", "desk")[0], 1)

    def test_readout_with_views(self):
        bundle = self.path("bedroom")
        self.run_cli("demo", "bedroom", "-o", bundle)
        code, out, _ = self.run_cli("--json", "readout", bundle, "--views", self.path("views"),
                                    "-o", self.path("readout.txt"))
        self.assertEqual(code, 0)
        views = json.loads(out)["views"]
        self.assertEqual(len(views), 9)
        text = self.read("readout.txt").decode("utf-8")
        self.assertTrue(text.startswith("[portrait]\nA small bedroom."))
        self.assertIn('3 "chair" points=600', text)
        self.assertIn("clearance(3) w=0.5 dmin=0.6", text)
        self.assertIn("[views]\ntop_rgb.png\n", text)
        for ref in views:
            self.assertTrue(os.path.exists(self.path("views", ref)))


class TestTwoCubes(CliTestCase):

    def test_adjust_reaches_contact(self):
        bundle = self.path("cubes")
        self.assertEqual(self.run_cli("demo", "two-cubes", "-o", bundle)[0], 0)
        code, out, _ = self.run_cli("--json", "adjust", bundle, "--trace", self.path("trace.csv"))
        self.assertEqual(code, 0)
        summary = json.loads(out)
        self.assertLess(summary["final_energy"], summary["initial_energy"])
        with open(self.path("trace.csv")) as fh:
            self.assertEqual(fh.readline().strip(), "iteration,total_energy,step_size,accepted")

        ctx = load_bundle(bundle)
        model = EnergyModel(ctx)
        self.assertLessEqual(contact_distance(model.samples(1), model.samples(2)), 0.01 + 1e-3)

        code, _, _ = self.run_cli("export-layout", bundle, "-o", self.path("layout.json"))
        self.assertEqual(code, 0)
        with open(self.path("layout.json")) as fh:
            records = json.load(fh)
        self.assertEqual([r["id"] for r in records], [1, 2])

    def test_plan_layout_reports_every_instance(self):
        bundle = self.path("cubes")
        self.run_cli("demo", "two-cubes", "-o", bundle)
        code, out, _ = self.run_cli("--json", "plan-layout", bundle, "-o", self.path("planned"))
        report = json.loads(out)
        self.assertEqual(sorted(report["instances"]) + sorted(report["failures"]), ["1", "2"])
        self.assertEqual(code, 0 if not report["failures"] else 1)
        self.assertEqual(sorted(load_bundle(self.path("planned")).poses), [1, 2])

    def test_project(self):
        bundle = self.path("cubes")
        self.run_cli("demo", "two-cubes", "-o", bundle)
        code, out, _ = self.run_cli("project", bundle, "--resolution", 32, "-o", self.path("views"))
        self.assertEqual(code, 0)
        self.assertEqual(len(out.splitlines()), 9)
        self.assertTrue(os.path.exists(self.path("views", "side_px_instance.png")))


class TestInitAndErrors(CliTestCase):

    def write(self, name, text):
        with open(self.path(name), "w") as fh:
            fh.write(text)
        return self.path(name)

    def test_every_demo_bundle_validates(self):
        for name in sorted(DEMOS):
            bundle = self.path(name)
            self.assertEqual(self.run_cli("demo", name, "-o", bundle)[0], 0)
            code, out, _ = self.run_cli("validate", bundle)
            self.assertEqual((code, out.strip()), (0, "OK"), name)

    def test_init_then_validate(self):
        cloud = LabeledPointCloud(np.array([[0, 0, 0], [1, 0, 0], [5, 0, 0]], dtype=float), None, [1, 1, 2])
        save_cloud(cloud, self.path("cloud.ply"))
        graph = self.write("graph.txt", 'node(1) name="sofa"\nnode(2) name="tv"\nalignment(1,2) axes=z\n')
        portrait = self.write("portrait.txt", "A den.\n")
        code, _, _ = self.run_cli("init", "--cloud", self.path("cloud.ply"), "--graph", graph,
                                  "--portrait", portrait, "-o", self.path("den"))
        self.assertEqual(code, 0)
        self.assertEqual(self.run_cli("validate", self.path("den"))[0], 0)

        with open(self.path("den", "graph.txt"), "a") as fh:
            fh.write("clearance(9)\n")
        code, out, _ = self.run_cli("validate", self.path("den"))
        self.assertEqual(code, 1)
        self.assertIn("UnplacedNode: ", out)

    def test_init_rejects_invalid_context(self):
        save_cloud(LabeledPointCloud(np.zeros((3, 3))), self.path("cloud.ply"))
        graph = self.write("graph.txt", 'node(4) name="ghost"\n')
        portrait = self.write("portrait.txt", "Empty.\n")
        code, _, err = self.run_cli("init", "--cloud", self.path("cloud.ply"), "--graph", graph,
                                    "--portrait", portrait, "-o", self.path("bad"))
        self.assertEqual(code, 1)
        self.assertIn("ValidationFailed: ", err)

    def test_parse_error_location(self):
        self.run_cli("demo", "bedroom", "-o", self.path("b"))
        commands = self.write("cmds.txt", "move 3 t=(0,0,0)\nmove 3 s=abc t=(0,0,0)\n")
        code, _, err = self.run_cli("edit", self.path("b"), "--commands", commands)
        self.assertEqual(code, 1)
        self.assertIn("ParseError: line 2", err)

    def test_usage_errors(self):
        self.run_cli("demo", "bedroom", "-o", self.path("b"))
        self.assertEqual(self.run_cli("frobnicate")[0], 2)
        self.assertEqual(self.run_cli("path", self.path("b"), "--from", "bed")[0], 2)
        code, _, err = self.run_cli("adjust", self.path("b"), "--step-size", "-1")
        self.assertEqual(code, 2)
        self.assertIn("usage error", err)
        self.assertEqual(self.run_cli("validate", self.path("missing"))[0], 1)


if __name__ == '__main__':
    unittest.main()

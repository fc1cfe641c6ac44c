#!/usr/bin/env python3
"""
Unit tests for the pixel-compression analysis

Tests:
- area ratios and per-object samples against an independent projection
- LOWESS exactness, robustness and a weighted-least-squares oracle
- per-class capping and deterministic CSV / SVG outputs
- observing cameras per object for each rig layout
"""

import json
import math
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

sys.path.insert(0, str(Path(__file__).parent))

from core.analysis import (
    CoverageRecord,
    area_ratio,
    camera_coverage,
    compression_samples,
    coverage_summary,
    fit_compression_curve,
    lowess,
    observing_cameras,
    sample_per_class,
    write_compression_outputs,
    write_coverage_outputs,
)
from core.boxes import Box3D
from core.errors import DataError
from core.synth import default_rig, synth_scene


def rig_cameras(layout="4xF+6xP"):
    return default_rig(layout).camera_models()


def reference_area(box, cam):
    """Corner + horizontal-edge-midpoint projection written out by hand"""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    hl, hw, hh = (0.5 * v for v in box.size)
    corners = {}
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                lx, ly = sx * hl, sy * hw
                corners[(sx, sy, sz)] = np.array(
                    [box.center[0] + c * lx - s * ly, box.center[1] + s * lx + c * ly, box.center[2] + sz * hh]
                )
    points = list(corners.values())
    for sz in (-1, 1):
        for sx in (-1, 1):
            points.append(0.5 * (corners[(sx, -1, sz)] + corners[(sx, 1, sz)]))
        for sy in (-1, 1):
            points.append(0.5 * (corners[(-1, sy, sz)] + corners[(1, sy, sz)]))

    rot, t = cam.extrinsics.matrix[:3, :3], cam.extrinsics.matrix[:3, 3]
    uvs, seen = [], False
    for p in points:
        x, y, z = rot.T @ (p - t)
        if cam.lens == "fisheye":
            intr = cam.intrinsics
            theta = math.atan2(math.hypot(y, z), x)
            if theta > intr.theta_max:
                continue
            r = sum(k * theta ** (2 * i + 1) for i, k in enumerate(intr.k))
            psi = math.atan2(-y, z)
            u, v = intr.cx + r * math.cos(psi), intr.cy + r * math.sin(psi)
        else:
            if x <= 1e-12:
                continue
            intr = cam.intrinsics
            u, v = intr.cx + intr.fx * z / x, intr.cy - intr.fy * y / x
        uvs.append((u, v))
        seen = seen or (0 <= u < cam.width and 0 <= v < cam.height)
    if not seen:
        return 0.0
    us, vs = [u for u, _ in uvs], [v for _, v in uvs]
    width = min(max(max(us), 0), cam.width) - min(max(min(us), 0), cam.width)
    height = min(max(max(vs), 0), cam.height) - min(max(min(vs), 0), cam.height)
    return width * height


def local_fit(x, y, weights, at):
    design = np.stack([np.ones_like(x), x - at], axis=1)
    root = np.sqrt(weights)
    coef, *_ = np.linalg.lstsq(design * root[:, None], y * root, rcond=None)
    return coef[0]


def reference_lowess(x, y, frac, iterations):
    """Per-point weighted least squares with tricube and bisquare weights"""
    order = np.argsort(x)
    x, y = x[order], y[order]
    n = len(x)
    k = max(int(math.ceil(frac * n)), 2)
    robustness = np.ones(n)
    fitted = np.zeros(n)
    for step in range(iterations + 1):
        for i in range(n):
            d = np.abs(x - x[i])
            h = np.sort(d)[k - 1]
            u = d / h
            tricube = np.where(u < 1, (1 - u ** 3) ** 3, 0.0)
            fitted[i] = local_fit(x, y, tricube * robustness, x[i])
        if step < iterations:
            residuals = y - fitted
            scale = np.median(np.abs(residuals))
            u = residuals / (6 * scale)
            robustness = np.where(np.abs(u) < 1, (1 - u ** 2) ** 2, 0.0)
    return x, fitted


class TestCompressionSamples(unittest.TestCase):
    """Test per-object area ratios."""

    def test_illustrative_ratio(self):
        """Test the 22x26 fisheye vs 70x80 pinhole example."""
        self.assertAlmostEqual(area_ratio(22, 26, 70, 80), 572 / 5600, places=12)
        self.assertAlmostEqual(area_ratio(22, 26, 70, 80), 0.10214, places=5)
        with self.assertRaises(ValueError):
            area_ratio(10, 10, 0, 5)

    def test_needs_both_lens_types(self):
        """Test that a single-lens rig is rejected."""
        with self.assertRaises(DataError):
            compression_samples([], rig_cameras("4xF"))

    def test_invisible_object_skipped(self):
        """Test that an object hidden from one lens type is counted as skipped."""
        cameras = [c for c in rig_cameras() if c.id in ("fisheye_front", "cam_front")]
        behind = Box3D((-30.0, 0.0, 0.8), (4.5, 1.9, 1.6), 0.0, "car", track_id="hidden")
        ahead = Box3D((12.0, 1.0, 0.8), (4.5, 1.9, 1.6), 0.3, "car", track_id="seen")
        samples, skipped = compression_samples([("f0", [behind, ahead])], cameras)
        self.assertEqual(skipped, 1)
        self.assertEqual([s.object_id for s in samples], ["f0/seen"])

    def test_matches_hand_projection(self):
        """Test ratios against an independent corner projection of every camera."""
        cameras = rig_cameras()
        rng = np.random.default_rng(0)
        boxes = []
        for i in range(15):
            r, bearing = rng.uniform(5, 35), rng.uniform(-math.pi, math.pi)
            size = (rng.uniform(0.6, 8), rng.uniform(0.6, 2.6), rng.uniform(1.4, 3.2))
            boxes.append(Box3D((r * math.cos(bearing), r * math.sin(bearing), size[2] / 2), size, rng.uniform(-3, 3), "car", track_id=str(i)))
        samples, _ = compression_samples([("f", boxes)], cameras)
        self.assertGreater(len(samples), 0)
        by_id = {b.track_id: b for b in boxes}
        for sample in samples:
            box = by_id[sample.object_id.split("/")[1]]
            fish = max(reference_area(box, c) for c in cameras if c.lens == "fisheye")
            pin = max(reference_area(box, c) for c in cameras if c.lens == "pinhole")
            self.assertAlmostEqual(sample.fisheye_area, fish, delta=1e-6 * max(fish, 1.0))
            self.assertAlmostEqual(sample.ratio, fish / pin, delta=1e-6)
            self.assertAlmostEqual(sample.distance, float(np.linalg.norm(box.center)), places=12)

    def test_camera_order_irrelevant(self):
        """Test that enumerating cameras in reverse gives the same samples."""
        manifest = synth_scene(seed=2, n_frames=2, n_objects=6)
        frames = [(f.frame_id, f.boxes()) for f in manifest.frames()]
        cameras = rig_cameras()
        forward, _ = compression_samples(frames, cameras)
        backward, _ = compression_samples(frames, cameras[::-1])
        self.assertEqual(forward, backward)

    def test_fisheye_compresses_beyond_three_meters(self):
        """Test that the fitted area ratio stays below 1 past 3 m and falls with distance."""
        manifest = synth_scene(seed=7, n_frames=5, n_objects=20)
        frames = [(f.frame_id, f.boxes()) for f in manifest.frames()]
        near = [
            Box3D(
                (r * math.cos(math.radians(bearing)), r * math.sin(math.radians(bearing)), 0.9),
                (0.8, 0.8, 1.8), 0.0, "pedestrian", track_id=f"near-{r}-{bearing}",
            )
            for r in (3.5, 4.5, 5.5)
            for bearing in (0, 55, 110, 180, -110, -55)
        ]
        frames.append(("near", near))
        samples, _ = compression_samples(frames, rig_cameras())
        close = [s for s in samples if s.object_id.startswith("near/")]
        self.assertEqual(len(close), len(near))
        self.assertTrue(all(s.ratio < 1.0 for s in close))
        self.assertGreaterEqual(len(samples), 30)

        x, fitted = fit_compression_curve(samples)
        self.assertTrue(np.all(fitted[x > 3.0] < 1.0))
        self.assertGreater(x.max() - x.min(), 15.0)
        self.assertLess(np.polyfit(x, fitted, 1)[0], 0.0)


class TestLowess(unittest.TestCase):
    """Test the robust local regression."""

    def test_linear_exact(self):
        """Test that collinear data is reproduced for several fractions and passes."""
        x = np.random.default_rng(0).uniform(0, 20, 40)
        y = 2 * x + 1
        for frac in (0.2, 0.5, 1.0):
            for iterations in (0, 3):
                xs, fitted = lowess(x, y, frac, iterations)
                np.testing.assert_allclose(fitted, 2 * xs + 1, atol=1e-9)

    def test_large_scatter(self):
        """Test a scatter of several thousand points, as an uncapped dataset gives."""
        x = np.random.default_rng(3).uniform(0, 40, 3000)
        xs, fitted = lowess(x, 0.2 - 0.004 * x, 0.3, 1)
        self.assertEqual(len(fitted), 3000)
        np.testing.assert_allclose(fitted, 0.2 - 0.004 * xs, atol=1e-9)

    def test_constant(self):
        """Test that constant data stays constant."""
        _, fitted = lowess(np.arange(10.0), np.full(10, 3.5))
        np.testing.assert_allclose(fitted, 3.5, atol=1e-12)

    def test_sorted_output(self):
        """Test that the output is evaluated at the sorted inputs."""
        xs, _ = lowess([3.0, 1.0, 2.0, 0.0], [1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(xs, [0.0, 1.0, 2.0, 3.0])

    def test_degenerate_x(self):
        """Test the robust mean when every x is equal."""
        xs, fitted = lowess([2.0] * 6, [1.0, 1.0, 1.0, 1.0, 1.0, 50.0])
        np.testing.assert_array_equal(xs, [2.0] * 6)
        self.assertTrue(np.allclose(fitted, fitted[0]))
        self.assertAlmostEqual(fitted[0], 1.0, places=9)

    def test_weighted_least_squares_oracle(self):
        """Test 50 noisy points against per-point weighted least squares."""
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 40, 50)
        y = 1 / (1 + 0.1 * x) + rng.normal(scale=0.05, size=50)
        for iterations in (0, 2):
            xs, fitted = lowess(x, y, 0.5, iterations)
            ref_x, ref_fit = reference_lowess(x, y, 0.5, iterations)
            np.testing.assert_array_equal(xs, ref_x)
            np.testing.assert_allclose(fitted, ref_fit, atol=1e-8)

    def test_outlier_resistance(self):
        """Test that one gross outlier barely moves the fit far away from it."""
        x = np.linspace(0, 10, 50)
        y = 0.5 * x + np.random.default_rng(2).normal(scale=0.01, size=50)
        clean = lowess(x, y, 0.5, 3)[1]
        y_out = y.copy()
        y_out[5] += 100.0
        dirty = lowess(x, y_out, 0.5, 3)[1]
        self.assertLess(abs(dirty[45] - clean[45]), 10.0)
        self.assertLess(abs(dirty[5] - clean[5]), 10.0)

    def test_invalid_arguments(self):
        """Test too few points and bad fractions."""
        with self.assertRaises(ValueError):
            lowess([1.0, 2.0], [1.0, 2.0])
        with self.assertRaises(ValueError):
            lowess([1.0, 2.0, 3.0], [1.0, 2.0, 3.0], frac=0.0)
        with self.assertRaises(ValueError):
            lowess([1.0, 2.0, 3.0], [1.0, 2.0], frac=0.5)


class TestOutputs(unittest.TestCase):
    """Test sampling caps and written artifacts."""

    @classmethod
    def setUpClass(cls):
        manifest = synth_scene(seed=4, n_frames=3, n_objects=10)
        frames = [(f.frame_id, f.boxes()) for f in manifest.frames()]
        cls.samples, _ = compression_samples(frames, rig_cameras())

    def test_per_class_cap(self):
        """Test that capping keeps at most cap per class and is seeded."""
        capped = sample_per_class(self.samples, cap=2, seed=9)
        counts = pd.Series([s.label for s in capped]).value_counts()
        self.assertTrue((counts <= 2).all())
        self.assertEqual(capped, sample_per_class(self.samples, cap=2, seed=9))
        self.assertEqual(len(sample_per_class(self.samples, cap=10_000)), len(self.samples))

    def test_files_deterministic(self):
        """Test CSV columns and byte-identical SVGs across runs."""
        curve = fit_compression_curve(self.samples)
        with tempfile.TemporaryDirectory() as tmp:
            first = write_compression_outputs(self.samples, curve, Path(tmp) / "a")
            second = write_compression_outputs(self.samples, curve, Path(tmp) / "b")
            scatter = pd.read_csv(first["scatter"])
            curve_table = pd.read_csv(first["curve"])
            for key in ("scatter", "curve", "plot"):
                self.assertEqual(first[key].read_bytes(), second[key].read_bytes(), key)
            svg = first["plot"].read_text(encoding="utf-8")
        self.assertEqual(list(scatter.columns)[:3], ["distance", "ratio", "class"])
        self.assertEqual(len(scatter), len(self.samples))
        self.assertEqual(list(curve_table.columns), ["distance", "fitted_ratio"])
        self.assertTrue(svg.lstrip().startswith("<?xml"))



class TestCoverage(unittest.TestCase):
    """Test per-layout camera coverage."""

    car_ahead = Box3D((12.0, 0.0, 0.8), (4.5, 1.9, 1.6), 0.0, "car", track_id="ahead")
    pedestrian_near = Box3D((4.0, 0.0, 0.9), (0.8, 0.8, 1.8), 0.0, "pedestrian", track_id="near")

    def test_observers_per_layout(self):
        """Test which cameras of each layout see a car 12 m ahead."""
        self.assertEqual(
            observing_cameras(self.car_ahead, rig_cameras("4xF")),
            ("fisheye_front", "fisheye_left", "fisheye_right"),
        )
        self.assertEqual(observing_cameras(self.car_ahead, rig_cameras("6xP")), ("cam_front",))
        self.assertEqual(observing_cameras(self.car_ahead, rig_cameras("4xP-no-front-rear")), ())

    def test_near_blind_spot(self):
        """Test that side pinholes miss a pedestrian 4 m ahead while the fisheyes see it."""
        frames = [("f0", [self.car_ahead, self.pedestrian_near])]
        sides = camera_coverage(frames, rig_cameras("4xP-no-front-rear"))
        fisheyes = camera_coverage(frames, rig_cameras("4xF"))
        self.assertEqual([r.object_id for r in sides], ["f0/ahead", "f0/near"])
        self.assertEqual(coverage_summary(sides)["near_unobserved"], 1)
        self.assertEqual(coverage_summary(sides)["unobserved"], 2)
        self.assertIn("fisheye_front", fisheyes[1].cameras)
        self.assertEqual(coverage_summary(fisheyes)["unobserved"], 0)
        self.assertAlmostEqual(sides[1].distance, math.hypot(4.0, 0.9), places=12)
        self.assertAlmostEqual(sides[0].azimuth_deg, 0.0, places=12)

    def test_summary_counts(self):
        """Test unobserved, single-view and multi-view counts."""
        records = [
            CoverageRecord("f/a", "car", 2.0, 0.0, ()),
            CoverageRecord("f/b", "car", 8.0, 90.0, ()),
            CoverageRecord("f/c", "car", 10.0, 0.0, ("x",)),
            CoverageRecord("f/d", "bus", 20.0, 45.0, ("x", "y", "z")),
        ]
        summary = coverage_summary(records, near_range=5.0)
        self.assertEqual(summary["objects"], 4)
        self.assertEqual(summary["unobserved"], 2)
        self.assertEqual(summary["near_unobserved"], 1)
        self.assertEqual(summary["single_view"], 1)
        self.assertEqual(summary["multi_view"], 1)
        self.assertAlmostEqual(summary["mean_observers"], 1.0)
        self.assertEqual(summary["observer_histogram"], {"0": 2, "1": 1, "3": 1})
        self.assertEqual(coverage_summary([])["mean_observers"], 0.0)

    def test_outputs(self):
        """Test the coverage table and per-layout summary files."""
        frames = [("f0", [self.car_ahead, self.pedestrian_near])]
        per_layout = {name: camera_coverage(frames, rig_cameras(name)) for name in ("4xF", "6xP")}
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_coverage_outputs(per_layout, tmp)
            table = pd.read_csv(paths["table"], keep_default_na=False)
            summary = json.loads(paths["summary"].read_text(encoding="utf-8"))
        self.assertEqual(list(table.columns), ["layout", "object_id", "class", "distance", "azimuth_deg", "observers", "cameras"])
        self.assertEqual(len(table), 4)
        self.assertEqual(sorted(summary), ["4xF", "6xP"])
        ahead = table[(table["layout"] == "6xP") & (table["object_id"] == "f0/ahead")].iloc[0]
        self.assertEqual(ahead["cameras"], "cam_front")
        self.assertEqual(int(ahead["observers"]), 1)

def run_tests():
    """Run all tests with detailed output."""
    loader = unittest.TestLoader()
    suite = loader.loadTestsFromModule(sys.modules[__name__])
    runner = unittest.TextTestRunner(verbosity=2)
    result = runner.run(suite)
    return result.wasSuccessful()


if __name__ == "__main__":
    success = run_tests()
    sys.exit(0 if success else 1)

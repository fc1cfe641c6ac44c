#!/usr/bin/env python3
"""
Unit tests for oriented boxes

Tests:
- Box3D validation and yaw wrapping
- corners and edge samples
- image-plane projection for pinhole and fisheye cameras
- aligned IoU, planar center distance and orientation error
"""

import math
import sys
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from core.boxes import (
    BBox2D,
    Box3D,
    aligned_iou,
    box_corners,
    box_sample_points,
    center_distance_2d,
    project_box,
    wrap_angle,
    yaw_error,
    yaw_rotation,
)
from core.geometry import CameraModel, Extrinsics, FisheyeIntrinsics
from core.synth import default_fisheye, default_pinhole


def car(center, yaw=0.0, size=(4.5, 1.9, 1.6)):
    return Box3D(center, size, yaw, "car")


class TestBox3D(unittest.TestCase):
    """Test box construction."""

    def test_yaw_wrapped(self):
        """Test that yaw lands in (-pi, pi]."""
        self.assertAlmostEqual(car((0, 0, 0), 1.5 * math.pi).yaw, -0.5 * math.pi)
        self.assertEqual(car((0, 0, 0), -math.pi).yaw, math.pi)
        self.assertEqual(wrap_angle(math.pi), math.pi)

    def test_invalid_boxes(self):
        """Test that bad sizes, centers, yaws and scores are rejected."""
        for yaw in (math.nan, math.inf, -math.inf):
            with self.assertRaises(ValueError):
                Box3D((0, 0, 0), (1, 1, 1), yaw, "car")
        with self.assertRaises(ValueError):
            Box3D((0, 0, 0), (1, math.inf, 1), 0.0, "car")
        with self.assertRaises(ValueError):
            Box3D((0, 0, 0), (1, 0, 1), 0.0, "car")
        with self.assertRaises(ValueError):
            Box3D((0, math.nan, 0), (1, 1, 1), 0.0, "car")
        with self.assertRaises(ValueError):
            Box3D((0, 0, 0), (1, 1, 1), 0.0, "car", score=1.2)

    def test_prediction_flag(self):
        """Test that only scored boxes are predictions."""
        self.assertFalse(car((0, 0, 0)).is_prediction)
        self.assertTrue(Box3D((0, 0, 0), (1, 1, 1), 0.0, "car", score=0.4).is_prediction)


class TestCorners(unittest.TestCase):
    """Test corner and sample-point generation."""

    def test_unit_cube(self):
        """Test the axis-aligned unit cube at the origin."""
        corners = box_corners(Box3D((0, 0, 0), (1, 1, 1), 0.0, "car"))
        self.assertEqual({tuple(c) for c in corners}, {(x, y, z) for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)})

    def test_quarter_turn_swaps_extents(self):
        """Test that yaw pi/2 exchanges the length and width extents."""
        corners = box_corners(Box3D((0, 0, 0), (4.0, 2.0, 1.0), math.pi / 2, "car"))
        np.testing.assert_allclose(np.ptp(corners, axis=0), [2.0, 4.0, 1.0], atol=1e-12)

    def test_matrix_oracle(self):
        """Test random boxes against rotation-matrix corners and the centroid."""
        rng = np.random.default_rng(0)
        for _ in range(20):
            box = Box3D(rng.normal(scale=10, size=3), rng.uniform(0.5, 5, 3), rng.uniform(-3, 3), "car")
            corners = box_corners(box)
            rot = yaw_rotation(box.yaw)
            for corner in corners:
                local = rot.T @ (corner - np.asarray(box.center))
                np.testing.assert_allclose(np.abs(local), 0.5 * np.asarray(box.size), atol=1e-12)
            np.testing.assert_allclose(corners.mean(axis=0), box.center, atol=1e-12)

    def test_sample_point_counts(self):
        """Test 16 points by default and densified edges otherwise."""
        box = car((0, 0, 0))
        self.assertEqual(len(box_sample_points(box)), 16)
        self.assertEqual(len(box_sample_points(box, edge_samples=3)), 8 + 12 * 3)


class TestProjectBox(unittest.TestCase):
    """Test image-plane bounding boxes."""

    def setUp(self):
        self.pinhole = default_pinhole("cam_front", (0.0, 0.0, 1.0), 0.0)
        self.fisheye = default_fisheye("fisheye_front", (0.0, 0.0, 1.0), 0.0)

    def test_on_axis_box_centered(self):
        """Test that a box on the optical axis is centered on the principal point."""
        bbox = project_box(car((10.0, 0.0, 1.0)), self.pinhole)
        self.assertIsNotNone(bbox)
        u, v = bbox.center
        self.assertAlmostEqual(u, self.pinhole.intrinsics.cx, places=9)
        self.assertAlmostEqual(v, self.pinhole.intrinsics.cy, places=9)

    def test_behind_pinhole(self):
        """Test that a box behind the pinhole camera is invisible."""
        self.assertIsNone(project_box(car((-10.0, 0.0, 1.0)), self.pinhole))

    def test_fisheye_smaller_than_pinhole(self):
        """Test that a car at 10 m covers less area in the fisheye image."""
        box = car((10.0, 0.0, 0.8))
        fish = project_box(box, self.fisheye)
        pin = project_box(box, self.pinhole)
        self.assertLess(fish.area, pin.area)

    def test_behind_pinhole_visible_to_fisheye(self):
        """Test that a box beside the car is seen by a 220 deg lens only."""
        box = car((-0.5, 6.0, 0.8))
        self.assertIsNone(project_box(box, self.pinhole))
        self.assertIsNotNone(project_box(box, self.fisheye))

    def test_narrower_fov_never_enlarges(self):
        """Test that shrinking the lens FoV gives a bbox no larger than before."""
        wide = self.fisheye
        narrow_intr = FisheyeIntrinsics(k=wide.intrinsics.k, cx=400.0, cy=400.0, fov=math.radians(160.0))
        narrow = CameraModel("narrow", "fisheye", narrow_intr, wide.extrinsics, 800, 800)
        for center in ((-1.0, 5.0, 0.8), (8.0, 3.0, 0.8), (2.0, -6.0, 0.8)):
            big = project_box(car(center), wide)
            small = project_box(car(center), narrow)
            self.assertIsNotNone(big)
            if small is not None:
                self.assertLessEqual(small.area, big.area + 1e-9)
                self.assertGreaterEqual(small.u_min, big.u_min - 1e-9)
                self.assertLessEqual(small.u_max, big.u_max + 1e-9)

    def test_clipped_to_image(self):
        """Test that a partially visible box is clipped to the image bounds."""
        bbox = project_box(car((3.0, 2.5, 1.0)), self.pinhole)
        self.assertIsNotNone(bbox)
        self.assertEqual(bbox.u_min, 0.0)
        self.assertLessEqual(bbox.u_max, self.pinhole.width)

    def test_identity_camera(self):
        """Test projection through an identity-mounted fisheye."""
        intr = FisheyeIntrinsics.fit_image_circle(math.radians(190), 300, 300, 300)
        cam = CameraModel("id", "fisheye", intr, Extrinsics.identity(), 600, 600)
        bbox = project_box(Box3D((5.0, 0.0, 0.0), (1, 1, 1), 0.0, "car"), cam)
        u, v = bbox.center
        self.assertAlmostEqual(u, 300.0, places=9)
        self.assertAlmostEqual(v, 300.0, places=9)


class TestBBox2D(unittest.TestCase):
    """Test image box overlap."""

    def test_iou(self):
        """Test identical, half-overlapping and disjoint boxes."""
        a = BBox2D(0, 0, 2, 2)
        self.assertEqual(a.iou(a), 1.0)
        self.assertAlmostEqual(a.iou(BBox2D(1, 0, 3, 2)), 1 / 3)
        self.assertEqual(a.iou(BBox2D(5, 5, 6, 6)), 0.0)


class TestBoxMeasures(unittest.TestCase):
    """Test the measures used by evaluation."""

    def test_aligned_iou(self):
        """Test identical sizes, the half-volume case and a vanishing box."""
        gt = Box3D((0, 0, 0), (4, 2, 1.5), 0.0, "car")
        self.assertEqual(aligned_iou(gt, gt), 1.0)
        pred = Box3D((9, 9, 9), (2, 2, 1.5), 1.0, "car", score=0.5)
        self.assertAlmostEqual(aligned_iou(gt, pred), 0.5)
        tiny = Box3D((0, 0, 0), (1e-6, 1e-6, 1e-6), 0.0, "car")
        self.assertLess(aligned_iou(gt, tiny), 1e-15)

    def test_aligned_iou_symmetric(self):
        """Test symmetry and the (0, 1] range on random sizes."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            a = Box3D((0, 0, 0), rng.uniform(0.1, 5, 3), 0.0, "car")
            b = Box3D((0, 0, 0), rng.uniform(0.1, 5, 3), 0.0, "car")
            self.assertAlmostEqual(aligned_iou(a, b), aligned_iou(b, a), places=12)
            self.assertTrue(0.0 < aligned_iou(a, b) <= 1.0)

    def test_center_distance(self):
        """Test that only x and y contribute."""
        gt = Box3D((1, 1, 0), (1, 1, 1), 0.0, "car")
        self.assertEqual(center_distance_2d(gt, gt), 0.0)
        self.assertAlmostEqual(center_distance_2d(gt, Box3D((4, 5, 7), (1, 1, 1), 0.0, "car")), 5.0)
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = rng.normal(size=(2, 3))
            expected = math.hypot(a[0] - b[0], a[1] - b[1])
            box_a = Box3D(a, (1, 1, 1), 0.0, "car")
            box_b = Box3D(b, (1, 1, 1), 0.0, "car")
            self.assertAlmostEqual(center_distance_2d(box_a, box_b), expected, places=12)

    def test_yaw_error(self):
        """Test equal, opposite and wrapped headings."""
        def box(yaw):
            return Box3D((0, 0, 0), (1, 1, 1), yaw, "car")

        self.assertEqual(yaw_error(box(0.4), box(0.4)), 0.0)
        self.assertAlmostEqual(yaw_error(box(0.0), box(math.pi)), math.pi)
        self.assertAlmostEqual(yaw_error(box(-3.0), box(3.0)), 2 * math.pi - 6, places=12)

    def test_yaw_error_metric(self):
        """Test symmetry, range and the triangle inequality on the circle."""
        rng = np.random.default_rng(3)
        for _ in range(100):
            a, b, c = (Box3D((0, 0, 0), (1, 1, 1), y, "car") for y in rng.uniform(-math.pi, math.pi, 3))
            self.assertAlmostEqual(yaw_error(a, b), yaw_error(b, a), places=12)
            self.assertTrue(0.0 <= yaw_error(a, b) <= math.pi)
            self.assertLessEqual(yaw_error(a, c), yaw_error(a, b) + yaw_error(b, c) + 1e-12)


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

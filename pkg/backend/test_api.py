#!/usr/bin/env python3
"""
Tests for the FastAPI backend

Covers:
- root and health endpoints
- /api/fds composition
- /api/evaluate with uploaded manifest and predictions
- /api/project through a fisheye camera spec
"""

import json
import sys
import unittest
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from fastapi.testclient import TestClient

from backend.main import app
from core.data_loader import canonical_json, predictions_file
from core.schema import CameraSpec
from core.synth import default_fisheye, default_rig, synth_scene


def _scene_documents():
    manifest = synth_scene(seed=3, n_frames=3, n_objects=4, rig=default_rig("4xF"))
    predictions = {
        frame.frame_id: [replace(b, score=0.9) for b in frame.boxes()]
        for frame in manifest.frames()
    }
    return canonical_json(manifest), canonical_json(predictions_file(predictions))


class TestServiceInfo(unittest.TestCase):
    """Test the informational endpoints."""

    def setUp(self):
        self.client = TestClient(app)

    def test_root(self):
        """Test that the root endpoint names the service and its docs."""
        response = self.client.get("/")
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["docs"], "/docs")

    def test_health(self):
        """Test that health reports the evaluated classes."""
        response = self.client.get("/api/health")
        self.assertEqual(response.status_code, 200)
        body = response.json()
        self.assertEqual(body["status"], "healthy")
        self.assertIn("pedestrian", body["classes"])


class TestFdsEndpoint(unittest.TestCase):
    """Test FDS composition over HTTP."""

    def setUp(self):
        self.client = TestClient(app)

    def test_published_row(self):
        """Test that the worked example components give 0.563."""
        response = self.client.post(
            "/api/fds", json={"mean_ap": 0.506, "mate": 0.458, "mase": 0.161, "maoe": 0.520}
        )
        self.assertEqual(response.status_code, 200)
        self.assertAlmostEqual(response.json()["fds"], 0.563, delta=0.001)

    def test_out_of_range_map_rejected(self):
        """Test that an mAP above 1 is a validation error."""
        response = self.client.post("/api/fds", json={"mean_ap": 1.5, "mate": 0.1, "mase": 0.1, "maoe": 0.1})
        self.assertEqual(response.status_code, 422)


class TestEvaluateEndpoint(unittest.TestCase):
    """Test evaluation of uploaded documents."""

    @classmethod
    def setUpClass(cls):
        cls.manifest_json, cls.predictions_json = _scene_documents()

    def setUp(self):
        self.client = TestClient(app)

    def test_perfect_predictions(self):
        """Test that predictions equal to the ground truth score FDS 1."""
        response = self.client.post(
            "/api/evaluate",
            files={
                "manifest": ("manifest.json", self.manifest_json, "application/json"),
                "predictions": ("predictions.json", self.predictions_json, "application/json"),
            },
        )
        self.assertEqual(response.status_code, 200, response.text)
        report = response.json()
        self.assertAlmostEqual(report["fds"], 1.0, places=9)
        self.assertEqual(report["num_frames"], 3)

    def test_misaligned_frames(self):
        """Test that predictions missing a frame are rejected."""
        preds = json.loads(self.predictions_json)
        preds["frames"].pop(sorted(preds["frames"])[0])
        response = self.client.post(
            "/api/evaluate",
            files={
                "manifest": ("manifest.json", self.manifest_json, "application/json"),
                "predictions": ("predictions.json", json.dumps(preds), "application/json"),
            },
        )
        self.assertEqual(response.status_code, 422)
        self.assertIn("MisalignedFrames", response.json()["detail"])

    def test_invalid_json(self):
        """Test that a non-JSON upload is a bad request."""
        response = self.client.post(
            "/api/evaluate",
            files={
                "manifest": ("manifest.json", "not json", "application/json"),
                "predictions": ("predictions.json", self.predictions_json, "application/json"),
            },
        )
        self.assertEqual(response.status_code, 400)


class TestProjectEndpoint(unittest.TestCase):
    """Test projection through a serialized camera."""

    def setUp(self):
        self.client = TestClient(app)
        cam = default_fisheye("front", (0.0, 0.0, 1.0), 0.0)
        self.camera = json.loads(CameraSpec.from_camera(cam).model_dump_json())

    def test_optical_axis_hits_principal_point(self):
        """Test that a point straight ahead lands on the principal point."""
        response = self.client.post("/api/project", json={"camera": self.camera, "points": [[5.0, 0.0, 0.0]]})
        self.assertEqual(response.status_code, 200)
        u, v = response.json()["pixels"][0]
        self.assertAlmostEqual(u, 400.0, places=9)
        self.assertAlmostEqual(v, 400.0, places=9)

    def test_point_behind_lens_is_invalid(self):
        """Test that a point outside the 220 deg field of view is null."""
        response = self.client.post("/api/project", json={"camera": self.camera, "points": [[-5.0, 0.0, 0.0]]})
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["valid"], [False])
        self.assertIsNone(response.json()["pixels"][0])


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

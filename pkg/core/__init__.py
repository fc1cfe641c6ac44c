"""
Fisheye Sense Core Package
Camera geometry, rectification grids, lift-splat, boxes, evaluation,
pixel-compression analysis and the dataset layer
"""

from .analysis import compression_samples, fit_compression_curve, lowess
from .boxes import BBox2D, Box3D, project_box
from .data_loader import DatasetLoader, load_manifest, load_predictions, save_manifest, split, subsample
from .errors import FisheyeSenseError
from .evaluation import EvalConfig, MetricsReport, evaluate, fds
from .frustum import BevGridSpec, DepthBinning, build_frustum, lift, splat
from .geometry import CameraModel, Extrinsics, FisheyeIntrinsics, PinholeIntrinsics
from .schema import DatasetManifest, PredictionsFile, RigCalibration
from .synth import default_rig, synth_scene
from .warp import GridSpec, SamplingGrid, apply_grid, build_grid, rectify_image

__all__ = [
    'BBox2D', 'BevGridSpec', 'Box3D', 'CameraModel', 'DatasetLoader', 'DatasetManifest', 'DepthBinning',
    'EvalConfig', 'Extrinsics', 'FisheyeIntrinsics', 'FisheyeSenseError', 'GridSpec', 'MetricsReport',
    'PinholeIntrinsics', 'PredictionsFile', 'RigCalibration', 'SamplingGrid', 'apply_grid', 'build_frustum',
    'build_grid', 'compression_samples', 'default_rig', 'evaluate', 'fds', 'fit_compression_curve', 'lift',
    'load_manifest', 'load_predictions', 'lowess', 'project_box', 'rectify_image', 'save_manifest', 'split',
    'splat', 'subsample', 'synth_scene',
]

"""
FastAPI Backend for Fisheye Sense
REST endpoints for the Fisheye Detection Score, full evaluation of uploaded
manifests and predictions, and projection through a camera model
"""

import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from fastapi import FastAPI, File, HTTPException, Query, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.config import AppConfig, load_config
from core.data_loader import ground_truth_by_frame, parse_document, predictions_by_frame
from core.errors import FisheyeSenseError, NumericalFailure
from core.evaluation import MetricsReport, evaluate, fds
from core.schema import CameraSpec, DatasetManifest, PredictionsFile

logger = logging.getLogger(__name__)

API_VERSION = "1.0.0"

# Initialize FastAPI app
app = FastAPI(
    title="Fisheye Sense API",
    description="Fisheye surround-view evaluation and camera-model API",
    version=API_VERSION,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Loaded on startup
app_config: AppConfig = AppConfig()


# Pydantic Models
class FdsRequest(BaseModel):
    """Detection components to combine"""
    mean_ap: float = Field(..., ge=0, le=1, description="Mean AP", examples=[0.506])
    mate: float = Field(..., ge=0, description="Mean translation error (m)", examples=[0.458])
    mase: float = Field(..., ge=0, description="Mean scale error", examples=[0.161])
    maoe: float = Field(..., ge=0, description="Mean orientation error (rad)", examples=[0.520])


class FdsResponse(BaseModel):
    fds: float
    mean_ap: float
    mate: float
    mase: float
    maoe: float


class ProjectRequest(BaseModel):
    """Points in the camera frame (x forward, y up, z right) to project"""
    camera: CameraSpec
    points: List[List[float]] = Field(..., min_length=1, description="Camera-frame points, meters")
    require_in_image: bool = Field(True, description="Also mark pixels outside the image invalid")


class ProjectResponse(BaseModel):
    camera_id: str
    pixels: List[Optional[List[float]]]
    valid: List[bool]


class HealthResponse(BaseModel):
    status: str
    message: str
    version: str
    classes: List[str]


def _http_error(exc: Exception) -> HTTPException:
    status = 500 if isinstance(exc, NumericalFailure) else 422
    return HTTPException(status_code=status, detail=f"{type(exc).__name__}: {exc}")


async def _read_upload(upload: UploadFile, model, name: str):
    try:
        data = json.loads(await upload.read())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise HTTPException(status_code=400, detail=f"{name} is not valid JSON: {e}")
    return parse_document(model, data, name)


# Startup event
@app.on_event("startup")
async def startup_event():
    """Load configuration defaults"""
    global app_config
    try:
        app_config = load_config()
        logger.info("Fisheye Sense API initialized (%d classes)", len(app_config.eval.classes))
    except FisheyeSenseError as e:
        logger.warning("Could not load config, using built-in defaults: %s", e)
        app_config = AppConfig()


# Routes

@app.get("/", response_model=Dict[str, str])
async def root():
    """Root endpoint"""
    return {
        "message": "Fisheye Sense API",
        "version": API_VERSION,
        "docs": "/docs",
        "health": "/api/health",
    }


@app.get("/api/health", response_model=HealthResponse)
async def health_check():
    """Health check endpoint"""
    return HealthResponse(
        status="healthy",
        message="API is running",
        version=API_VERSION,
        classes=list(app_config.eval.classes),
    )


@app.post("/api/fds", response_model=FdsResponse)
async def compute_fds(request: FdsRequest):
    """
    Fisheye Detection Score from mAP and the three TP error means

    **Example**: mAP 0.506, mATE 0.458, mASE 0.161, mAOE 0.520 gives 0.563
    """
    try:
        score = fds(request.mean_ap, request.mate, request.mase, request.maoe)
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e))
    return FdsResponse(fds=score, **request.model_dump())


@app.post("/api/evaluate", response_model=MetricsReport)
async def evaluate_uploads(
    manifest: UploadFile = File(..., description="Dataset manifest JSON with annotations"),
    predictions: UploadFile = File(..., description="Predictions JSON"),
    tp_threshold: Optional[float] = Query(None, gt=0, description="TP threshold override (m)"),
    max_range: Optional[float] = Query(None, gt=0, description="Radial range filter (m)"),
):
    """
    Evaluate uploaded predictions against the manifest's annotations

    Both files must cover the same frame ids.
    """
    gt_doc = await _read_upload(manifest, DatasetManifest, "manifest")
    pred_doc = await _read_upload(predictions, PredictionsFile, "predictions")

    overrides = {k: v for k, v in {"tp_threshold": tp_threshold, "max_range": max_range}.items() if v is not None}
    config = app_config.eval.model_copy(update=overrides)
    try:
        return evaluate(ground_truth_by_frame(gt_doc), predictions_by_frame(pred_doc), config)
    except (FisheyeSenseError, ValueError) as e:
        raise _http_error(e)


@app.post("/api/project", response_model=ProjectResponse)
async def project_points(request: ProjectRequest):
    """
    Project camera-frame points to pixels

    Points outside the field of view (or the image) come back as null with
    valid = false.
    """
    if any(len(p) != 3 for p in request.points):
        raise HTTPException(status_code=422, detail="every point needs three coordinates")
    try:
        cam = request.camera.to_camera()
        uv, valid = cam.project_masked(request.points, require_in_image=request.require_in_image)
    except (FisheyeSenseError, ValueError) as e:
        raise _http_error(e)
    pixels = [[float(u), float(v)] if ok else None for (u, v), ok in zip(uv.tolist(), valid.tolist())]
    return ProjectResponse(camera_id=cam.id, pixels=pixels, valid=[bool(v) for v in valid])


# Run with: uvicorn backend.main:app --reload --host 0.0.0.0 --port 8000
if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)

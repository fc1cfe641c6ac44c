"""
Application configuration
Defaults live in config/default.yaml; every section is a pydantic model so a
bad value fails fast with the offending key.
"""

import logging
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, Field, ValidationError

from .errors import SchemaError
from .evaluation import EvalConfig
from .frustum import BevGridSpec, DepthBinning

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "default.yaml"


class LowessConfig(BaseModel):
    frac: float = Field(0.5, gt=0, le=1, description="Neighbourhood fraction")
    iterations: int = Field(3, ge=0, description="Robustness passes")
    per_class_cap: int = Field(100, gt=0, description="Maximum objects per class in the scatter")
    edge_samples: int = Field(1, ge=1, description="Points per box edge when projecting")


class BinningConfig(BaseModel):
    r_min: float = Field(1.0, gt=0)
    r_max: float = Field(68.0, gt=0)
    count: int = Field(67, ge=1)
    spacing: Literal["uniform", "quadratic"] = "uniform"

    def build(self) -> DepthBinning:
        return DepthBinning(self.r_min, self.r_max, self.count, self.spacing)


class BevConfig(BaseModel):
    half_extent: float = Field(48.0, gt=0, description="BEV covers [-half, half] in x and y (m)")
    cell_size: float = Field(0.5, gt=0)
    z_min: float = -5.0
    z_max: float = 5.0

    def build(self) -> BevGridSpec:
        h = self.half_extent
        return BevGridSpec(-h, h, -h, h, self.cell_size, self.z_min, self.z_max)


class GridConfig(BaseModel):
    height: Optional[int] = Field(None, gt=0, description="Target height; source height when unset")
    width: Optional[int] = Field(None, gt=0, description="Target width; source width when unset")
    sample_mode: Literal["bilinear", "nearest"] = "bilinear"


class SynthConfig(BaseModel):
    hz: float = Field(10.0, gt=0)
    ego_speed: float = Field(2.0, ge=0)
    layout: str = "4xF+6xP"


class AppConfig(BaseModel):
    eval: EvalConfig = Field(default_factory=EvalConfig)
    lowess: LowessConfig = Field(default_factory=LowessConfig)
    binning: BinningConfig = Field(default_factory=BinningConfig)
    bev: BevConfig = Field(default_factory=BevConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)


def load_config(path: Union[str, Path, None] = None) -> AppConfig:
    """
    Read a YAML config; missing sections and keys fall back to the defaults

    Raises:
        SchemaError: unreadable YAML or invalid values
    """
    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if not path.exists():
        if path == DEFAULT_CONFIG_PATH:
            logger.debug("No default config at %s, using built-in defaults", path)
            return AppConfig()
        raise SchemaError(f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as exc:
        raise SchemaError(f"{path}: invalid YAML ({exc})") from exc
    try:
        return AppConfig.model_validate(data)
    except ValidationError as exc:
        pointers = ["/" + "/".join(str(p) for p in err["loc"]) for err in exc.errors()]
        raise SchemaError(f"{path}: {exc.errors()[0]['msg']}", pointers) from exc

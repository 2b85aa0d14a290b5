"""
Configuration and constants for the texroi pipeline.
"""
import hashlib
import json
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

# Load environment variables
load_dotenv()

# Run Configuration
OUTPUT_DIR = os.getenv("TEXROI_OUT", "texroi_out")
DEFAULT_JOBS = int(os.getenv("TEXROI_JOBS", "1"))
DEFAULT_SEED = int(os.getenv("TEXROI_SEED", "0"))
LOG_LEVEL = os.getenv("TEXROI_LOG_LEVEL", "INFO")
FAILURE_BUDGET = float(os.getenv("TEXROI_FAILURE_BUDGET", "0.01"))

# Raster Configuration
ALLOWED_RASTER_EXTENSIONS = {'png', 'pgm'}
MANIFEST_HEADER = [
    'sample_id', 'subject_id', 'image_path', 'landmark_path',
    'spacing_mm', 'knee_side', 'kl_grade',
]
OA_KL_THRESHOLD = 2  # label = kl_grade >= 2

# Landmark Configuration
REQUIRED_LANDMARKS = (
    'medial_tibia_margin',
    'lateral_tibia_margin',
    'tibial_plateau_left',
    'tibial_plateau_right',
    'medial_condyle_center',
)
BONE_CONTOURS = ('tibia', 'femur')

# Learning Configuration
SOLVER_GRAD_TOL = 1e-6
SOLVER_MAX_ITERS = 1000


class _Params(BaseModel):
    """Base for every parameter block: frozen, unknown keys rejected."""
    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class PreprocessConfig(_Params):
    low_percentile: float = 0.05
    high_percentile: float = 0.99
    target_spacing: float = Field(0.2, gt=0)

    @model_validator(mode="after")
    def _check_percentiles(self):
        if not (0.0 <= self.low_percentile < self.high_percentile <= 1.0):
            raise ValueError("percentiles must satisfy 0 <= low < high <= 1")
        return self


class SlicParams(_Params):
    n_regions: int = Field(100, ge=1)
    compactness_m: float = Field(0.08, gt=0)
    max_iters: int = Field(10, ge=1)
    enforce_connectivity: bool = True


class GridLayout(_Params):
    """Lattice over the bone bounding box; 6x10 leaves ~57 points on a tibia."""
    rows: int = Field(6, ge=1)
    cols: int = Field(10, ge=1)


class LbpParams(_Params):
    radius: float = Field(6, ge=1)
    n_points: int = Field(8, ge=4, le=16)
    uniform: bool = False


class HogParams(_Params):
    """
    Block normalisation is always L2-Hys with clipping at 0.2. Every ROI crop
    is resampled to window_cells x pixels_per_cell before the histograms, so
    the vector length depends on these parameters only.
    """
    orientations: int = Field(4, ge=1)
    pixels_per_cell: Tuple[int, int] = (10, 10)
    cells_per_block: Tuple[int, int] = (4, 4)
    window_cells: Tuple[int, int] = (6, 6)

    @field_validator("pixels_per_cell", "cells_per_block", "window_cells")
    @classmethod
    def _positive_pair(cls, value):
        if min(value) < 1:
            raise ValueError("cell, block and window sizes must be >= 1")
        return value

    @model_validator(mode="after")
    def _block_fits_window(self):
        if any(w < b for w, b in zip(self.window_cells, self.cells_per_block)):
            raise ValueError("window_cells must hold at least one block")
        return self

    @property
    def window(self) -> Tuple[int, int]:
        """HOG window (rows, cols) in pixels."""
        return (self.window_cells[0] * self.pixels_per_cell[0],
                self.window_cells[1] * self.pixels_per_cell[1])

    @property
    def n_features(self) -> int:
        blocks_r = self.window_cells[0] - self.cells_per_block[0] + 1
        blocks_c = self.window_cells[1] - self.cells_per_block[1] + 1
        return blocks_r * blocks_c * self.cells_per_block[0] * self.cells_per_block[1] * self.orientations


class FsaParams(_Params):
    min_scale: float = Field(0.2, gt=0)
    max_scale: float = Field(3.2, gt=0)
    variant: Literal["directional", "disk"] = "directional"

    @model_validator(mode="after")
    def _check_scales(self):
        if self.min_scale >= self.max_scale:
            raise ValueError("min_scale must be smaller than max_scale")
        return self


class HaralickParams(_Params):
    levels: int = Field(64, ge=2, le=256)


class CvConfig(_Params):
    k_folds: int = Field(5, ge=2)
    seed: int = 0
    stratify: bool = True
    # "record" exists only as a leakage demonstration harness
    split_level: Literal["subject", "record"] = "subject"


class PipelineConfig(_Params):
    preprocess: PreprocessConfig = PreprocessConfig()
    slic: SlicParams = SlicParams()
    grid: GridLayout = GridLayout()
    lbp: LbpParams = LbpParams()
    hog: HogParams = HogParams()
    fsa: FsaParams = FsaParams()
    haralick: HaralickParams = HaralickParams()
    cv: CvConfig = CvConfig()
    lam: float = Field(1.0, gt=0, alias="lambda")
    n_boot: int = Field(1000, ge=10)
    anchor_offset_mm: Tuple[float, float] = (2.0, 2.0)
    standard_side_fraction: float = Field(1.0 / 7.0, gt=0)
    top_n: int = Field(3, ge=1)
    output_dir: str = OUTPUT_DIR
    jobs: int = Field(DEFAULT_JOBS, ge=1)
    seed: int = DEFAULT_SEED


def load_pipeline_config(path: Optional[str] = None, **overrides: Any) -> PipelineConfig:
    """
    Load a pipeline configuration from TOML or JSON.

    Args:
        path: Config file (.toml or .json); None gives the defaults
        overrides: Top-level values taking precedence over the file (None values ignored)

    Returns:
        Validated PipelineConfig

    Raises:
        ConfigError: Unreadable file, unknown keys or invariant violations
    """
    from models import ConfigError

    data: Dict[str, Any] = {}
    if path:
        try:
            if path.lower().endswith(".toml"):
                with open(path, "rb") as f:
                    data = tomllib.load(f)
            else:
                with open(path, "r", encoding="utf-8") as f:
                    data = json.load(f)
        except (OSError, ValueError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e

    data.update({k: v for k, v in overrides.items() if v is not None})

    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def config_hash(cfg: BaseModel) -> str:
    """SHA-256 of the canonical JSON dump of a config block."""
    payload = json.dumps(cfg.model_dump(mode="json", by_alias=True), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()

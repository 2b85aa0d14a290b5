"""
Domain types shared by every pipeline stage.

All containers are frozen and their arrays are read-only, so instances can be
handed to worker threads without copying.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import BONE_CONTOURS, REQUIRED_LANDMARKS


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class TexRoiError(Exception):
    """Base class for every pipeline error."""


class ImageFormatError(TexRoiError):
    """Unreadable, multi-channel or otherwise unsupported raster."""


class GeometryError(TexRoiError):
    """Empty masks, degenerate polygons, points outside the bone."""


class SegmentationError(TexRoiError):
    """SLIC, grid or Otsu preconditions not met."""


class DescriptorError(TexRoiError):
    """A texture descriptor cannot be computed on the given region."""

    def __init__(self, message: str, flag: str = "invalid_region"):
        super().__init__(message)
        self.flag = flag


class LearningError(TexRoiError):
    """Single-class data, width mismatch or non-finite features."""


class ConfigError(TexRoiError):
    """Invalid or unreadable configuration."""


class ManifestError(TexRoiError):
    """Malformed dataset manifest."""


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


# ---------------------------------------------------------------------------
# Image core
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrayImage:
    """2-D grayscale raster, intensities in [0, 1], spacing in mm per pixel."""
    pixels: np.ndarray
    spacing: float
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        pixels = _frozen_array(self.pixels, np.float64)
        if pixels.ndim != 2 or pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ImageFormatError(f"Expected a non-empty 2-D raster, got shape {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ImageFormatError("Raster contains non-finite intensities")
        if not (self.spacing > 0):
            raise ImageFormatError(f"Pixel spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "flags", tuple(self.flags))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def replace(self, pixels: np.ndarray, spacing: Optional[float] = None,
                flags: Optional[Tuple[str, ...]] = None) -> "GrayImage":
        return GrayImage(
            pixels=pixels,
            spacing=self.spacing if spacing is None else spacing,
            flags=self.flags if flags is None else flags,
        )


@dataclass(frozen=True)
class LandmarkSet:
    """
    Named anatomical points and closed bone contours of one knee.

    Coordinates are continuous pixel coordinates: pixel (col, row) covers
    [col, col+1) x [row, row+1), so its centre sits at (col+0.5, row+0.5).
    """
    points: Dict[str, Tuple[float, float]]
    contours: Dict[str, Tuple[Tuple[float, float], ...]]

    def __post_init__(self):
        points = {str(k): (float(v[0]), float(v[1])) for k, v in self.points.items()}
        contours = {
            str(k): tuple((float(p[0]), float(p[1])) for p in pts)
            for k, pts in self.contours.items()
        }
        missing = [name for name in REQUIRED_LANDMARKS if name not in points]
        if missing:
            raise GeometryError(f"Missing required landmarks: {', '.join(missing)}")
        for name, pts in contours.items():
            if len(pts) < 3:
                raise GeometryError(f"Contour '{name}' needs at least 3 points, got {len(pts)}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "contours", contours)

    def point(self, name: str) -> Tuple[float, float]:
        try:
            return self.points[name]
        except KeyError:
            raise GeometryError(f"Landmark '{name}' not present") from None

    def contour(self, name: str) -> Tuple[Tuple[float, float], ...]:
        if name not in BONE_CONTOURS:
            raise GeometryError(f"Unknown bone contour '{name}'")
        try:
            return self.contours[name]
        except KeyError:
            raise GeometryError(f"Contour '{name}' not present") from None

    def validate_bounds(self, width: int, height: int) -> None:
        coords = list(self.points.values())
        for pts in self.contours.values():
            coords.extend(pts)
        for x, y in coords:
            if not (0.0 <= x <= width and 0.0 <= y <= height):
                raise GeometryError(
                    f"Landmark coordinate ({x:.2f}, {y:.2f}) outside {width}x{height} image"
                )

    def map_coordinates(self, func) -> "LandmarkSet":
        """Apply func(xs, ys) -> (xs, ys) to every point and contour vertex."""
        points = {}
        for name, (x, y) in self.points.items():
            nx, ny = func(np.array([x]), np.array([y]))
            points[name] = (float(nx[0]), float(ny[0]))
        contours = {}
        for name, pts in self.contours.items():
            arr = np.asarray(pts, dtype=np.float64)
            nx, ny = func(arr[:, 0], arr[:, 1])
            contours[name] = tuple(zip(nx.tolist(), ny.tolist()))
        return LandmarkSet(points=points, contours=contours)


class RoiOrigin(str, Enum):
    ADAPTIVE = "Adaptive"
    ADAPTIVE_AVERAGE = "AdaptiveAverage"
    STANDARD_RECT = "StandardRect"
    BONE = "Bone"


@dataclass(frozen=True)
class RoiMask:
    """Boolean pixel mask in the frame of its image; never empty."""
    bits: np.ndarray
    origin: RoiOrigin = RoiOrigin.ADAPTIVE

    def __post_init__(self):
        bits = _frozen_array(self.bits, bool)
        if bits.ndim != 2:
            raise GeometryError(f"Mask must be 2-D, got shape {bits.shape}")
        if not bits.any():
            raise GeometryError("Empty mask")
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "origin", RoiOrigin(self.origin))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def bbox(self) -> Tuple[int, int, int, int]:
        """(row0, row1, col0, col1) half-open bounds of the true pixels."""
        rows = np.flatnonzero(self.bits.any(axis=1))
        cols = np.flatnonzero(self.bits.any(axis=0))
        return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1

    def centroid(self) -> Tuple[float, float]:
        """(x, y) centroid in continuous coordinates."""
        rows, cols = np.nonzero(self.bits)
        return float(cols.mean() + 0.5), float(rows.mean() + 0.5)


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelMap:
    """Per-pixel superpixel labels; -1 outside the bone mask."""
    labels: np.ndarray
    n_labels: int
    energies: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "labels", _frozen_array(self.labels, np.int32))
        object.__setattr__(self, "energies", tuple(float(e) for e in self.energies))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class GridPoint:
    index: int  # row-major lattice index, stable even when neighbours are dropped
    row: int
    col: int
    x: float
    y: float


@dataclass(frozen=True)
class GridSpec:
    rows: int
    cols: int
    points: Tuple[GridPoint, ...]

    @property
    def n_points(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class AverageMask:
    accumulation: np.ndarray
    n_subjects: int

    def __post_init__(self):
        acc = _frozen_array(self.accumulation, np.float64)
        if acc.ndim != 2 or acc.size == 0:
            raise SegmentationError("Average mask must be a non-empty 2-D array")
        if acc.min() < 0.0 or acc.max() > 1.0:
            raise SegmentationError("Average mask values must lie in [0, 1]")
        if self.n_subjects < 1:
            raise SegmentationError("Average mask needs at least one subject")
        object.__setattr__(self, "accumulation", acc)

    @property
    def height(self) -> int:
        return self.accumulation.shape[0]

    @property
    def width(self) -> int:
        return self.accumulation.shape[1]


@dataclass(frozen=True)
class RankedRegion:
    grid_index: int
    row: int
    col: int
    auc: float
    auc_lo: float
    auc_hi: float
    # knees scored for this index; kept in memory only, not in the ranking CSV
    n_samples: int = 0


@dataclass(frozen=True)
class SegmentedSample:
    """Bone mask, superpixels and surviving grid points of one knee."""
    sample_id: str
    subject_id: str
    label: int
    bone: RoiMask
    labels: LabelMap
    grid: GridSpec
    spacing: float

    def point(self, grid_index: int) -> Optional[GridPoint]:
        for p in self.grid.points:
            if p.index == grid_index:
                return p
        return None


# ---------------------------------------------------------------------------
# Descriptors
# ---------------------------------------------------------------------------

class Descriptor(str, Enum):
    LBP = "LBP"
    HOG = "HOG"
    HARALICK = "Haralick"
    FRACTAL = "Fractal"
    ENTROPY = "Entropy"
    COMPOSITE = "Composite"


@dataclass(frozen=True)
class FeatureVector:
    descriptor: Descriptor
    values: np.ndarray
    roi_tag: str
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        values = _frozen_array(self.values, np.float64).ravel()
        if not np.all(np.isfinite(values)):
            raise DescriptorError(f"{self.descriptor} produced non-finite values", flag="non_finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "descriptor", Descriptor(self.descriptor))
        object.__setattr__(self, "flags", tuple(self.flags))

    def __len__(self) -> int:
        return self.values.size


# ---------------------------------------------------------------------------
# Learning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray
    constant: np.ndarray  # True where the training column had zero variance

    def __post_init__(self):
        object.__setattr__(self, "means", _frozen_array(self.means, np.float64))
        object.__setattr__(self, "stds", _frozen_array(self.stds, np.float64))
        object.__setattr__(self, "constant", _frozen_array(self.constant, bool))

    @property
    def flags(self) -> Tuple[str, ...]:
        return ("constant_feature",) if self.constant.any() else ()


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray
    bias: float
    lam: float = 1.0
    converged: bool = False
    n_iters: int = 0
    loss_history: Tuple[float, ...] = ()

    def __post_init__(self):
        weights = _frozen_array(self.weights, np.float64).ravel()
        if not (np.all(np.isfinite(weights)) and np.isfinite(self.bias)):
            raise LearningError("Model parameters must be finite")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "loss_history", tuple(float(v) for v in self.loss_history))


@dataclass(frozen=True)
class FoldMetrics:
    fold: int
    n_train: int
    n_test: int
    auc: Optional[float]
    ap: Optional[float]
    skipped: bool = False


@dataclass(frozen=True)
class EvalReport:
    auc: float
    ap: float
    auc_ci: Tuple[float, float]
    ap_ci: Tuple[float, float]
    roc_curve: Tuple[Tuple[float, float], ...]
    pr_curve: Tuple[Tuple[float, float], ...]
    per_fold: Tuple[FoldMetrics, ...] = ()
    mode: str = "cv"
    n_samples: int = 0
    scores: Tuple[float, ...] = ()
    labels: Tuple[int, ...] = ()
    warnings: Tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    subject_id: str
    image_path: str
    landmark_path: str
    spacing_mm: float
    knee_side: str
    kl_grade: int
    mirrored: bool = False

    @property
    def label(self) -> int:
        from config import OA_KL_THRESHOLD
        return int(self.kl_grade >= OA_KL_THRESHOLD)


@dataclass(frozen=True)
class KneeSample:
    """One preprocessed knee ready for segmentation and description."""
    sample_id: str
    subject_id: str
    label: int
    image: GrayImage
    landmarks: LandmarkSet


@dataclass
class BatchReport:
    """Per-command bookkeeping of processed, skipped and failed samples."""
    processed: List[str] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)
    failed: Dict[str, str] = field(default_factory=dict)

    @property
    def failure_fraction(self) -> float:
        total = len(self.processed) + len(self.skipped) + len(self.failed)
        return len(self.failed) / total if total else 0.0


@dataclass(frozen=True)
class FeatureTable:
    """Feature rows of one CSV: one descriptor vector per knee, same width throughout."""
    sample_ids: Tuple[str, ...]
    subject_ids: Tuple[str, ...]
    labels: Tuple[int, ...]
    roi_tags: Tuple[str, ...]
    descriptors: Tuple[str, ...]
    X: np.ndarray

    def __post_init__(self):
        X = _frozen_array(self.X, np.float64)
        n = len(self.sample_ids)
        if X.ndim != 2 or X.shape[0] != n:
            raise LearningError(f"Feature matrix shape {X.shape} does not match {n} rows")
        if len(set(self.sample_ids)) != n:
            raise LearningError("Duplicate sample ids in feature table")
        object.__setattr__(self, "X", X)

    @property
    def width(self) -> int:
        return self.X.shape[1]

    def keys(self) -> List[Tuple[str, str, int]]:
        return list(zip(self.sample_ids, self.subject_ids, self.labels))

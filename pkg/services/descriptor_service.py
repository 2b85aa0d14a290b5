"""
Texture descriptors: each maps (image, mask) to a fixed-length FeatureVector.
"""
import math
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import entr
from scipy.stats import entropy
from skimage.feature import hog
from skimage.morphology import disk
from skimage.transform import resize

from config import FsaParams, HogParams, LbpParams, PipelineConfig
from models import Descriptor, DescriptorError, FeatureVector, GrayImage, RoiMask
from utils.log_utils import get_logger

from .image_service import crop_bbox, quantize_levels

logger = get_logger("descriptors")

# (drow, dcol) for 0, 45, 90 and 135 degrees at distance 1
GLCM_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))

HARALICK_NAMES = (
    'angular_second_moment', 'contrast', 'correlation', 'sum_of_squares_variance',
    'inverse_difference_moment', 'sum_average', 'sum_variance', 'sum_entropy',
    'entropy', 'difference_variance', 'difference_entropy',
    'information_correlation_1', 'information_correlation_2',
)


def _check_frame(img: GrayImage, mask: RoiMask) -> None:
    if (mask.height, mask.width) != (img.height, img.width):
        raise DescriptorError(
            f"Mask frame {mask.width}x{mask.height} differs from image {img.width}x{img.height}"
        )


def _tag(mask: RoiMask) -> str:
    return mask.origin.value


# ---------------------------------------------------------------------------
# LBP
# ---------------------------------------------------------------------------

def lbp_offsets(p: LbpParams) -> List[Tuple[float, float]]:
    """(drow, dcol) of the P circle samples, counterclockwise from angle 0."""
    offsets = []
    for k in range(p.n_points):
        angle = 2.0 * math.pi * k / p.n_points
        offsets.append((round(-p.radius * math.sin(angle), 5), round(p.radius * math.cos(angle), 5)))
    return offsets


def _bilinear(pixels: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    height, width = pixels.shape
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr, fc = rows - r0, cols - c0
    r0c, r1c = np.clip(r0, 0, height - 1), np.clip(r0 + 1, 0, height - 1)
    c0c, c1c = np.clip(c0, 0, width - 1), np.clip(c0 + 1, 0, width - 1)
    top = pixels[r0c, c0c] + fc * (pixels[r0c, c1c] - pixels[r0c, c0c])
    bottom = pixels[r1c, c0c] + fc * (pixels[r1c, c1c] - pixels[r1c, c0c])
    return top + fr * (bottom - top)


def lbp_codes(img: GrayImage, p: LbpParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-pixel LBP codes of the whole image.

    Bit k is set when the k-th circle sample is >= the centre value.

    Returns:
        (codes, valid) where valid marks pixels whose full circle lies in the image
    """
    height, width = img.pixels.shape
    margin = int(math.ceil(p.radius))
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    centre = img.pixels
    codes = np.zeros((height, width), dtype=np.int64)
    for k, (dr, dc) in enumerate(lbp_offsets(p)):
        neighbour = _bilinear(centre, rows + dr, cols + dc)
        codes |= (neighbour >= centre).astype(np.int64) << k

    valid = np.zeros((height, width), dtype=bool)
    if height > 2 * margin and width > 2 * margin:
        valid[margin:height - margin, margin:width - margin] = True
    return codes, valid


def uniform_codes(codes: np.ndarray, n_points: int) -> np.ndarray:
    """Rotation-invariant uniform mapping: number of set bits if <= 2 transitions, else P+1."""
    bits = (codes[..., None] >> np.arange(n_points)) & 1
    transitions = (bits != np.roll(bits, 1, axis=-1)).sum(axis=-1)
    return np.where(transitions <= 2, bits.sum(axis=-1), n_points + 1)


def lbp_n_bins(p: LbpParams) -> int:
    return p.n_points + 2 if p.uniform else 2 ** p.n_points


def histogram_from_codes(codes: np.ndarray, valid: np.ndarray, mask: RoiMask,
                         p: LbpParams) -> FeatureVector:
    """Normalized LBP histogram over the valid pixels of a mask."""
    counted = valid & mask.bits
    if not counted.any():
        raise DescriptorError("No mask pixel has its full LBP neighbourhood inside the image")
    values = codes[counted]
    if p.uniform:
        values = uniform_codes(values, p.n_points)
    hist = np.bincount(values, minlength=lbp_n_bins(p)).astype(np.float64)
    return FeatureVector(Descriptor.LBP, hist / hist.sum(), _tag(mask))


def lbp_histogram(img: GrayImage, mask: RoiMask, p: LbpParams) -> FeatureVector:
    _check_frame(img, mask)
    codes, valid = lbp_codes(img, p)
    return histogram_from_codes(codes, valid, mask, p)


# ---------------------------------------------------------------------------
# HOG
# ---------------------------------------------------------------------------

def hog_features(img: GrayImage, mask: RoiMask, p: HogParams) -> FeatureVector:
    """
    HOG over the mask bounding box with out-of-mask pixels set to 0.

    The zero-filled crop is resampled (bilinear) to the fixed window of `p`,
    then described with unsigned orientations, magnitude-weighted cell
    histograms and L2-Hys normalized overlapping blocks, concatenated in
    row-major block order. Length is `p.n_features` for every ROI.
    """
    _check_frame(img, mask)
    crop, crop_mask = crop_bbox(img, mask)
    block_h = p.pixels_per_cell[0] * p.cells_per_block[0]
    block_w = p.pixels_per_cell[1] * p.cells_per_block[1]
    if crop.height < block_h or crop.width < block_w:
        raise DescriptorError(
            f"ROI bounding box {crop.width}x{crop.height} smaller than one {block_w}x{block_h} block"
        )
    pixels = np.where(crop_mask.bits, crop.pixels, 0.0)
    if pixels.shape != p.window:
        pixels = resize(pixels, p.window, order=1, mode='edge', preserve_range=True)
    values = hog(
        pixels,
        orientations=p.orientations,
        pixels_per_cell=p.pixels_per_cell,
        cells_per_block=p.cells_per_block,
        block_norm='L2-Hys',
        feature_vector=True,
    )
    return FeatureVector(Descriptor.HOG, values, _tag(mask))


# ---------------------------------------------------------------------------
# Haralick
# ---------------------------------------------------------------------------

def quantize_region(img: GrayImage, mask: RoiMask, levels: int) -> Tuple[np.ndarray, bool]:
    """
    Equal-width quantization of in-mask intensities over their own min/max.

    Returns:
        (level image with -1 outside the mask, True when the region is constant)
    """
    inside = img.pixels[mask.bits]
    lo, hi = float(inside.min()), float(inside.max())
    q = np.full(img.pixels.shape, -1, dtype=np.int64)
    if hi <= lo:
        q[mask.bits] = 0
        return q, True
    scaled = np.floor((img.pixels - lo) / (hi - lo) * levels).astype(np.int64)
    q[mask.bits] = np.clip(scaled, 0, levels - 1)[mask.bits]
    return q, False


def glcm_matrices(img: GrayImage, mask: RoiMask, levels: int = 64) -> np.ndarray:
    """
    Symmetric normalized co-occurrence matrices at distance 1.

    Only pairs with both pixels inside the mask are counted; a direction
    without such pairs stays all zero.

    Returns:
        Array (4, levels, levels) for 0, 45, 90 and 135 degrees
    """
    _check_frame(img, mask)
    q, _ = quantize_region(img, mask, levels)
    return _glcm_from_levels(q, levels)


def _glcm_from_levels(q: np.ndarray, levels: int) -> np.ndarray:
    height, width = q.shape
    out = np.zeros((len(GLCM_OFFSETS), levels, levels), dtype=np.float64)
    for d, (dr, dc) in enumerate(GLCM_OFFSETS):
        ra, rb = max(0, -dr), height - max(0, dr)
        ca, cb = max(0, -dc), width - max(0, dc)
        first = q[ra:rb, ca:cb]
        second = q[ra + dr:rb + dr, ca + dc:cb + dc]
        both = (first >= 0) & (second >= 0)
        if not both.any():
            logger.debug("No in-mask pixel pair along offset (%d, %d)", dr, dc)
            continue
        i, j = first[both], second[both]
        counts = np.bincount(i * levels + j, minlength=levels * levels)
        counts = counts + np.bincount(j * levels + i, minlength=levels * levels)
        out[d] = (counts / counts.sum()).reshape(levels, levels)
    if not out.any():
        raise DescriptorError("No in-mask pixel pair in any direction", flag="invalid_region")
    return out


def haralick_from_glcm(P: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    The 13 Haralick features of one normalized GLCM (natural logarithm,
    0-based gray levels).

    Returns:
        (features, True when correlation was undefined and set to 0)
    """
    levels = P.shape[0]
    idx = np.arange(levels, dtype=np.float64)
    i, j = np.meshgrid(idx, idx, indexing='ij')

    px, py = P.sum(axis=1), P.sum(axis=0)
    mux, muy = (idx * px).sum(), (idx * py).sum()
    sigx = math.sqrt(((idx - mux) ** 2 * px).sum())
    sigy = math.sqrt(((idx - muy) ** 2 * py).sum())

    k_sum = (i + j).astype(np.int64).ravel()
    k_diff = np.abs(i - j).astype(np.int64).ravel()
    p_sum = np.bincount(k_sum, weights=P.ravel(), minlength=2 * levels - 1)
    p_diff = np.bincount(k_diff, weights=P.ravel(), minlength=levels)
    sums = np.arange(2 * levels - 1, dtype=np.float64)
    diffs = np.arange(levels, dtype=np.float64)

    hx, hy = entr(px).sum(), entr(py).sum()
    hxy = entr(P).sum()
    pxpy = np.outer(px, py)
    positive = pxpy > 0
    hxy1 = -(P[positive] * np.log(pxpy[positive])).sum()
    hxy2 = entr(pxpy).sum()

    degenerate = sigx * sigy <= 0
    f = np.empty(13, dtype=np.float64)
    f[0] = (P * P).sum()
    f[1] = ((i - j) ** 2 * P).sum()
    f[2] = 0.0 if degenerate else ((i * j * P).sum() - mux * muy) / (sigx * sigy)
    f[3] = sigx ** 2
    f[4] = (P / (1.0 + (i - j) ** 2)).sum()
    f[5] = (sums * p_sum).sum()
    f[6] = ((sums - f[5]) ** 2 * p_sum).sum()
    f[7] = entr(p_sum).sum()
    f[8] = hxy
    mu_diff = (diffs * p_diff).sum()
    f[9] = ((diffs - mu_diff) ** 2 * p_diff).sum()
    f[10] = entr(p_diff).sum()
    h_max = max(hx, hy)
    f[11] = (hxy - hxy1) / h_max if h_max > 0 else 0.0
    f[12] = math.sqrt(max(0.0, 1.0 - math.exp(-2.0 * (hxy2 - hxy))))
    return f, degenerate


def haralick13(img: GrayImage, mask: RoiMask, levels: int = 64) -> FeatureVector:
    """Mean of the 13 Haralick features over the GLCM directions that hold pixel pairs."""
    _check_frame(img, mask)
    q, constant = quantize_region(img, mask, levels)
    matrices = _glcm_from_levels(q, levels)
    per_direction = []
    undefined = False
    for P in matrices[matrices.sum(axis=(1, 2)) > 0]:
        f, degenerate = haralick_from_glcm(P)
        per_direction.append(f)
        undefined = undefined or degenerate

    flags = ()
    if constant or undefined:
        logger.warning("Haralick on a %s region, correlation set to 0",
                       "constant" if constant else "degenerate")
        flags = ("constant_region",)
    return FeatureVector(Descriptor.HARALICK, np.mean(per_direction, axis=0), _tag(mask), flags)


# ---------------------------------------------------------------------------
# Fractal dimension
# ---------------------------------------------------------------------------

def fsa_scales(p: FsaParams, spacing: float) -> np.ndarray:
    """Structuring element half-lengths in pixels, 1-px steps between the mm bounds."""
    lo = max(1, int(math.floor(p.min_scale / spacing + 0.5)))
    hi = int(math.floor(p.max_scale / spacing + 0.5))
    scales = np.arange(lo, hi + 1)
    if scales.size < 3:
        raise DescriptorError(
            f"Only {scales.size} FSA scales between {p.min_scale} and {p.max_scale} mm "
            f"at {spacing} mm/px"
        )
    return scales


def _line(half: int, horizontal: bool) -> np.ndarray:
    return np.ones((1, 2 * half + 1) if horizontal else (2 * half + 1, 1), dtype=bool)


def _blanket_dimension(pixels: np.ndarray, region: np.ndarray, scales: np.ndarray,
                       footprint_of) -> float:
    """
    2 - slope of log A(s) against log s, A(s) = sum(dilation - erosion) / 2s
    over the pixels whose largest element stays inside the region.
    """
    valid = ndimage.binary_erosion(region, structure=footprint_of(int(scales[-1])))
    if not valid.any():
        raise DescriptorError("ROI too small for the largest FSA scale")

    areas = []
    for s in scales:
        footprint = footprint_of(int(s))
        upper = ndimage.grey_dilation(pixels, footprint=footprint)
        lower = ndimage.grey_erosion(pixels, footprint=footprint)
        areas.append(float((upper - lower)[valid].sum()) / (2.0 * s))

    areas = np.asarray(areas)
    if np.any(areas <= 0):
        raise DescriptorError("Flat region: blanket area vanishes", flag="degenerate_texture")
    slope = np.polyfit(np.log(scales.astype(np.float64)), np.log(areas), 1)[0]
    return 2.0 - float(slope)


def fractal_dimension_fsa(img: GrayImage, mask: RoiMask, p: FsaParams) -> FeatureVector:
    """
    Blanket-method fractal dimension inside a mask.

    The directional variant uses flat line elements: a vertical line measures
    horizontal structures and a horizontal line vertical ones, giving
    [FD_horizontal, FD_vertical]. The disk variant returns a single value.
    """
    _check_frame(img, mask)
    crop, crop_mask = crop_bbox(img, mask)
    pixels = crop.pixels * 255.0
    scales = fsa_scales(p, img.spacing)

    if p.variant == "disk":
        values = [_blanket_dimension(pixels, crop_mask.bits, scales,
                                     lambda s: disk(s).astype(bool))]
    else:
        values = [
            _blanket_dimension(pixels, crop_mask.bits, scales, lambda s: _line(s, horizontal=False)),
            _blanket_dimension(pixels, crop_mask.bits, scales, lambda s: _line(s, horizontal=True)),
        ]
    return FeatureVector(Descriptor.FRACTAL, values, _tag(mask))


# ---------------------------------------------------------------------------
# Entropy and composition
# ---------------------------------------------------------------------------

def shannon_entropy(img: GrayImage, mask: RoiMask) -> FeatureVector:
    """Base-2 entropy of the 256-level histogram of in-mask intensities."""
    _check_frame(img, mask)
    levels = quantize_levels(img.pixels[mask.bits], 255)
    counts = np.bincount(levels, minlength=256)
    return FeatureVector(Descriptor.ENTROPY, [float(entropy(counts, base=2))], _tag(mask))


def concat_features(parts: Sequence[FeatureVector]) -> FeatureVector:
    if not parts:
        raise DescriptorError("Nothing to concatenate")
    if len(parts) == 1:
        return parts[0]
    tags = []
    for part in parts:
        if part.roi_tag not in tags:
            tags.append(part.roi_tag)
    flags = tuple(sorted({flag for part in parts for flag in part.flags}))
    return FeatureVector(
        Descriptor.COMPOSITE,
        np.concatenate([part.values for part in parts]),
        "+".join(tags),
        flags,
    )


def compute_descriptor(name: Descriptor, img: GrayImage, mask: RoiMask,
                       cfg: PipelineConfig) -> FeatureVector:
    """Dispatch one descriptor with the parameters held by the pipeline config."""
    name = Descriptor(name)
    if name is Descriptor.LBP:
        return lbp_histogram(img, mask, cfg.lbp)
    if name is Descriptor.HOG:
        return hog_features(img, mask, cfg.hog)
    if name is Descriptor.HARALICK:
        return haralick13(img, mask, cfg.haralick.levels)
    if name is Descriptor.FRACTAL:
        return fractal_dimension_fsa(img, mask, cfg.fsa)
    if name is Descriptor.ENTROPY:
        return shannon_entropy(img, mask)
    raise DescriptorError(f"Descriptor {name.value} is not computed directly")

"""
Segmentation service: SLIC superpixels over a bone mask, the grid lattice used
to index subregions, anchor/standard ROI placement and the average-mask +
Otsu construction of the reusable adaptive mask.
"""
import math
import os
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from config import GridLayout, SlicParams
from models import (
    AverageMask, GeometryError, GridPoint, GridSpec, GrayImage, LabelMap,
    LandmarkSet, RoiMask, RoiOrigin, SegmentationError,
)
from utils.log_utils import get_logger

from .image_service import quantize_levels

logger = get_logger("slic")

# d_c is measured on the 8-bit intensity scale
INTENSITY_SCALE = 255.0
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
ANCHOR_NAMES = ('medial_tibia_margin', 'lateral_tibia_margin')

Point = Tuple[float, float]


# ---------------------------------------------------------------------------
# SLIC
# ---------------------------------------------------------------------------

def _gradient_energy(intensity: np.ndarray) -> np.ndarray:
    padded = np.pad(intensity, 1, mode='edge')
    gy = padded[2:, 1:-1] - padded[:-2, 1:-1]
    gx = padded[1:-1, 2:] - padded[1:-1, :-2]
    return gx * gx + gy * gy


def _initial_centres(intensity: np.ndarray, mask: np.ndarray, step: float) -> np.ndarray:
    """Grid seeds of spacing `step` inside the mask, moved to the flattest 3x3 pixel."""
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1

    seeds = []
    for y in np.arange(r0 + step / 2.0, r1, step):
        for x in np.arange(c0 + step / 2.0, c1, step):
            r, c = int(y), int(x)
            if mask[r, c]:
                seeds.append((r, c))

    if not seeds:
        rr, cc = np.nonzero(mask)
        d2 = (rr - rr.mean()) ** 2 + (cc - cc.mean()) ** 2
        k = int(np.argmin(d2))
        seeds.append((int(rr[k]), int(cc[k])))

    grad = _gradient_energy(intensity)
    height, width = mask.shape
    moved = []
    for r, c in seeds:
        best = (r, c)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < height and 0 <= cc < width and mask[rr, cc]:
                    if grad[rr, cc] < grad[best]:
                        best = (rr, cc)
        if best not in moved:
            moved.append(best)

    return np.array(
        [(r, c, intensity[r, c]) for r, c in moved], dtype=np.float64
    )


def _assign(intensity: np.ndarray, mask: np.ndarray, centres: np.ndarray,
            assignment: np.ndarray, step: float, weight: float) -> Tuple[np.ndarray, float]:
    """
    One assignment step. A pixel keeps its current centre unless a centre whose
    2S x 2S window covers it is strictly closer.
    """
    height, width = mask.shape
    best = np.full(mask.shape, np.inf)
    rows, cols = np.nonzero(mask)

    assigned = assignment >= 0
    if assigned.any():
        k = assignment[assigned]
        rr, cc = np.nonzero(assigned)
        dc = intensity[rr, cc] - centres[k, 2]
        ds2 = (rr - centres[k, 0]) ** 2 + (cc - centres[k, 1]) ** 2
        best[rr, cc] = dc * dc + ds2 * weight

    new_assignment = assignment.copy()
    for k, (cy, cx, ci) in enumerate(centres):
        ra, rb = max(0, int(math.ceil(cy - step))), min(height, int(math.floor(cy + step)) + 1)
        ca, cb = max(0, int(math.ceil(cx - step))), min(width, int(math.floor(cx + step)) + 1)
        if ra >= rb or ca >= cb:
            continue
        yy, xx = np.mgrid[ra:rb, ca:cb]
        dc = intensity[ra:rb, ca:cb] - ci
        dist = dc * dc + ((yy - cy) ** 2 + (xx - cx) ** 2) * weight
        window_best = best[ra:rb, ca:cb]
        closer = mask[ra:rb, ca:cb] & (dist < window_best)
        window_best[closer] = dist[closer]
        new_assignment[ra:rb, ca:cb][closer] = k

    # pixels no window reached go to the globally nearest centre
    orphan = mask & ~np.isfinite(best)
    if orphan.any():
        rr, cc = np.nonzero(orphan)
        dc = intensity[rr, cc][:, None] - centres[None, :, 2]
        ds2 = (rr[:, None] - centres[None, :, 0]) ** 2 + (cc[:, None] - centres[None, :, 1]) ** 2
        dist = dc * dc + ds2 * weight
        k = np.argmin(dist, axis=1)
        best[rr, cc] = dist[np.arange(k.size), k]
        new_assignment[rr, cc] = k

    energy = float(best[rows, cols].sum())
    return new_assignment, energy


def _update_centres(intensity: np.ndarray, assignment: np.ndarray, centres: np.ndarray) -> np.ndarray:
    inside = assignment >= 0
    k = assignment[inside]
    rr, cc = np.nonzero(inside)
    n = centres.shape[0]
    counts = np.bincount(k, minlength=n).astype(np.float64)
    updated = centres.copy()
    nonempty = counts > 0
    for dim, values in enumerate((rr, cc, intensity[inside])):
        sums = np.bincount(k, weights=values.astype(np.float64), minlength=n)
        updated[nonempty, dim] = sums[nonempty] / counts[nonempty]
    return updated


def _relabel_dense(assignment: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, int]:
    """Renumber labels 0..K-1 in raster order of first appearance."""
    labels = np.full(mask.shape, -1, dtype=np.int64)
    flat = assignment[mask]
    _, first = np.unique(flat, return_index=True)
    order = flat[np.sort(first)]
    lookup = {int(old): new for new, old in enumerate(order)}
    labels[mask] = np.vectorize(lookup.get, otypes=[np.int64])(flat)
    return labels, len(order)


def _enforce_connectivity(assignment: np.ndarray, mask: np.ndarray, min_size: int) -> Tuple[np.ndarray, int]:
    """
    Split every cluster into its 4-connected components, then walk the
    components in raster order: small fragments join the dominant adjacent
    component already labeled, everything else opens a new label.
    """
    components = np.full(mask.shape, -1, dtype=np.int64)
    n_comp = 0
    shifted = assignment + 1
    for k, window in enumerate(ndimage.find_objects(np.where(mask, shifted, 0))):
        if window is None:
            continue
        cc, n = ndimage.label(shifted[window] == k + 1, structure=FOUR_CONNECTED)
        if n == 0:
            continue
        target = components[window]
        target[cc > 0] = cc[cc > 0] - 1 + n_comp
        n_comp += n

    ids = np.arange(n_comp)
    flat_index = np.arange(mask.size).reshape(mask.shape)
    first_pixel = ndimage.minimum(flat_index, components, index=ids)
    sizes = np.bincount(components[mask], minlength=n_comp)

    # shared edge counts between adjacent components
    adjacency: Dict[int, Dict[int, int]] = {}
    for a, b in (
        (components[:, :-1], components[:, 1:]),
        (components[:-1, :], components[1:, :]),
    ):
        touching = (a >= 0) & (b >= 0) & (a != b)
        pairs = np.stack([a[touching], b[touching]], axis=1)
        if pairs.size == 0:
            continue
        uniq, counts = np.unique(pairs, axis=0, return_counts=True)
        for (p, q), n in zip(uniq.tolist(), counts.tolist()):
            adjacency.setdefault(p, {})
            adjacency.setdefault(q, {})
            adjacency[p][q] = adjacency[p].get(q, 0) + n
            adjacency[q][p] = adjacency[q].get(p, 0) + n

    final = np.full(n_comp, -1, dtype=np.int64)
    n_labels = 0
    for comp in np.argsort(first_pixel, kind='stable'):
        if sizes[comp] < min_size:
            votes: Dict[int, int] = {}
            for other, n in adjacency.get(int(comp), {}).items():
                if final[other] >= 0:
                    votes[int(final[other])] = votes.get(int(final[other]), 0) + n
            if votes:
                final[comp] = max(sorted(votes), key=lambda lab: votes[lab])
                continue
        final[comp] = n_labels
        n_labels += 1

    labels = np.full(mask.shape, -1, dtype=np.int64)
    labels[mask] = final[components[mask]]
    return labels, n_labels


def slic_segment(img: GrayImage, bone: RoiMask, params: SlicParams) -> LabelMap:
    """
    Grayscale SLIC restricted to a bone mask.

    Distance between a pixel and a centre is
        D = sqrt(d_c^2 + (d_s / S)^2 * m^2)
    with d_c the 8-bit intensity difference, d_s the pixel distance and
    S = sqrt(#bone pixels / n_regions) the seed spacing.

    Args:
        img: Preprocessed image
        bone: Bone mask in the image frame
        params: Region count, compactness m, iterations, connectivity switch

    Returns:
        LabelMap with -1 outside the bone and the per-step energy trace

    Raises:
        SegmentationError: Bone mask with fewer pixels than requested regions
    """
    if (bone.height, bone.width) != (img.height, img.width):
        raise GeometryError("Bone mask frame differs from the image frame")
    mask = bone.bits
    n_bone = int(mask.sum())
    if n_bone < params.n_regions:
        raise SegmentationError(
            f"Bone mask has {n_bone} pixels, fewer than {params.n_regions} regions"
        )

    if params.n_regions == 1:
        return LabelMap(labels=np.where(mask, 0, -1), n_labels=1)

    step = math.sqrt(n_bone / params.n_regions)
    weight = (params.compactness_m / step) ** 2
    intensity = img.pixels * INTENSITY_SCALE

    centres = _initial_centres(intensity, mask, step)
    assignment = np.full(mask.shape, -1, dtype=np.int64)
    energies: List[float] = []
    for iteration in range(params.max_iters):
        assignment, energy = _assign(intensity, mask, centres, assignment, step, weight)
        energies.append(energy)
        centres = _update_centres(intensity, assignment, centres)
        logger.debug("iteration %d: %d centres, energy %.6g", iteration, len(centres), energy)

    if params.enforce_connectivity:
        labels, n_labels = _enforce_connectivity(assignment, mask, max(1, int(step * step / 4)))
    else:
        labels, n_labels = _relabel_dense(assignment, mask)

    return LabelMap(labels=labels, n_labels=n_labels, energies=tuple(energies))


def export_label_map(labels: LabelMap, path: str) -> None:
    """16-bit PNG, labels shifted by +1 so the background is 0."""
    if labels.n_labels >= 65535:
        raise SegmentationError("Too many labels for a 16-bit label image")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray((labels.labels + 1).astype(np.uint16)).save(path, format="PNG")


def load_label_map(path: str) -> LabelMap:
    with Image.open(path) as im:
        data = np.asarray(im).astype(np.int64) - 1
    return LabelMap(labels=data, n_labels=int(data.max()) + 1)


# ---------------------------------------------------------------------------
# Grid lattice and region lookup
# ---------------------------------------------------------------------------

def grid_points(bone: RoiMask, layout: GridLayout) -> GridSpec:
    """
    rows x cols lattice at fractions (i+1)/(n+1) of the bone bounding box.

    Points whose pixel is outside the mask are dropped; the row-major index of
    every survivor is kept so the same index names the same anatomical spot
    across subjects.
    """
    r0, r1, c0, c1 = bone.bbox()
    points = []
    for i in range(layout.rows):
        y = r0 + (i + 1) / (layout.rows + 1) * (r1 - r0)
        for j in range(layout.cols):
            x = c0 + (j + 1) / (layout.cols + 1) * (c1 - c0)
            row = min(int(math.floor(y)), bone.height - 1)
            col = min(int(math.floor(x)), bone.width - 1)
            if bone.bits[row, col]:
                points.append(GridPoint(index=i * layout.cols + j, row=i, col=j, x=x, y=y))

    if not points:
        raise SegmentationError("No grid point falls inside the bone mask")
    return GridSpec(rows=layout.rows, cols=layout.cols, points=tuple(points))


def region_of_point(labels: LabelMap, point: Point) -> RoiMask:
    """All pixels sharing the label of the pixel containing `point` (x, y)."""
    col, row = int(math.floor(point[0])), int(math.floor(point[1]))
    if not (0 <= row < labels.height and 0 <= col < labels.width):
        raise GeometryError(f"Point ({point[0]:.2f}, {point[1]:.2f}) outside the image")
    label = labels.labels[row, col]
    if label < 0:
        raise GeometryError(f"Point ({point[0]:.2f}, {point[1]:.2f}) outside the bone")
    return RoiMask(bits=labels.labels == label, origin=RoiOrigin.ADAPTIVE)


def anchor_point(lm: LandmarkSet, anchor: str, bone: RoiMask,
                 offset_mm: Tuple[float, float], spacing: float) -> Point:
    """Margin landmark moved offset_mm inward, each axis toward the bone centroid."""
    if anchor not in ANCHOR_NAMES:
        raise GeometryError(f"Unknown anchor '{anchor}', expected one of {ANCHOR_NAMES}")
    ax, ay = lm.point(anchor)
    gx, gy = bone.centroid()
    sx = 1.0 if gx >= ax else -1.0
    sy = 1.0 if gy >= ay else -1.0
    return ax + sx * offset_mm[0] / spacing, ay + sy * offset_mm[1] / spacing


def anchor_roi(labels: LabelMap, lm: LandmarkSet, anchor: str,
               offset_mm: Tuple[float, float], spacing: float) -> RoiMask:
    """Superpixel enclosing the inward-offset margin point."""
    bone = RoiMask(bits=labels.labels >= 0, origin=RoiOrigin.BONE)
    point = anchor_point(lm, anchor, bone, offset_mm, spacing)
    return region_of_point(labels, point)


# ---------------------------------------------------------------------------
# Standard ROI
# ---------------------------------------------------------------------------

def _plateau_y_at(lm: LandmarkSet, x: float) -> float:
    lx, ly = lm.point("tibial_plateau_left")
    rx, ry = lm.point("tibial_plateau_right")
    if abs(rx - lx) < 1e-12:
        return 0.5 * (ly + ry)
    return ly + (x - lx) * (ry - ly) / (rx - lx)


def standard_roi(img: GrayImage, lm: LandmarkSet, side_fraction: float = 1.0 / 7.0,
                 side: str = "medial") -> RoiMask:
    """
    Square patch right below the tibial plateau.

    The side length is round(side_fraction * tibial width), the width being the
    horizontal distance between the two tibia margins. The square is centred
    horizontally on the condyle centre and its top edge sits on the plateau.

    Raises:
        GeometryError: Zero side length, or nothing left after clamping
    """
    x_med, _ = lm.point("medial_tibia_margin")
    x_lat, _ = lm.point("lateral_tibia_margin")
    size = int(math.floor(side_fraction * abs(x_lat - x_med) + 0.5))
    if size < 1:
        raise GeometryError(f"Standard ROI side is {size} px")

    cx, _ = lm.point("medial_condyle_center")
    if side == "lateral":
        if "lateral_condyle_center" in lm.points:
            cx, _ = lm.point("lateral_condyle_center")
        else:
            cx = x_med + x_lat - cx
    elif side != "medial":
        raise GeometryError(f"Unknown side '{side}'")

    x0 = int(math.floor(cx - size / 2.0 + 0.5))
    y0 = int(math.floor(_plateau_y_at(lm, cx) + 0.5))
    x1, y1 = x0 + size, y0 + size

    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x1, img.width), min(y1, img.height)
    if (cx0, cy0, cx1, cy1) != (x0, y0, x1, y1):
        logger.warning(
            "Standard ROI [%d,%d)x[%d,%d) exceeds the %dx%d image, clamped",
            x0, x1, y0, y1, img.width, img.height,
        )
    if cx0 >= cx1 or cy0 >= cy1:
        raise GeometryError("Standard ROI lies entirely outside the image")

    bits = np.zeros((img.height, img.width), dtype=bool)
    bits[cy0:cy1, cx0:cx1] = True
    return RoiMask(bits=bits, origin=RoiOrigin.STANDARD_RECT)


# ---------------------------------------------------------------------------
# Average mask
# ---------------------------------------------------------------------------

def reference_frame(bones: Sequence[RoiMask]) -> Tuple[int, int]:
    """(height, width) of the median bone bounding box."""
    if not bones:
        raise SegmentationError("Reference frame needs at least one bone mask")
    sizes = np.array([(b1 - b0, c1 - c0) for b0, b1, c0, c1 in (m.bbox() for m in bones)])
    height, width = np.floor(np.median(sizes, axis=0) + 0.5).astype(int)
    return int(height), int(width)


def _nearest_indices(n_src: int, n_dst: int) -> np.ndarray:
    return np.minimum(((np.arange(n_dst) + 0.5) * n_src / n_dst).astype(np.int64), n_src - 1)


def to_reference_frame(region: RoiMask, bone: RoiMask, frame: Tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resample of a region, cropped to its bone bbox, into the reference frame."""
    r0, r1, c0, c1 = bone.bbox()
    crop = region.bits[r0:r1, c0:c1]
    rows = _nearest_indices(crop.shape[0], frame[0])
    cols = _nearest_indices(crop.shape[1], frame[1])
    return crop[np.ix_(rows, cols)]


def accumulate_masks(masks: Sequence[Union[RoiMask, np.ndarray]]) -> AverageMask:
    """Per-pixel mean of binary masks already in a common frame."""
    if not masks:
        raise SegmentationError("No masks to accumulate")
    stack = [np.asarray(getattr(m, 'bits', m), dtype=bool) for m in masks]
    shape = stack[0].shape
    for bits in stack:
        if bits.shape != shape:
            raise SegmentationError(f"Mask frame {bits.shape} differs from {shape}")
    total = np.zeros(shape, dtype=np.int64)
    for bits in stack:
        total += bits
    return AverageMask(accumulation=total / len(stack), n_subjects=len(stack))


def otsu_bins(values: np.ndarray) -> np.ndarray:
    """256-bin index of values in [0, 1]."""
    return np.clip(np.floor(values * 256.0), 0, 255).astype(np.int64)


def otsu_cut(counts: np.ndarray) -> Tuple[int, np.ndarray]:
    """
    Cut maximizing the between-class variance over a 256-bin histogram.

    Class 0 holds bins <= t. Returns the lowest maximizing t in 0..254 and the
    variance curve.
    """
    counts = np.asarray(counts, dtype=np.float64)
    levels = np.arange(counts.size, dtype=np.float64)
    total = counts.sum()
    total_sum = (counts * levels).sum()
    w0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(counts * levels)[:-1]
    w1 = total - w0
    with np.errstate(divide='ignore', invalid='ignore'):
        between = (total * s0 - w0 * total_sum) ** 2 / (w0 * w1)
    between[(w0 == 0) | (w1 == 0)] = 0.0
    return int(np.argmax(between)), between


def largest_component(bits: np.ndarray) -> np.ndarray:
    labeled, n = ndimage.label(bits, structure=FOUR_CONNECTED)
    if n <= 1:
        return bits.astype(bool)
    sizes = np.bincount(labeled.ravel())[1:]
    return labeled == int(np.argmax(sizes)) + 1


def otsu_threshold(avg: AverageMask) -> RoiMask:
    """
    Otsu binarization of an average mask, keeping the largest 4-connected
    component of the high class.

    Raises:
        SegmentationError: Constant average mask
    """
    acc = avg.accumulation
    lo, hi = float(acc.min()), float(acc.max())
    if hi <= lo:
        raise SegmentationError("Average mask is constant, Otsu threshold undefined")
    bins = otsu_bins(acc)
    counts = np.bincount(bins.ravel(), minlength=256)
    if np.count_nonzero(counts) < 2:
        logger.warning("Average mask spans [%.6f, %.6f] inside one bin, binning over that range",
                       lo, hi)
        bins = otsu_bins((acc - lo) / (hi - lo))
        counts = np.bincount(bins.ravel(), minlength=256)
    cut, _ = otsu_cut(counts)
    logger.info("Otsu cut at bin %d of 256", cut)
    return RoiMask(bits=largest_component(bins > cut), origin=RoiOrigin.ADAPTIVE_AVERAGE)


def register_mask(avg_mask: RoiMask, bone: RoiMask) -> RoiMask:
    """
    Map a reference-frame mask onto a subject: inverse nearest-neighbour
    resampling into the subject's bone bounding box, intersected with its bone.
    """
    r0, r1, c0, c1 = bone.bbox()
    rows = _nearest_indices(avg_mask.height, r1 - r0)
    cols = _nearest_indices(avg_mask.width, c1 - c0)
    placed = np.zeros((bone.height, bone.width), dtype=bool)
    placed[r0:r1, c0:c1] = avg_mask.bits[np.ix_(rows, cols)]

    restricted = placed & bone.bits
    if not restricted.any():
        logger.warning("Registered mask misses the bone, using it unrestricted")
        restricted = placed
    if not restricted.any():
        raise GeometryError("Registered mask is empty")
    return RoiMask(bits=restricted, origin=RoiOrigin.ADAPTIVE_AVERAGE)


def export_average_mask(avg: AverageMask, path: str) -> None:
    """8-bit PNG of accumulation * 255."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    levels = quantize_levels(avg.accumulation, 255).astype(np.uint8)
    Image.fromarray(levels, mode="L").save(path, format="PNG")

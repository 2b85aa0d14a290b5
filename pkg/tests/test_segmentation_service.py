import numpy as np
import pytest
from scipy import ndimage

from config import GridLayout, SlicParams
from models import AverageMask, GeometryError, GrayImage, LandmarkSet, RoiMask, SegmentationError
from services.image_service import bone_mask
from services.segmentation_service import (
    accumulate_masks, anchor_point, export_label_map, grid_points, load_label_map, otsu_cut,
    otsu_threshold, reference_frame, region_of_point, register_mask, slic_segment, standard_roi,
    to_reference_frame,
)

FOUR = ndimage.generate_binary_structure(2, 1)


def full_mask(height, width):
    return RoiMask(bits=np.ones((height, width), dtype=bool))


@pytest.fixture
def blocks():
    pixels = np.empty((20, 20))
    pixels[:10, :10], pixels[:10, 10:] = 0.1, 0.4
    pixels[10:, :10], pixels[10:, 10:] = 0.7, 1.0
    return GrayImage(pixels=pixels, spacing=0.2)


def knee_landmarks(plateau_y=200.0):
    return LandmarkSet(
        points={
            'medial_tibia_margin': (10.0, plateau_y),
            'lateral_tibia_margin': (360.0, plateau_y),
            'tibial_plateau_left': (10.0, plateau_y),
            'tibial_plateau_right': (360.0, plateau_y),
            'medial_condyle_center': (100.0, plateau_y - 20.0),
        },
        contours={},
    )


def test_slic_recovers_four_blocks(blocks):
    labels = slic_segment(blocks, full_mask(20, 20), SlicParams(n_regions=4, compactness_m=0.08))

    assert labels.n_labels == 4
    expected = np.zeros((20, 20), dtype=int)
    expected[:10, 10:], expected[10:, :10], expected[10:, 10:] = 1, 2, 3
    np.testing.assert_array_equal(labels.labels, expected)


def test_slic_partitions_bone_into_connected_regions(noise_image, landmarks):
    bone = bone_mask(landmarks, "tibia", 100, 100)
    labels = slic_segment(noise_image, bone, SlicParams(n_regions=30))

    assert (labels.labels[bone.bits] >= 0).all()
    assert (labels.labels[~bone.bits] == -1).all()
    assert set(np.unique(labels.labels[bone.bits])) == set(range(labels.n_labels))
    for k in range(labels.n_labels):
        _, n = ndimage.label(labels.labels == k, structure=FOUR)
        assert n == 1


def test_slic_partitions_random_masks(rng):
    yy, xx = np.mgrid[:50, :50]
    for _ in range(20):
        cy, cx = rng.uniform(20, 30, size=2)
        ry, rx = rng.uniform(12, 20, size=2)
        bits = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img = GrayImage(pixels=rng.uniform(size=(50, 50)), spacing=0.2)
        params = SlicParams(n_regions=int(rng.integers(2, 25)), max_iters=5)

        labels = slic_segment(img, RoiMask(bits=bits), params)

        assert (labels.labels[bits] >= 0).all() and (labels.labels[~bits] == -1).all()
        for k in range(labels.n_labels):
            _, n = ndimage.label(labels.labels == k, structure=FOUR)
            assert n == 1


def test_slic_is_deterministic_and_energy_never_rises(noise_image):
    params = SlicParams(n_regions=25, max_iters=8)
    first = slic_segment(noise_image, full_mask(100, 100), params)
    second = slic_segment(noise_image, full_mask(100, 100), params)

    np.testing.assert_array_equal(first.labels, second.labels)
    assert len(first.energies) == 8
    for before, after in zip(first.energies, first.energies[1:]):
        assert after <= before * (1 + 1e-12)


def test_slic_single_region_and_too_small_bone(noise_image):
    one = slic_segment(noise_image, full_mask(100, 100), SlicParams(n_regions=1))
    assert one.n_labels == 1
    assert (one.labels == 0).all()

    bits = np.zeros((100, 100), dtype=bool)
    bits[0, :5] = True
    with pytest.raises(SegmentationError):
        slic_segment(noise_image, RoiMask(bits=bits), SlicParams(n_regions=10))


def test_label_map_png_roundtrip(tmp_path, blocks):
    labels = slic_segment(blocks, full_mask(20, 20), SlicParams(n_regions=4))
    path = str(tmp_path / "labels.png")
    export_label_map(labels, path)
    loaded = load_label_map(path)
    np.testing.assert_array_equal(loaded.labels, labels.labels)
    assert loaded.n_labels == 4


def test_grid_points_fractions_of_bbox():
    grid = grid_points(full_mask(40, 40), GridLayout(rows=3, cols=3))

    assert [p.index for p in grid.points] == list(range(9))
    assert [(p.x, p.y) for p in grid.points[:3]] == [(10.0, 10.0), (20.0, 10.0), (30.0, 10.0)]


def test_grid_points_keep_indices_of_survivors():
    bits = np.ones((40, 40), dtype=bool)
    bits[18:23, 18:23] = False
    grid = grid_points(RoiMask(bits=bits), GridLayout(rows=3, cols=3))

    assert [p.index for p in grid.points] == [0, 1, 2, 3, 5, 6, 7, 8]
    assert grid.points[4].row == 1 and grid.points[4].col == 2


def test_grid_points_outside_mask_are_dropped():
    bits = np.zeros((40, 40), dtype=bool)
    bits[:, :20] = True
    bits[0, :] = True
    grid = grid_points(RoiMask(bits=bits), GridLayout(rows=3, cols=3))

    assert [p.index for p in grid.points] == [0, 3, 6]
    assert all(p.x < 20 for p in grid.points)


def test_region_of_point(blocks):
    labels = slic_segment(blocks, full_mask(20, 20), SlicParams(n_regions=4))

    region = region_of_point(labels, (12.5, 3.0))
    assert region.area == 100
    assert region.bits[:10, 10:].all()

    with pytest.raises(GeometryError):
        region_of_point(labels, (25.0, 3.0))


def test_anchor_moves_inward_by_offset(landmarks):
    bone = bone_mask(landmarks, "tibia", 100, 100)

    assert anchor_point(landmarks, "medial_tibia_margin", bone, (2.0, 2.0), 0.2) == pytest.approx((20.0, 60.0))
    assert anchor_point(landmarks, "lateral_tibia_margin", bone, (2.0, 2.0), 0.2) == pytest.approx((80.0, 60.0))
    with pytest.raises(GeometryError):
        anchor_point(landmarks, "patella", bone, (2.0, 2.0), 0.2)


def test_accumulate_masks_mean():
    a = np.zeros((4, 4), dtype=bool)
    b = np.zeros((4, 4), dtype=bool)
    a[:2], b[1:3] = True, True

    avg = accumulate_masks([a, RoiMask(bits=b)])

    assert avg.n_subjects == 2
    np.testing.assert_array_equal(avg.accumulation[:, 0], [0.5, 1.0, 0.5, 0.0])
    with pytest.raises(SegmentationError):
        accumulate_masks([a, np.ones((3, 3), dtype=bool)])


def test_otsu_cut_matches_exhaustive_search(rng):
    for _ in range(100):
        counts = rng.integers(0, 50, size=256)
        levels = np.arange(256)
        best, best_t = -1.0, None
        for t in range(255):
            w0, w1 = counts[:t + 1].sum(), counts[t + 1:].sum()
            if w0 == 0 or w1 == 0:
                continue
            mu0 = (counts[:t + 1] * levels[:t + 1]).sum() / w0
            mu1 = (counts[t + 1:] * levels[t + 1:]).sum() / w1
            score = w0 * w1 * (mu0 - mu1) ** 2
            if score > best * (1 + 1e-12):
                best, best_t = score, t
        assert otsu_cut(counts)[0] == best_t


def test_otsu_cut_lowest_tie_wins():
    counts = np.zeros(256)
    counts[0], counts[255] = 10, 10
    assert otsu_cut(counts)[0] == 0


def test_otsu_threshold_keeps_largest_bright_blob():
    acc = np.full((40, 40), 0.1)
    yy, xx = np.mgrid[:40, :40]
    acc[(yy - 20) ** 2 + (xx - 15) ** 2 <= 64] = 0.9
    acc[2:4, 36:38] = 0.9

    mask = otsu_threshold(AverageMask(accumulation=acc, n_subjects=10))

    assert mask.bits[20, 15]
    assert not mask.bits[2, 36]
    assert mask.area == int(((yy - 20) ** 2 + (xx - 15) ** 2 <= 64).sum())


def test_otsu_threshold_constant_is_an_error():
    with pytest.raises(SegmentationError):
        otsu_threshold(AverageMask(accumulation=np.full((5, 5), 0.5), n_subjects=3))


def test_otsu_threshold_separates_values_sharing_one_bin():
    acc = np.zeros((40, 40))
    yy, xx = np.mgrid[:40, :40]
    blob = (yy - 18) ** 2 + (xx - 22) ** 2 <= 49
    acc[blob] = 0.001  # one knee in a thousand, below 1/256
    acc[35, 2] = 0.001

    mask = otsu_threshold(AverageMask(accumulation=acc, n_subjects=1000))

    np.testing.assert_array_equal(mask.bits, blob)


def test_standard_roi_below_plateau():
    img = GrayImage(pixels=np.zeros((400, 400)), spacing=0.2)

    roi = standard_roi(img, knee_landmarks(), 1.0 / 7.0)

    assert roi.bbox() == (200, 250, 75, 125)
    assert roi.area == 2500

    lateral = standard_roi(img, knee_landmarks(), 1.0 / 7.0, side="lateral")
    assert lateral.bbox() == (200, 250, 245, 295)


def test_standard_roi_is_clamped_to_image():
    img = GrayImage(pixels=np.zeros((400, 400)), spacing=0.2)
    roi = standard_roi(img, knee_landmarks(plateau_y=380.0))
    assert roi.bbox() == (380, 400, 75, 125)

    with pytest.raises(GeometryError):
        standard_roi(img, knee_landmarks(), side="middle")
    with pytest.raises(GeometryError):
        standard_roi(img, knee_landmarks(), 0.0)


def test_reference_frame_and_resampling():
    bones = []
    for h, w in ((20, 40), (30, 50), (40, 60)):
        bits = np.zeros((100, 100), dtype=bool)
        bits[5:5 + h, 10:10 + w] = True
        bones.append(RoiMask(bits=bits))
    assert reference_frame(bones) == (30, 50)

    region_bits = np.zeros((100, 100), dtype=bool)
    region_bits[5:15, 10:30] = True  # top-left quarter of the first bone
    moved = to_reference_frame(RoiMask(bits=region_bits), bones[0], (30, 50))
    assert moved.shape == (30, 50)
    assert moved[:15, :25].all()
    assert not moved[15:].any() and not moved[:, 25:].any()


def test_register_mask_places_into_bone_bbox():
    avg = np.zeros((2, 2), dtype=bool)
    avg[0, 0] = True
    bone = np.zeros((50, 80), dtype=bool)
    bone[10:30, 20:60] = True

    mask = register_mask(RoiMask(bits=avg), RoiMask(bits=bone))

    assert mask.bbox() == (10, 20, 20, 40)
    assert mask.area == 200

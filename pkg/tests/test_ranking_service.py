import numpy as np
import pytest

from config import GridLayout, PipelineConfig
from models import (
    DescriptorError, GeometryError, KneeSample, LandmarkSet, LearningError, SegmentationError,
)
from services.dataset_service import load_knee_sample
from services.descriptor_service import lbp_histogram
from services.learning_service import assign_folds, cross_validated_scores
from services.preprocess_service import preprocess_sample
from services.ranking_service import (
    CHANCE_AUC, average_region_mask, load_segmentation, rank_regions, sample_region,
    save_segmentation, segment_sample,
)
from services.segmentation_service import otsu_threshold
from services.synth_service import synth_corpus
from utils.scoring_utils import roc_auc


@pytest.fixture(scope="module")
def knees(tmp_path_factory):
    out = tmp_path_factory.mktemp("ranking")
    rows = synth_corpus(str(out), 6, effect_cell=1, seed=2, layout=GridLayout(rows=3, cols=4),
                        size=384)
    return [load_knee_sample(row) for row in rows]


@pytest.fixture(scope="module")
def ranking(knees):
    cfg = PipelineConfig.model_validate({
        'slic': {'n_regions': 30}, 'grid': {'rows': 3, 'cols': 4},
        'lbp': {'radius': 2, 'n_points': 4}, 'cv': {'k_folds': 3}, 'n_boot': 20,
    })
    ranked, segmented = rank_regions(knees, cfg)
    return cfg, ranked, segmented


def test_ranking_is_sorted_and_bounded(knees, ranking):
    _, ranked, segmented = ranking

    assert len(segmented) == len(knees) == 12
    assert ranked
    keys = [(-r.auc, r.grid_index) for r in ranked]
    assert keys == sorted(keys)
    for r in ranked:
        assert 0.0 <= r.auc_lo <= r.auc <= r.auc_hi <= 1.0
        assert 0 < r.n_samples <= 12
        assert r.grid_index == r.row * 4 + r.col


def test_ranking_is_deterministic(knees, ranking):
    cfg, ranked, _ = ranking
    again, _ = rank_regions(list(reversed(knees)), cfg, jobs=3)
    assert again == ranked


def test_ranking_needs_both_classes(knees, ranking):
    cfg = ranking[0]
    negatives = [k for k in knees if k.label == 0]
    with pytest.raises(LearningError):
        rank_regions(negatives, cfg)


def test_unsegmentable_knee_is_recorded(knees, ranking):
    cfg = ranking[0]
    broken = knees[0]
    no_tibia = LandmarkSet(points=broken.landmarks.points,
                           contours={'femur': broken.landmarks.contours['femur']})
    samples = [KneeSample(broken.sample_id, broken.subject_id, broken.label, broken.image, no_tibia)]
    samples += knees[1:]
    failures = {}

    _, segmented = rank_regions(samples, cfg, failures=failures)

    assert list(failures) == [broken.sample_id]
    assert len(segmented) == 11
    with pytest.raises(GeometryError):
        rank_regions(samples, cfg)


def test_region_auc_pools_held_out_predictions(knees, ranking):
    cfg, ranked, segmented = ranking
    by_id = {k.sample_id: k for k in knees}
    folds = assign_folds([(s.sample_id, s.subject_id, s.label) for s in segmented], cfg.cv)
    region = next(r for r in ranked if r.auc != CHANCE_AUC)

    rows = []
    for seg in segmented:
        mask = sample_region(seg, region.grid_index)
        if mask is None:
            continue
        try:
            hist = lbp_histogram(by_id[seg.sample_id].image, mask, cfg.lbp).values
        except DescriptorError:
            continue
        rows.append((folds[seg.sample_id], seg.label, hist))
    fold_ids = np.array([fold for fold, _, _ in rows])
    y = np.array([label for _, label, _ in rows])
    X = np.stack([hist for _, _, hist in rows])

    scores, _, _ = cross_validated_scores(X, y, fold_ids, cfg.lam)

    assert region.n_samples == len(rows)
    assert region.auc == pytest.approx(roc_auc(scores, y), abs=1e-12)


def test_ranking_ignores_affine_intensity_changes(knees, ranking):
    cfg = ranking[0]
    plain, shifted = [], []
    for k in knees:
        # multiples of 1/256 keep 0.5 * v + 0.25 exact
        dyadic = np.floor(k.image.pixels * 255.0 + 0.5) / 256.0
        for target, pixels in ((plain, dyadic), (shifted, 0.5 * dyadic + 0.25)):
            img, lm = preprocess_sample(k.image.replace(pixels), k.landmarks, cfg.preprocess)
            target.append(KneeSample(k.sample_id, k.subject_id, k.label, img, lm))

    np.testing.assert_array_equal(plain[0].image.pixels, shifted[0].image.pixels)
    assert rank_regions(shifted, cfg)[0] == rank_regions(plain, cfg)[0]


def test_regions_by_index_and_anchor(knees, ranking):
    cfg, ranked, segmented = ranking
    by_id = {k.sample_id: k for k in knees}
    seg = segmented[0]

    region = sample_region(seg, ranked[0].grid_index)
    if region is not None:
        assert (region.bits <= seg.bone.bits).all()

    anchored = sample_region(seg, "medial_tibia_margin", by_id[seg.sample_id].landmarks, cfg.anchor_offset_mm)
    assert anchored is not None
    assert sample_region(seg, 999) is None


def test_average_mask_and_threshold(knees, ranking):
    cfg, ranked, segmented = ranking
    landmarks = {k.sample_id: k.landmarks for k in knees}

    avg = average_region_mask(segmented, ranked[0].grid_index, landmarks, cfg.anchor_offset_mm)

    assert 1 <= avg.n_subjects <= 12
    assert avg.accumulation.min() >= 0.0 and avg.accumulation.max() <= 1.0
    np.testing.assert_allclose(avg.accumulation * avg.n_subjects,
                               np.round(avg.accumulation * avg.n_subjects), atol=1e-9)
    mask = otsu_threshold(avg)
    assert mask.bits.shape == avg.accumulation.shape

    with pytest.raises(SegmentationError):
        average_region_mask(segmented, 999)


def test_segmentation_files_roundtrip(tmp_path, knees, ranking):
    cfg = ranking[0]
    sample = knees[3]
    segmented = segment_sample(sample, cfg)

    save_segmentation(segmented, str(tmp_path))
    loaded = load_segmentation(sample, str(tmp_path))

    np.testing.assert_array_equal(loaded.labels.labels, segmented.labels.labels)
    assert loaded.grid == segmented.grid
    np.testing.assert_array_equal(loaded.bone.bits, segmented.bone.bits)

    with pytest.raises(SegmentationError):
        load_segmentation(knees[4], str(tmp_path))

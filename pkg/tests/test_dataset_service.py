import os

import numpy as np
import pytest

from config import GridLayout, PreprocessConfig
from models import ConfigError
from services.dataset_service import load_knee_sample, load_oriented, preprocess_row
from services.synth_service import SYNTH_SIZE, band_pass_noise, synth_corpus
from utils.file_utils import load_manifest


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rows = synth_corpus(str(out), 2, effect_cell=1, seed=5, layout=GridLayout(rows=3, cols=4))
    return out, rows


def test_corpus_layout(corpus):
    out, rows = corpus
    assert [r.sample_id for r in rows] == ["S0000_L", "S0000_R", "S0001_L", "S0001_R"]
    assert sorted({r.label for r in rows}) == [0, 1]
    for r in rows:
        assert os.path.exists(r.image_path) and os.path.exists(r.landmark_path)
    assert [r.sample_id for r in load_manifest(str(out / "manifest.csv"))] == [r.sample_id for r in rows]


def test_corpus_is_reproducible(corpus, tmp_path):
    out, rows = corpus
    again = synth_corpus(str(tmp_path), 2, effect_cell=1, seed=5, layout=GridLayout(rows=3, cols=4))
    for a, b in zip(rows, again):
        with open(a.image_path, 'rb') as fa, open(b.image_path, 'rb') as fb:
            assert fa.read() == fb.read()


def test_synth_rejects_bad_arguments(tmp_path):
    with pytest.raises(ConfigError):
        synth_corpus(str(tmp_path), 0)
    with pytest.raises(ConfigError):
        synth_corpus(str(tmp_path), 2, delta=1.5)


def test_band_pass_noise_is_standardized(rng):
    noise = band_pass_noise(rng, (64, 64), 0.1, 0.3)
    assert abs(noise.mean()) < 1e-9
    assert noise.std() == pytest.approx(1.0)


def test_left_knees_are_flipped_back(corpus):
    _, rows = corpus
    for row in rows:
        img, lm = load_oriented(row)
        assert lm.point("medial_tibia_margin")[0] < lm.point("lateral_tibia_margin")[0]
        assert img.spacing == 0.2

    sample = load_knee_sample(rows[0])
    assert (sample.subject_id, sample.label) == ("S0000", rows[0].label)


def test_preprocess_row_is_cached_by_content(corpus, tmp_path):
    _, rows = corpus
    cfg = PreprocessConfig()
    store = str(tmp_path / "store")

    stored, digest, skipped = preprocess_row(rows[0], store, cfg)
    assert not skipped
    assert stored.mirrored and stored.spacing_mm == cfg.target_spacing

    again, digest2, skipped2 = preprocess_row(rows[0], store, cfg, known_hash=digest)
    assert skipped2 and digest2 == digest and again == stored

    _, digest3, _ = preprocess_row(rows[0], store, PreprocessConfig(high_percentile=0.98), digest)
    assert digest3 != digest

    img, lm = load_oriented(stored)
    assert np.all(img.pixels >= 0.0) and np.all(img.pixels <= 1.0)
    lx, ly = lm.point("tibial_plateau_left")
    rx, ry = lm.point("tibial_plateau_right")
    assert abs(ly - ry) < 1e-6
    assert lx < rx


def test_synthetic_tibia_is_realistically_wide(corpus):
    _, rows = corpus
    for row in rows:
        img, lm = load_oriented(row)
        assert (img.width, img.height) == (SYNTH_SIZE, SYNTH_SIZE)
        width = abs(lm.point("lateral_tibia_margin")[0] - lm.point("medial_tibia_margin")[0])
        assert width >= 400


def test_synth_raster_size_is_configurable(tmp_path):
    rows = synth_corpus(str(tmp_path), 1, effect_cell=1, layout=GridLayout(rows=3, cols=4), size=128)
    img, _ = load_oriented(rows[0])
    assert (img.width, img.height) == (128, 128)
    with pytest.raises(ConfigError):
        synth_corpus(str(tmp_path), 1, size=32)

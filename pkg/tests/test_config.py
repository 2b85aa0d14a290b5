import json

import pytest

from config import PipelineConfig, config_hash, load_pipeline_config
from models import ConfigError


def test_defaults():
    cfg = load_pipeline_config()
    assert cfg.slic.n_regions == 100
    assert cfg.slic.compactness_m == 0.08
    assert (cfg.grid.rows, cfg.grid.cols) == (6, 10)
    assert (cfg.lbp.radius, cfg.lbp.n_points) == (6, 8)
    assert cfg.hog.pixels_per_cell == (10, 10)
    assert cfg.hog.window == (60, 60)
    assert cfg.hog.n_features == 3 * 3 * 4 * 4 * 4
    assert cfg.haralick.levels == 64
    assert cfg.lam == 1.0
    assert cfg.cv.k_folds == 5
    assert cfg.preprocess.target_spacing == 0.2


def test_toml_file_with_overrides(tmp_path):
    path = tmp_path / "pipeline.toml"
    path.write_text('lambda = 0.5\nn_boot = 200\n\n[slic]\nn_regions = 50\n\n[cv]\nk_folds = 10\n')

    cfg = load_pipeline_config(str(path), jobs=4, seed=None)

    assert cfg.lam == 0.5
    assert cfg.n_boot == 200
    assert cfg.slic.n_regions == 50
    assert cfg.slic.max_iters == 10
    assert cfg.cv.k_folds == 10
    assert cfg.jobs == 4


def test_json_file(small_config_file, small_config):
    assert load_pipeline_config(small_config_file) == small_config


@pytest.mark.parametrize("payload", [
    {"slic": {"n_region": 10}},
    {"unknown": 1},
    {"preprocess": {"low_percentile": 0.9, "high_percentile": 0.5}},
    {"fsa": {"min_scale": 3.0, "max_scale": 1.0}},
    {"n_boot": 5},
    {"lambda": 0},
    {"hog": {"pixels_per_cell": [0, 10]}},
    {"hog": {"cells_per_block": [4, 4], "window_cells": [3, 6]}},
    {"cv": {"split_level": "knee"}},
])
def test_invalid_configs_are_rejected(tmp_path, payload):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(payload))
    with pytest.raises(ConfigError):
        load_pipeline_config(str(path))


def test_unreadable_config(tmp_path):
    with pytest.raises(ConfigError):
        load_pipeline_config(str(tmp_path / "missing.toml"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_pipeline_config(str(broken))


def test_config_hash_tracks_values():
    base = PipelineConfig()
    assert config_hash(base) == config_hash(PipelineConfig())
    assert config_hash(base) != config_hash(PipelineConfig.model_validate({"lambda": 2.0}))
    assert len(config_hash(base.preprocess)) == 64

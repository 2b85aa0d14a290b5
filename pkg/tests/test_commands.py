import json
import os

import numpy as np
import pytest

from app import main
from config import MANIFEST_HEADER
from utils.file_utils import read_feature_csv, read_folds_csv, read_json, read_ranking_csv

SMALL = {
    'slic': {'n_regions': 12},
    'grid': {'rows': 3, 'cols': 4},
    'lbp': {'radius': 2, 'n_points': 4},
    'cv': {'k_folds': 3},
    'n_boot': 20,
    'top_n': 1,
}


def run(*argv):
    return main(["--log-level", "WARNING", *argv])


def run_record(out):
    return read_json(os.path.join(out, "run.json"))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "pipeline.json"
    config.write_text(json.dumps(SMALL))
    data, out = str(root / "data"), str(root / "out")

    assert run("synth", "--config", str(config), "--out", data, "--subjects", "6",
               "--effect-cell", "1", "--seed", "3") == 0
    assert run("preprocess", "--config", str(config), "--out", out,
               "--manifest", os.path.join(data, "manifest.csv")) == 0
    return {'root': root, 'config': str(config), 'data': data, 'out': out}


@pytest.fixture(scope="module")
def ranked(workspace):
    out = workspace['out']
    assert run("rank-regions", "--config", workspace['config'], "--out", out, "--jobs", "2") == 0
    return read_ranking_csv(os.path.join(out, "ranking", "tibia.csv"))


def test_synth_writes_manifest_and_rasters(workspace):
    lines = open(os.path.join(workspace['data'], "manifest.csv")).read().splitlines()
    assert lines[0].split(",")[:len(MANIFEST_HEADER)] == MANIFEST_HEADER
    assert len(lines) == 13
    record = run_record(workspace['data'])
    assert record['command'] == "synth" and record['exit_code'] == 0


def test_preprocess_rerun_skips_every_knee(workspace):
    out = workspace['out']
    store = os.path.join(out, "preprocessed")
    hashes = read_json(os.path.join(store, "hashes.json"))
    assert len(hashes) == 12
    images = sorted(os.path.join(store, "images", name) for name in os.listdir(os.path.join(store, "images")))
    assert len(images) == 12
    stamps = [os.stat(p).st_mtime_ns for p in images]

    assert run("preprocess", "--config", workspace['config'], "--out", out,
               "--manifest", os.path.join(workspace['data'], "manifest.csv")) == 0

    assert len(run_record(out)['outputs']) == 14
    assert [os.stat(p).st_mtime_ns for p in images] == stamps
    assert read_json(os.path.join(store, "hashes.json")) == hashes


ALL_DESCRIPTORS = ("LBP", "HOG", "Haralick", "Fractal", "Entropy")
# LBP r2 P4, HOG 6x6-cell window with 4x4 blocks, directional FD
WIDTHS = {'LBP': 16, 'HOG': 576, 'Haralick': 13, 'Fractal': 2, 'Entropy': 1}


@pytest.fixture(scope="module")
def features(workspace, ranked):
    out, config = workspace['out'], workspace['config']
    top = str(ranked[0].grid_index)
    assert run("extract", "--config", config, "--out", out, "--roi", "standard",
               "--descriptors", *ALL_DESCRIPTORS) == 0
    assert run("extract", "--config", config, "--out", out, "--roi", "adaptive_mask",
               "--region", top, "--descriptors", *ALL_DESCRIPTORS) == 0
    assert run("extract", "--config", config, "--out", out, "--roi", "anchor",
               "--descriptors", "LBP") == 0
    return os.path.join(out, "features")


def test_rank_regions_outputs(workspace, ranked):
    out = workspace['out']
    assert ranked
    assert all(0.0 <= r.auc <= 1.0 for r in ranked)
    assert len(os.listdir(os.path.join(out, "labels", "tibia"))) == 2 * 12
    top = ranked[0].grid_index
    for suffix in ("_average.png", "_otsu.png", ".json"):
        assert os.path.exists(os.path.join(out, "masks", f"tibia_{top}{suffix}"))
    assert run_record(out)['command'] == "rank-regions"


def test_make_mask_for_anchor(workspace, ranked):
    out = workspace['out']
    assert run("make-mask", "--config", workspace['config'], "--out", out,
               "--region", "medial_tibia_margin") == 0
    meta = read_json(os.path.join(out, "masks", "tibia_medial_tibia_margin.json"))
    assert meta['n_subjects'] == 12
    assert meta['mask_area'] > 0


def test_extract_every_descriptor_on_standard_and_adaptive_rois(ranked, features):
    top = ranked[0].grid_index
    for roi_name, tag in (("standard_medial", "StandardRect"), (f"mask_tibia_{top}", "AdaptiveAverage")):
        for descriptor, width in WIDTHS.items():
            table = read_feature_csv(os.path.join(features, f"{roi_name}_{descriptor}.csv"))
            assert len(table.sample_ids) == 12, (roi_name, descriptor)
            assert table.width == width, (roi_name, descriptor)
            assert set(table.roi_tags) == {tag}
            assert set(table.descriptors) == {descriptor}
            assert np.isfinite(table.X).all()
    assert set(read_feature_csv(os.path.join(features, "standard_medial_LBP.csv")).labels) == {0, 1}
    assert os.path.exists(os.path.join(features, "anchor_tibia_medial_tibia_margin_LBP.csv"))


def test_evaluate_cross_validated_and_external(workspace, features):
    out, config = workspace['out'], workspace['config']
    lbp = os.path.join(features, "standard_medial_LBP.csv")
    entropy = os.path.join(features, "standard_medial_Entropy.csv")

    assert run("evaluate", "--config", config, "--out", out, "--features", lbp, entropy,
               "--name", "cv") == 0
    report = read_json(os.path.join(out, "evaluation", "cv", "report.json"))
    assert report['mode'] == "cv" and report['n_samples'] == 12
    assert report['auc_ci'][0] <= report['auc'] <= report['auc_ci'][1]
    for name in ("report.csv", "roc.svg", "pr.svg", "model.json", "folds.csv"):
        assert os.path.exists(os.path.join(out, "evaluation", "cv", name))

    folds = read_folds_csv(os.path.join(out, "evaluation", "cv", "folds.csv"))
    assert len(folds) == 12
    folds_of_subject = {}
    for subject, fold in folds.values():
        folds_of_subject.setdefault(subject, set()).add(fold)
    assert len(folds_of_subject) == 6
    assert all(len(assigned) == 1 for assigned in folds_of_subject.values())

    assert run("evaluate", "--config", config, "--out", out, "--features", lbp,
               "--test-features", lbp, "--name", "external") == 0
    external = read_json(os.path.join(out, "evaluation", "external", "report.json"))
    assert external['mode'] == "external" and external['per_fold'] == []


def test_empty_manifest_is_a_no_op(tmp_path):
    manifest = tmp_path / "manifest.csv"
    manifest.write_text(",".join(MANIFEST_HEADER) + "\n")
    out = str(tmp_path / "out")

    assert run("preprocess", "--out", out, "--manifest", str(manifest)) == 0
    assert run_record(out)['outputs'] == []


def test_corrupt_image_is_excluded_and_over_budget(workspace, tmp_path):
    data = workspace['data']
    corrupt = tmp_path / "broken.png"
    corrupt.write_bytes(b"not a png")
    landmarks = os.path.join(data, "landmarks", "S0000_R.json")
    manifest = tmp_path / "manifest.csv"
    lines = open(os.path.join(data, "manifest.csv")).read().splitlines()
    rows = [",".join(MANIFEST_HEADER)]
    for line in lines[1:]:
        fields = line.split(",")[:len(MANIFEST_HEADER)]
        fields[2] = os.path.join(data, fields[2])
        fields[3] = os.path.join(data, fields[3])
        rows.append(",".join(fields))
    rows.append(f"broken,S9999,{corrupt},{landmarks},0.2,R,3")
    manifest.write_text("\n".join(rows) + "\n")
    out = str(tmp_path / "out")

    assert run("preprocess", "--config", workspace['config'], "--out", out,
               "--manifest", str(manifest)) == 1

    record = run_record(out)
    assert list(record['failures']) == ["broken"]
    assert record['exit_code'] == 1
    assert len(read_json(os.path.join(out, "preprocessed", "hashes.json"))) == 12


def test_invalid_config_exits_with_two(tmp_path):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({'slic': {'n_region': 10}}))
    assert run("synth", "--config", str(config), "--out", str(tmp_path / "out"), "--subjects", "1") == 2


def test_unknown_region_exits_with_two(workspace, ranked):
    assert run("make-mask", "--config", workspace['config'], "--out", workspace['out'],
               "--region", "999") == 2

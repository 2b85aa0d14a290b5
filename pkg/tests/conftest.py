"""Shared fixtures for the texroi test-suite"""
import json
import os
import sys

import numpy as np
import pytest

# Flat application layout: make config, models, services, utils importable
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from config import PipelineConfig  # noqa: E402
from models import GrayImage, LandmarkSet  # noqa: E402


def make_landmarks(width: float = 100.0, height: float = 100.0, plateau_y: float = None,
                   tilt: float = 0.0) -> LandmarkSet:
    """Box-shaped knee: tibia below the plateau line, femur above it."""
    plateau_y = height / 2.0 if plateau_y is None else plateau_y
    x_med, x_lat = 0.1 * width, 0.9 * width
    y_med, y_lat = plateau_y, plateau_y + tilt
    return LandmarkSet(
        points={
            'medial_tibia_margin': (x_med, y_med),
            'lateral_tibia_margin': (x_lat, y_lat),
            'tibial_plateau_left': (x_med, y_med),
            'tibial_plateau_right': (x_lat, y_lat),
            'medial_condyle_center': (0.3 * width, plateau_y - 2.0),
        },
        contours={
            'tibia': [(x_med, y_med), (x_lat, y_lat), (x_lat, height - 2.0), (x_med, height - 2.0)],
            'femur': [(x_med, 2.0), (x_lat, 2.0), (x_lat, plateau_y - 4.0), (x_med, plateau_y - 4.0)],
        },
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def landmarks():
    return make_landmarks()


@pytest.fixture
def noise_image(rng):
    return GrayImage(pixels=rng.uniform(0.0, 1.0, size=(100, 100)), spacing=0.2)


@pytest.fixture
def small_config():
    """Pipeline settings small enough for a corpus of a few knees."""
    return PipelineConfig.model_validate({
        'slic': {'n_regions': 30},
        'grid': {'rows': 3, 'cols': 4},
        'lbp': {'radius': 2, 'n_points': 4},
        'cv': {'k_folds': 3},
        'n_boot': 20,
        'top_n': 1,
    })


@pytest.fixture
def small_config_file(tmp_path, small_config):
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps(small_config.model_dump(mode="json", by_alias=True)))
    return str(path)

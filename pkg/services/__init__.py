"""Service modules for the texroi pipeline"""

from .image_service import load_raster, export_raster, polygon_fill, bone_mask, mirror_horizontal
from .preprocess_service import (
    normalize_contrast,
    quantize_8bit,
    resample_bicubic,
    align_rotation,
    preprocess_sample
)
from .segmentation_service import (
    slic_segment,
    grid_points,
    region_of_point,
    anchor_roi,
    standard_roi,
    accumulate_masks,
    otsu_threshold,
    register_mask
)
from .descriptor_service import (
    lbp_histogram,
    hog_features,
    haralick13,
    fractal_dimension_fsa,
    shannon_entropy,
    concat_features,
    compute_descriptor
)
from .learning_service import (
    fit_standardizer,
    logreg_fit,
    logreg_predict,
    subjectwise_kfold,
    evaluate,
    test_external
)
from .ranking_service import rank_regions, average_region_mask
from .synth_service import synth_corpus

__all__ = [
    'load_raster',
    'export_raster',
    'polygon_fill',
    'bone_mask',
    'mirror_horizontal',
    'normalize_contrast',
    'quantize_8bit',
    'resample_bicubic',
    'align_rotation',
    'preprocess_sample',
    'slic_segment',
    'grid_points',
    'region_of_point',
    'anchor_roi',
    'standard_roi',
    'accumulate_masks',
    'otsu_threshold',
    'register_mask',
    'lbp_histogram',
    'hog_features',
    'haralick13',
    'fractal_dimension_fsa',
    'shannon_entropy',
    'concat_features',
    'compute_descriptor',
    'fit_standardizer',
    'logreg_fit',
    'logreg_predict',
    'subjectwise_kfold',
    'evaluate',
    'test_external',
    'rank_regions',
    'average_region_mask',
    'synth_corpus'
]

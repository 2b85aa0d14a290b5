"""CLI commands for the texroi pipeline"""

from .preprocess_commands import router as preprocess_router
from .rank_commands import router as rank_router
from .mask_commands import router as mask_router
from .extract_commands import router as extract_router
from .evaluate_commands import router as evaluate_router
from .synth_commands import router as synth_router

__all__ = [
    'preprocess_router',
    'rank_router',
    'mask_router',
    'extract_router',
    'evaluate_router',
    'synth_router'
]

"""synth: write a synthetic knee corpus with one texture-altered lattice cell"""
import os

from config import PipelineConfig
from models import BatchReport
from services.synth_service import SYNTH_SIZE, synth_corpus

from .common import result
from .router import CommandRouter, argument

router = CommandRouter()


@router.command(
    "synth",
    help="Generate a synthetic corpus (manifest, 16-bit rasters, landmarks)",
    arguments=(
        argument("--subjects", type=int, default=20, help="Subjects, two knees each"),
        argument("--effect-cell", type=int, default=0, help="Lattice index carrying the class signal"),
        argument("--delta", type=float, default=1.0, help="Texture change of class 1, in [0, 1]"),
        argument("--size", type=int, default=SYNTH_SIZE, help="Raster side in pixels"),
    ),
)
def synth_command(args, cfg: PipelineConfig):
    rows = synth_corpus(cfg.output_dir, args.subjects, args.effect_cell, args.delta,
                        seed=cfg.seed, layout=cfg.grid, size=args.size)
    outputs = [os.path.join(cfg.output_dir, 'manifest.csv')]
    outputs += [r.image_path for r in rows] + [r.landmark_path for r in rows]
    return result(outputs, BatchReport(processed=[r.sample_id for r in rows]))

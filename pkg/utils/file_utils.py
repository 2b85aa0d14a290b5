"""File handling utilities: manifests, feature tables, rankings and JSON records"""
import csv
import hashlib
import json
import os
import re
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import MANIFEST_HEADER
from models import (
    FeatureTable, FeatureVector, LearningError, ManifestError, ManifestRow, RankedRegion,
)

RANKING_HEADER = ['grid_index', 'row', 'col', 'auc', 'auc_lo', 'auc_hi']
FEATURE_KEY_COLUMNS = ['sample_id', 'subject_id', 'label', 'roi_tag', 'descriptor']


def safe_name(name: str) -> str:
    """File-system safe version of a sample id."""
    name = re.sub(r'[<>:"/\\|?*\x00-\x1f\x7f-\x9f\s]', '_', str(name)).strip('. ')
    return name or 'sample'


def _ensure_parent(path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def load_manifest(path: str, check_paths: bool = True) -> List[ManifestRow]:
    """
    Read a dataset manifest.

    Relative image and landmark paths are resolved against the manifest's
    directory. An optional `mirrored` column records knees already flipped.

    Raises:
        ManifestError: Missing columns, duplicate ids, bad values or missing files
    """
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.DictReader(f)
            header = reader.fieldnames or []
            entries = list(reader)
    except OSError as e:
        raise ManifestError(f"Cannot read manifest {path}: {e}") from e

    missing = [col for col in MANIFEST_HEADER if col not in header]
    if missing:
        raise ManifestError(f"Manifest {path} lacks columns: {', '.join(missing)}")

    rows: List[ManifestRow] = []
    seen = set()
    for line, entry in enumerate(entries, start=2):
        sample_id = entry['sample_id'].strip()
        if not sample_id:
            raise ManifestError(f"{path}:{line}: empty sample_id")
        if sample_id in seen:
            raise ManifestError(f"{path}:{line}: duplicate sample_id '{sample_id}'")
        seen.add(sample_id)

        try:
            spacing = float(entry['spacing_mm'])
            kl_grade = int(entry['kl_grade'])
        except ValueError as e:
            raise ManifestError(f"{path}:{line}: {e}") from e
        side = entry['knee_side'].strip().upper()
        if not (spacing > 0):
            raise ManifestError(f"{path}:{line}: spacing must be positive")
        if side not in ('L', 'R'):
            raise ManifestError(f"{path}:{line}: knee_side must be L or R, got '{side}'")
        if not 0 <= kl_grade <= 4:
            raise ManifestError(f"{path}:{line}: kl_grade {kl_grade} outside 0..4")

        image_path = os.path.join(base, entry['image_path'])
        landmark_path = os.path.join(base, entry['landmark_path'])
        if check_paths:
            for p in (image_path, landmark_path):
                if not os.path.exists(p):
                    raise ManifestError(f"{path}:{line}: file not found: {p}")

        rows.append(ManifestRow(
            sample_id=sample_id,
            subject_id=entry['subject_id'].strip(),
            image_path=image_path,
            landmark_path=landmark_path,
            spacing_mm=spacing,
            knee_side=side,
            kl_grade=kl_grade,
            mirrored=str(entry.get('mirrored', '')).strip().lower() in ('1', 'true', 'yes'),
        ))
    return rows


def write_manifest(rows: Iterable[ManifestRow], path: str, with_mirrored: bool = False) -> None:
    """Write a manifest; paths are stored relative to the manifest's directory."""
    _ensure_parent(path)
    base = os.path.dirname(os.path.abspath(path))
    header = MANIFEST_HEADER + (['mirrored'] if with_mirrored else [])
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in sorted(rows, key=lambda r: r.sample_id):
            values = [
                row.sample_id, row.subject_id,
                os.path.relpath(row.image_path, base).replace(os.sep, '/'),
                os.path.relpath(row.landmark_path, base).replace(os.sep, '/'),
                repr(row.spacing_mm), row.knee_side, row.kl_grade,
            ]
            if with_mirrored:
                values.append(int(row.mirrored))
            writer.writerow(values)


# ---------------------------------------------------------------------------
# Hashing and JSON
# ---------------------------------------------------------------------------

def content_hash(paths: Sequence[str], extra: str = '') -> str:
    """SHA-256 over file contents plus an extra string (e.g. a config hash)."""
    digest = hashlib.sha256()
    for p in paths:
        with open(p, 'rb') as f:
            for chunk in iter(lambda: f.read(1 << 16), b''):
                digest.update(chunk)
        digest.update(b'\0')
    digest.update(extra.encode('utf-8'))
    return digest.hexdigest()


def write_json(path: str, payload: Any) -> None:
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')


def read_json(path: str, default: Any = None) -> Any:
    if not os.path.exists(path):
        return default
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


# ---------------------------------------------------------------------------
# Feature tables
# ---------------------------------------------------------------------------

def write_feature_csv(path: str, rows: Sequence[Tuple[str, str, int, FeatureVector]]) -> None:
    """
    One row per knee: sample_id,subject_id,label,roi_tag,descriptor,v0..vN.
    Values are written with repr() so the reloaded matrix is bit-identical.

    Raises:
        LearningError: Rows of different widths
    """
    ordered = sorted(rows, key=lambda r: r[0])
    widths = {len(vec) for _, _, _, vec in ordered}
    if len(widths) > 1:
        raise LearningError(f"Feature rows have different widths: {sorted(widths)}")
    width = widths.pop() if widths else 0

    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(FEATURE_KEY_COLUMNS + [f"v{i}" for i in range(width)])
        for sample_id, subject_id, label, vec in ordered:
            writer.writerow(
                [sample_id, subject_id, int(label), vec.roi_tag, vec.descriptor.value]
                + [repr(float(v)) for v in vec.values]
            )


def read_feature_csv(path: str) -> FeatureTable:
    try:
        with open(path, 'r', encoding='utf-8', newline='') as f:
            reader = csv.reader(f)
            header = next(reader, None)
            body = list(reader)
    except OSError as e:
        raise LearningError(f"Cannot read features {path}: {e}") from e
    if header is None or header[:len(FEATURE_KEY_COLUMNS)] != FEATURE_KEY_COLUMNS:
        raise LearningError(f"{path}: not a feature table")

    width = len(header) - len(FEATURE_KEY_COLUMNS)
    values = np.zeros((len(body), width), dtype=np.float64)
    for i, line in enumerate(body):
        if len(line) != len(header):
            raise LearningError(f"{path}:{i + 2}: expected {len(header)} columns, got {len(line)}")
        values[i] = [float(v) for v in line[len(FEATURE_KEY_COLUMNS):]]
    return FeatureTable(
        sample_ids=tuple(line[0] for line in body),
        subject_ids=tuple(line[1] for line in body),
        labels=tuple(int(line[2]) for line in body),
        roi_tags=tuple(line[3] for line in body),
        descriptors=tuple(line[4] for line in body),
        X=values,
    )


def table_vectors(table: FeatureTable) -> Dict[str, FeatureVector]:
    return {
        sid: FeatureVector(desc, table.X[i], tag)
        for i, (sid, desc, tag) in enumerate(zip(table.sample_ids, table.descriptors, table.roi_tags))
    }


# ---------------------------------------------------------------------------
# Rankings and folds
# ---------------------------------------------------------------------------

def write_ranking_csv(path: str, ranked: Sequence[RankedRegion]) -> None:
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(RANKING_HEADER)
        for r in ranked:
            writer.writerow([r.grid_index, r.row, r.col, repr(r.auc), repr(r.auc_lo),
                             repr(r.auc_hi)])


def read_ranking_csv(path: str) -> List[RankedRegion]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return [
            RankedRegion(
                grid_index=int(e['grid_index']), row=int(e['row']), col=int(e['col']),
                auc=float(e['auc']), auc_lo=float(e['auc_lo']), auc_hi=float(e['auc_hi']),
            )
            for e in csv.DictReader(f)
        ]


def write_folds_csv(path: str, table: FeatureTable, folds: Dict[str, int]) -> None:
    _ensure_parent(path)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['sample_id', 'subject_id', 'label', 'fold'])
        for sid, subj, label in sorted(table.keys()):
            writer.writerow([sid, subj, label, folds[sid]])


def read_folds_csv(path: str) -> Dict[str, Tuple[str, int]]:
    """sample_id -> (subject_id, fold)"""
    with open(path, 'r', encoding='utf-8', newline='') as f:
        return {e['sample_id']: (e['subject_id'], int(e['fold'])) for e in csv.DictReader(f)}


def package_versions(names: Optional[Sequence[str]] = None) -> Dict[str, str]:
    """Installed versions of the numeric stack, for provenance records."""
    from importlib import metadata

    names = names or ('numpy', 'scipy', 'scikit-image', 'Pillow', 'matplotlib', 'pydantic')
    versions = {}
    for name in names:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'not installed'
    return versions

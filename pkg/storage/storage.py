#storage
import json
import logging
from struct import error as struct_error
from pathlib import Path
from typing import Any, BinaryIO, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd

from config import ModelConfig, config_hash
from errors import CheckpointError, DataError
from storage.schemas import (
    ARRAY_HEADER,
    ARRAY_MAGIC,
    CHECKPOINT_HEADER,
    CHECKPOINT_MAGIC,
    DTYPE_TAGS,
    ENTRY_NAME,
    FORMAT_VERSION,
    MAX_EXTENT,
    MAX_RANK,
    TABLE_COLUMNS,
    TAG_OF_KIND,
    ArtifactName,
)
from synthgen import AtlasLayout, CohortSpec, Subject

logger = logging.getLogger(__name__)


# =====================================================================================
# Массивы

def write_array(fh: BinaryIO, arr: np.ndarray):
    arr = np.asarray(arr)
    tag = TAG_OF_KIND.get(arr.dtype.kind)
    if tag is None:
        raise DataError(f"write_array: unsupported dtype {arr.dtype}")
    if arr.ndim > MAX_RANK or any(e > MAX_EXTENT for e in arr.shape):
        raise DataError(f"write_array: shape {arr.shape} exceeds rank {MAX_RANK} / extent {MAX_EXTENT}")
    extents = list(arr.shape) + [0] * (MAX_RANK - arr.ndim)
    fh.write(ARRAY_HEADER.pack(ARRAY_MAGIC, tag, arr.ndim, *extents))
    fh.write(np.ascontiguousarray(arr, dtype=DTYPE_TAGS[tag]).tobytes())


def read_array(fh: BinaryIO) -> np.ndarray:
    raw = fh.read(ARRAY_HEADER.size)
    if len(raw) != ARRAY_HEADER.size:
        raise DataError("read_array: truncated header")
    magic, tag, rank, *extents = ARRAY_HEADER.unpack(raw)
    if magic != ARRAY_MAGIC or tag not in DTYPE_TAGS or rank > MAX_RANK:
        raise DataError(f"read_array: bad header (magic={magic!r}, tag={tag}, rank={rank})")
    shape = tuple(extents[:rank])
    dtype = np.dtype(DTYPE_TAGS[tag])
    count = int(np.prod(shape, dtype=np.int64))
    payload = fh.read(count * dtype.itemsize)
    if len(payload) != count * dtype.itemsize:
        raise DataError(f"read_array: payload truncated for shape {shape}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


# =====================================================================================
# JSON / CSV артефакты

def write_json(path: Path, obj: Any):
    """Ключи отсортированы, отступ фиксирован: одинаковое содержимое = одинаковые байты"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def write_table(path: Path, rows: Iterable[Mapping[str, Any]], kind: Optional[ArtifactName] = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = TABLE_COLUMNS.get(kind) if kind is not None else None
    frame = pd.DataFrame(list(rows), columns=columns)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info(f"Table written: {path} ({len(frame)} rows)")


def read_table(path: Path) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    return pd.read_csv(path)


# =====================================================================================
# Когорта

def _subject_record(s: Subject) -> Dict[str, Any]:
    return {
        "subject_id": s.subject_id,
        "age_years": s.age_years,
        "gender": s.gender,
        "site_id": s.site_id,
        "label": s.label,
        "sampling_rate_hz": s.sampling_rate_hz,
        "strength_truth": [int(x) for x in s.strength_truth],
    }


def save_cohort(out_dir: Path, spec: CohortSpec, subjects: List[Subject], layout: AtlasLayout):
    out_dir = Path(out_dir)
    subject_dir = out_dir / ArtifactName.SUBJECTS.value
    subject_dir.mkdir(parents=True, exist_ok=True)
    for s in subjects:
        with open(subject_dir / f"{s.subject_id}.bin", "wb") as fh:
            write_array(fh, s.roi_series)
    write_json(out_dir / ArtifactName.LAYOUT.value, layout.to_dict())
    write_json(out_dir / ArtifactName.MANIFEST.value, {
        "format_version": FORMAT_VERSION,
        "seed": spec.seed,
        "spec": spec.model_dump(mode="json"),
        "subjects": [_subject_record(s) for s in subjects],
    })
    logger.info(f"✅ Cohort saved: {out_dir} ({len(subjects)} subjects)")


def load_cohort(cohort_dir: Path) -> Tuple[CohortSpec, List[Subject], AtlasLayout]:
    cohort_dir = Path(cohort_dir)
    if not cohort_dir.is_dir():
        raise DataError(f"cohort directory not found: {cohort_dir}")
    manifest = read_json(cohort_dir / ArtifactName.MANIFEST.value)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{cohort_dir}: unsupported cohort format {manifest.get('format_version')}")
    spec = CohortSpec.model_validate(manifest["spec"])
    layout = AtlasLayout.from_dict(read_json(cohort_dir / ArtifactName.LAYOUT.value))
    subjects = []
    for rec in manifest["subjects"]:
        path = cohort_dir / ArtifactName.SUBJECTS.value / f"{rec['subject_id']}.bin"
        if not path.is_file():
            raise DataError(f"subject file missing: {path}")
        with open(path, "rb") as fh:
            series = read_array(fh)
        subjects.append(Subject(
            subject_id=rec["subject_id"], roi_series=series, age_years=float(rec["age_years"]),
            gender=rec["gender"], site_id=int(rec["site_id"]), label=rec["label"],
            strength_truth=np.asarray(rec["strength_truth"], dtype=np.int64),
            sampling_rate_hz=float(rec["sampling_rate_hz"]),
        ))
    logger.info(f"Cohort loaded: {cohort_dir} ({len(subjects)} subjects)")
    return spec, subjects, layout


# =====================================================================================
# Чекпоинты

def save_checkpoint(path: Path, state: Mapping[str, np.ndarray], model_cfg: ModelConfig):
    """Записи state пишутся в переданном порядке (порядок объявления)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    digest = config_hash(model_cfg).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, FORMAT_VERSION, digest, len(state)))
        for name, arr in state.items():
            encoded = name.encode("utf-8")
            fh.write(ENTRY_NAME.pack(len(encoded)))
            fh.write(encoded)
            write_array(fh, np.asarray(arr, dtype=np.float64))
    logger.info(f"✅ Checkpoint saved: {path} ({len(state)} entries)")


def load_checkpoint(path: Path, model_cfg: Optional[ModelConfig] = None) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read(CHECKPOINT_HEADER.size)
        if len(raw) != CHECKPOINT_HEADER.size:
            raise CheckpointError(f"{path}: truncated header")
        magic, version, digest, count = CHECKPOINT_HEADER.unpack(raw)
        if magic != CHECKPOINT_MAGIC or version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: not a version-{FORMAT_VERSION} checkpoint")
        if model_cfg is not None and digest.decode("ascii") != config_hash(model_cfg):
            raise CheckpointError(f"{path}: model config hash differs from the running configuration")
        state: Dict[str, np.ndarray] = {}
        try:
            for _ in range(count):
                (length,) = ENTRY_NAME.unpack(fh.read(ENTRY_NAME.size))
                name = fh.read(length).decode("utf-8")
                state[name] = read_array(fh)
        except (DataError, struct_error) as e:
            raise CheckpointError(f"{path}: corrupt entry table: {e}") from e
    return state


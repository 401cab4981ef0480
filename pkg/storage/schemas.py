#schemas
import struct
from enum import Enum


class ArtifactName(Enum):
    MANIFEST = "manifest.json"
    LAYOUT = "atlas_layout.json"
    SUBJECTS = "subjects"
    CHECKPOINT = "model.ckpt"
    METRICS = "metrics.json"
    HISTORY = "history.json"
    TRIALS = "trials.csv"
    THRESHOLDS = "thresholds.json"
    SWEEP = "sweep.csv"
    ABLATION = "ablation.csv"
    REPORTS = "reports"


# --- Файлы отчёта одного субъекта внутри каталога reports ---
REPORT_SUFFIX = ".report.txt"
TOKENS_SUFFIX = ".tokens.json"


FORMAT_VERSION = 1

# --- Запись массива: magic, тег dtype, ранг, пять uint16 размеров, затем little-endian данные ---
ARRAY_MAGIC = b"RTGA"
ARRAY_HEADER = struct.Struct("<4sBB5H")
MAX_RANK = 5
MAX_EXTENT = 0xFFFF

DTYPE_TAGS = {
    1: "<f8",
    2: "<i8",
}
TAG_OF_KIND = {"f": 1, "i": 2}

# --- Чекпоинт: magic, версия формата, hex SHA-256 конфига модели, число записей ---
CHECKPOINT_MAGIC = b"RTGC"
CHECKPOINT_HEADER = struct.Struct("<4sH64sI")
ENTRY_NAME = struct.Struct("<H")

META_PREFIX = "meta."

TABLE_COLUMNS = {
    ArtifactName.TRIALS: ["outer_fold", "trial", "tau1", "tau2", "objective", "status"],
    ArtifactName.SWEEP: ["alpha", "beta", "acc", "sen", "spe", "auc"],
    ArtifactName.ABLATION: ["variant", "acc", "sen", "spe", "auc"],
}

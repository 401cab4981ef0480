from storage.schemas import ArtifactName, FORMAT_VERSION
from storage.storage import (
    load_checkpoint,
    load_cohort,
    read_array,
    read_json,
    read_table,
    save_checkpoint,
    save_cohort,
    write_array,
    write_json,
    write_table,
)

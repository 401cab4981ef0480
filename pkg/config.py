#/config.py
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict, TomlConfigSettingsSource

from errors import ConfigError

# Определяет, какой .env файл использовать
env_file = ".env.production" if os.getenv("ENVIRONMENT") == "production" else ".env"
load_dotenv(env_file)


class Settings(BaseSettings):
    # Reproducibility
    SEED: Optional[int] = None

    # Parallel folds / tuner trials
    THREADS: int = Field(default=1, ge=1)

    LOG_LEVEL: str = "INFO"

    model_config = SettingsConfigDict(
        env_prefix="RTGMFF_",
        extra="ignore",  # ← игнорировать лишние переменные (например, ENVIRONMENT)
        case_sensitive=False,
        env_file_encoding="utf-8"
    )


# ============================== Model / training config ==================================

class ModelConfig(BaseModel):
    """Dimensions of the encoder branches and the alignment head"""
    model_config = ConfigDict(extra="forbid")

    height: int = Field(default=64, gt=0)            # H
    width: int = Field(default=64, gt=0)             # W
    levels: int = Field(default=2, ge=1)             # N, Haar levels
    token_dim: int = Field(default=32, gt=0)         # D
    patch_size: int = Field(default=8, gt=0)         # p
    patch_dim: int = Field(default=32, gt=0)         # D_p
    align_dim: int = Field(default=16, gt=0)         # D_a
    text_dim: int = Field(default=32, gt=0)          # D_t
    state_size: int = Field(default=8, ge=1)         # SSM state n
    vit_layers: int = Field(default=4, ge=1)
    vit_heads: int = Field(default=4, ge=1)
    ffn_expansion: int = Field(default=4, ge=1)
    film_hidden: int = Field(default=16, gt=0)
    classifier_hidden: int = Field(default=32, gt=0)
    variant: Literal["full", "no_hwm", "no_asam", "no_cste", "hwm_only", "cste_only"] = "full"

    @model_validator(mode="after")
    def check_geometry(self):
        p = self.patch_size
        if self.height % p or self.width % p:
            raise ValueError(f"patch size {p} must divide the map {self.height}x{self.width}")
        if (self.height // p) % 2 or (self.width // p) % 2:
            raise ValueError("patch grid extents must be even for the stride-2 query path")
        if self.patch_dim % self.vit_heads:
            raise ValueError(f"patch_dim {self.patch_dim} is not divisible by {self.vit_heads} heads")
        scale = 2 ** self.levels
        padded_h = -(-self.height // scale) * scale
        padded_w = -(-self.width // scale) * scale
        if (padded_h // scale) % 2 or (padded_w // scale) % 2:
            raise ValueError("coarsest wavelet grid must have even extents for the 2x2 pooling")
        return self

    # module combinations of each variant
    @property
    def use_hwm(self) -> bool:
        return self.variant in ("full", "no_asam", "no_cste", "hwm_only")

    @property
    def use_cste(self) -> bool:
        return self.variant not in ("no_cste", "hwm_only")

    @property
    def use_text(self) -> bool:
        return self.variant in ("full", "no_hwm", "no_cste")


class TunerConfig(BaseModel):
    """Nested-CV threshold search (outer × inner folds, TPE-lite trials)"""
    model_config = ConfigDict(extra="forbid")

    trials: int = Field(default=100, ge=1)
    outer_folds: int = Field(default=5, ge=2)
    inner_folds: int = Field(default=3, ge=2)
    startup_trials: int = Field(default=20, ge=1)
    candidates: int = Field(default=24, ge=1)
    sampler: Literal["tpe", "uniform"] = "tpe"
    objective: Literal["task_accuracy", "roi_macro_f1"] = "roi_macro_f1"
    inner_epochs: int = Field(default=15, ge=1)
    tau1_range: Tuple[float, float] = (0.05, 0.45)
    tau2_max: float = 0.60
    delta: float = 0.02

    @model_validator(mode="after")
    def check_box(self):
        low, high = self.tau1_range
        if not 0 < low < high:
            raise ValueError(f"tau1 range {self.tau1_range} is empty")
        if self.tau2_max < low + self.delta:
            raise ValueError("tau2_max leaves no feasible (tau1, tau2) pair")
        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_epochs: int = Field(default=120, gt=0)
    early_stop_patience: int = Field(default=10, gt=0)
    batch_size: int = Field(default=8, gt=0)
    backbone_lr: float = Field(default=1e-4, gt=0)
    head_lr: Optional[float] = Field(default=None, gt=0)  # None → 5 × backbone_lr
    weight_decay: float = Field(default=1e-4, ge=0)
    freeze_backbone_epochs: int = Field(default=5, ge=0)
    warmup_epochs: int = Field(default=5, ge=0)
    seed: int = 42
    alpha: float = Field(default=0.8, ge=0)
    beta: float = Field(default=0.2, ge=0)
    tau1: float = Field(default=0.15, gt=0)
    tau2: float = Field(default=0.30, gt=0)
    val_fraction: float = Field(default=0.1, gt=0, lt=1)
    model: ModelConfig = Field(default_factory=ModelConfig)
    tuner: TunerConfig = Field(default_factory=TunerConfig)

    @model_validator(mode="after")
    def fill_defaults(self):
        if self.head_lr is None:
            self.head_lr = 5 * self.backbone_lr
        if self.max_epochs <= self.warmup_epochs:
            raise ValueError(f"max_epochs {self.max_epochs} must exceed warmup_epochs {self.warmup_epochs}")
        if self.tau2 < self.tau1 + self.tuner.delta:
            raise ValueError(f"tau2 {self.tau2} must be at least tau1 {self.tau1} + delta {self.tuner.delta}")
        return self


# ============================== Загрузка конфигурации из файла ==================================

class _ConfigFile(BaseSettings):
    """Schema-less carrier: lets TomlConfigSettingsSource return every key of the file"""
    model_config = SettingsConfigDict(extra="allow")


def read_config_file(path: Path) -> Dict[str, Any]:
    """Читает TOML или JSON файл в словарь"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            return json.loads(path.read_text(encoding="utf-8"))
        return dict(TomlConfigSettingsSource(_ConfigFile, toml_file=path)())
    except (ValueError, OSError) as e:
        raise ConfigError(f"cannot parse config file {path}: {e}") from e


def load_train_config(path: Optional[Path] = None) -> TrainConfig:
    """TrainConfig из декларативного файла (или значения по умолчанию)"""
    if path is None:
        return TrainConfig()
    data = read_config_file(path)
    try:
        return TrainConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid train config {path}: {e}") from e


def apply_overrides(cfg: TrainConfig, seed: Optional[int] = None) -> TrainConfig:
    """CLI flag > environment > config file > defaults"""
    if seed is not None:
        return cfg.model_copy(update={"seed": seed})
    if settings.SEED is not None:
        return cfg.model_copy(update={"seed": settings.SEED})
    return cfg


def with_thresholds(cfg: TrainConfig, tau1: float, tau2: float) -> TrainConfig:
    """Copy of cfg with new (tau1, tau2), validated like a config file"""
    try:
        return TrainConfig.model_validate({**cfg.model_dump(), "tau1": tau1, "tau2": tau2})
    except ValidationError as e:
        raise ConfigError(f"invalid thresholds ({tau1}, {tau2}): {e}") from e


def config_hash(model_cfg: ModelConfig) -> str:
    """SHA-256 of the canonical model-config JSON (stored in checkpoints)"""
    canonical = json.dumps(model_cfg.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


# Глобальный экземпляр
settings = Settings()

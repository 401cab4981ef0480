# discretize.py
# Ordinal binning of percentage signal change and the demographic conditioning vector

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import DataError
from rftg.labels import load_labels

logger = logging.getLogger(__name__)

Strength = Literal["weak", "moderate", "strong"]
Polarity = Literal["up", "down"]
STRENGTH_ORDER = ("weak", "moderate", "strong")


class Thresholds(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau1: float = Field(default=0.15, gt=0)
    tau2: float = 0.30
    delta: float = Field(default=0.02, ge=0)

    @model_validator(mode="after")
    def check_gap(self):
        if self.tau2 < self.tau1 + self.delta - 1e-12:
            raise ValueError(f"tau2={self.tau2} must be >= tau1 + delta = {self.tau1 + self.delta}")
        return self


@dataclass(frozen=True)
class RoiTriplet:
    roi_index: int
    roi_name: str
    strength: Strength
    polarity: Polarity


def strength_codes(v: np.ndarray, th: Thresholds) -> np.ndarray:
    """0 weak, 1 moderate, 2 strong; closed lower bounds"""
    mag = np.abs(np.asarray(v, dtype=np.float64))
    return np.where(mag >= th.tau2, 2, np.where(mag >= th.tau1, 1, 0))


def discretize(v: Sequence[float], th: Thresholds) -> List[RoiTriplet]:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (116,):
        raise DataError(f"discretize: expected a 116-vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise DataError("discretize: non-finite signal change values")
    labels = load_labels()
    codes = strength_codes(v, th)
    return [
        RoiTriplet(roi_index=i, roi_name=labels[i].name, strength=STRENGTH_ORDER[codes[i]],
                   polarity="up" if v[i] >= 0 else "down")
        for i in range(116)
    ]


# ====== Demographics ======

@dataclass(frozen=True)
class AgeStats:
    mean: float
    std: float

    @classmethod
    def from_ages(cls, ages: Sequence[float]) -> "AgeStats":
        ages = np.asarray(ages, dtype=np.float64)
        if ages.size < 2:
            raise DataError(f"age statistics need at least two subjects, got {ages.size}")
        return cls(mean=float(ages.mean()), std=float(ages.std()))


@dataclass(frozen=True)
class DemographicVector:
    age_norm: float
    gender_male: int
    gender_female: int
    age_years: Optional[float] = None  # raw age, kept for the token age bucket

    def as_array(self) -> np.ndarray:
        return np.array([self.age_norm, self.gender_male, self.gender_female], dtype=np.float64)

    @property
    def gender(self) -> str:
        return "male" if self.gender_male else "female"


def demographic_vector(age_years: float, gender: str, age_mean: float, age_std: float) -> DemographicVector:
    if age_std <= 0:
        raise DataError(f"age std must be positive, got {age_std}")
    if gender not in ("male", "female"):
        raise DataError(f"unknown gender {gender!r}")
    male = int(gender == "male")
    return DemographicVector(age_norm=(age_years - age_mean) / age_std, gender_male=male,
                             gender_female=1 - male, age_years=age_years)

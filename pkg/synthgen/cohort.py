# cohort.py
# Synthetic cohorts with planted class signal (stand-in for restricted clinical data)

import logging
from dataclasses import dataclass, field
from typing import List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import DataError
from synthgen.layout import N_ROIS
from synthgen.measures import BAND, bandpass_filter

logger = logging.getLogger(__name__)

STRENGTHS = ("weak", "moderate", "strong")


class CohortSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_subjects: int = Field(default=200, ge=2)
    n_sites: int = Field(default=5, ge=1)
    class_ratio: float = Field(default=0.5, gt=0, lt=1)
    planted_rois: List[int] = Field(default_factory=lambda: [2, 3, 12, 13, 28, 29, 36, 37, 40, 41])
    effect_size: float = Field(default=1.0, ge=0)
    sampling_rate_hz: float = 0.5
    timepoints: int = Field(default=128, ge=64)
    voxels: int = Field(default=8, ge=2)
    seed: int = 42

    # generator internals
    baseline: float = Field(default=100.0, gt=0)
    site_offset: float = Field(default=20.0, ge=0)
    signal_amplitude: float = Field(default=1.0, gt=0)
    noise_std: float = Field(default=0.5, ge=0)
    age_range: Tuple[float, float] = (8.0, 18.0)
    planted_thresholds: Tuple[float, float] = (0.15, 0.30)

    @model_validator(mode="after")
    def check_spec(self):
        bad = [r for r in self.planted_rois if not 0 <= r < N_ROIS]
        if bad:
            raise ValueError(f"planted ROIs outside [0, {N_ROIS}): {bad}")
        if len(set(self.planted_rois)) != len(self.planted_rois):
            raise ValueError("planted ROIs contain duplicates")
        if self.sampling_rate_hz <= 2 * BAND[1]:
            raise ValueError(f"sampling rate {self.sampling_rate_hz} Hz puts Nyquist below the {BAND[1]} Hz band edge")
        if self.baseline - self.site_offset <= 0:
            raise ValueError("site offsets must keep every baseline strictly positive")
        low, high = self.age_range
        if not 0 < low < high:
            raise ValueError(f"age range {self.age_range} is empty")
        return self


@dataclass
class Subject:
    subject_id: str
    roi_series: np.ndarray  # (116, V, T)
    age_years: float
    gender: Literal["male", "female"]
    site_id: int
    label: Literal["patient", "control"]
    # strength bin (0 weak, 1 moderate, 2 strong) of each ROI's planted deviation
    strength_truth: np.ndarray = field(default_factory=lambda: np.zeros(N_ROIS, dtype=np.int64))
    sampling_rate_hz: float = 0.5

    def __post_init__(self):
        if self.roi_series.ndim != 3 or self.roi_series.shape[0] != N_ROIS:
            raise DataError(f"{self.subject_id}: roi_series must be (116, V, T), got {self.roi_series.shape}")
        _, v, t = self.roi_series.shape
        if v < 2 or t < 64:
            raise DataError(f"{self.subject_id}: need V >= 2 and T >= 64, got V={v}, T={t}")
        if not np.all(np.isfinite(self.roi_series)):
            raise DataError(f"{self.subject_id}: non-finite BOLD values")
        if self.age_years <= 0:
            raise DataError(f"{self.subject_id}: age must be positive, got {self.age_years}")

    @property
    def is_patient(self) -> bool:
        return self.label == "patient"


def strength_bins(values: np.ndarray, tau1: float, tau2: float) -> np.ndarray:
    mag = np.abs(values)
    return (mag >= tau1).astype(np.int64) + (mag >= tau2).astype(np.int64)


def _draw_targets(rng: np.random.Generator, spec: CohortSpec, patient: bool) -> np.ndarray:
    """Signed percentage deviations per ROI, drawn bin-first then uniformly inside the bin"""
    tau1, tau2 = spec.planted_thresholds
    edges = [(0.0, tau1), (tau1, tau2), (tau2, 2 * tau2)]
    probs = np.tile([0.5, 0.3, 0.2], (N_ROIS, 1))
    if patient:
        p_strong = min(0.95, 0.2 + 0.25 * spec.effect_size)
        probs[spec.planted_rois] = [(1 - p_strong) * 5 / 8, (1 - p_strong) * 3 / 8, p_strong]
    u = rng.random(N_ROIS)
    bins = (u[:, None] >= np.cumsum(probs, axis=1)[:, :2]).sum(axis=1)
    low = np.array([edges[b][0] for b in bins])
    high = np.array([edges[b][1] for b in bins])
    magnitude = rng.uniform(low, high)
    sign = np.where(rng.random(N_ROIS) < 0.5, -1.0, 1.0)
    targets = sign * magnitude
    # centering makes the subject-global mean equal the generating baseline
    return targets - targets.mean()


def _make_subject(index: int, spec: CohortSpec, label: str, site: int, site_offsets: np.ndarray) -> Subject:
    rng = np.random.default_rng([spec.seed, index])
    patient = label == "patient"
    t, v, fs = spec.timepoints, spec.voxels, spec.sampling_rate_hz

    age = float(rng.uniform(*spec.age_range))
    gender = "male" if rng.random() < 0.5 else "female"
    targets = _draw_targets(rng, spec, patient)

    # 1. Band-limited regional signal, unit std
    signal = bandpass_filter(rng.standard_normal((N_ROIS, t)), BAND[0], BAND[1], fs)
    signal /= signal.std(axis=1, keepdims=True)
    amplitude = np.full(N_ROIS, spec.signal_amplitude)
    if patient:
        amplitude[spec.planted_rois] *= 1.0 + spec.effect_size
    signal *= amplitude[:, None]

    # 2. Per-voxel noise with zero temporal mean
    noise = rng.normal(0.0, spec.noise_std, size=(N_ROIS, v, t))
    noise -= noise.mean(axis=2, keepdims=True)

    # 3. Baselines: site level times the planted percentage deviation
    level = spec.baseline + site_offsets[site]
    roi_baseline = level * (1.0 + targets / 100.0)
    series = roi_baseline[:, None, None] + signal[:, None, :] + noise

    truth = strength_bins(targets, *spec.planted_thresholds)
    return Subject(subject_id=f"sub-{index:04d}", roi_series=series, age_years=age, gender=gender,
                   site_id=site, label=label, strength_truth=truth, sampling_rate_hz=fs)


def generate_cohort(spec: CohortSpec) -> List[Subject]:
    """Pure function of the spec (seed included); per-subject RNG streams derive from (seed, index)"""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_subjects
    n_patients = int(round(n * spec.class_ratio))
    if not 0 < n_patients < n:
        raise DataError(f"class_ratio {spec.class_ratio} leaves an empty class with {n} subjects")
    is_patient = rng.permutation(np.array([True] * n_patients + [False] * (n - n_patients)))

    # sites assigned round-robin inside each class
    sites = np.zeros(n, dtype=np.int64)
    for cls in (True, False):
        members = np.flatnonzero(is_patient == cls)
        sites[members] = np.arange(len(members)) % spec.n_sites
    site_offsets = rng.uniform(-spec.site_offset, spec.site_offset, size=spec.n_sites)

    subjects = [
        _make_subject(i, spec, "patient" if is_patient[i] else "control", int(sites[i]), site_offsets)
        for i in range(n)
    ]
    logger.info(f"✅ Cohort generated: {n} subjects ({n_patients} patients), {spec.n_sites} sites, "
                f"effect_size={spec.effect_size}, seed={spec.seed}")
    return subjects

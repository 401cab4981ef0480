# measures.py
# Band filtering and the three regional measures (ALFF, fALFF, ReHo)

import logging
from typing import Tuple

import numpy as np
from scipy.stats import rankdata

from errors import DataError

logger = logging.getLogger(__name__)

# Low-frequency fluctuation band, Hz
BAND: Tuple[float, float] = (0.01, 0.08)


def _check_band(low: float, high: float, fs: float):
    if not 0 < low < high < fs / 2:
        raise DataError(f"invalid band [{low}, {high}] Hz for sampling rate {fs} Hz (need 0 < low < high < {fs / 2})")


def bandpass_filter(series: np.ndarray, low_hz: float, high_hz: float, fs: float) -> np.ndarray:
    """
    Ideal frequency-domain band-pass along the last axis:
    rfft, zero every bin outside [low, high], irfft.
    """
    _check_band(low_hz, high_hz, fs)
    series = np.asarray(series, dtype=np.float64)
    n = series.shape[-1]
    spectrum = np.fft.rfft(series, axis=-1)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    keep = (freqs >= low_hz) & (freqs <= high_hz)
    spectrum[..., ~keep] = 0.0
    return np.fft.irfft(spectrum, n=n, axis=-1)


def amplitude_spectrum(series: np.ndarray, fs: float) -> Tuple[np.ndarray, np.ndarray]:
    """(freqs, amplitude) with amplitude 2|X_k|/T, so a unit sinusoid on bin k has amplitude 1"""
    series = np.asarray(series, dtype=np.float64)
    n = series.shape[-1]
    amp = 2.0 * np.abs(np.fft.rfft(series, axis=-1)) / n
    return np.fft.rfftfreq(n, d=1.0 / fs), amp


def _band_mask(freqs: np.ndarray, band: Tuple[float, float], fs: float) -> np.ndarray:
    low, high = band
    _check_band(low, high, fs)
    mask = (freqs >= low) & (freqs <= high)
    if not mask.any():
        raise DataError(f"no spectral bins inside [{low}, {high}] Hz with T={2 * (len(freqs) - 1)} at fs={fs} Hz")
    return mask


def compute_alff(series: np.ndarray, fs: float, band: Tuple[float, float] = BAND):
    """Mean in-band amplitude (last axis); scalar for a single series"""
    freqs, amp = amplitude_spectrum(series, fs)
    mask = _band_mask(freqs, band, fs)
    out = amp[..., mask].mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def compute_falff(series: np.ndarray, fs: float, band: Tuple[float, float] = BAND):
    """In-band amplitude sum over the amplitude sum of every bin above DC (up to Nyquist)"""
    freqs, amp = amplitude_spectrum(series, fs)
    mask = _band_mask(freqs, band, fs)
    total = amp[..., 1:].sum(axis=-1)
    if np.any(total <= 0):
        raise DataError("fALFF undefined: series has no spectral amplitude above DC")
    out = amp[..., mask].sum(axis=-1) / total
    return float(out) if np.ndim(out) == 0 else out


def _tie_terms(series: np.ndarray) -> np.ndarray:
    """sum(t^3 - t) over groups of tied values, per row of a (..., T) array"""
    flat = series.reshape(-1, series.shape[-1])
    terms = np.zeros(flat.shape[0])
    ordered = np.sort(flat, axis=-1)
    has_ties = np.any(np.diff(ordered, axis=-1) == 0, axis=-1)
    for row in np.flatnonzero(has_ties):
        _, counts = np.unique(ordered[row], return_counts=True)
        terms[row] = np.sum(counts.astype(np.float64) ** 3 - counts)
    return terms.reshape(series.shape[:-1])


def compute_reho(voxel_series: np.ndarray):
    """
    Kendall's W over V voxel series (raters) and T timepoints (objects):
        W = 12 S / (V^2 (T^3 - T) - V * sum_v sum_ties (t^3 - t))
    Accepts (V, T) or a stack (..., V, T).
    """
    x = np.asarray(voxel_series, dtype=np.float64)
    if x.ndim < 2:
        raise DataError(f"ReHo needs a (V, T) array, got shape {x.shape}")
    v, t = x.shape[-2:]
    if v < 2 or t < 2:
        raise DataError(f"ReHo needs V >= 2 and T >= 2, got V={v}, T={t}")
    ranks = rankdata(x, axis=-1)
    rank_sums = ranks.sum(axis=-2)
    s = ((rank_sums - rank_sums.mean(axis=-1, keepdims=True)) ** 2).sum(axis=-1)
    denom = v * v * (t ** 3 - t) - v * _tie_terms(x).sum(axis=-1)
    if np.any(denom <= 0):
        raise DataError("ReHo undefined: every voxel series is constant")
    w = 12.0 * s / denom
    return float(w) if np.ndim(w) == 0 else w

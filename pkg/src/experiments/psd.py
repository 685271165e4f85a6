"""
Power spectra of LER traces and the steering filter function.

Each trace is divided by its mean, its periodogram |rfft|^2 / n is taken
without the DC bin and interpolated log-log onto a shared log-spaced grid
running from 1 / (shortest trace) to Nyquist. Spectra are combined across
traces with a geometric mean; the filter is PSD(steered) / PSD(fixed).
"""

from typing import Dict, List, Optional, Sequence, Tuple
from dataclasses import dataclass
import logging

import numpy as np
from scipy.ndimage import gaussian_filter1d

logger = logging.getLogger(__name__)

GRID_POINTS = 64
MIN_TRACE_LENGTH = 8
_POWER_FLOOR = 1e-300


@dataclass
class PSDResult:
    freqs: np.ndarray
    psd_fixed: np.ndarray
    psd_steered: np.ndarray
    filter: np.ndarray

    @property
    def filter_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.filter)

    def rows(self) -> List[Dict[str, float]]:
        return [
            {"freq": f, "psd_fixed": a, "psd_steered": b, "filter_db": db}
            for f, a, b, db in zip(self.freqs, self.psd_fixed, self.psd_steered, self.filter_db)
        ]


def periodogram(trace: Sequence[float], dt: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Mean-normalized one-sided periodogram without the zero-frequency bin"""
    x = np.asarray(trace, dtype=np.float64)
    if x.size < MIN_TRACE_LENGTH:
        raise ValueError(f"trace too short for a spectrum: {x.size} < {MIN_TRACE_LENGTH} samples")
    mean = x.mean()
    if mean == 0:
        raise ValueError("trace has zero mean and cannot be normalized")
    power = np.abs(np.fft.rfft(x / mean)) ** 2 / x.size
    freqs = np.fft.rfftfreq(x.size, d=dt)
    return freqs[1:], power[1:]


def frequency_grid(length: int, dt: float = 1.0, points: int = GRID_POINTS) -> np.ndarray:
    return np.geomspace(1.0 / (length * dt), 0.5 / dt, points)


def average_psd(traces: Sequence[Sequence[float]], grid: np.ndarray, dt: float = 1.0) -> np.ndarray:
    """Geometric mean over traces of their periodograms on ``grid``"""
    if len(traces) == 0:
        raise ValueError("need at least one trace")
    logs = []
    for trace in traces:
        freqs, power = periodogram(trace, dt)
        log_power = np.log(np.maximum(power, _POWER_FLOOR))
        logs.append(np.interp(np.log(grid), np.log(freqs), log_power))
    return np.exp(np.mean(logs, axis=0))


def analyze_psd(
    fixed: Sequence[Sequence[float]],
    steered: Sequence[Sequence[float]],
    grid_points: int = GRID_POINTS,
    smoothing_sigma: Optional[float] = None,
    dt: float = 1.0,
) -> PSDResult:
    """Averaged spectra of fixed-policy and steered LER traces and their ratio"""
    if len(fixed) == 0 or len(steered) == 0:
        raise ValueError("need at least one fixed and one steered trace")
    shortest = min(len(t) for t in list(fixed) + list(steered))
    if shortest < MIN_TRACE_LENGTH:
        raise ValueError(f"trace too short for a spectrum: {shortest} < {MIN_TRACE_LENGTH} samples")
    grid = frequency_grid(shortest, dt, grid_points)
    psd_fixed = average_psd(fixed, grid, dt)
    psd_steered = average_psd(steered, grid, dt)
    log_ratio = np.log(psd_steered) - np.log(psd_fixed)
    if smoothing_sigma:
        log_ratio = gaussian_filter1d(log_ratio, smoothing_sigma, mode="nearest")
    logger.info(f"PSD over {len(fixed)} fixed / {len(steered)} steered traces, {grid_points} grid points")
    return PSDResult(grid, psd_fixed, psd_steered, np.exp(log_ratio))

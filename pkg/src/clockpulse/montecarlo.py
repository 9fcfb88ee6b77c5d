"""Statistical robustness evaluation: sampled average gate error, error
histograms on a log scale, and deterministic latency sweeps.

Sample evaluations are independent and processed in fixed-size chunks
through the batched propagator, with fixed-order accumulation so a report
is a pure function of (inputs, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clocknoise import (
    ClockNoiseModel,
    NoiseSample,
    build_merged_grid,
    sample_noise,
)
from .dynamics import (
    ControlSchedule,
    QuantumSystem,
    _readonly,
    gate_error_many,
    propagate_noisy_many,
)

DEFAULT_HISTOGRAM_BINS = 25
_CHUNK = 512


@dataclass(frozen=True)
class ErrorHistogram:
    """Counts of error values in log10-spaced bins."""

    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bin_edges", _readonly(self.bin_edges))
        object.__setattr__(self, "counts", _readonly(np.asarray(self.counts, dtype=np.int64)))


@dataclass(frozen=True)
class TestReport:
    """Summary of a sampled average-error test."""

    sample_count: int
    mean: float
    std: float
    histogram: ErrorHistogram
    errors: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.errors is not None:
            object.__setattr__(self, "errors", _readonly(self.errors))

    @property
    def standard_error(self) -> float:
        return self.std / np.sqrt(self.sample_count)

    def to_dict(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "mean": self.mean,
            "std": self.std,
            "standard_error": self.standard_error,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class SweepSurface:
    """Gate error versus the two channel latencies, jitter absent."""

    tau1: np.ndarray
    tau2: np.ndarray
    errors: np.ndarray
    min_location: tuple
    min_value: float

    def __post_init__(self):
        object.__setattr__(self, "tau1", _readonly(self.tau1))
        object.__setattr__(self, "tau2", _readonly(self.tau2))
        object.__setattr__(self, "errors", _readonly(self.errors))

    def fraction_below(self, threshold: float) -> float:
        return float(np.mean(self.errors < threshold))


def _binned(errors: np.ndarray, bins: int) -> ErrorHistogram:
    lo = float(errors.min())
    hi = float(errors.max())
    if lo == hi:
        return ErrorHistogram(
            bin_edges=np.array([lo, hi]), counts=np.array([errors.size])
        )
    positive = errors[errors > 0]
    lo_positive = float(positive.min()) if positive.size else hi
    edges = np.logspace(np.log10(lo_positive), np.log10(hi), bins + 1)
    counts, _ = np.histogram(np.clip(errors, lo_positive, hi), bins=edges)
    return ErrorHistogram(bin_edges=edges, counts=counts)


def error_histogram(report: TestReport, bins: int = DEFAULT_HISTOGRAM_BINS) -> ErrorHistogram:
    """Re-bin a report's raw errors into ``bins`` log10-spaced bins."""
    if report.errors is None:
        raise ValueError("report was built without raw errors; rerun with keep_errors=True")
    return _binned(report.errors, bins)


def log_error_skewness(report: TestReport) -> float:
    """Standardized third moment of log10(errors); sign marks the heavy side."""
    if report.errors is None:
        raise ValueError("report was built without raw errors; rerun with keep_errors=True")
    logs = np.log10(np.clip(report.errors, 1e-300, None))
    centered = logs - logs.mean()
    sd = centered.std()
    if sd == 0:
        return 0.0
    return float(np.mean(centered**3) / sd**3)


def test_average_error(
    system: QuantumSystem,
    schedule: ControlSchedule,
    target: np.ndarray,
    noise_model: ClockNoiseModel,
    samples: int = 10_000,
    seed: int | None = None,
    phase_mode: str = "plain",
    keep_errors: bool = True,
    bins: int = DEFAULT_HISTOGRAM_BINS,
) -> TestReport:
    """Average gate error over ``samples`` random clock-noise realizations.

    Realization i comes from ``(seed, i)`` (seed defaults to the model's),
    so reports are reproducible and independent of chunking.
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    model = noise_model if seed is None else noise_model.with_seed(seed)
    errors = np.empty(samples)
    for lo in range(0, samples, _CHUNK):
        hi = min(lo + _CHUNK, samples)
        grids = [
            build_merged_grid(schedule, sample_noise(model, i)) for i in range(lo, hi)
        ]
        finals = propagate_noisy_many(system, schedule, grids)
        errors[lo:hi] = gate_error_many(finals, target, phase_mode)
    return TestReport(
        sample_count=samples,
        mean=float(errors.mean()),
        std=float(errors.std()),
        histogram=_binned(errors, bins),
        errors=errors if keep_errors else None,
        seed=int(model.seed),
    )


def latency_sweep(
    system: QuantumSystem,
    schedule: ControlSchedule,
    target: np.ndarray,
    tau1_grid,
    tau2_grid,
    phase_mode: str = "plain",
    shift_turn_on: bool = True,
    pre_turn_on: str = "zero",
) -> SweepSurface:
    """Deterministic gate error over a grid of the two channel latencies.

    Uses zero jitter and one latency value per channel; requires a
    two-channel system and grid values inside [0, sample_period) so edge
    order is preserved.
    """
    if system.n_channels != 2:
        raise ValueError(f"latency sweep needs a two-channel system, got {system.n_channels}")
    tau1 = np.asarray(tau1_grid, dtype=float)
    tau2 = np.asarray(tau2_grid, dtype=float)
    for name, grid in (("tau1", tau1), ("tau2", tau2)):
        if np.any(np.diff(grid) <= 0):
            raise ValueError(f"{name} grid must be strictly increasing")
        if grid.min() < 0 or grid.max() >= schedule.sample_period:
            raise ValueError(
                f"{name} grid must lie in [0, sample_period) to keep edges ordered"
            )
    pairs = [(t1, t2) for t1 in tau1 for t2 in tau2]
    errors = np.empty(len(pairs))
    for lo in range(0, len(pairs), _CHUNK):
        chunk = pairs[lo : lo + _CHUNK]
        grids = [
            build_merged_grid(
                schedule,
                NoiseSample(
                    latency=np.array(p),
                    jitter=np.zeros((2, schedule.slices)),
                    channel_of=system.channel_of,
                    sample_period=schedule.sample_period,
                    shift_turn_on=shift_turn_on,
                ),
                pre_turn_on=pre_turn_on,
            )
            for p in chunk
        ]
        finals = propagate_noisy_many(system, schedule, grids)
        errors[lo : lo + len(chunk)] = gate_error_many(finals, target, phase_mode)
    surface = errors.reshape(tau1.size, tau2.size)
    flat_min = int(np.argmin(surface))
    i, j = np.unravel_index(flat_min, surface.shape)
    return SweepSurface(
        tau1=tau1,
        tau2=tau2,
        errors=surface,
        min_location=(float(tau1[i]), float(tau2[j])),
        min_value=float(surface[i, j]),
    )


def smoothness_metric(schedule: ControlSchedule) -> np.ndarray:
    """Sum of squared amplitude decrements across interior edges, per control."""
    diffs = schedule.amplitudes[:, :-1] - schedule.amplitudes[:, 1:]
    return np.sum(diffs**2, axis=1)

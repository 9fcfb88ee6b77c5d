"""Clock-noise model: per-channel latency, per-edge jitter, and the merged
timing grid those offsets induce on a piecewise-constant schedule.

Latencies are uniform on ``[a_c, b_c]`` per channel and constant over a run;
jitter is uniform on ``[-w, w]``, independently redrawn at every slice edge.
Sampling is counter-based: sample ``i`` depends only on ``(seed, i)``, never
on how many samples were drawn before, so parallel draws are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import ControlSchedule, QuantumSystem, _readonly

JITTER_SHARING_MODES = ("per_channel", "per_control")


@dataclass(frozen=True)
class ClockNoiseModel:
    """Timing-noise distributions for a schedule of ``slices`` edges.

    Parameters
    ----------
    latency_bounds : (C, 2) float ndarray
        Uniform support ``[a_c, b_c]`` of each channel's latency, ns,
        with ``0 <= a_c <= b_c``.
    jitter_width : float
        Half-width w of the per-edge uniform jitter, ns.
    channel_of : tuple of int
        Channel of each control, 0..C-1 (same convention as QuantumSystem).
    slices : int
        Number of schedule slices M; edges 0..M-1 (turn-on plus interior)
        receive jitter. The edge at the horizon is clipped anyway.
    sample_period : float
        Schedule clock period T_s, ns. Needed for the monotonicity guard
        ``b_max - a_min + 2w < T_s``.
    jitter_sharing : str
        ``per_channel``: controls on one channel see one jitter stream.
        ``per_control``: every control has its own stream.
    shift_turn_on : bool
        If false, the turn-on edge of every control is pinned to t=0 and
        only interior edges move.
    pre_turn_on : str
        Field value before a control's (shifted) turn-on edge: ``zero``
        (signal absent until the delayed start) or ``hold`` (first slice
        value held from t=0).
    seed : int
        Base seed for counter-based sampling.
    """

    latency_bounds: np.ndarray
    jitter_width: float
    channel_of: tuple
    slices: int
    sample_period: float
    jitter_sharing: str = "per_channel"
    shift_turn_on: bool = True
    pre_turn_on: str = "zero"
    seed: int = 0

    def __post_init__(self):
        if self.pre_turn_on not in ("zero", "hold"):
            raise ValueError(f"pre_turn_on must be 'zero' or 'hold', got {self.pre_turn_on!r}")
        lb = np.atleast_2d(np.asarray(self.latency_bounds, dtype=float))
        if lb.ndim != 2 or lb.shape[1] != 2:
            raise ValueError(f"latency_bounds must be (C, 2), got shape {lb.shape}")
        if np.any(lb[:, 0] < 0) or np.any(lb[:, 1] < lb[:, 0]):
            raise ValueError("latency supports need 0 <= a_c <= b_c for every channel")
        if not (self.jitter_width >= 0 and np.isfinite(self.jitter_width)):
            raise ValueError(f"jitter_width must be >= 0, got {self.jitter_width}")
        channel_of = tuple(int(c) for c in self.channel_of)
        if any(c < 0 or c >= lb.shape[0] for c in channel_of):
            raise ValueError(
                f"channel_of entries must index latency_bounds rows 0..{lb.shape[0] - 1}"
            )
        if self.jitter_sharing not in JITTER_SHARING_MODES:
            raise ValueError(
                f"jitter_sharing must be one of {JITTER_SHARING_MODES}, got {self.jitter_sharing!r}"
            )
        if self.slices < 1:
            raise ValueError(f"slices must be >= 1, got {self.slices}")
        guard = lb[:, 1].max() - lb[:, 0].min() + 2.0 * self.jitter_width
        if not guard < self.sample_period:
            raise ValueError(
                f"monotonicity guard violated: b_max - a_min + 2w = {guard:.6g} ns "
                f"must be < sample_period = {self.sample_period:.6g} ns"
            )
        object.__setattr__(self, "latency_bounds", _readonly(lb))
        object.__setattr__(self, "channel_of", channel_of)

    @property
    def n_channels(self) -> int:
        return self.latency_bounds.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.channel_of)

    @property
    def n_clocks(self) -> int:
        return self.n_controls if self.jitter_sharing == "per_control" else self.n_channels

    def clock_of(self, control: int) -> int:
        """Index of the jitter stream seen by a control."""
        return control if self.jitter_sharing == "per_control" else self.channel_of[control]

    def with_seed(self, seed: int) -> "ClockNoiseModel":
        return replace(self, seed=int(seed))

    def scaled(self, factor: float) -> "ClockNoiseModel":
        """Model with all latency supports and the jitter width scaled by ``factor``."""
        return replace(
            self,
            latency_bounds=self.latency_bounds * factor,
            jitter_width=self.jitter_width * factor,
        )


@dataclass(frozen=True)
class NoiseSample:
    """One concrete realization of every timing offset.

    ``latency[c]`` is channel c's latency; ``jitter[q, j]`` is clock stream
    q's deviation at edge j (j = 0 is the turn-on edge). The offset of
    control k's edge j is ``latency[channel_of[k]] + jitter[clock(k), j]``.
    """

    latency: np.ndarray
    jitter: np.ndarray
    channel_of: tuple
    sample_period: float
    jitter_sharing: str = "per_channel"
    shift_turn_on: bool = True
    pre_turn_on: str = "zero"

    def __post_init__(self):
        object.__setattr__(self, "latency", _readonly(np.asarray(self.latency, dtype=float)))
        object.__setattr__(self, "jitter", _readonly(np.atleast_2d(np.asarray(self.jitter, dtype=float))))
        object.__setattr__(self, "channel_of", tuple(int(c) for c in self.channel_of))

    @property
    def slices(self) -> int:
        return self.jitter.shape[1]

    @property
    def n_controls(self) -> int:
        return len(self.channel_of)

    def offsets(self) -> np.ndarray:
        """Per-control edge offsets tau + xi, shape (m, M); entry [k, j] shifts edge j."""
        if self.jitter_sharing == "per_control":
            clock = np.arange(self.n_controls)
        else:
            clock = np.asarray(self.channel_of)
        return self.latency[np.asarray(self.channel_of)][:, None] + self.jitter[clock]

    def edge_times(self) -> np.ndarray:
        """Shifted edge times ``j*T_s + offset``, shape (m, M); turn-on pinned to 0 if configured."""
        ideal = np.arange(self.slices) * self.sample_period
        edges = ideal[None, :] + self.offsets()
        if not self.shift_turn_on:
            edges[:, 0] = 0.0
        return edges


def sample_noise(model: ClockNoiseModel, sample_index: int) -> NoiseSample:
    """Draw realization ``sample_index``; a pure function of (seed, index)."""
    rng = np.random.default_rng((int(model.seed), int(sample_index)))
    lb = model.latency_bounds
    latency = rng.uniform(lb[:, 0], lb[:, 1])
    w = model.jitter_width
    jitter = rng.uniform(-w, w, size=(model.n_clocks, model.slices)) if w > 0 else np.zeros(
        (model.n_clocks, model.slices)
    )
    return NoiseSample(
        latency=latency,
        jitter=jitter,
        channel_of=model.channel_of,
        sample_period=model.sample_period,
        jitter_sharing=model.jitter_sharing,
        shift_turn_on=model.shift_turn_on,
        pre_turn_on=model.pre_turn_on,
    )


def latency_only_sample(model: ClockNoiseModel, latencies) -> NoiseSample:
    """Deterministic sample with the given per-channel latencies and zero jitter."""
    latencies = np.asarray(latencies, dtype=float)
    if latencies.shape != (model.n_channels,):
        raise ValueError(f"expected {model.n_channels} latencies, got shape {latencies.shape}")
    return NoiseSample(
        latency=latencies,
        jitter=np.zeros((model.n_clocks, model.slices)),
        channel_of=model.channel_of,
        sample_period=model.sample_period,
        jitter_sharing=model.jitter_sharing,
        shift_turn_on=model.shift_turn_on,
        pre_turn_on=model.pre_turn_on,
    )


@dataclass(frozen=True)
class SecondMomentModel:
    """Exact second moments of the timing offsets, expanded to control indices.

    ``ctau[k, k']`` is the raw latency second moment of the channels feeding
    controls k and k', ns^2. ``mu0sq`` is the per-edge jitter variance, ns^2.
    ``jitter_coupling[k, k']`` is 1 where the two controls share a jitter
    stream (identity for per-control jitter).
    """

    ctau: np.ndarray
    mu0sq: float
    jitter_coupling: np.ndarray

    def __post_init__(self):
        ctau = np.asarray(self.ctau, dtype=float)
        if ctau.ndim != 2 or ctau.shape[0] != ctau.shape[1]:
            raise ValueError(f"ctau must be square, got shape {ctau.shape}")
        if not np.allclose(ctau, ctau.T, atol=1e-12):
            raise ValueError("ctau must be symmetric")
        if ctau.size and np.linalg.eigvalsh(ctau).min() < -1e-10 * max(1.0, np.abs(ctau).max()):
            raise ValueError("ctau must be positive semidefinite")
        if self.mu0sq < 0:
            raise ValueError(f"mu0sq must be >= 0, got {self.mu0sq}")
        object.__setattr__(self, "ctau", _readonly(ctau))
        object.__setattr__(self, "jitter_coupling", _readonly(np.asarray(self.jitter_coupling, dtype=float)))

    @property
    def n_controls(self) -> int:
        return self.ctau.shape[0]

    def is_zero(self) -> bool:
        return self.mu0sq == 0.0 and not np.any(self.ctau)

    def scaled(self, factor: float) -> "SecondMomentModel":
        """All moments multiplied by ``factor`` (an s^2 noise-scale factor)."""
        return SecondMomentModel(
            ctau=self.ctau * factor,
            mu0sq=self.mu0sq * factor,
            jitter_coupling=self.jitter_coupling,
        )


def second_moments(model: ClockNoiseModel, system: QuantumSystem) -> SecondMomentModel:
    """Closed-form second moments of the model, per control pair.

    Same-channel entries are the raw uniform second moment
    ``(a^2 + a b + b^2)/3``; cross-channel entries are the product of means
    ``(a + b)(a' + b')/4`` (independent channels). The jitter variance is
    ``w^2/3``.
    """
    if system.channel_of != model.channel_of:
        raise ValueError(
            f"system channel map {system.channel_of} does not match "
            f"noise model channel map {model.channel_of}"
        )
    lb = model.latency_bounds
    a, b = lb[:, 0], lb[:, 1]
    raw2 = (a * a + a * b + b * b) / 3.0
    mean = (a + b) / 2.0
    chan = np.asarray(model.channel_of)
    same = chan[:, None] == chan[None, :]
    ctau = np.where(same, raw2[chan][:, None], np.outer(mean[chan], mean[chan]))
    if model.jitter_sharing == "per_control":
        coupling = np.eye(model.n_controls)
    else:
        coupling = same.astype(float)
    return SecondMomentModel(
        ctau=ctau,
        mu0sq=model.jitter_width**2 / 3.0,
        jitter_coupling=coupling,
    )


@dataclass(frozen=True)
class MergedTimingGrid:
    """Global segmentation of [0, T] induced by all controls' shifted edges.

    ``breakpoints`` is strictly increasing from 0 to T. On segment s,
    control k plays schedule slice ``slice_index[k, s]`` (-1 before its
    turn-on edge) with value ``amplitudes[k, s]``.
    """

    breakpoints: np.ndarray
    slice_index: np.ndarray
    amplitudes: np.ndarray
    sample_period: float
    n_slices: int

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 2:
            raise ValueError("breakpoints must be a 1-d array with at least two entries")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "breakpoints", _readonly(bp))
        object.__setattr__(self, "slice_index", _readonly(np.asarray(self.slice_index, dtype=np.int64)))
        object.__setattr__(self, "amplitudes", _readonly(np.asarray(self.amplitudes, dtype=float)))

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def n_segments(self) -> int:
        return self.breakpoints.size - 1

    @property
    def n_controls(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def durations(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def check_built_from(self, schedule: ControlSchedule) -> None:
        """Reject grids that do not describe ``schedule``."""
        if self.n_controls != schedule.n_controls or self.n_slices != schedule.slices:
            raise ValueError(
                f"grid shape ({self.n_controls} controls, {self.n_slices} slices) does not "
                f"match schedule ({schedule.n_controls} controls, {schedule.slices} slices)"
            )
        if abs(self.horizon - schedule.horizon) > 1e-9:
            raise ValueError(
                f"grid horizon {self.horizon:.12g} ns != schedule horizon {schedule.horizon:.12g} ns"
            )
        expect = np.where(
            self.slice_index >= 0,
            schedule.amplitudes[np.arange(self.n_controls)[:, None], np.maximum(self.slice_index, 0)],
            0.0,
        )
        if not np.array_equal(expect, self.amplitudes):
            raise ValueError("grid amplitudes do not match the schedule it claims to describe")


def build_merged_grid(
    schedule: ControlSchedule, sample: NoiseSample, pre_turn_on: str | None = None
) -> MergedTimingGrid:
    """Merge all controls' shifted edges into one ordered segment list.

    Breakpoints are the union of {0, T} and every shifted edge clipped to
    (0, T). Each segment's active value for control k is the schedule slice
    whose shifted interval covers it; before k's turn-on edge the value is 0
    (``pre_turn_on="zero"``) or the first slice's value (``"hold"``);
    None defers to the sample's convention.
    """
    if pre_turn_on is None:
        pre_turn_on = sample.pre_turn_on
    if pre_turn_on not in ("zero", "hold"):
        raise ValueError(f"pre_turn_on must be 'zero' or 'hold', got {pre_turn_on!r}")
    if sample.n_controls != schedule.n_controls or sample.slices != schedule.slices:
        raise ValueError(
            f"sample shape ({sample.n_controls} controls, {sample.slices} edges) does not "
            f"match schedule ({schedule.n_controls} controls, {schedule.slices} slices)"
        )
    if sample.sample_period != schedule.sample_period:
        raise ValueError(
            f"sample period {sample.sample_period} != schedule period {schedule.sample_period}"
        )
    horizon = schedule.horizon
    edges = sample.edge_times()
    if np.any(np.diff(edges, axis=1) <= 0):
        raise ValueError("shifted edge times must be strictly increasing per control")

    flat = edges.ravel()
    interior = flat[(flat > 0.0) & (flat < horizon)]
    breakpoints = np.unique(np.concatenate(([0.0, horizon], interior)))

    mid = 0.5 * (breakpoints[:-1] + breakpoints[1:])
    # count of edges at or before each midpoint -> active slice, -1 = pre-turn-on
    idx = np.empty((schedule.n_controls, mid.size), dtype=np.int64)
    for k in range(schedule.n_controls):
        idx[k] = np.searchsorted(edges[k], mid, side="right") - 1
    if pre_turn_on == "hold":
        idx = np.maximum(idx, 0)
    amps = np.where(
        idx >= 0,
        schedule.amplitudes[np.arange(schedule.n_controls)[:, None], np.maximum(idx, 0)],
        0.0,
    )
    return MergedTimingGrid(
        breakpoints=breakpoints,
        slice_index=idx,
        amplitudes=amps,
        sample_period=schedule.sample_period,
        n_slices=schedule.slices,
    )


def zero_noise_grid(schedule: ControlSchedule) -> MergedTimingGrid:
    """The trivial grid with all offsets zero (breakpoints on the ideal clock)."""
    sample = NoiseSample(
        latency=np.zeros(1),
        jitter=np.zeros((1, schedule.slices)),
        channel_of=(0,) * schedule.n_controls,
        sample_period=schedule.sample_period,
    )
    return build_merged_grid(schedule, sample)

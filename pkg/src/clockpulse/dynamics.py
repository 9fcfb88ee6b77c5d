"""Dense unitary dynamics for piecewise-constant multi-channel controls.

Everything here works on plain complex numpy arrays. Propagators are built
by Hermitian eigendecomposition (never by series expansion), so products of
thousands of slices stay unitary to near machine precision and the same
eigenbases can be reused for exact gradients.

Units: time in ns, Hamiltonian entries in rad/ns.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# Elementwise Hermiticity tolerance, relative to the largest entry.
HERMITICITY_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a)
    out.setflags(write=False)
    return out


def _check_hermitian(h: np.ndarray, name: str = "matrix") -> None:
    scale = max(1.0, float(np.abs(h).max()) if h.size else 1.0)
    dev = float(np.abs(h - h.conj().T).max())
    if dev > HERMITICITY_TOL * scale:
        raise ValueError(
            f"{name} is not Hermitian: max |H - H^dag| = {dev:.3e} "
            f"(tolerance {HERMITICITY_TOL:.1e} relative to largest entry)"
        )


@dataclass(frozen=True)
class QuantumSystem:
    """A drift Hamiltonian plus m control Hamiltonians wired to channels.

    Parameters
    ----------
    drift : (N, N) complex ndarray
        Drift Hamiltonian, Hermitian, in rad/ns.
    controls : sequence of (N, N) complex ndarray
        One Hermitian control Hamiltonian per control function.
    channel_of : sequence of int
        Physical output channel of each control, labelled 0..C-1. Several
        controls may share a channel (they then share its clock). Every
        channel must carry at least one control.
    """

    drift: np.ndarray
    controls: tuple
    channel_of: tuple

    def __init__(self, drift, controls, channel_of):
        drift = np.asarray(drift, dtype=complex)
        if drift.ndim != 2 or drift.shape[0] != drift.shape[1]:
            raise ValueError(f"drift must be square, got shape {drift.shape}")
        _check_hermitian(drift, "drift")
        n = drift.shape[0]
        ctrl = []
        for k, h in enumerate(controls):
            h = np.asarray(h, dtype=complex)
            if h.shape != (n, n):
                raise ValueError(
                    f"control {k} has shape {h.shape}, expected {(n, n)}"
                )
            _check_hermitian(h, f"control {k}")
            ctrl.append(_readonly(h))
        channel_of = tuple(int(c) for c in channel_of)
        if len(channel_of) != len(ctrl):
            raise ValueError(
                f"channel_of has {len(channel_of)} entries for {len(ctrl)} controls"
            )
        chans = sorted(set(channel_of))
        if ctrl and chans != list(range(len(chans))):
            raise ValueError(
                f"channels must be labelled 0..C-1 with no gaps, got {chans}"
            )
        object.__setattr__(self, "drift", _readonly(drift))
        object.__setattr__(self, "controls", tuple(ctrl))
        object.__setattr__(self, "channel_of", channel_of)

    @property
    def dim(self) -> int:
        return self.drift.shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def n_channels(self) -> int:
        return len(set(self.channel_of)) if self.channel_of else 0

    def control_stack(self) -> np.ndarray:
        """Controls as one (m, N, N) array."""
        return np.stack(self.controls) if self.controls else np.zeros((0, self.dim, self.dim), complex)


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant amplitudes on a fixed clock grid.

    ``amplitudes[k, j]`` is the value of control k on the ideal interval
    ``[j*sample_period, (j+1)*sample_period)``, in rad/ns.
    """

    amplitudes: np.ndarray
    sample_period: float
    u_max: float | None = None

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=float)
        if amp.ndim != 2:
            raise ValueError(f"amplitudes must be 2-d (controls x slices), got shape {amp.shape}")
        if not np.all(np.isfinite(amp)):
            raise ValueError("amplitudes must be finite")
        if not (self.sample_period > 0 and np.isfinite(self.sample_period)):
            raise ValueError(f"sample_period must be positive, got {self.sample_period}")
        if self.u_max is not None and np.abs(amp).max(initial=0.0) > self.u_max:
            raise ValueError(
                f"amplitude bound exceeded: max |u| = {np.abs(amp).max():.6g} > {self.u_max:.6g}"
            )
        object.__setattr__(self, "amplitudes", _readonly(amp))
        object.__setattr__(self, "sample_period", float(self.sample_period))

    @property
    def n_controls(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def slices(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def horizon(self) -> float:
        return self.slices * self.sample_period

    def with_amplitudes(self, amplitudes: np.ndarray) -> "ControlSchedule":
        """Same grid and bound, new amplitude matrix."""
        return replace(self, amplitudes=amplitudes)


@dataclass(frozen=True)
class UnitaryTrajectory:
    """Propagators of the ideally clocked system at every slice edge.

    ``edge_unitaries[j]`` is the propagator from time 0 to ``j*sample_period``;
    entry 0 is the identity and entry M is the final gate.
    """

    edge_unitaries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "edge_unitaries", _readonly(self.edge_unitaries))

    @property
    def final(self) -> np.ndarray:
        return self.edge_unitaries[-1]


def hermitian_propagator(hamiltonian: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i*H*dt) for Hermitian H, via eigendecomposition.

    Parameters
    ----------
    hamiltonian : (N, N) complex ndarray
        Hermitian generator in rad/ns. Rejected if the Hermiticity
        deviation exceeds ``HERMITICITY_TOL`` relative to the largest entry.
    dt : float
        Nonnegative duration in ns.

    Returns
    -------
    (N, N) complex ndarray, unitary to ~1e-14.
    """
    h = np.asarray(hamiltonian, dtype=complex)
    _check_hermitian(h, "hamiltonian")
    if not (np.isfinite(dt) and dt >= 0):
        raise ValueError(f"dt must be finite and >= 0, got {dt}")
    if dt == 0:
        return np.eye(h.shape[0], dtype=complex)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def _stacked_propagators(hs: np.ndarray, dts) -> np.ndarray:
    """exp(-i*H_s*dt_s) for a stack of Hermitian matrices (..., N, N)."""
    w, v = np.linalg.eigh(hs)
    dts = np.asarray(dts, dtype=float)
    phase = np.exp(-1j * w * dts[..., None])
    return (v * phase[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def _slice_hamiltonians(system: QuantumSystem, amplitudes: np.ndarray) -> np.ndarray:
    """H_0 + sum_k u[..., k, s] H_k with slices stacked on the last axis of u."""
    hk = system.control_stack()
    return np.einsum("...ks,kij->...sij", amplitudes, hk) + system.drift


def _require_compatible(system: QuantumSystem, schedule: ControlSchedule) -> None:
    if schedule.n_controls != system.n_controls:
        raise ValueError(
            f"schedule has {schedule.n_controls} control rows, "
            f"system has {system.n_controls} controls"
        )


def propagate_ideal(system: QuantumSystem, schedule: ControlSchedule) -> UnitaryTrajectory:
    """Propagate under perfectly clocked amplitudes, keeping all edge unitaries."""
    _require_compatible(system, schedule)
    props = _stacked_propagators(
        _slice_hamiltonians(system, schedule.amplitudes),
        np.full(schedule.slices, schedule.sample_period),
    )
    n = system.dim
    edges = np.empty((schedule.slices + 1, n, n), dtype=complex)
    edges[0] = np.eye(n)
    for j in range(schedule.slices):
        edges[j + 1] = props[j] @ edges[j]
    return UnitaryTrajectory(edge_unitaries=edges)


def propagate_noisy(system: QuantumSystem, schedule: ControlSchedule, grid) -> np.ndarray:
    """Final propagator under the timing-perturbed field described by ``grid``.

    ``grid`` is a ``MergedTimingGrid`` built from this schedule; the active
    amplitudes stored in it are re-derived from ``schedule`` through the
    grid's slice map, so a grid built from a different schedule is rejected.
    """
    return propagate_noisy_many(system, schedule, [grid])[0]


def propagate_noisy_many(system: QuantumSystem, schedule: ControlSchedule, grids) -> np.ndarray:
    """Batched :func:`propagate_noisy` over independent timing grids.

    Grids may have different segment counts; shorter ones are padded with
    zero-duration segments (identity propagators), so the whole batch runs
    through one stacked eigendecomposition. Returns an (n_grids, N, N) array.
    """
    _require_compatible(system, schedule)
    grids = list(grids)
    if not grids:
        return np.zeros((0, system.dim, system.dim), dtype=complex)
    for g in grids:
        g.check_built_from(schedule)
    n = system.dim
    smax = max(g.n_segments for g in grids)
    amps = np.zeros((len(grids), system.n_controls, smax))
    durs = np.zeros((len(grids), smax))
    for i, g in enumerate(grids):
        amps[i, :, : g.n_segments] = g.amplitudes
        durs[i, : g.n_segments] = g.durations
    hs = _slice_hamiltonians(system, amps)
    props = _stacked_propagators(hs, durs)
    cur = np.broadcast_to(np.eye(n, dtype=complex), (len(grids), n, n)).copy()
    for s in range(smax):
        cur = props[:, s] @ cur
    return cur


def gate_error(realized: np.ndarray, target: np.ndarray, phase_mode: str = "plain") -> float:
    """Squared Frobenius distance between a realized gate and the target.

    ``plain`` returns ``||U - U_f||_F^2``. ``phase_invariant`` returns
    ``2N - 2|tr(U_f^dag U)|``, the minimum of the plain error over a global
    phase on U.
    """
    u = np.asarray(realized)
    t = np.asarray(target)
    if u.ndim != 2 or u.shape != t.shape or u.shape[0] != u.shape[1]:
        raise ValueError(f"shape mismatch: realized {u.shape}, target {t.shape}")
    return float(gate_error_many(u[None], t, phase_mode)[0])


def gate_error_many(realized: np.ndarray, target: np.ndarray, phase_mode: str = "plain") -> np.ndarray:
    """Vectorized :func:`gate_error` over a stack of realized gates (..., N, N)."""
    u = np.asarray(realized)
    t = np.asarray(target)
    if phase_mode == "plain":
        d = u - t
        return np.sum((d * d.conj()).real, axis=(-2, -1))
    if phase_mode == "phase_invariant":
        n = t.shape[-1]
        overlap = np.einsum("ij,...ij->...", t.conj(), u)
        return 2.0 * n - 2.0 * np.abs(overlap)
    raise ValueError(f"unknown phase_mode {phase_mode!r}")

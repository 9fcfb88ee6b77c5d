"""Perturbative estimate of the clock-noise-averaged gate error.

To first order in the timing offsets, the deviation of the noisy propagator
from the ideal one is a sum over slice edges of (offset) x (amplitude
decrement) x (control Hamiltonian conjugated into the interaction picture
at that edge). Averaging its squared Frobenius norm over the noise
distributions leaves only second moments:

    jn_total = sum_{k,k'} ctau[k,k'] tr(dH_k dH_k')
             + mu0sq * sum_edges sum_{k,k'} Jc[k,k'] du_k du_k' tr(Hb_k Hb_k')

with ``dH_k = sum_edges du_k * Hb_k``. When every control has its own
jitter stream (Jc = identity) the jitter term collapses to
``mu0sq * sum_k ||du_k||^2 ||H_k||_F^2``.

By default only interior edges enter (the turn-on edge is excluded);
pass ``include_turn_on=True`` to add the boundary term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clocknoise import SecondMomentModel
from .dynamics import (
    ControlSchedule,
    QuantumSystem,
    _readonly,
    _require_compatible,
    _slice_hamiltonians,
    _stacked_propagators,
)


@dataclass(frozen=True)
class InteractionSet:
    """Edge-wise sensitivity data of a schedule on a system.

    ``hbar[k, e]`` is control k's Hamiltonian conjugated by the ideal
    propagator at included edge e; ``du[k, e]`` is the amplitude decrement
    across that edge (value before minus value after).
    """

    hbar: np.ndarray
    du: np.ndarray
    include_turn_on: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hbar", _readonly(self.hbar))
        object.__setattr__(self, "du", _readonly(self.du))

    @property
    def n_controls(self) -> int:
        return self.du.shape[0]

    @property
    def n_edges(self) -> int:
        return self.du.shape[1]


@dataclass(frozen=True)
class RobustnessReport:
    """Decomposition of the estimated noise-averaged squared gate error."""

    jn_total: float
    jn_latency: float
    jn_jitter: float
    smoothness: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "smoothness", _readonly(self.smoothness))

    def to_dict(self) -> dict:
        return {
            "jn_total": self.jn_total,
            "jn_latency": self.jn_latency,
            "jn_jitter": self.jn_jitter,
            "smoothness": [float(s) for s in self.smoothness],
        }


def _edge_decrements(amplitudes: np.ndarray, include_turn_on: bool) -> np.ndarray:
    """Decrements at the included edges; turn-on decrement is 0 - u[:, 0]."""
    interior = amplitudes[..., :-1] - amplitudes[..., 1:]
    if not include_turn_on:
        return interior
    return np.concatenate([-amplitudes[..., :1], interior], axis=-1)


def interaction_set(
    system: QuantumSystem, schedule: ControlSchedule, include_turn_on: bool = False
) -> InteractionSet:
    """Conjugated control Hamiltonians and decrements at every included edge."""
    _require_compatible(system, schedule)
    hbar, du = _interaction_batch(
        system, schedule.amplitudes[None], schedule.sample_period, include_turn_on
    )
    # stored per control: (m, E, N, N)
    return InteractionSet(
        hbar=np.swapaxes(hbar[0], 0, 1), du=du[0], include_turn_on=include_turn_on
    )


def _interaction_batch(system, amp_stack, sample_period, include_turn_on):
    """Edge data for a (B, m, M) amplitude stack.

    Returns ``hbar`` with shape (B, E, m, N, N) and ``du`` with shape
    (B, m, E), where E is the number of included edges.
    """
    nb, m, slices = amp_stack.shape
    n = system.dim
    props = _stacked_propagators(
        _slice_hamiltonians(system, amp_stack), np.full((nb, slices), sample_period)
    )
    # edge unitaries at the interior edges 1..M-1 (optionally prefixed by the
    # identity at the turn-on edge)
    first = 0 if include_turn_on else 1
    edges = np.empty((nb, slices - 1 + (1 - first), n, n), dtype=complex)
    cur = np.broadcast_to(np.eye(n, dtype=complex), (nb, n, n)).copy()
    pos = 0
    if include_turn_on:
        edges[:, pos] = cur
        pos += 1
    for j in range(slices - 1):
        cur = props[:, j] @ cur
        edges[:, pos] = cur
        pos += 1
    hk = system.control_stack()
    udag = np.conj(np.swapaxes(edges, -1, -2))
    hbar = udag[:, :, None] @ hk[None, None] @ edges[:, :, None]
    du = _edge_decrements(amp_stack, include_turn_on)
    return hbar, du


def _estimate_terms(hbar, du, moments: SecondMomentModel):
    """Latency and jitter terms for batched edge data; returns (B,) arrays."""
    dh = np.einsum("bke,bekuv->bkuv", du, hbar)
    pair_tr = np.einsum("bkuv,blvu->bkl", dh, dh).real
    jn_lat = np.einsum("kl,bkl->b", moments.ctau, pair_tr)
    edge_tr = np.einsum("bekuv,belvu->bekl", hbar, hbar).real
    jn_jit = moments.mu0sq * np.einsum(
        "kl,bke,ble,bekl->b", moments.jitter_coupling, du, du, edge_tr
    )
    return jn_lat, jn_jit


def estimate_noise_error(iset: InteractionSet, moments: SecondMomentModel) -> RobustnessReport:
    """Evaluate the second-moment error estimate for one interaction set."""
    if iset.n_controls != moments.n_controls:
        raise ValueError(
            f"interaction set has {iset.n_controls} controls, moments have {moments.n_controls}"
        )
    hbar = np.swapaxes(iset.hbar, 0, 1)[None]  # (1, E, m, N, N)
    du = iset.du[None]
    jn_lat, jn_jit = _estimate_terms(hbar, du, moments)
    return RobustnessReport(
        jn_total=float(jn_lat[0] + jn_jit[0]),
        jn_latency=float(jn_lat[0]),
        jn_jitter=float(jn_jit[0]),
        smoothness=np.sum(iset.du**2, axis=1),
    )


def noise_error_report(
    system: QuantumSystem,
    schedule: ControlSchedule,
    moments: SecondMomentModel,
    include_turn_on: bool = False,
) -> RobustnessReport:
    """Convenience wrapper: interaction set plus estimate in one call."""
    return estimate_noise_error(interaction_set(system, schedule, include_turn_on), moments)


def _noise_error_values(system, amp_stack, sample_period, moments, include_turn_on):
    """jn_total for a (B, m, M) amplitude stack, evaluated in chunks."""
    out = np.empty(amp_stack.shape[0])
    chunk = 256
    for lo in range(0, amp_stack.shape[0], chunk):
        part = amp_stack[lo : lo + chunk]
        hbar, du = _interaction_batch(system, part, sample_period, include_turn_on)
        jn_lat, jn_jit = _estimate_terms(hbar, du, moments)
        out[lo : lo + chunk] = jn_lat + jn_jit
    return out


def noise_error_gradient(
    system: QuantumSystem,
    schedule: ControlSchedule,
    moments: SecondMomentModel,
    include_turn_on: bool = False,
    method: str = "spectral",
    step_scale: float = 1e-6,
) -> np.ndarray:
    """Gradient of ``jn_total`` with respect to every amplitude.

    ``method="spectral"`` differentiates analytically: the decrement
    dependence directly, and the interaction-picture dependence by
    propagating per-slice spectral derivatives into an adjoint sum (the
    same divided-difference kernel as the gate-error gradient).
    ``method="fd"`` uses central finite differences with per-coordinate
    step ``step_scale * max(1, |u|)``, all perturbed evaluations running
    through one vectorized batch. Both return an (m, M) array and agree to
    ~1e-6 relative; "fd" is the independent check.
    """
    _require_compatible(system, schedule)
    if method == "spectral":
        return _noise_error_gradient_spectral(system, schedule, moments, include_turn_on)
    if method != "fd":
        raise ValueError(f"method must be 'spectral' or 'fd', got {method!r}")
    u = schedule.amplitudes
    m, slices = u.shape
    steps = step_scale * np.maximum(1.0, np.abs(u))
    n_par = m * slices
    stack = np.broadcast_to(u, (2 * n_par, m, slices)).copy()
    flat = stack.reshape(2 * n_par, -1)
    coords = np.arange(n_par)
    flat[coords, coords] += steps.ravel()
    flat[n_par + coords, coords] -= steps.ravel()
    vals = _noise_error_values(system, stack, schedule.sample_period, moments, include_turn_on)
    grad = (vals[:n_par] - vals[n_par:]) / (2.0 * steps.ravel())
    return grad.reshape(m, slices)


def _noise_error_gradient_spectral(system, schedule, moments, include_turn_on):
    """Exact gradient via per-slice spectral derivatives.

    Uses d(Hb) = [Hb, Omega] with Omega the left-logarithmic derivative of
    the edge propagator: every edge at or after a slice feels that slice's
    perturbation through one common conjugation term, so the edge
    contributions collapse into suffix sums.
    """
    u = schedule.amplitudes
    m, slices = u.shape
    n = system.dim
    dt = schedule.sample_period
    hk = system.control_stack()

    hs = _slice_hamiltonians(system, u)
    w, v = np.linalg.eigh(hs)
    phase = np.exp(-1j * w * dt)
    props = (v * phase[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    edges_u = np.empty((slices + 1, n, n), dtype=complex)
    edges_u[0] = np.eye(n)
    for s in range(slices):
        edges_u[s + 1] = props[s] @ edges_u[s]

    first_edge = 0 if include_turn_on else 1
    edge_ids = np.arange(first_edge, slices)          # edge e sits at time e*dt
    ubar = edges_u[edge_ids]                          # (E, N, N)
    hbar = np.conj(np.swapaxes(ubar, -1, -2))[:, None] @ hk[None] @ ubar[:, None]
    hbar = np.swapaxes(hbar, 0, 1)                    # (m, E, N, N)
    du = _edge_decrements(u, include_turn_on)         # (m, E)

    dh = np.einsum("ke,kenm->knm", du, hbar)
    xi = np.einsum("kl,lnm->knm", moments.ctau, dh)

    # decrement-route terms: latency via tr(Hb_a^e Xi_a), jitter via the
    # constant pair-trace matrix
    s_edge = np.einsum("keab,kba->ke", hbar, xi).real
    pair_tr = np.einsum("kab,lba->kl", hk, hk).real
    q_jit = moments.mu0sq * moments.jitter_coupling * pair_tr
    j_edge = du.T @ q_jit.T                           # (E, m): (Q du^e)_a
    direct = np.zeros((m, slices))
    for pos, e in enumerate(edge_ids):
        # edge e borders slice e-1 (before) and slice e (after)
        term = 2.0 * (s_edge[:, pos] + j_edge[pos])
        if e >= 1:
            direct[:, e - 1] += term
        direct[:, e] -= term

    # conjugation-route terms: slice b perturbs every edge at or after b+1
    # through one common Omega factor, so the edge adjoints collapse into
    # suffix sums
    comm = xi[:, None] @ hbar - hbar @ xi[:, None]    # [Xi_k, Hb_k^e]
    w_edge = np.einsum("ke,kenm->enm", du, comm)      # (E, N, N)
    suffix = np.zeros((slices, n, n), dtype=complex)
    if len(edge_ids):
        cumulative = np.cumsum(w_edge[::-1], axis=0)[::-1]  # sums over e' >= e
        for b in range(slices):
            k = np.searchsorted(edge_ids, b + 1)
            if k < len(edge_ids):
                suffix[b] = cumulative[k]

    vdag = np.conj(np.swapaxes(v, -1, -2))
    c_mid = edges_u[:-1] @ suffix @ np.conj(np.swapaxes(edges_u[:-1], -1, -2))
    a_tilde = (vdag @ c_mid @ v) * np.conj(phase)[:, None, :]
    e_op = vdag[:, None] @ hk[None] @ v[:, None]      # (M, m, N, N)
    gap = w[:, :, None] - w[:, None, :]
    small = np.abs(gap) < 1e-12
    mid = 0.5 * (w[:, :, None] + w[:, None, :])
    num = np.exp(-1j * dt * w[:, :, None]) - np.exp(-1j * dt * w[:, None, :])
    kern = np.where(small, -1j * dt * np.exp(-1j * dt * mid), num / np.where(small, 1.0, gap))
    conj_route = 2.0 * np.real(np.einsum("bpq,bqp,bkqp->kb", a_tilde, kern, e_op))
    return direct + conj_route

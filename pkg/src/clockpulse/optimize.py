"""Pulse-synthesis algorithms: gate-error descent, homotopic robustness
refinement, and stochastic batch descent over sampled clock noise.

All gate-error gradients are exact: each slice propagator is differentiated
in its own eigenbasis with the divided-difference kernel, and contributions
are collected by one forward/backward sweep over the segment product. The
robustness-estimate gradient comes from vectorized central finite
differences (see :mod:`clockpulse.robustness`).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .clocknoise import (
    ClockNoiseModel,
    SecondMomentModel,
    build_merged_grid,
    sample_noise,
)
from .dynamics import (
    ControlSchedule,
    QuantumSystem,
    _require_compatible,
    _slice_hamiltonians,
    gate_error,
    propagate_ideal,
)
from .robustness import noise_error_gradient, noise_error_report

ARMIJO_C1 = 1e-4
DEGENERACY_TOL = 1e-12
ZERO_GRADIENT_TOL = 1e-14


@dataclass(frozen=True)
class OptimizerOptions:
    """Shared knobs for all three algorithms.

    ``learning_rate`` seeds the line search (GRAPE, homotopic, composite)
    or is the step size itself (b-GRAPE, optionally decaying as 1/sqrt(l)).
    ``j0_target`` is the gate-error precision goal; ``j0_ceiling`` is the
    excursion level at which the homotopic stage pauses to restore it.
    """

    max_iters: int = 2000
    learning_rate: float = 0.05
    shrink: float = 0.5
    max_backtracks: int = 40
    grow: float = 2.0
    j0_target: float = 1e-10
    j0_ceiling: float = 1e-6
    j0_excursion_cap: float = 1e-4
    beta: float = 0.0
    batch_size: int = 5
    lr_decay: str = "constant"
    lr_warmup: int = 0
    lr_decay_scale: int = 1
    sample_pool: int = 0
    stall_window: int = 50
    stall_rel_tol: float = 1e-6
    test_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.j0_target < self.j0_ceiling:
            raise ValueError(
                f"j0_target ({self.j0_target}) must be below j0_ceiling ({self.j0_ceiling})"
            )
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.lr_decay not in ("constant", "invsqrt"):
            raise ValueError(f"lr_decay must be 'constant' or 'invsqrt', got {self.lr_decay!r}")


class TraceRecord(NamedTuple):
    iteration: int
    gate_error: float
    objective: float
    tested_error: float
    step: float
    elapsed: float


@dataclass
class OptimizationTrace:
    """Per-iteration history of one optimizer run."""

    algorithm: str
    rows: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def add(self, iteration, gate_err, objective, step, t0, tested=float("nan")):
        self.rows.append(
            TraceRecord(int(iteration), float(gate_err), float(objective), float(tested),
                        float(step), time.perf_counter() - t0)
        )

    @property
    def iterations(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


# ---------------------------------------------------------------------------
# exact gradients of the squared Frobenius gate error


def _prefix_suffix_products(props: np.ndarray):
    """Exclusive left/right products of a propagator stack (..., S, N, N).

    ``left[..., s]`` is ``P_{s-1} ... P_0`` and ``right[..., s]`` is
    ``P_{S-1} ... P_{s+1}``; both computed with a logarithmic inclusive scan
    (few large batched matmuls instead of one call per segment).
    """
    s_count = props.shape[-3]
    n = props.shape[-1]
    inc = np.array(props)           # inc[s] = P_s ... P_{s-2^d+1}
    rev = np.array(props)           # rev[s] = P_{s+2^d-1} ... P_s
    d = 1
    while d < s_count:
        inc[..., d:, :, :] = inc[..., d:, :, :] @ inc[..., :-d, :, :]
        rev[..., :-d, :, :] = rev[..., d:, :, :] @ rev[..., :-d, :, :]
        d *= 2
    eye = np.broadcast_to(np.eye(n, dtype=props.dtype), props[..., :1, :, :].shape)
    left = np.concatenate([eye, inc[..., :-1, :, :]], axis=-3)
    right = np.concatenate([rev[..., 1:, :, :], eye], axis=-3)
    return left, right, inc[..., -1, :, :]


def _phase_divided_difference(w: np.ndarray, dts: np.ndarray) -> np.ndarray:
    """Divided differences of x -> exp(-i*x*dt) over each segment's spectrum.

    Returns K with ``K[..., p, q] = (f(w_p) - f(w_q)) / (w_p - w_q)`` and the
    analytic limit ``-i*dt*f((w_p+w_q)/2)`` where the gap is below
    ``DEGENERACY_TOL``.
    """
    gap = w[..., :, None] - w[..., None, :]
    dt = np.asarray(dts)[..., None, None]
    mid = 0.5 * (w[..., :, None] + w[..., None, :])
    small = np.abs(gap) < DEGENERACY_TOL
    num = np.exp(-1j * dt * w[..., :, None]) - np.exp(-1j * dt * w[..., None, :])
    safe = np.where(small, 1.0, gap)
    return np.where(small, -1j * dt * np.exp(-1j * dt * mid), num / safe)


def _segment_product_gradient(system, amplitudes, durations, target, phase_mode):
    """Error value and per-(control, segment) derivative of ``||U - U_f||^2``.

    ``amplitudes`` is (m, S) with per-segment active values; returns
    ``(value, final_unitary, d_err)`` with ``d_err`` of shape (m, S).
    """
    hk = system.control_stack()
    n = system.dim
    durations = np.asarray(durations, dtype=float)
    s_count = len(durations)
    hs = _slice_hamiltonians(system, amplitudes)
    w, v = np.linalg.eigh(hs)
    phase = np.exp(-1j * w * durations[:, None])
    props = (v * phase[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    left, right, final = _prefix_suffix_products(props)

    tdag = np.conj(target.T)
    if phase_mode == "plain":
        value = float(np.sum(np.abs(final - target) ** 2))
        factor = 1.0 + 0.0j
    elif phase_mode == "phase_invariant":
        z = np.trace(tdag @ final)
        value = float(2.0 * n - 2.0 * abs(z))
        factor = np.conj(z) / abs(z) if abs(z) > ZERO_GRADIENT_TOL else 0.0j
    else:
        raise ValueError(f"unknown phase_mode {phase_mode!r}")

    # d err / d theta = -2 Re[factor * tr(G_s dP_s)], G_s = L_s U_f^dag R_s
    g = left @ tdag[None] @ right
    vdag = np.conj(np.swapaxes(v, -1, -2))
    a = vdag @ g @ v
    e = vdag[:, None] @ hk[None] @ v[:, None]          # (S, m, N, N)
    kern = _phase_divided_difference(w, durations)     # (S, N, N)
    dtrace = np.einsum("spq,sqp,skqp->ks", a, kern, e)
    d_err = -2.0 * np.real(factor * dtrace)
    return value, final, d_err


def gate_error_gradient(
    system: QuantumSystem,
    schedule: ControlSchedule,
    target: np.ndarray,
    phase_mode: str = "plain",
) -> np.ndarray:
    """Exact gradient of the ideal-timing gate error w.r.t. every amplitude."""
    return _gate_error_and_gradient(system, schedule, target, phase_mode)[1]


def _gate_error_and_gradient(system, schedule, target, phase_mode):
    _require_compatible(system, schedule)
    durations = np.full(schedule.slices, schedule.sample_period)
    value, _, d_err = _segment_product_gradient(
        system, schedule.amplitudes, durations, target, phase_mode
    )
    return value, d_err


def batch_gate_error(
    system: QuantumSystem,
    schedule: ControlSchedule,
    target: np.ndarray,
    grids,
    phase_mode: str = "plain",
) -> float:
    """Mean gate error over the noisy timing grids in ``grids``."""
    return _batch_error_and_gradient(system, schedule, target, grids, phase_mode)[0]


def batch_error_gradient(
    system: QuantumSystem,
    schedule: ControlSchedule,
    target: np.ndarray,
    grids,
    phase_mode: str = "plain",
) -> np.ndarray:
    """Gradient of the batch-averaged noisy gate error w.r.t. the amplitudes.

    Every merged segment where a control is active contributes to that
    control's amplitude on the slice the segment belongs to; samples are
    accumulated in their given order.
    """
    return _batch_error_and_gradient(system, schedule, target, grids, phase_mode)[1]


def _batch_error_and_gradient(system, schedule, target, grids, phase_mode):
    _require_compatible(system, schedule)
    grids = list(grids)
    if not grids:
        raise ValueError("batch of timing grids must be nonempty")
    m, slices = schedule.amplitudes.shape
    n = system.dim
    nb = len(grids)
    smax = max(g.n_segments for g in grids)
    # pad with zero-duration segments: identity propagators, no gradient
    amps = np.zeros((nb, m, smax))
    durs = np.zeros((nb, smax))
    idx = np.full((nb, m, smax), -1, dtype=np.int64)
    for i, g in enumerate(grids):
        g.check_built_from(schedule)
        amps[i, :, : g.n_segments] = g.amplitudes
        durs[i, : g.n_segments] = g.durations
        idx[i, :, : g.n_segments] = g.slice_index

    hk = system.control_stack()
    hs = _slice_hamiltonians(system, amps)
    w, v = np.linalg.eigh(hs)
    phase = np.exp(-1j * w * durs[..., None])
    props = (v * phase[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    left, right, finals = _prefix_suffix_products(props)

    tdag = np.conj(target.T)
    if phase_mode == "plain":
        values = np.sum(np.abs(finals - target) ** 2, axis=(-2, -1))
        factor = np.ones(nb, dtype=complex)
    elif phase_mode == "phase_invariant":
        z = np.einsum("ij,bij->b", tdag.T, finals)
        values = 2.0 * n - 2.0 * np.abs(z)
        mag = np.abs(z)
        factor = np.where(mag > ZERO_GRADIENT_TOL, np.conj(z) / np.maximum(mag, 1e-300), 0.0)
    else:
        raise ValueError(f"unknown phase_mode {phase_mode!r}")

    g_op = left @ tdag[None, None] @ right
    vdag = np.conj(np.swapaxes(v, -1, -2))
    a_op = vdag @ g_op @ v
    e_op = vdag[:, :, None] @ hk[None, None] @ v[:, :, None]
    kern = _phase_divided_difference(w, durs)
    dtrace = np.einsum("bspq,bsqp,bskqp->bks", a_op, kern, e_op)
    d_err = -2.0 * np.real(factor[:, None, None] * dtrace)

    grad = np.zeros((m, slices))
    active = idx >= 0
    rows = np.broadcast_to(np.arange(m)[None, :, None], idx.shape)
    np.add.at(grad, (rows[active], idx[active]), d_err[active])
    scale = 1.0 / nb
    return float(values.sum()) * scale, grad * scale


# ---------------------------------------------------------------------------
# deterministic descent loop shared by grape / homotopic / composite


def _descent_loop(u0, value_fn, direction_fn, opts, trace, t0, on_accept,
                  target_value=None, stall_check=None, stall_ok=True,
                  candidate_ok=None):
    """Monotone backtracking descent with Barzilai-Borwein step seeding.

    ``direction_fn(u)`` returns the (descent) direction to step against.
    ``candidate_ok(u)`` may veto a trial point (treated like a failed
    sufficient-decrease check, so the step shrinks). ``on_accept(u, f, it,
    step)`` post-processes an accepted iterate and returns the (possibly
    corrected) pair ``(u, f)``, or None to abort, in which case the previous
    iterate is returned.
    """
    u = np.array(u0)
    f = value_fn(u)
    prev_u = prev_d = None
    alpha = opts.learning_rate
    history = [f]
    it = -1
    for it in range(opts.max_iters):
        if target_value is not None and f <= target_value:
            trace.converged = True
            trace.message = "reached target"
            return u, f
        d = direction_fn(u)
        slope = float(np.sum(d * d))
        if not np.sqrt(slope) > ZERO_GRADIENT_TOL:
            trace.converged = stall_ok or (target_value is not None and f <= target_value)
            trace.message = "stationary point"
            return u, f
        if prev_u is not None:
            step_vec = (u - prev_u).ravel()
            dir_change = (d - prev_d).ravel()
            denom = float(step_vec @ dir_change)
            if denom > 0:
                alpha = max(float(step_vec @ step_vec) / denom, 1e-12)
        trial = alpha
        accepted = False
        for _ in range(opts.max_backtracks):
            cand = u - trial * d
            fc = value_fn(cand)
            if fc <= f - ARMIJO_C1 * trial * slope and (
                candidate_ok is None or candidate_ok(cand)
            ):
                accepted = True
                break
            trial *= opts.shrink
        if not accepted:
            trace.converged = stall_ok or (target_value is not None and f <= target_value)
            trace.message = "line search stalled"
            return u, f
        prev_u, prev_d = u, d
        adjusted = on_accept(cand, fc, it, trial)
        if adjusted is None:
            trace.converged = False
            trace.message = "restoration failed; keeping last valid iterate"
            return u, f
        u, f = adjusted
        alpha = trial * opts.grow
        history.append(f)
        if stall_check is not None and stall_check(history):
            trace.converged = True
            trace.message = "stalled (relative improvement below tolerance)"
            return u, f
    trace.converged = (target_value is None and stall_ok) or (
        target_value is not None and f <= target_value
    )
    trace.message = "iteration budget exhausted"
    return u, f


def grape_minimize(
    system: QuantumSystem,
    schedule0: ControlSchedule,
    target: np.ndarray,
    opts: OptimizerOptions,
    phase_mode: str = "plain",
):
    """Monotone steepest descent on the ideal-timing gate error.

    Returns ``(schedule, trace)``; ``trace.converged`` reports whether the
    gate error reached ``opts.j0_target``.
    """
    t0 = time.perf_counter()
    trace = OptimizationTrace(algorithm="grape")

    def value_fn(u):
        return gate_error(propagate_ideal(system, schedule0.with_amplitudes(u)).final,
                          target, phase_mode)

    def direction_fn(u):
        return _gate_error_and_gradient(
            system, schedule0.with_amplitudes(u), target, phase_mode)[1]

    def on_accept(u, f, it, step):
        trace.add(it, f, f, step, t0)
        return u, f

    u, _ = _descent_loop(
        schedule0.amplitudes, value_fn, direction_fn, opts, trace, t0, on_accept,
        target_value=opts.j0_target, stall_ok=False,
    )
    return schedule0.with_amplitudes(u), trace


def projected_direction(noise_grad: np.ndarray, gate_grad: np.ndarray) -> np.ndarray:
    """Component of ``noise_grad`` orthogonal to ``gate_grad``.

    Gram-Schmidt step under the elementwise inner product; returns
    ``noise_grad`` unchanged when ``gate_grad`` is numerically zero.
    """
    denom = float(np.sum(gate_grad * gate_grad))
    if denom < ZERO_GRADIENT_TOL**2:
        return np.array(noise_grad)
    coeff = float(np.sum(gate_grad * noise_grad)) / denom
    return noise_grad - coeff * gate_grad


def _window_stall(opts):
    def stalled(history):
        win = opts.stall_window
        if len(history) <= win:
            return False
        ref = history[-win - 1]
        return (ref - history[-1]) <= opts.stall_rel_tol * max(abs(ref), 1e-300)

    return stalled


def homotopic_refine(
    system: QuantumSystem,
    schedule: ControlSchedule,
    target: np.ndarray,
    moments: SecondMomentModel,
    opts: OptimizerOptions,
    phase_mode: str = "plain",
    include_turn_on: bool = False,
    tester: Callable | None = None,
):
    """Reduce the noise-error estimate while holding the gate error down.

    Steps follow the noise-estimate gradient projected orthogonal to the
    gate-error gradient; the line search rejects trial points whose gate
    error exceeds ``opts.j0_excursion_cap`` so the iterate stays near the
    precision manifold. Whenever the gate error still drifts above
    ``opts.j0_ceiling``, a gate-error descent restores it below
    ``opts.j0_target`` before continuing (aborting to the last valid iterate
    if restoration fails). Requires, and if necessary first establishes, a
    schedule at the gate-error target.
    """
    t0 = time.perf_counter()
    trace = OptimizationTrace(algorithm="homotopic")

    def j0_fn(u):
        return gate_error(propagate_ideal(system, schedule.with_amplitudes(u)).final,
                          target, phase_mode)

    if j0_fn(schedule.amplitudes) > opts.j0_target:
        schedule, pre = grape_minimize(system, schedule, target, opts, phase_mode)
        if not pre.converged:
            trace.message = "initial gate-error stage failed: " + pre.message
            return schedule, trace

    if moments.is_zero():
        trace.converged = True
        trace.message = "noise moments are zero; nothing to refine"
        return schedule, trace

    def jn_fn(u):
        return noise_error_report(
            system, schedule.with_amplitudes(u), moments, include_turn_on).jn_total

    def direction_fn(u):
        sched = schedule.with_amplitudes(u)
        gn = noise_error_gradient(system, sched, moments, include_turn_on)
        g0 = _gate_error_and_gradient(system, sched, target, phase_mode)[1]
        return projected_direction(gn, g0)

    def on_accept(u, f, it, step):
        j0 = j0_fn(u)
        if j0 > opts.j0_ceiling:
            restored, sub = grape_minimize(
                system, schedule.with_amplitudes(u), target, opts, phase_mode)
            if not sub.converged:
                return None
            u = restored.amplitudes
            j0 = j0_fn(u)
            f = jn_fn(u)
        tested = tester(schedule.with_amplitudes(u)) if (
            tester is not None and opts.test_every and it % opts.test_every == 0
        ) else float("nan")
        trace.add(it, j0, f, step, t0, tested)
        return u, f

    u, _ = _descent_loop(
        schedule.amplitudes, jn_fn, direction_fn, opts, trace, t0, on_accept,
        stall_check=_window_stall(opts),
        candidate_ok=lambda cand: j0_fn(cand) <= opts.j0_excursion_cap,
    )
    return schedule.with_amplitudes(u), trace


def composite_objective(
    system: QuantumSystem,
    schedule: ControlSchedule,
    target: np.ndarray,
    moments: SecondMomentModel,
    beta: float,
    phase_mode: str = "plain",
    include_turn_on: bool = False,
) -> float:
    """Weighted single objective: gate error plus ``beta`` times the noise estimate."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    j0 = gate_error(propagate_ideal(system, schedule).final, target, phase_mode)
    if beta == 0:
        return j0
    return j0 + beta * noise_error_report(system, schedule, moments, include_turn_on).jn_total


def composite_minimize(
    system: QuantumSystem,
    schedule0: ControlSchedule,
    target: np.ndarray,
    moments: SecondMomentModel,
    opts: OptimizerOptions,
    phase_mode: str = "plain",
    include_turn_on: bool = False,
):
    """Plain gradient descent on the weighted composite objective."""
    t0 = time.perf_counter()
    trace = OptimizationTrace(algorithm="composite")
    beta = opts.beta

    def value_fn(u):
        return composite_objective(
            system, schedule0.with_amplitudes(u), target, moments, beta,
            phase_mode, include_turn_on)

    def direction_fn(u):
        sched = schedule0.with_amplitudes(u)
        g = _gate_error_and_gradient(system, sched, target, phase_mode)[1]
        if beta > 0:
            g = g + beta * noise_error_gradient(system, sched, moments, include_turn_on)
        return g

    def on_accept(u, f, it, step):
        j0 = gate_error(propagate_ideal(system, schedule0.with_amplitudes(u)).final,
                        target, phase_mode)
        trace.add(it, j0, f, step, t0)
        return u, f

    u, _ = _descent_loop(
        schedule0.amplitudes, value_fn, direction_fn, opts, trace, t0, on_accept,
        stall_check=_window_stall(opts),
    )
    return schedule0.with_amplitudes(u), trace


def bgrape_optimize(
    system: QuantumSystem,
    schedule0: ControlSchedule,
    target: np.ndarray,
    noise_model: ClockNoiseModel,
    opts: OptimizerOptions,
    phase_mode: str = "plain",
    tester: Callable | None = None,
):
    """Stochastic descent on the batch-averaged noisy gate error.

    Each iteration draws ``opts.batch_size`` fresh noise realizations
    (deterministically indexed by iteration), evaluates the batch gradient
    through the merged timing grids, and takes one step of the configured
    learning rate (constant or 1/sqrt decay). With ``opts.sample_pool > 0``
    the realizations come from that many pre-indexed samples instead, giving
    the fixed-pool sampling baseline.

    The run halves its base step whenever the batch objective exceeds 10x
    its initial value and gives up after five consecutive halvings.
    """
    _require_compatible(system, schedule0)
    t0 = time.perf_counter()
    trace = OptimizationTrace(algorithm="bgrape")
    u = np.array(schedule0.amplitudes)
    b = opts.batch_size
    train_model = noise_model.with_seed(opts.seed)
    base_rate = opts.learning_rate
    initial_objective = None
    halvings = 0

    for it in range(opts.max_iters):
        if opts.sample_pool > 0:
            picker = np.random.default_rng((int(opts.seed), int(it)))
            indices = picker.integers(0, opts.sample_pool, size=b)
        else:
            indices = range(it * b, it * b + b)
        sched = schedule0.with_amplitudes(u)
        grids = [build_merged_grid(sched, sample_noise(train_model, int(i))) for i in indices]
        objective, grad = _batch_error_and_gradient(system, sched, target, grids, phase_mode)
        if initial_objective is None:
            initial_objective = max(objective, 1e-300)
        if objective > 10.0 * initial_objective:
            base_rate *= 0.5
            halvings += 1
            if halvings >= 5:
                trace.message = "diverged: batch objective grew 10x despite step halvings"
                trace.add(it, _ideal_error(system, sched, target, phase_mode),
                          objective, 0.0, t0)
                break
        else:
            halvings = 0
        rate = _step_rate(base_rate, it, opts)
        tested = tester(sched) if (
            tester is not None and opts.test_every and it % opts.test_every == 0
        ) else float("nan")
        trace.add(it, _ideal_error(system, sched, target, phase_mode),
                  objective, rate, t0, tested)
        u = u - rate * grad
    else:
        trace.converged = True
        trace.message = "completed iteration budget"
    return schedule0.with_amplitudes(u), trace


def _step_rate(base_rate, iteration, opts):
    if opts.lr_decay == "constant":
        return base_rate
    past = max(0, iteration - opts.lr_warmup)
    return base_rate / np.sqrt(1.0 + past / max(opts.lr_decay_scale, 1))


def _ideal_error(system, schedule, target, phase_mode):
    return gate_error(propagate_ideal(system, schedule).final, target, phase_mode)


def fresh_batch_grids(
    schedule: ControlSchedule, noise_model: ClockNoiseModel, indices
) -> list:
    """Merged grids for the given sample indices of ``noise_model``."""
    return [build_merged_grid(schedule, sample_noise(noise_model, int(i))) for i in indices]

import numpy as np
import pytest

import clockpulse as cp
from conftest import random_schedule

SX = cp.build_operator("X")
SY = cp.build_operator("Y")
SZ = cp.build_operator("Z")


def frob(a):
    return float(np.linalg.norm(a))


class TestHermitianPropagator:
    def test_zero_duration_gives_identity(self):
        h = np.array([[1.0, 2.0 - 1j], [2.0 + 1j, -3.0]])
        assert frob(cp.hermitian_propagator(h, 0.0) - np.eye(2)) == 0.0

    def test_sigma_z_pi_is_minus_identity(self):
        assert frob(cp.hermitian_propagator(SZ, np.pi) + np.eye(2)) < 1e-12

    def test_sigma_x_half_pi(self):
        # exp(-i theta X) = cos(theta) I - i sin(theta) X at theta = pi/2
        assert frob(cp.hermitian_propagator(SX, np.pi / 2) + 1j * SX) < 1e-12

    def test_rejects_non_hermitian(self):
        with pytest.raises(ValueError, match="Hermitian"):
            cp.hermitian_propagator(np.array([[0.0, 1.0], [0.0, 0.0]]), 1.0)

    def test_rejects_negative_duration(self):
        with pytest.raises(ValueError, match="dt"):
            cp.hermitian_propagator(SZ, -1.0)

    def test_unitary_output(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        h = a + a.conj().T
        u = cp.hermitian_propagator(h, 0.37)
        assert frob(u @ u.conj().T - np.eye(6)) < 1e-12


class TestPropagateIdeal:
    def test_zero_field_zero_drift_gives_identities(self):
        system = cp.QuantumSystem(np.zeros((2, 2)), [SX], [0])
        schedule = cp.ControlSchedule(np.zeros((1, 5)), 1.0)
        traj = cp.propagate_ideal(system, schedule)
        for u in traj.edge_unitaries:
            assert frob(u - np.eye(2)) == 0.0

    def test_commuting_slices_add_areas(self):
        system = cp.QuantumSystem(np.zeros((2, 2)), [SZ], [0])
        schedule = cp.ControlSchedule([[1.0, 3.0]], 1.0)
        final = cp.propagate_ideal(system, schedule).final
        assert frob(final - cp.hermitian_propagator(SZ, 4.0)) < 1e-14

    def test_edge_count_and_identity_start(self):
        system = cp.QuantumSystem(np.zeros((2, 2)), [SX], [0])
        schedule = random_schedule(1, 7, seed=5)
        traj = cp.propagate_ideal(system, schedule)
        assert traj.edge_unitaries.shape == (8, 2, 2)
        assert frob(traj.edge_unitaries[0] - np.eye(2)) == 0.0

    def test_dimension_mismatch_rejected(self):
        system = cp.QuantumSystem(np.zeros((2, 2)), [SX], [0])
        schedule = random_schedule(2, 4)
        with pytest.raises(ValueError, match="controls"):
            cp.propagate_ideal(system, schedule)

    def test_unitarity_many_slices(self):
        # products of 10^4 slice propagators stay unitary
        system = cp.QuantumSystem(np.zeros((2, 2)), [SX, SY], [0, 0])
        schedule = random_schedule(2, 10_000, seed=1)
        final = cp.propagate_ideal(system, schedule).final
        assert frob(final @ final.conj().T - np.eye(2)) < 1e-10

    def test_composition_over_halves(self, cnot_system):
        schedule = random_schedule(4, 20, seed=9)
        full = cp.propagate_ideal(cnot_system, schedule).final
        first = cp.ControlSchedule(schedule.amplitudes[:, :10], 1.0)
        second = cp.ControlSchedule(schedule.amplitudes[:, 10:], 1.0)
        u1 = cp.propagate_ideal(cnot_system, first).final
        u2 = cp.propagate_ideal(cnot_system, second).final
        assert frob(full - u2 @ u1) < 1e-12


class TestPropagateNoisy:
    def test_zero_noise_matches_ideal(self, cnot_system):
        schedule = random_schedule(4, 12, seed=2)
        grid = cp.zero_noise_grid(schedule)
        noisy = cp.propagate_noisy(cnot_system, schedule, grid)
        ideal = cp.propagate_ideal(cnot_system, schedule).final
        assert frob(noisy - ideal) < 1e-12

    def test_latency_area_bookkeeping(self):
        # latency 0.2 ns: areas 1*[0.2, 1.2) + 3*[1.2, 2.0) = 3.4
        system = cp.QuantumSystem(np.zeros((2, 2)), [SZ], [0])
        schedule = cp.ControlSchedule([[1.0, 3.0]], 1.0)
        model = cp.ClockNoiseModel([[0.2, 0.2]], 0.0, (0,), 2, 1.0)
        grid = cp.build_merged_grid(schedule, cp.sample_noise(model, 0))
        u = cp.propagate_noisy(system, schedule, grid)
        assert frob(u - cp.hermitian_propagator(SZ, 3.4)) < 1e-12

    def test_constant_amplitude_loses_only_turn_on_area(self):
        system = cp.QuantumSystem(np.zeros((2, 2)), [SZ], [0])
        amp, tau, slices = 0.8, 0.3, 6
        schedule = cp.ControlSchedule(np.full((1, slices), amp), 1.0)
        model = cp.ClockNoiseModel([[tau, tau]], 0.0, (0,), slices, 1.0)
        grid = cp.build_merged_grid(schedule, cp.sample_noise(model, 0))
        u = cp.propagate_noisy(system, schedule, grid)
        expect = cp.hermitian_propagator(SZ, amp * (slices - tau))
        assert frob(u - expect) < 1e-12

    def test_commuting_family_matches_area_oracle(self):
        # mutually commuting Hamiltonians: U = exp(-i sum_k A_k H_k - i T H_0)
        h0 = 0.3 * np.kron(SZ, SZ)
        hz1 = np.kron(SZ, np.eye(2))
        hz2 = np.kron(np.eye(2), SZ)
        system = cp.QuantumSystem(h0, [hz1, hz2], [0, 1])
        schedule = random_schedule(2, 10, seed=4)
        model = cp.ClockNoiseModel(
            [[0.0, 0.3], [0.0, 0.3]], 0.05, (0, 1), 10, 1.0, seed=8)
        for i in range(5):
            sample = cp.sample_noise(model, i)
            grid = cp.build_merged_grid(schedule, sample)
            areas = exact_active_areas(schedule, sample)
            h_eff = areas[0] * hz1 + areas[1] * hz2 + schedule.horizon * h0
            expect = cp.hermitian_propagator(h_eff / 1.0, 1.0)
            got = cp.propagate_noisy(system, schedule, grid)
            assert frob(got - expect) < 1e-10

    def test_mismatched_grid_rejected(self, cnot_system):
        schedule = random_schedule(4, 12, seed=2)
        other = random_schedule(4, 12, seed=3)
        grid = cp.zero_noise_grid(other)
        with pytest.raises(ValueError, match="match the schedule"):
            cp.propagate_noisy(cnot_system, schedule, grid)

    def test_mismatched_horizon_rejected(self, cnot_system):
        schedule = random_schedule(4, 12, seed=2)
        shorter = cp.ControlSchedule(schedule.amplitudes[:, :10], 1.0)
        grid = cp.zero_noise_grid(shorter)
        with pytest.raises(ValueError, match="slices"):
            cp.propagate_noisy(cnot_system, schedule, grid)


def exact_active_areas(schedule, sample):
    """Interval-arithmetic integral of each control's shifted-clipped waveform."""
    horizon = schedule.horizon
    edges = sample.edge_times()
    areas = np.zeros(schedule.n_controls)
    for k in range(schedule.n_controls):
        starts = edges[k]
        ends = np.append(edges[k][1:], horizon)
        for j in range(schedule.slices):
            lo = min(max(starts[j], 0.0), horizon)
            hi = min(max(ends[j], 0.0), horizon)
            areas[k] += schedule.amplitudes[k, j] * max(hi - lo, 0.0)
    return areas


class TestGateError:
    def test_zero_at_target(self, cnot_target):
        assert cp.gate_error(cnot_target, cnot_target) == 0.0
        assert cp.gate_error(cnot_target, cnot_target, "phase_invariant") == 0.0

    def test_global_phase_plain(self, cnot_target):
        # ||(e^{i phi}-1) U_f||^2 = 2N(1-cos phi) = 8 at phi = pi/2, N = 4
        u = np.exp(1j * np.pi / 2) * cnot_target
        assert abs(cp.gate_error(u, cnot_target) - 8.0) < 1e-12

    def test_global_phase_invariant_mode(self, cnot_target):
        u = np.exp(1j * np.pi / 2) * cnot_target
        assert cp.gate_error(u, cnot_target, "phase_invariant") < 1e-12

    def test_phase_sweep_invariance(self, cnot_system, cnot_target):
        schedule = random_schedule(4, 10, seed=6)
        u = cp.propagate_ideal(cnot_system, schedule).final
        base = cp.gate_error(u, cnot_target, "phase_invariant")
        values = [
            cp.gate_error(np.exp(1j * phi) * u, cnot_target, "phase_invariant")
            for phi in np.linspace(0, 2 * np.pi, 17)
        ]
        assert max(abs(v - base) for v in values) < 1e-12
        plain0 = cp.gate_error(u, cnot_target)
        plain1 = cp.gate_error(np.exp(1j * np.pi / 2) * u, cnot_target)
        assert abs(plain0 - plain1) > 1e-6  # plain mode is phase sensitive

    def test_dimension_mismatch(self, cnot_target):
        with pytest.raises(ValueError, match="shape"):
            cp.gate_error(np.eye(2), cnot_target)


class TestSystemValidation:
    def test_non_hermitian_control_rejected(self):
        with pytest.raises(ValueError, match="control 0"):
            cp.QuantumSystem(np.zeros((2, 2)), [np.array([[0, 1], [0, 0]])], [0])

    def test_channel_gap_rejected(self):
        with pytest.raises(ValueError, match="channels"):
            cp.QuantumSystem(np.zeros((2, 2)), [SX, SY], [0, 2])

    def test_amplitude_bound_enforced(self):
        with pytest.raises(ValueError, match="bound"):
            cp.ControlSchedule([[1.0, 2.0]], 1.0, u_max=1.5)

    def test_nonfinite_amplitudes_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            cp.ControlSchedule([[np.nan, 0.0]], 1.0)

    def test_horizon(self):
        schedule = cp.ControlSchedule(np.zeros((1, 7)), 0.5)
        assert schedule.horizon == 3.5

import numpy as np
import pytest

import clockpulse as cp
from clockpulse.montecarlo import _binned
from conftest import random_schedule, two_qubit_cnot_system

SX = cp.build_operator("X")
SY = cp.build_operator("Y")


def small_system():
    return cp.QuantumSystem(np.zeros((2, 2)), [SX, SY], [0, 0])


def small_model(slices, seed=0, jitter=0.04):
    return cp.ClockNoiseModel([[0.0, 0.3]], jitter, (0, 0), slices, 1.0, seed=seed)


class TestAverageError:
    def test_zero_noise_model_reproduces_ideal_error(self):
        system = small_system()
        schedule = random_schedule(2, 8, seed=1)
        target = 1j * SX
        model = cp.ClockNoiseModel([[0.0, 0.0]], 0.0, (0, 0), 8, 1.0)
        report = cp.test_average_error(system, schedule, target, model, samples=50)
        ideal = cp.gate_error(cp.propagate_ideal(system, schedule).final, target)
        assert abs(report.mean - ideal) < 1e-12
        assert report.std < 1e-12

    def test_same_seed_identical_reports(self):
        system = small_system()
        schedule = random_schedule(2, 8, seed=2)
        model = small_model(8)
        r1 = cp.test_average_error(system, schedule, 1j * SX, model, samples=300, seed=4)
        r2 = cp.test_average_error(system, schedule, 1j * SX, model, samples=300, seed=4)
        assert r1.mean == r2.mean
        assert np.array_equal(r1.errors, r2.errors)

    def test_seed_stability_of_the_mean(self):
        # two independent 10^4-sample estimates agree to a few standard errors
        system = small_system()
        schedule = random_schedule(2, 20, seed=3)
        model = small_model(20)
        r1 = cp.test_average_error(system, schedule, 1j * SX, model, samples=10_000, seed=1)
        r2 = cp.test_average_error(system, schedule, 1j * SX, model, samples=10_000, seed=2)
        tol = 5 * max(r1.standard_error, r2.standard_error)
        assert abs(r1.mean - r2.mean) < tol

    def test_mean_within_range(self):
        system = small_system()
        schedule = random_schedule(2, 8, seed=2)
        report = cp.test_average_error(
            system, schedule, 1j * SX, small_model(8), samples=500)
        assert report.errors.min() <= report.mean <= report.errors.max()
        assert report.sample_count == 500

    def test_drops_raw_errors_when_asked(self):
        system = small_system()
        schedule = random_schedule(2, 8, seed=2)
        report = cp.test_average_error(
            system, schedule, 1j * SX, small_model(8), samples=50, keep_errors=False)
        assert report.errors is None
        with pytest.raises(ValueError, match="raw errors"):
            cp.error_histogram(report)


class TestHistogram:
    def test_identical_errors_single_bin(self):
        hist = _binned(np.full(40, 0.125), bins=10)
        assert hist.counts.tolist() == [40]
        assert hist.bin_edges[0] == hist.bin_edges[-1] == 0.125

    def test_counts_sum_to_samples(self):
        rng = np.random.default_rng(0)
        errors = 10.0 ** rng.uniform(-8, -1, size=5000)
        hist = _binned(errors, bins=20)
        assert hist.counts.sum() == 5000

    def test_log_uniform_fills_bins_evenly(self):
        # synthetic errors uniform in log10 between 1e-4 and 1e-2
        rng = np.random.default_rng(1)
        errors = 10.0 ** rng.uniform(-4, -2, size=40_000)
        hist = _binned(errors, bins=10)
        expected = 4000
        assert np.abs(hist.counts - expected).max() < 0.1 * expected

    def test_rebinning_via_report(self):
        system = small_system()
        schedule = random_schedule(2, 8, seed=2)
        report = cp.test_average_error(
            system, schedule, 1j * SX, small_model(8), samples=400)
        hist = cp.error_histogram(report, bins=12)
        assert hist.counts.sum() == 400
        assert len(hist.bin_edges) == 13

    def test_skewness_sign_on_synthetic_data(self):
        rng = np.random.default_rng(2)
        right_tail = 10.0 ** (-6 + rng.exponential(0.8, size=20_000))
        left_tail = 10.0 ** (-1 - rng.exponential(0.8, size=20_000))
        sym = 10.0 ** rng.normal(-4, 0.5, size=20_000)
        mk = lambda e: cp.TestReport(e.size, float(e.mean()), float(e.std()),
                                     _binned(e, 10), errors=e)
        assert cp.log_error_skewness(mk(right_tail)) > 0.5
        assert cp.log_error_skewness(mk(left_tail)) < -0.5
        assert abs(cp.log_error_skewness(mk(sym))) < 0.1


class TestLatencySweep:
    def test_origin_matches_ideal_error_exactly(self):
        system = two_qubit_cnot_system()
        target = cp.named_gate("cnot", phase=np.pi / 4)
        schedule = random_schedule(4, 20, seed=3)
        surface = cp.latency_sweep(
            system, schedule, target, np.array([0.0, 0.2]), np.array([0.0, 0.2]))
        ideal = cp.gate_error(cp.propagate_ideal(system, schedule).final, target)
        assert surface.errors[0, 0] == ideal

    def test_surface_shape_and_minimum(self):
        system = two_qubit_cnot_system()
        target = cp.named_gate("cnot", phase=np.pi / 4)
        schedule = random_schedule(4, 20, seed=3)
        taus = np.linspace(0.0, 0.4, 5)
        surface = cp.latency_sweep(system, schedule, target, taus, taus)
        assert surface.errors.shape == (5, 5)
        assert np.all(surface.errors >= 0.0)
        i, j = np.unravel_index(np.argmin(surface.errors), surface.errors.shape)
        assert surface.min_value == surface.errors[i, j]
        assert surface.min_location == (taus[i], taus[j])

    def test_grid_bounds_enforced(self):
        system = two_qubit_cnot_system()
        target = cp.named_gate("cnot", phase=np.pi / 4)
        schedule = random_schedule(4, 8, seed=3)
        with pytest.raises(ValueError, match="sample_period"):
            cp.latency_sweep(system, schedule, target, np.array([0.0, 1.0]), np.array([0.0]))
        with pytest.raises(ValueError, match="increasing"):
            cp.latency_sweep(system, schedule, target, np.array([0.2, 0.1]), np.array([0.0]))

    def test_needs_two_channels(self):
        system = small_system()
        schedule = random_schedule(2, 8, seed=3)
        with pytest.raises(ValueError, match="two-channel"):
            cp.latency_sweep(system, schedule, 1j * SX, np.array([0.0]), np.array([0.0]))

    def test_quadrature_consistency_with_sampled_mean(self):
        # latency-only sampling must converge to the sweep surface averaged
        # against the uniform latency density
        system = two_qubit_cnot_system()
        target = cp.named_gate("cnot", phase=np.pi / 4)
        schedule = random_schedule(4, 20, seed=6, scale=0.2)
        model = cp.ClockNoiseModel(
            [[0.0, 0.4], [0.0, 0.4]], 0.0, (0, 0, 1, 1), 20, 1.0, seed=3)
        mc = cp.test_average_error(system, schedule, target, model, samples=10_000)
        # midpoint quadrature over the support
        centers = np.linspace(0.02, 0.38, 10)
        surface = cp.latency_sweep(system, schedule, target, centers, centers)
        quad = surface.errors.mean()
        assert abs(quad - mc.mean) / mc.mean < 0.1


class TestSmoothness:
    def test_constant_schedule_is_flat(self):
        schedule = cp.ControlSchedule(np.full((3, 9), 0.7), 1.0)
        assert np.all(cp.smoothness_metric(schedule) == 0.0)

    def test_alternating_closed_form(self):
        amp = 0.35
        slices = 12
        alternating = amp * (-1.0) ** np.arange(slices)
        schedule = cp.ControlSchedule([alternating, alternating], 1.0)
        expect = (slices - 1) * 4 * amp**2
        values = cp.smoothness_metric(schedule)
        assert np.allclose(values, expect)

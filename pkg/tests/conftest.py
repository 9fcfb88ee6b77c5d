import numpy as np
import pytest

import clockpulse as cp

TWO_PI = 2 * np.pi


def two_qubit_cnot_system() -> cp.QuantumSystem:
    """The bundled study's system: ZZ coupling plus x/y drives on each qubit."""
    drift = TWO_PI * 0.01 * cp.build_operator("Z@Z")
    controls = [
        cp.build_operator("(SP+SM)@I"),
        cp.build_operator("i*(SP-SM)@I"),
        cp.build_operator("I@(SP+SM)"),
        cp.build_operator("i*(I@SP-I@SM)"),
    ]
    return cp.QuantumSystem(drift=drift, controls=controls, channel_of=[0, 0, 1, 1])


def study_noise_model(slices=50, shift_turn_on=False, seed=11) -> cp.ClockNoiseModel:
    """Latency U(0, 0.4) ns on both channels, jitter U(-0.05, 0.05) ns."""
    return cp.ClockNoiseModel(
        latency_bounds=[[0.0, 0.4], [0.0, 0.4]],
        jitter_width=0.05,
        channel_of=(0, 0, 1, 1),
        slices=slices,
        sample_period=1.0,
        shift_turn_on=shift_turn_on,
        seed=seed,
    )


def random_schedule(m, slices, scale=0.3, seed=0, sample_period=1.0) -> cp.ControlSchedule:
    rng = np.random.default_rng(seed)
    return cp.ControlSchedule(
        amplitudes=rng.uniform(-scale, scale, size=(m, slices)),
        sample_period=sample_period,
    )


@pytest.fixture(scope="session")
def cnot_system():
    return two_qubit_cnot_system()


@pytest.fixture(scope="session")
def cnot_target():
    return cp.named_gate("cnot", phase=np.pi / 4)

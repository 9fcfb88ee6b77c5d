"""clockpulse: piecewise-constant control pulses robust to clock noise.

Synthesizes multi-channel quantum-gate pulses that tolerate channel latency
and clock jitter, estimates the noise-averaged gate error perturbatively,
and evaluates controls by Monte-Carlo sampling of timing realizations.
"""

import os as _os

# CLOCKPULSE_THREADS caps the BLAS pools; must act before numpy loads.
# Results do not depend on it, only speed does.
if "CLOCKPULSE_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["CLOCKPULSE_THREADS"])

from .clocknoise import (
    ClockNoiseModel,
    MergedTimingGrid,
    NoiseSample,
    SecondMomentModel,
    build_merged_grid,
    latency_only_sample,
    sample_noise,
    second_moments,
    zero_noise_grid,
)
from .dynamics import (
    ControlSchedule,
    QuantumSystem,
    UnitaryTrajectory,
    gate_error,
    gate_error_many,
    hermitian_propagator,
    propagate_ideal,
    propagate_noisy,
    propagate_noisy_many,
)
from .montecarlo import (
    ErrorHistogram,
    SweepSurface,
    TestReport,
    error_histogram,
    latency_sweep,
    log_error_skewness,
    smoothness_metric,
    test_average_error,
)
from .operators import OperatorExprError, build_operator, named_gate
from .optimize import (
    OptimizationTrace,
    OptimizerOptions,
    batch_error_gradient,
    batch_gate_error,
    bgrape_optimize,
    composite_minimize,
    composite_objective,
    gate_error_gradient,
    grape_minimize,
    homotopic_refine,
    projected_direction,
)
from .robustness import (
    InteractionSet,
    RobustnessReport,
    estimate_noise_error,
    interaction_set,
    noise_error_gradient,
    noise_error_report,
)

__version__ = "0.1.0"

"""Experiment orchestration: dispatch a config to the algorithms and write
every dataset needed to regenerate the study's figures.

One experiment = one config = one output directory. Artifacts are plain CSV
and JSON with deterministic formatting, and a manifest listing a content
hash for every file, so reruns with the same config and seeds reproduce
identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .clocknoise import second_moments
from .config import (
    ConfigError,
    ExperimentConfig,
    RunConfig,
    build_initial_schedule,
    build_noise_model,
    build_system,
    build_target,
    effective_run,
    serialize_config,
)
from .dynamics import ControlSchedule, gate_error, propagate_ideal
from .montecarlo import (
    TestReport,
    error_histogram,
    latency_sweep,
    log_error_skewness,
    smoothness_metric,
    test_average_error,
)
from .optimize import (
    OptimizationTrace,
    OptimizerOptions,
    bgrape_optimize,
    composite_minimize,
    grape_minimize,
    homotopic_refine,
)
from .robustness import noise_error_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4


@dataclass
class RunResult:
    """Outcome of one experiment run."""

    exit_code: int
    status: str
    message: str = ""
    out_dir: Path | None = None
    files: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    schedule: ControlSchedule | None = None
    trace: OptimizationTrace | None = None


def study_config_path() -> Path:
    """Path of the shipped two-qubit CNOT replication config."""
    return Path(resources.files("clockpulse") / "configs" / "cnot_study.cfg")


def optimizer_options(run: RunConfig) -> OptimizerOptions:
    return OptimizerOptions(
        max_iters=run.max_iters,
        learning_rate=run.learning_rate,
        shrink=run.shrink,
        max_backtracks=run.max_backtracks,
        grow=run.grow,
        j0_target=run.j0_target,
        j0_ceiling=run.j0_ceiling,
        j0_excursion_cap=run.j0_excursion_cap,
        beta=run.beta,
        batch_size=run.batch_size,
        lr_decay=run.lr_decay,
        lr_warmup=run.lr_warmup,
        lr_decay_scale=run.lr_decay_scale,
        sample_pool=run.sample_pool,
        stall_window=run.stall_window,
        stall_rel_tol=run.stall_rel_tol,
        test_every=run.test_every,
        seed=run.seed,
    )


# ---------------------------------------------------------------------------
# deterministic artifact writers


def _fmt(x: float) -> str:
    return repr(float(x))


def write_schedule_csv(path: Path, schedule: ControlSchedule) -> None:
    lines = ["control,slice,amplitude"]
    for k in range(schedule.n_controls):
        for j in range(schedule.slices):
            lines.append(f"{k},{j},{_fmt(schedule.amplitudes[k, j])}")
    path.write_text("\n".join(lines) + "\n")


def write_trace_csv(path: Path, trace: OptimizationTrace) -> None:
    # wall time stays in memory only: artifact bytes must be seed-reproducible
    lines = ["iteration,gate_error,objective,tested_error,step"]
    for r in trace.rows:
        tested = "" if np.isnan(r.tested_error) else _fmt(r.tested_error)
        lines.append(
            f"{r.iteration},{_fmt(r.gate_error)},{_fmt(r.objective)},{tested},{_fmt(r.step)}"
        )
    path.write_text("\n".join(lines) + "\n")


def write_histogram_csv(path: Path, report: TestReport, bins: int) -> None:
    hist = error_histogram(report, bins) if report.errors is not None else report.histogram
    lines = ["bin_low,bin_high,count"]
    for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
        lines.append(f"{_fmt(lo)},{_fmt(hi)},{int(c)}")
    path.write_text("\n".join(lines) + "\n")


def write_sweep_csv(path: Path, surface) -> None:
    lines = ["tau1,tau2,error"]
    for i, t1 in enumerate(surface.tau1):
        for j, t2 in enumerate(surface.tau2):
            lines.append(f"{_fmt(t1)},{_fmt(t2)},{_fmt(surface.errors[i, j])}")
    path.write_text("\n".join(lines) + "\n")


def write_smoothness_csv(path: Path, values: np.ndarray) -> None:
    lines = ["control,value"]
    for k, v in enumerate(values):
        lines.append(f"{k},{_fmt(v)}")
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Workspace:
    """Tracks files written into one output directory for the manifest."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def hashes(self) -> dict:
        return {
            str(p.relative_to(self.out_dir)): _sha256(p)
            for p in sorted(set(self.files))
        }


def _write_manifest(ws: _Workspace, cfg: ExperimentConfig, run: RunConfig,
                    status: str, message: str, extra: dict | None = None) -> dict:
    config_text = serialize_config(cfg)
    manifest = {
        "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
        "status": status,
        "message": message,
        "algorithm": run.algorithm,
        "seeds": {
            "initial_guess": cfg.schedule.initial.seed,
            "noise": cfg.noise.seed,
            "optimizer": run.seed,
            "test": run.test_seed,
        },
        "versions": {
            "clockpulse": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "files": ws.hashes(),
    }
    if extra:
        manifest.update(extra)
    write_json(ws.out_dir / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# experiment dispatch


def run_experiment(cfg: ExperimentConfig, out_dir, seed: int | None = None,
                   algorithm: str | None = None) -> RunResult:
    """Execute one experiment and write its artifact files.

    ``seed`` (when given) replaces both the initial-guess seed and the
    optimizer seed; the effective values land in the manifest. ``algorithm``
    overrides the config's ``run.algorithm``.
    """
    if seed is not None:
        cfg = replace(cfg, schedule=replace(
            cfg.schedule, initial=replace(cfg.schedule.initial, seed=int(seed))))
    run = effective_run(cfg, algorithm)
    if seed is not None:
        run = replace(run, seed=int(seed))
    try:
        ws = _Workspace(Path(out_dir))
        ws.path("config_echo.cfg").write_text(serialize_config(cfg))
        result = _dispatch(cfg, run, ws)
    except OSError as exc:
        return RunResult(exit_code=EXIT_IO, status="io_error", message=str(exc))
    manifest = _write_manifest(ws, cfg, run, result.status, result.message,
                               extra={"summary": result.summary})
    result.files = manifest["files"]
    result.out_dir = ws.out_dir
    return result


def _dispatch(cfg: ExperimentConfig, run: RunConfig, ws: _Workspace) -> RunResult:
    system = build_system(cfg)
    target = build_target(cfg)
    model = build_noise_model(cfg)
    moments = second_moments(model, system)
    schedule0 = build_initial_schedule(cfg)
    opts = optimizer_options(run)
    phase_mode = cfg.target.phase_mode

    def tester(sched, samples):
        return test_average_error(
            system, sched, target, model, samples=samples, seed=run.test_seed,
            phase_mode=phase_mode, keep_errors=True, bins=run.histogram_bins)

    milestone = (lambda s: tester(s, run.milestone_samples).mean) if run.test_every else None

    if run.algorithm == "estimate":
        report = noise_error_report(system, schedule0, moments, run.include_turn_on)
        write_json(ws.path("robustness.json"), report.to_dict())
        write_schedule_csv(ws.path("schedule.csv"), schedule0)
        return RunResult(EXIT_OK, "ok", summary={"jn_total": report.jn_total})

    if run.algorithm == "test":
        report = tester(schedule0, run.test_samples)
        write_json(ws.path("test_report.json"), report.to_dict())
        write_histogram_csv(ws.path("histogram.csv"), report, run.histogram_bins)
        if run.keep_errors:
            ws.path("errors.csv").write_text(
                "error\n" + "\n".join(_fmt(e) for e in report.errors) + "\n")
        write_schedule_csv(ws.path("schedule.csv"), schedule0)
        return RunResult(EXIT_OK, "ok", summary=report.to_dict())

    if run.algorithm == "sweep":
        taus = np.linspace(0.0, run.sweep_max, run.sweep_points)
        surface = latency_sweep(
            system, schedule0, target, taus, taus, phase_mode=phase_mode,
            shift_turn_on=cfg.noise.shift_turn_on, pre_turn_on=cfg.noise.pre_turn_on)
        write_sweep_csv(ws.path("sweep.csv"), surface)
        summary = {
            "min_location": list(surface.min_location),
            "min_value": surface.min_value,
            "fraction_below_1e3": surface.fraction_below(1e-3),
        }
        write_json(ws.path("report.json"), summary)
        write_schedule_csv(ws.path("schedule.csv"), schedule0)
        return RunResult(EXIT_OK, "ok", summary=summary)

    # optimization algorithms from here on
    schedule = schedule0
    stage_trace = None
    warm = run.algorithm in ("grape", "homotopic") or (
        run.algorithm == "bgrape" and run.warm_start)
    if warm:
        grape_opts = optimizer_options(effective_run(cfg, "grape"))
        schedule, stage_trace = grape_minimize(
            system, schedule0, target, grape_opts, phase_mode)
        if run.algorithm != "grape":
            write_schedule_csv(ws.path("grape_schedule.csv"), schedule)
            write_trace_csv(ws.path("grape_trace.csv"), stage_trace)

    if run.algorithm == "grape":
        trace = stage_trace
    elif run.algorithm == "homotopic":
        if stage_trace.converged:
            schedule, trace = homotopic_refine(
                system, schedule, target, moments, opts, phase_mode,
                run.include_turn_on, tester=milestone)
        else:
            trace = stage_trace
    elif run.algorithm == "bgrape":
        schedule, trace = bgrape_optimize(
            system, schedule, target, model, opts, phase_mode, tester=milestone)
    elif run.algorithm == "composite":
        schedule, trace = composite_minimize(
            system, schedule0, target, moments, opts, phase_mode, run.include_turn_on)
    else:
        raise ConfigError(f"unhandled algorithm {run.algorithm!r}", "run.algorithm")

    write_schedule_csv(ws.path("schedule.csv"), schedule)
    write_trace_csv(ws.path("trace.csv"), trace)
    j0 = gate_error(propagate_ideal(system, schedule).final, target, phase_mode)
    report = noise_error_report(system, schedule, moments, run.include_turn_on)
    write_json(ws.path("robustness.json"), report.to_dict())
    test = tester(schedule, run.test_samples)
    write_json(ws.path("test_report.json"), test.to_dict())
    write_histogram_csv(ws.path("histogram.csv"), test, run.histogram_bins)
    write_smoothness_csv(ws.path("smoothness.csv"), smoothness_metric(schedule))
    summary = {
        "algorithm": run.algorithm,
        "converged": trace.converged,
        "iterations": trace.iterations,
        "gate_error": j0,
        "jn_total": report.jn_total,
        "tested_mean": test.mean,
        "tested_std": test.std,
        "smoothness_total": float(np.sum(smoothness_metric(schedule))),
    }
    write_json(ws.path("report.json"), summary)
    if not trace.converged and run.algorithm in ("grape", "homotopic"):
        return RunResult(EXIT_NOT_CONVERGED, "not_converged", trace.message,
                         summary=summary, schedule=schedule, trace=trace)
    return RunResult(EXIT_OK, "ok", trace.message, summary=summary,
                     schedule=schedule, trace=trace)


# ---------------------------------------------------------------------------
# full replication bundle


def _plateau_iteration(trace: OptimizationTrace) -> int:
    """First iteration whose running-best objective is within 10% of the final best."""
    obj = trace.column("objective")
    if obj.size == 0:
        return 0
    env = np.minimum.accumulate(obj)
    final = env[-1]
    hits = np.nonzero(env <= 1.1 * final)[0]
    return int(hits[0]) if hits.size else int(obj.size - 1)


def replicate_study(out_dir, cfg: ExperimentConfig | None = None,
                    seed: int | None = None) -> RunResult:
    """Run the full two-qubit CNOT study and emit all figure datasets.

    Covers both noise settings (latency+jitter and latency-only) and all
    three algorithms, reusing one gate-error stage per initial guess. The
    bundle summary compares final errors, convergence speed, and waveform
    smoothness across algorithms and settings.
    """
    from .config import load_config  # local import to keep module load light

    if cfg is None:
        cfg = load_config(study_config_path())
    if seed is not None:
        cfg = replace(cfg, schedule=replace(
            cfg.schedule, initial=replace(cfg.schedule.initial, seed=int(seed))))
    ws = _Workspace(Path(out_dir))
    ws.path("config_echo.cfg").write_text(serialize_config(cfg))

    system = build_system(cfg)
    target = build_target(cfg)
    phase_mode = cfg.target.phase_mode
    schedule0 = build_initial_schedule(cfg)

    grape_opts = optimizer_options(effective_run(cfg, "grape"))
    grape_sched, grape_trace = grape_minimize(system, schedule0, target, grape_opts, phase_mode)
    if not grape_trace.converged:
        return RunResult(EXIT_NOT_CONVERGED, "not_converged",
                         "gate-error stage failed: " + grape_trace.message, out_dir=ws.out_dir)

    settings = {
        "latency_jitter": cfg,
        "latency_only": replace(cfg, noise=replace(cfg.noise, jitter_width=0.0)),
    }
    summary: dict = {"bgrape_initialization": "warm_start", "settings": {}}
    sweep_grid = np.linspace(0.0, cfg.run.sweep_max, cfg.run.sweep_points)

    for name, scfg in settings.items():
        model = build_noise_model(scfg)
        moments = second_moments(model, system)
        run = scfg.run

        def tester(sched, samples):
            return test_average_error(
                system, sched, target, model, samples=samples, seed=run.test_seed,
                phase_mode=phase_mode, keep_errors=True, bins=run.histogram_bins)

        milestone = (lambda s: tester(s, run.milestone_samples).mean) if run.test_every else None

        homo_opts = optimizer_options(effective_run(scfg, "homotopic"))
        homo_sched, homo_trace = homotopic_refine(
            system, grape_sched, target, moments, homo_opts, phase_mode,
            run.include_turn_on, tester=milestone)
        bg_opts = optimizer_options(effective_run(scfg, "bgrape"))
        bg_sched, bg_trace = bgrape_optimize(
            system, grape_sched, target, model, bg_opts, phase_mode, tester=milestone)

        controls = {
            "grape": (grape_sched, grape_trace),
            "homotopic": (homo_sched, homo_trace),
            "bgrape": (bg_sched, bg_trace),
        }
        setting_summary = {}
        for alg, (sched, trace) in controls.items():
            base = f"{name}/{alg}"
            write_schedule_csv(ws.path(f"{base}/schedule.csv"), sched)
            write_trace_csv(ws.path(f"{base}/trace.csv"), trace)
            test = tester(sched, run.test_samples)
            write_json(ws.path(f"{base}/test_report.json"), test.to_dict())
            write_histogram_csv(ws.path(f"{base}/histogram.csv"), test, run.histogram_bins)
            smooth = smoothness_metric(sched)
            write_smoothness_csv(ws.path(f"{base}/smoothness.csv"), smooth)
            report = noise_error_report(system, sched, moments, run.include_turn_on)
            write_json(ws.path(f"{base}/robustness.json"), report.to_dict())
            if name == "latency_jitter":
                surface = latency_sweep(
                    system, sched, target, sweep_grid, sweep_grid, phase_mode=phase_mode,
                    shift_turn_on=scfg.noise.shift_turn_on, pre_turn_on=scfg.noise.pre_turn_on)
                write_sweep_csv(ws.path(f"{base}/sweep.csv"), surface)
                sweep_info = {
                    "min_location": list(surface.min_location),
                    "fraction_below_1e3": surface.fraction_below(1e-3),
                }
            else:
                sweep_info = None
            setting_summary[alg] = {
                "gate_error": gate_error(
                    propagate_ideal(system, sched).final, target, phase_mode),
                "jn_total": report.jn_total,
                "tested_mean": test.mean,
                "tested_std": test.std,
                "log_error_skewness": log_error_skewness(test),
                "smoothness_total": float(np.sum(smooth)),
                "iterations": trace.iterations,
                "plateau_iteration": _plateau_iteration(trace),
                "sweep": sweep_info,
            }
        summary["settings"][name] = setting_summary

    write_json(ws.path("summary.json"), summary)
    manifest = _write_manifest(ws, cfg, cfg.run, "ok", "replication bundle complete",
                               extra={"summary": summary})
    return RunResult(EXIT_OK, "ok", "replication bundle complete", out_dir=ws.out_dir,
                     files=manifest["files"], summary=summary)

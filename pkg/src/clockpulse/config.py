"""Declarative experiment configuration.

A config file is a YAML document with ``system``, ``target``, ``schedule``,
``noise`` and ``run`` sections. Loading fills every default explicitly, so
a loaded config serializes back to a complete, stable file (round-trip
identical), which is what the run manifests embed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .clocknoise import JITTER_SHARING_MODES, ClockNoiseModel
from .dynamics import ControlSchedule, QuantumSystem
from .operators import NAMED_GATES, OperatorExprError, build_operator, named_gate

ALGORITHMS = ("grape", "homotopic", "bgrape", "composite", "estimate", "test", "sweep")
INITIAL_KINDS = ("random_uniform", "constant", "file")


class ConfigError(ValueError):
    """Config parse or validation failure, tagged with the offending field."""

    def __init__(self, message: str, where: str = ""):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


def _take(section: dict, key: str, where: str, default=None, required: bool = False):
    if key not in section:
        if required:
            raise ConfigError("missing required field", f"{where}.{key}")
        return default
    return section.pop(key)


def _no_leftovers(section: dict, where: str) -> None:
    if section:
        raise ConfigError(f"unknown field(s) {sorted(section)}", where)


@dataclass(frozen=True)
class ControlSpec:
    expr: str
    channel: int


@dataclass(frozen=True)
class SystemConfig:
    drift: str
    controls: tuple
    hermitize: bool = False


@dataclass(frozen=True)
class TargetConfig:
    gate: str | None = "cnot"
    matrix: tuple | None = None
    phase: float = math.pi / 4
    phase_mode: str = "plain"


@dataclass(frozen=True)
class InitialGuess:
    kind: str = "random_uniform"
    scale: float = 2 * math.pi * 0.02
    value: float = 0.0
    seed: int = 1
    path: str | None = None


@dataclass(frozen=True)
class ScheduleConfig:
    sample_period: float = 1.0
    slices: int = 50
    amplitude_bound: float | None = None
    initial: InitialGuess = field(default_factory=InitialGuess)


@dataclass(frozen=True)
class NoiseConfig:
    channel_latency: tuple = ()
    jitter_width: float = 0.0
    jitter_sharing: str = "per_channel"
    shift_turn_on: bool = True
    pre_turn_on: str = "zero"
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "grape"
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
    milestone_samples: int = 2000
    warm_start: bool = True
    include_turn_on: bool = False
    seed: int = 0
    test_samples: int = 10_000
    test_seed: int = 99
    sweep_points: int = 41
    sweep_max: float = 0.4
    histogram_bins: int = 25
    keep_errors: bool = False
    overrides: tuple = ()


_RUN_FIELDS = [
    ("algorithm", str), ("max_iters", int), ("learning_rate", float),
    ("shrink", float), ("max_backtracks", int), ("grow", float),
    ("j0_target", float), ("j0_ceiling", float),
    ("j0_excursion_cap", float), ("beta", float),
    ("batch_size", int), ("lr_decay", str), ("lr_warmup", int),
    ("lr_decay_scale", int), ("sample_pool", int),
    ("stall_window", int), ("stall_rel_tol", float), ("test_every", int),
    ("milestone_samples", int), ("warm_start", bool), ("include_turn_on", bool),
    ("seed", int), ("test_samples", int), ("test_seed", int),
    ("sweep_points", int), ("sweep_max", float), ("histogram_bins", int),
    ("keep_errors", bool),
]


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig
    target: TargetConfig
    schedule: ScheduleConfig
    noise: NoiseConfig
    run: RunConfig

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system"]["controls"] = [dict(c) if isinstance(c, dict) else asdict(c)
                                   for c in self.system.controls]
        d["run"]["overrides"] = {alg: dict(fields) for alg, fields in self.run.overrides}
        d["noise"]["channel_latency"] = [list(p) for p in self.noise.channel_latency]
        if self.target.matrix is not None:
            d["target"]["matrix"] = [list(r) for r in self.target.matrix]
        return d


def _parse_system(section, where="system") -> SystemConfig:
    if not isinstance(section, dict):
        raise ConfigError("must be a mapping", where)
    section = dict(section)
    drift = _take(section, "drift", where, required=True)
    hermitize = bool(_take(section, "hermitize", where, default=False))
    raw_controls = _take(section, "controls", where, required=True)
    if not isinstance(raw_controls, list) or not raw_controls:
        raise ConfigError("must be a nonempty list", f"{where}.controls")
    controls = []
    for idx, item in enumerate(raw_controls):
        cw = f"{where}.controls[{idx}]"
        if not isinstance(item, dict):
            raise ConfigError("each control needs 'expr' and 'channel'", cw)
        item = dict(item)
        expr = _take(item, "expr", cw, required=True)
        channel = _take(item, "channel", cw, required=True)
        _no_leftovers(item, cw)
        controls.append(ControlSpec(expr=str(expr), channel=int(channel)))
    _no_leftovers(section, where)
    return SystemConfig(drift=str(drift), controls=tuple(controls), hermitize=hermitize)


def _parse_target(section, where="target") -> TargetConfig:
    section = dict(section or {})
    gate = _take(section, "gate", where)
    matrix = _take(section, "matrix", where)
    phase = float(_take(section, "phase", where, default=math.pi / 4))
    phase_mode = str(_take(section, "phase_mode", where, default="plain"))
    _no_leftovers(section, where)
    if gate is None and matrix is None:
        gate = "cnot"
    if gate is not None and matrix is not None:
        raise ConfigError("give either 'gate' or 'matrix', not both", where)
    if gate is not None and str(gate).lower() not in NAMED_GATES:
        raise ConfigError(f"unknown gate {gate!r}; known: {sorted(NAMED_GATES)}", f"{where}.gate")
    if phase_mode not in ("plain", "phase_invariant"):
        raise ConfigError("must be 'plain' or 'phase_invariant'", f"{where}.phase_mode")
    if matrix is not None:
        matrix = tuple(tuple(str(x) for x in row) for row in matrix)
    return TargetConfig(
        gate=str(gate).lower() if gate is not None else None,
        matrix=matrix, phase=phase, phase_mode=phase_mode,
    )


def _parse_schedule(section, where="schedule") -> ScheduleConfig:
    section = dict(section or {})
    sample_period = float(_take(section, "sample_period", where, default=1.0))
    slices = int(_take(section, "slices", where, default=50))
    bound = _take(section, "amplitude_bound", where)
    raw_init = dict(_take(section, "initial", where, default={}) or {})
    _no_leftovers(section, where)
    iw = f"{where}.initial"
    kind = str(_take(raw_init, "kind", iw, default="random_uniform"))
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"must be one of {INITIAL_KINDS}", f"{iw}.kind")
    init = InitialGuess(
        kind=kind,
        scale=float(_take(raw_init, "scale", iw, default=2 * math.pi * 0.02)),
        value=float(_take(raw_init, "value", iw, default=0.0)),
        seed=int(_take(raw_init, "seed", iw, default=1)),
        path=_take(raw_init, "path", iw),
    )
    _no_leftovers(raw_init, iw)
    if kind == "file" and not init.path:
        raise ConfigError("initial kind 'file' needs a 'path'", f"{iw}.path")
    if sample_period <= 0:
        raise ConfigError("must be positive", f"{where}.sample_period")
    if slices < 1:
        raise ConfigError("must be >= 1", f"{where}.slices")
    return ScheduleConfig(
        sample_period=sample_period, slices=slices,
        amplitude_bound=None if bound is None else float(bound), initial=init,
    )


def _parse_noise(section, where="noise") -> NoiseConfig:
    section = dict(section or {})
    latency = _take(section, "channel_latency", where, default=[])
    jitter_width = float(_take(section, "jitter_width", where, default=0.0))
    sharing = str(_take(section, "jitter_sharing", where, default="per_channel"))
    shift_turn_on = bool(_take(section, "shift_turn_on", where, default=True))
    pre_turn_on = str(_take(section, "pre_turn_on", where, default="zero"))
    seed = int(_take(section, "seed", where, default=0))
    _no_leftovers(section, where)
    if sharing not in JITTER_SHARING_MODES:
        raise ConfigError(f"must be one of {JITTER_SHARING_MODES}", f"{where}.jitter_sharing")
    if pre_turn_on not in ("zero", "hold"):
        raise ConfigError("must be 'zero' or 'hold'", f"{where}.pre_turn_on")
    lat = []
    for idx, pair in enumerate(latency):
        try:
            a, b = (float(pair[0]), float(pair[1]))
        except (TypeError, ValueError, IndexError) as exc:
            raise ConfigError("each entry must be a [low, high] pair",
                              f"{where}.channel_latency[{idx}]") from exc
        lat.append((a, b))
    return NoiseConfig(
        channel_latency=tuple(lat), jitter_width=jitter_width, jitter_sharing=sharing,
        shift_turn_on=shift_turn_on, pre_turn_on=pre_turn_on, seed=seed,
    )


def _parse_run(section, where="run") -> RunConfig:
    section = dict(section or {})
    defaults = RunConfig()
    values = {}
    for name, caster in _RUN_FIELDS:
        raw = _take(section, name, where, default=getattr(defaults, name))
        values[name] = caster(raw)
    raw_over = _take(section, "overrides", where, default={}) or {}
    _no_leftovers(section, where)
    if not isinstance(raw_over, dict):
        raise ConfigError("must map algorithm names to run-field overrides", f"{where}.overrides")
    overrides = []
    known = {f for f, _ in _RUN_FIELDS}
    for alg, fields in sorted(raw_over.items()):
        if alg not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {alg!r}", f"{where}.overrides")
        if not isinstance(fields, dict):
            raise ConfigError("override value must be a mapping", f"{where}.overrides.{alg}")
        for fname in fields:
            if fname not in known:
                raise ConfigError(f"unknown run field {fname!r}", f"{where}.overrides.{alg}")
        overrides.append((alg, tuple(sorted((k, v) for k, v in fields.items()))))
    values["overrides"] = tuple(overrides)
    if values["algorithm"] not in ALGORITHMS:
        raise ConfigError(f"must be one of {ALGORITHMS}", f"{where}.algorithm")
    if values["lr_decay"] not in ("constant", "invsqrt"):
        raise ConfigError("must be 'constant' or 'invsqrt'", f"{where}.lr_decay")
    if not values["j0_target"] < values["j0_ceiling"]:
        raise ConfigError("j0_target must be below j0_ceiling", where)
    return RunConfig(**values)


def parse_config(data: dict) -> ExperimentConfig:
    """Validate a raw mapping into a fully defaulted ExperimentConfig."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    data = dict(data)
    cfg = ExperimentConfig(
        system=_parse_system(_take(data, "system", "config", required=True)),
        target=_parse_target(_take(data, "target", "config", default={})),
        schedule=_parse_schedule(_take(data, "schedule", "config", default={})),
        noise=_parse_noise(_take(data, "noise", "config", default={})),
        run=_parse_run(_take(data, "run", "config", default={})),
    )
    _no_leftovers(data, "config")
    _cross_validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    """Load and validate a config file; error messages carry line/field info."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ConfigError(f"cannot parse {path}{loc}: {exc}") from exc
    try:
        return parse_config(data)
    except ConfigError as exc:
        raise ConfigError(f"in {path}: {exc}") from exc


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical YAML text with every default written out."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=None)


def _cross_validate(cfg: ExperimentConfig) -> None:
    system = build_system(cfg)
    target = build_target(cfg)
    if target.shape != (system.dim, system.dim):
        raise ConfigError(
            f"target is {target.shape[0]}x{target.shape[1]} but the system dimension "
            f"is {system.dim}", "target")
    dev = float(np.abs(target @ target.conj().T - np.eye(system.dim)).max())
    if dev > 1e-10:
        raise ConfigError(f"target is not unitary (deviation {dev:.3e})", "target")
    if cfg.noise.channel_latency:
        if len(cfg.noise.channel_latency) != system.n_channels:
            raise ConfigError(
                f"{len(cfg.noise.channel_latency)} latency entries for "
                f"{system.n_channels} system channels", "noise.channel_latency")
        try:
            build_noise_model(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc), "noise") from exc


def build_system(cfg: ExperimentConfig) -> QuantumSystem:
    try:
        drift = build_operator(cfg.system.drift, cfg.system.hermitize)
        controls = [build_operator(c.expr, cfg.system.hermitize) for c in cfg.system.controls]
    except OperatorExprError as exc:
        raise ConfigError(str(exc), "system") from exc
    try:
        return QuantumSystem(
            drift=drift, controls=controls,
            channel_of=[c.channel for c in cfg.system.controls],
        )
    except ValueError as exc:
        raise ConfigError(str(exc), "system") from exc


def build_target(cfg: ExperimentConfig) -> np.ndarray:
    t = cfg.target
    if t.gate is not None:
        return named_gate(t.gate, t.phase)
    try:
        rows = [[complex(x) for x in row] for row in t.matrix]
    except ValueError as exc:
        raise ConfigError(f"matrix entries must parse as complex numbers: {exc}",
                          "target.matrix") from exc
    return np.exp(1j * t.phase) * np.array(rows, dtype=complex)


def build_initial_schedule(cfg: ExperimentConfig, seed: int | None = None) -> ControlSchedule:
    """Initial amplitude guess per the schedule section.

    ``seed`` overrides the configured initial-guess seed (used by multi-seed
    studies; the effective value is recorded in the run manifest).
    """
    sc = cfg.schedule
    m = len(cfg.system.controls)
    init = sc.initial
    if init.kind == "random_uniform":
        rng = np.random.default_rng(init.seed if seed is None else int(seed))
        amp = rng.uniform(-init.scale, init.scale, size=(m, sc.slices))
    elif init.kind == "constant":
        amp = np.full((m, sc.slices), init.value)
    else:
        amp = load_schedule_csv(init.path, m, sc.slices)
    return ControlSchedule(amplitudes=amp, sample_period=sc.sample_period,
                           u_max=sc.amplitude_bound)


def build_noise_model(cfg: ExperimentConfig) -> ClockNoiseModel:
    """Noise model for the configured system/schedule; zero noise if no section."""
    system = build_system(cfg)
    if cfg.noise.channel_latency:
        bounds = list(cfg.noise.channel_latency)
    else:
        bounds = [(0.0, 0.0)] * system.n_channels
    return ClockNoiseModel(
        latency_bounds=np.array(bounds, dtype=float),
        jitter_width=cfg.noise.jitter_width,
        channel_of=system.channel_of,
        slices=cfg.schedule.slices,
        sample_period=cfg.schedule.sample_period,
        jitter_sharing=cfg.noise.jitter_sharing,
        shift_turn_on=cfg.noise.shift_turn_on,
        pre_turn_on=cfg.noise.pre_turn_on,
        seed=cfg.noise.seed,
    )


def load_schedule_csv(path, n_controls: int, slices: int) -> np.ndarray:
    """Read a control,slice,amplitude CSV into an (m, M) array."""
    amp = np.full((n_controls, slices), np.nan)
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "control,slice,amplitude":
            raise ConfigError(
                f"schedule file must start with 'control,slice,amplitude', got {header!r}",
                str(path))
        for line in fh:
            if not line.strip():
                continue
            k, j, value = line.strip().split(",")
            amp[int(k), int(j)] = float(value)
    if np.isnan(amp).any():
        raise ConfigError("schedule file does not cover every (control, slice)", str(path))
    return amp


def with_overrides(cfg: ExperimentConfig, **run_fields) -> ExperimentConfig:
    """Copy of the config with run-section fields replaced."""
    return replace(cfg, run=replace(cfg.run, **run_fields))


def effective_run(cfg: ExperimentConfig, algorithm: str | None = None) -> RunConfig:
    """Run options for ``algorithm`` with any per-algorithm overrides applied."""
    run = cfg.run
    alg = algorithm or run.algorithm
    fields = dict(dict(cfg.run.overrides).get(alg, ()))
    return replace(run, algorithm=alg, **fields)

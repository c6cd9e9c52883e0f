"""Run configuration: dataclass sections, JSON (.cfg) I/O, env overrides.

A config file is a single JSON object whose keys are section names; every
section and field is optional and unknown keys are rejected.  Environment
variables ``PFOPT_<SECTION>_<FIELD>`` (values parsed as JSON, else kept as
strings) override file values.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from types import SimpleNamespace

import numpy as np

CONFIG_DIR = Path(__file__).with_name("configs")


class ConfigError(ValueError):
    pass


@dataclass
class DomainConfig:
    width: float = 1.7
    height: float = 0.4


@dataclass
class ObstacleConfig:
    shape: str = "circle"                      # circle | file
    center: list = field(default_factory=lambda: [0.5, 0.2])
    radius: float = 0.05
    file: str = ""                             # legacy VTK with a 'phi' field


@dataclass
class MeshConfig:
    h0: float = 0.05
    h_min: float = 0.005
    adapt: bool = True
    adapt_every: int = 10
    dorfler: float = 0.5


@dataclass
class ModelConfig:
    eps: float = 2.5e-4
    alpha_bar: float = 0.03
    mu: float = 0.001
    gamma: float = 0.01
    s: float = 1.0e6
    theta: float = 0.99
    delta_eps: float = 0.0
    delta_floor: float = 1.0e-12
    modulation: str = "sqrt_psi"               # sqrt_psi | half
    fold_c0: bool = True


@dataclass
class FlowConfig:
    g: list = field(default_factory=lambda: [1.0, 0.0])
    f: list = field(default_factory=lambda: [0.0, 0.0])
    outflow: str = "dirichlet"                 # dirichlet | traction_free
    newton_tol: float = 1e-10
    newton_max_iter: int = 25


@dataclass
class FunctionalConfig:
    kind: str = "drag"                         # drag | ratio
    jphi_form: str = "auto"                    # auto | weak | explicit | rewritten
    porous: bool = True
    surface_sampling: str = "midpoint"         # midpoint | centroid


@dataclass
class ScheduleConfig:
    mu_start: float = 0.01
    gamma_start: float = 0.1
    stages: int = 3
    steps_per_stage: int = 100
    mu_stages: list = field(default_factory=list)      # explicit [[value, steps], ...]
    gamma_stages: list = field(default_factory=list)


@dataclass
class SteppingConfig:
    xi: float = 5.0
    tau_max: float = 1.0e-2
    max_steps: int = 300
    stagnation_tol: float = 1e-7
    ch_tol: float = 1e-10
    ch_max_iter: int = 100
    max_retries: int = 6


@dataclass
class ConstraintConfig:
    com_y: str = "auto"                        # auto (ratio only) | on | off


@dataclass
class OutputConfig:
    dir: str = "output"
    csv: str = "history.csv"
    summary: str = "summary.txt"
    vtk_every: int = 25
    vtk_prefix: str = "snapshot"


@dataclass
class CheckConfig:
    deltas: list = field(default_factory=lambda: [1e-3, 1e-4, 1e-5, 1e-6])
    amplitude: float = 0.8
    tolerance: float = 1e-3


@dataclass
class RunConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    obstacle: ObstacleConfig = field(default_factory=ObstacleConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    flow: FlowConfig = field(default_factory=FlowConfig)
    functional: FunctionalConfig = field(default_factory=FunctionalConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    stepping: SteppingConfig = field(default_factory=SteppingConfig)
    constraints: ConstraintConfig = field(default_factory=ConstraintConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    check: CheckConfig = field(default_factory=CheckConfig)
    seed: int = 0
    description: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "RunConfig":
        _validate(self)
        return self


_ENUMS = {
    ("obstacle", "shape"): ("circle", "file"),
    ("model", "modulation"): ("sqrt_psi", "half"),
    ("flow", "outflow"): ("dirichlet", "traction_free"),
    ("functional", "kind"): ("drag", "ratio"),
    ("functional", "jphi_form"): ("auto", "weak", "explicit", "rewritten"),
    ("functional", "surface_sampling"): ("midpoint", "centroid"),
    ("constraints", "com_y"): ("auto", "on", "off"),
}

_POSITIVE = {
    "domain": ("width", "height"),
    "obstacle": ("radius",),
    "mesh": ("h0", "h_min", "adapt_every"),
    "model": ("eps", "mu", "gamma", "s"),
    "flow": ("newton_tol", "newton_max_iter"),
    "schedule": ("mu_start", "gamma_start", "stages"),
    "stepping": ("xi", "tau_max", "stagnation_tol", "ch_tol", "ch_max_iter"),
    "check": ("amplitude", "tolerance"),
}


def _validate(cfg: RunConfig) -> None:
    for (sec, name), allowed in _ENUMS.items():
        val = getattr(getattr(cfg, sec), name)
        if val not in allowed:
            raise ConfigError(f"{sec}.{name}: {val!r} not in {allowed}")
    for sec, names in _POSITIVE.items():
        for name in names:
            val = getattr(getattr(cfg, sec), name)
            if not (isinstance(val, (int, float)) and not isinstance(val, bool) and val > 0):
                raise ConfigError(f"{sec}.{name} must be positive, got {val!r}")
    m = cfg.model
    if m.alpha_bar < 0 or m.delta_eps < 0 or m.delta_floor < 0:
        raise ConfigError("model.alpha_bar, delta_eps, delta_floor must be nonnegative")
    if not -1 < m.theta < 1 or m.s <= 1:
        raise ConfigError("model.theta must lie in (-1, 1) and model.s exceed 1")
    if not 0 < cfg.mesh.dorfler <= 1:
        raise ConfigError("mesh.dorfler must lie in (0, 1]")
    if cfg.stepping.max_steps < 0 or cfg.stepping.max_retries < 0:
        raise ConfigError("stepping.max_steps and max_retries must be nonnegative")
    if cfg.output.vtk_every < 0:
        raise ConfigError("output.vtk_every must be nonnegative")
    for sec, name in (("obstacle", "center"), ("flow", "g"), ("flow", "f")):
        v = getattr(getattr(cfg, sec), name)
        if len(v) != 2:
            raise ConfigError(f"{sec}.{name} must have two components")
    for name in ("mu_stages", "gamma_stages"):
        for st in getattr(cfg.schedule, name):
            if len(st) != 2 or st[0] <= 0 or st[1] < 0:
                raise ConfigError(f"schedule.{name} entries are [positive value, steps]")
    if cfg.obstacle.shape == "file" and not cfg.obstacle.file:
        raise ConfigError("obstacle.file required for shape 'file'")
    if not cfg.check.deltas or any(d <= 0 for d in cfg.check.deltas):
        raise ConfigError("check.deltas must be positive")


def _coerce(value, default, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{where}: expected integer")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected list")
        return value
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where or 'config'}")
    obj = cls()
    for name, val in data.items():
        default = getattr(obj, name)
        sub = f"{where}.{name}" if where else name
        if is_dataclass(default):
            setattr(obj, name, _build(type(default), val, sub))
        else:
            setattr(obj, name, _coerce(val, default, sub))
    return obj


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def apply_env_overrides(data: dict, environ=None) -> dict:
    env = os.environ if environ is None else environ
    defaults = RunConfig()
    for f in fields(RunConfig):
        sec = getattr(defaults, f.name)
        if is_dataclass(sec):
            for g in fields(sec):
                key = f"PFOPT_{f.name.upper()}_{g.name.upper()}"
                if key in env:
                    data.setdefault(f.name, {})[g.name] = _parse_env(env[key])
        else:
            key = f"PFOPT_{f.name.upper()}"
            if key in env:
                data[f.name] = _parse_env(env[key])
    return data


def _parse_env(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_path(path) -> Path:
    """Config path, falling back to the shipped configs directory."""
    p = Path(path)
    if p.exists():
        return p
    cand = CONFIG_DIR / p.name
    if cand.exists():
        return cand
    raise FileNotFoundError(f"config not found: {path}")


def load_config(path, environ=None) -> RunConfig:
    """Parse and validate a ``.cfg`` JSON document; empty file = defaults."""
    p = resolve_path(path)
    text = p.read_text()
    data = {}
    if text.strip():
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: parse error at line {exc.lineno}, "
                              f"column {exc.colno}: {exc.msg}") from exc
    data = apply_env_overrides(data, environ)
    return config_from_dict(data)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")


# --------------------------------------------------------------- components

def build_components(cfg: RunConfig):
    """Instantiate solver objects described by a config."""
    from .flow import InflowProfile, NewtonSettings
    from .functionals import Objective
    from .material import (InterpolationParams, Material, ModulationChoice,
                           PotentialParams)
    from .mesh import generate_rect_mesh
    from .optimizer import Schedule, circle_phi, interpolate_p1

    m = cfg.model
    material = Material(PotentialParams(m.s), InterpolationParams(m.alpha_bar, m.eps, m.theta),
                        ModulationChoice(m.modulation, m.delta_eps, m.delta_floor))
    sc = cfg.schedule
    mu_st = ([tuple(s) for s in sc.mu_stages] if sc.mu_stages
             else Schedule.geometric(sc.mu_start, m.mu, sc.stages, sc.steps_per_stage))
    ga_st = ([tuple(s) for s in sc.gamma_stages] if sc.gamma_stages
             else Schedule.geometric(sc.gamma_start, m.gamma, sc.stages, sc.steps_per_stage))
    schedule = Schedule(mu_st, ga_st)
    coarse = generate_rect_mesh(cfg.domain.width, cfg.domain.height, cfg.mesh.h0)
    fn = cfg.functional

    def objective(gamma):
        return Objective(fn.kind, gamma, m.fold_c0, porous=fn.porous)

    ob = cfg.obstacle
    if ob.shape == "circle":
        def initial_phi(mesh):
            return circle_phi(mesh, ob.center, ob.radius, m.eps)
    else:
        from .io import read_vtk
        src_mesh, data = read_vtk(ob.file)

        def initial_phi(mesh):
            return interpolate_p1(src_mesh, data["phi"], mesh)

    fx, fy = cfg.flow.f
    f = None if fx == 0 and fy == 0 else (lambda x, y: (np.full_like(x, fx), np.full_like(x, fy)))
    markers = None
    if cfg.flow.outflow == "traction_free":
        from .mesh import INFLOW, WALL
        markers = (INFLOW, WALL)
    g = InflowProfile(tuple(cfg.flow.g), markers)
    newton = NewtonSettings(cfg.flow.newton_tol, cfg.flow.newton_max_iter)
    com = cfg.constraints.com_y == "on" or (cfg.constraints.com_y == "auto" and fn.kind == "ratio")
    return SimpleNamespace(material=material, schedule=schedule, coarse_mesh=coarse,
                           objective=objective, initial_phi=initial_phi, f=f, g=g,
                           newton=newton, com_constraint=com)

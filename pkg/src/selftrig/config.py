"""
YAML scenario files.

A scenario file has the top-level blocks ``system``, ``certificate``,
``sampler``, ``delay``, ``disturbance``, ``integration`` and ``output`` plus a
``name`` and a ``seed``. Every block is parsed into a frozen dataclass; unknown
keys, missing required keys and wrong types raise :class:`ConfigError` with the
line of the offending node. Times are in seconds and radii in state units.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .dynamics import Box
from .errors import ConfigError, SelfTrigError
from .lyapunov import (ClassKFunction, LyapunovCertificate, QuadraticForm,
                       quadratic_certificate, solve_lyapunov_equation)
from .sim import (ConstantPeriod, Continuous, DelayModel, DisturbanceModel, Scenario,
                  SelfTriggered, Signal)
from .systems import (annulus_certificate, builtin, example1_certificate, linear_feedback,
                      linear_system)
from .trigger import BoundConfig, TriggerBudget, TriggerMode, make_policy

REQUIRED = object()


def _f(default=REQUIRED, kind=float):
    """Schema field: ``kind`` is float, int, str, bool, 'vector', 'matrix' or 'dict'."""
    if default is REQUIRED:
        return field(metadata={"kind": kind, "required": True})
    return field(default=default, metadata={"kind": kind, "required": False})


@dataclass(frozen=True)
class SystemConfig:
    name: str = _f(kind=str)
    domain_radius: Optional[float] = _f(None)
    A: Optional[tuple] = _f(None, "matrix")
    B: Optional[tuple] = _f(None, "matrix")
    K: Optional[tuple] = _f(None, "matrix")
    mu_lower: Optional[tuple] = _f(None, "vector")
    mu_upper: Optional[tuple] = _f(None, "vector")
    d_lower: Optional[tuple] = _f(None, "vector")
    d_upper: Optional[tuple] = _f(None, "vector")


@dataclass(frozen=True)
class CertificateConfig:
    kind: str = _f("builtin", str)          # builtin | quadratic
    alpha4_factor: float = _f(2.0)
    P: Optional[tuple] = _f(None, "matrix")
    A_c: Optional[tuple] = _f(None, "matrix")
    Q: Optional[tuple] = _f(None, "matrix")
    valid_radius: Optional[float] = _f(None)
    inner_radius: float = _f(0.0)
    alpha1: Optional[dict] = _f(None, "dict")
    alpha2: Optional[dict] = _f(None, "dict")
    alpha3: Optional[dict] = _f(None, "dict")
    alpha4: Optional[dict] = _f(None, "dict")


@dataclass(frozen=True)
class BoundsConfig:
    n_level_samples: int = _f(4000, int)
    n_lipschitz_samples: int = _f(4000, int)
    n_scan: int = _f(4000, int)
    fd_step: float = _f(1e-3)
    safety_margin: float = _f(1.25)
    tau_cap: float = _f(1e3)
    tau_floor: float = _f(1e-6)
    m2_mode: str = _f("global", str)
    seed: int = _f(0, int)
    delta_max_rule: str = _f("sound", str)


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = _f(kind=str)                  # self-triggered | constant | continuous
    mode: Optional[str] = _f(None, str)       # trigger mode, self-triggered only
    theta1: Optional[float] = _f(None)
    theta2: Optional[float] = _f(None)
    theta_g: float = _f(0.0)
    delta: Optional[float] = _f(None)
    period: Optional[float] = _f(None)
    dt_limit: Optional[float] = _f(None)
    tau_scale: float = _f(1.0)
    bounds: BoundsConfig = field(default_factory=BoundsConfig)


@dataclass(frozen=True)
class DelayConfig:
    kind: str = _f("zero", str)
    value: float = _f(0.0)


@dataclass(frozen=True)
class SignalConfig:
    kind: str = _f("none", str)
    vector: Optional[tuple] = _f(None, "vector")
    amplitude: Optional[tuple] = _f(None, "vector")
    frequency: Optional[tuple] = _f(None, "vector")
    phase: Optional[tuple] = _f(None, "vector")
    lower: Optional[tuple] = _f(None, "vector")
    upper: Optional[tuple] = _f(None, "vector")


@dataclass(frozen=True)
class DisturbanceConfig:
    d: SignalConfig = field(default_factory=SignalConfig)
    mu: SignalConfig = field(default_factory=SignalConfig)


@dataclass(frozen=True)
class IntegrationConfig:
    x0: tuple = _f(kind="vector")
    t_final: float = _f()
    t0: float = _f(0.0)
    step: float = _f(1e-3)
    divergence_radius: Optional[float] = _f(None)


@dataclass(frozen=True)
class OutputConfig:
    trace: str = _f("trace.csv", str)
    summary: str = _f("summary.json", str)
    triggers: str = _f("triggers.csv", str)


@dataclass(frozen=True)
class ScenarioConfig:
    system: SystemConfig
    sampler: SamplerConfig
    integration: IntegrationConfig
    certificate: CertificateConfig = field(default_factory=CertificateConfig)
    delay: DelayConfig = field(default_factory=DelayConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    name: str = "scenario"
    seed: int = 0


# --------------------------------------------------------------------------
# parsing with line tracking

def _line_map(node, path=(), out=None):
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            sub = path + (k.value,)
            out[sub] = k.start_mark.line + 1
            _line_map(v, sub, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


class _Ctx:
    def __init__(self, lines):
        self.lines = lines

    def line(self, path):
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, path, msg):
        where = ".".join(str(p) for p in path) or "<root>"
        raise ConfigError(f"{where}: {msg}", self.line(path))


def _convert(value, kind, path, ctx):
    if kind is float:
        if isinstance(value, str):
            # YAML 1.1 reads 1e-4 (no dot) as a string
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            ctx.fail(path, f"expected a number, got {value!r}")
        if not np.isfinite(value):
            ctx.fail(path, "must be finite")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            ctx.fail(path, f"expected an integer, got {value!r}")
        return int(value)
    if kind is str:
        if not isinstance(value, str):
            ctx.fail(path, f"expected a string, got {value!r}")
        return value
    if kind == "vector":
        if isinstance(value, (int, float, str)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list) or not value:
            ctx.fail(path, "expected a non-empty list of numbers")
        return tuple(_convert(v, float, path + (i,), ctx) for i, v in enumerate(value))
    if kind == "matrix":
        if not isinstance(value, list) or not value:
            ctx.fail(path, "expected a list of rows")
        rows = tuple(_convert(r, "vector", path + (i,), ctx) for i, r in enumerate(value))
        if len({len(r) for r in rows}) != 1:
            ctx.fail(path, "matrix rows differ in length")
        return rows
    if kind == "dict":
        if not isinstance(value, dict):
            ctx.fail(path, "expected a mapping")
        return {k: _convert(v, float, path + (k,), ctx) for k, v in value.items()}
    raise AssertionError(kind)


def _build(cls, data, path, ctx):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        ctx.fail(path, f"expected a mapping for {cls.__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for key in data:
        if key not in fields:
            ctx.fail(path + (key,), f"unknown key (allowed: {', '.join(fields)})")
    kwargs = {}
    for name, f in fields.items():
        sub = path + (name,)
        if f.type in _NESTED:
            nested = _NESTED[f.type]
            if name in _TOP_REQUIRED and data.get(name) is None:
                ctx.fail(path, f"missing required block {name!r}")
            kwargs[name] = _build(nested, data.get(name), sub, ctx)
            continue
        if name not in data:
            if f.metadata.get("required", False):
                ctx.fail(path, f"missing required key {name!r}")
            continue
        value = data[name]
        kind = f.metadata.get("kind", {"name": str, "seed": int}.get(name))
        kwargs[name] = None if value is None else _convert(value, kind, sub, ctx)
    return cls(**kwargs)


_NESTED = {
    "SystemConfig": SystemConfig, "SamplerConfig": SamplerConfig,
    "IntegrationConfig": IntegrationConfig, "CertificateConfig": CertificateConfig,
    "DelayConfig": DelayConfig, "DisturbanceConfig": DisturbanceConfig,
    "OutputConfig": OutputConfig, "BoundsConfig": BoundsConfig, "SignalConfig": SignalConfig,
}
_TOP_REQUIRED = {"system", "sampler", "integration"}


def _set_path(data, dotted, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        if node.get(k) is None:
            node[k] = {}
        node = node[k]
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r}: {k!r} is not a block")
    node[keys[-1]] = value


def parse_overrides(items) -> list[tuple[str, Any]]:
    """``KEY=VALUE`` strings; values are read as YAML scalars or lists."""
    out = []
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        try:
            out.append((key.strip(), yaml.safe_load(raw)))
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {item!r}: {exc}") from None
    return out


def parse_config(text: str, overrides=()) -> ScenarioConfig:
    """Parse and validate a scenario document.

    ``overrides`` holds ``(dotted.key, value)`` pairs or ``KEY=VALUE`` strings
    applied before validation.
    """
    overrides = [parse_overrides([o])[0] if isinstance(o, str) else o for o in overrides]
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          mark.line + 1 if mark else None) from None
    if data is None:
        raise ConfigError("empty configuration")
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1)
    ctx = _Ctx(_line_map(node))
    for key, value in overrides:
        _set_path(data, key, value)
    cfg = _build(ScenarioConfig, data, (), ctx)
    _check_semantics(cfg, ctx)
    return cfg


def load_config(path, overrides=()) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text, overrides)


def _check_semantics(cfg: ScenarioConfig, ctx: _Ctx):
    s = cfg.sampler
    if s.kind not in ("self-triggered", "constant", "continuous"):
        ctx.fail(("sampler", "kind"), f"unknown sampler kind {s.kind!r}")
    if s.kind == "self-triggered":
        if s.mode is None:
            ctx.fail(("sampler",), "self-triggered sampling needs 'mode'")
        try:
            mode = TriggerMode(s.mode)
        except ValueError:
            ctx.fail(("sampler", "mode"), f"unknown trigger mode {s.mode!r}")
        for key in ("theta1", "theta2"):
            if getattr(s, key) is None:
                ctx.fail(("sampler",), f"self-triggered sampling needs {key!r}")
        if mode.is_safety and s.delta is None:
            ctx.fail(("sampler",), "safety modes need the safe radius 'delta'")
    if s.kind == "constant" and s.period is None:
        ctx.fail(("sampler",), "constant sampling needs 'period'")
    if s.delta is not None and not s.delta > 0:
        ctx.fail(("sampler", "delta"), "delta must be positive")
    if cfg.certificate.kind not in ("builtin", "quadratic"):
        ctx.fail(("certificate", "kind"), f"unknown certificate kind {cfg.certificate.kind!r}")
    if cfg.delay.kind not in ("zero", "constant", "uniform"):
        ctx.fail(("delay", "kind"), f"unknown delay kind {cfg.delay.kind!r}")
    # resolve once so every type invariant is checked at load time
    try:
        resolve_static(cfg)
    except ConfigError:
        raise
    except (SelfTrigError, ValueError) as exc:
        ctx.fail((), str(exc))


# --------------------------------------------------------------------------
# serialisation

def to_dict(cfg) -> dict:
    """Plain nested dict with ``None`` entries dropped and tuples as lists."""
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            continue
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = [list(r) if isinstance(r, tuple) else r for r in v]
        out[f.name] = v
    return out


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None)


# --------------------------------------------------------------------------
# resolution into library objects

def _box(lower, upper, dim):
    if lower is None and upper is None:
        return Box.zero(dim)
    lo = np.zeros(dim) if lower is None else np.asarray(lower)
    hi = np.zeros(dim) if upper is None else np.asarray(upper)
    if lo.size != dim or hi.size != dim:
        raise ConfigError(f"box bounds must have length {dim}")
    return Box(lo, hi)


def resolve_system(sc: SystemConfig):
    """``(SystemModel, FeedbackLaw)`` for a system block."""
    if sc.name == "linear":
        if sc.A is None or sc.B is None or sc.K is None:
            raise ConfigError("inline linear systems need A, B and K")
        A = np.asarray(sc.A)
        n = A.shape[0]
        sys = linear_system(A, sc.B, domain_radius=sc.domain_radius or 1.0)
        sys = dataclasses.replace(sys, d_bounds=_box(sc.d_lower, sc.d_upper, n))
        return sys, linear_feedback(sc.K)
    if sc.A is not None or sc.B is not None or sc.K is not None:
        raise ConfigError("A, B and K are only allowed for name: linear")
    dims = {"example1": (2, 1), "annulus-linear": (1, 1)}
    if sc.name not in dims:
        raise ConfigError(f"unknown system {sc.name!r}; choose from "
                          f"{sorted(dims) + ['linear']}")
    n, m = dims[sc.name]
    kwargs = {"d_bounds": _box(sc.d_lower, sc.d_upper, n),
              "mu_bounds": _box(sc.mu_lower, sc.mu_upper, m)}
    if sc.domain_radius is not None:
        kwargs["domain_radius"] = sc.domain_radius
    return builtin(sc.name, **kwargs)


def resolve_certificate(cc: CertificateConfig, sys, sc: SystemConfig) -> LyapunovCertificate:
    if cc.kind == "builtin":
        if sc.name == "example1":
            return example1_certificate(cc.alpha4_factor)
        if sc.name == "annulus-linear":
            return annulus_certificate()
        raise ConfigError(f"system {sc.name!r} has no built-in certificate")
    if cc.P is not None:
        form = QuadraticForm(np.asarray(cc.P))
    elif cc.Q is not None:
        if cc.A_c is not None:
            A_c = np.asarray(cc.A_c)
        elif sc.name == "linear":
            A_c = np.asarray(sc.A) + np.asarray(sc.B) @ np.asarray(sc.K)
        else:
            raise ConfigError("certificate from Q needs A_c")
        form = solve_lyapunov_equation(A_c, np.asarray(cc.Q))
    else:
        raise ConfigError("quadratic certificate needs P or Q")
    if form.P.shape[0] != sys.n:
        raise ConfigError(f"P must be {sys.n}x{sys.n}")
    R = cc.valid_radius or sys.domain_radius
    if cc.alpha3 is None:
        raise ConfigError("quadratic certificate needs alpha3")
    alpha3 = ClassKFunction.from_dict({"domain_max": R, **cc.alpha3})
    base = quadratic_certificate(form, alpha3, R, cc.alpha4_factor)
    over = {}
    for name in ("alpha1", "alpha2", "alpha4"):
        d = getattr(cc, name)
        if d is not None:
            over[name] = ClassKFunction.from_dict({"domain_max": R, **d})
    return dataclasses.replace(base, inner_radius=cc.inner_radius, **over)


def _signal(sc: SignalConfig, dim):
    arr = lambda v: None if v is None else np.asarray(v, dtype=float)
    box = None
    if sc.lower is not None or sc.upper is not None:
        box = _box(sc.lower, sc.upper, dim)
    return Signal(kind=sc.kind, vector=arr(sc.vector), amplitude=arr(sc.amplitude),
                  frequency=arr(sc.frequency), phase=arr(sc.phase), box=box)


def resolve_static(cfg: ScenarioConfig):
    """Everything except the (costly) bound precomputation."""
    sys, fb = resolve_system(cfg.system)
    cert = resolve_certificate(cfg.certificate, sys, cfg.system)
    s = cfg.sampler
    budget = None
    bounds = BoundConfig(**to_dict(s.bounds))
    if s.kind == "self-triggered":
        budget = TriggerBudget(s.theta1, s.theta2, s.theta_g)
    delay = DelayModel(cfg.delay.kind, cfg.delay.value)
    dist = DisturbanceModel(d=_signal(cfg.disturbance.d, sys.d_bounds.dim),
                            mu=_signal(cfg.disturbance.mu, sys.mu_bounds.dim))
    x0 = np.asarray(cfg.integration.x0, dtype=float)
    if x0.shape != (sys.n,):
        raise ConfigError(f"integration.x0 must have length {sys.n}")
    for sig, box, what in ((dist.d, sys.d_bounds, "d"), (dist.mu, sys.mu_bounds, "mu")):
        sig.check_within(box, what)
    return sys, fb, cert, budget, bounds, delay, dist


@dataclass
class Resolved:
    config: ScenarioConfig
    scenario: Scenario
    certificate: LyapunovCertificate
    policy: Optional[Any] = None


def resolve(cfg: ScenarioConfig, seed: Optional[int] = None) -> Resolved:
    """Build the scenario, precomputing trigger bounds when needed."""
    sys, fb, cert, budget, bounds, delay, dist = resolve_static(cfg)
    s = cfg.sampler
    seed = cfg.seed if seed is None else seed
    policy = None
    if s.kind == "self-triggered":
        policy = make_policy(s.mode, budget, cert, sys, fb, delta=s.delta,
                             x0=cfg.integration.x0, bounds=bounds, rng=seed)
        sampler = SelfTriggered(policy, s.tau_scale)
    elif s.kind == "constant":
        sampler = ConstantPeriod(s.period)
    else:
        sampler = Continuous(s.dt_limit)
    ig = cfg.integration
    scenario = Scenario(system=sys, feedback=fb, sampler=sampler, x0=np.asarray(ig.x0),
                        t_final=ig.t_final, certificate=cert, t0=ig.t0, delay=delay,
                        disturbance=dist, integrator_step=ig.step, rng_seed=seed,
                        delta=s.delta, divergence_radius=ig.divergence_radius,
                        name=cfg.name)
    return Resolved(cfg, scenario, cert, policy)

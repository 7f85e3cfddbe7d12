"""
Event-driven sampled-data simulation under zero-order hold with actuation delay.

At every sampling instant ``t_k`` the state is measured, the hold duration
``t_{k+1} - t_k`` is chosen by the sampler and the new input ``kappa(x_k)``
takes effect at ``t_k + delta_k``. Until then the previous input stays on
(zero before the first actuation). Integration is fixed-step RK4 with each
interval between switching instants split into equal sub-steps no longer
than ``integrator_step``, so every switch lands on a step boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .dynamics import Box, FeedbackLaw, SystemModel
from .errors import DomainError, UsageError
from .lyapunov import LyapunovCertificate
from .trigger import TriggerPolicy, hold_times

# keeps delta_k strictly below the gap and delta_max
DELAY_EPS = 1e-9


# --------------------------------------------------------------------------
# samplers

@dataclass(frozen=True)
class SelfTriggered:
    policy: TriggerPolicy
    # multiplies tau_s; anything but 1 breaks the guarantee (used to probe margins)
    tau_scale: float = 1.0

    def __post_init__(self):
        if self.policy.precomputed is None:
            raise UsageError("self-triggered sampling needs a precomputed policy")

    def interval(self, x_k) -> float:
        return self.tau_scale * hold_times(self.policy, x_k)[2]

    @property
    def delta_max(self) -> float:
        return self.policy.precomputed.delta_max


@dataclass(frozen=True)
class ConstantPeriod:
    period: float

    def __post_init__(self):
        if not self.period > 0:
            raise UsageError("period must be positive")

    def interval(self, x_k) -> float:
        return self.period

    delta_max = math.inf


@dataclass(frozen=True)
class Continuous:
    """Resample every ``dt_limit`` seconds (defaults to the integrator step)."""

    dt_limit: Optional[float] = None

    def interval(self, x_k) -> float:
        return self.dt_limit

    delta_max = math.inf


Sampler = Union[SelfTriggered, ConstantPeriod, Continuous]


# --------------------------------------------------------------------------
# delays and disturbance signals

@dataclass(frozen=True)
class DelayModel:
    kind: str = "zero"          # zero | constant | uniform
    value: float = 0.0          # constant delay, or upper end of the uniform draw

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "uniform"):
            raise UsageError(f"unknown delay kind {self.kind!r}")
        if self.value < 0:
            raise UsageError("delay must be non-negative")

    def draw(self, rng: np.random.Generator) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "constant":
            return self.value
        return float(rng.uniform(0.0, self.value))


def clamp_delay(draw: float, delta_max: float, gap: float) -> float:
    """Keep ``delta_k`` in ``[0, min(delta_max, gap))``."""
    limit = min(delta_max, gap) - DELAY_EPS
    return max(0.0, min(draw, limit))


@dataclass(frozen=True)
class Signal:
    """Piecewise-defined disturbance or parameter signal."""

    kind: str = "none"          # none | constant | sinusoid | held-uniform
    vector: Optional[np.ndarray] = None
    amplitude: Optional[np.ndarray] = None
    frequency: Optional[np.ndarray] = None
    phase: Optional[np.ndarray] = None
    box: Optional[Box] = None

    def __post_init__(self):
        if self.kind not in ("none", "constant", "sinusoid", "held-uniform"):
            raise UsageError(f"unknown signal kind {self.kind!r}")
        for name in ("vector", "amplitude", "frequency", "phase"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.atleast_1d(np.asarray(v, dtype=float)))
        if self.kind == "constant" and self.vector is None:
            raise UsageError("constant signal needs a vector")
        if self.kind == "sinusoid" and self.amplitude is None:
            raise UsageError("sinusoid needs an amplitude")
        if self.kind == "held-uniform" and self.box is None:
            raise UsageError("held-uniform signal needs a box")

    def check_within(self, box: Box, what: str) -> None:
        """Every realisation must stay inside ``box``."""
        if self.kind == "none":
            return
        if self.kind == "constant":
            ok = box.contains(self.vector, tol=1e-15)
        elif self.kind == "sinusoid":
            a = np.abs(self.amplitude)
            ok = box.contains(a, tol=1e-15) and box.contains(-a, tol=1e-15)
        else:
            ok = (box.contains(self.box.lower, tol=1e-15)
                  and box.contains(self.box.upper, tol=1e-15))
        if not ok:
            raise UsageError(f"{what} signal leaves its declared box")

    def redraw(self, rng: np.random.Generator):
        """Value held over the next sampling interval (held-uniform only)."""
        if self.kind == "held-uniform":
            return self.box.sample(rng, 1)[0]
        return None

    def value(self, t: float, held, dim: int) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(dim)
        if self.kind == "constant":
            return self.vector
        if self.kind == "sinusoid":
            freq = self.frequency if self.frequency is not None else np.zeros_like(self.amplitude)
            phase = self.phase if self.phase is not None else np.zeros_like(self.amplitude)
            return self.amplitude * np.sin(2.0 * np.pi * freq * t + phase)
        return held


@dataclass(frozen=True)
class DisturbanceModel:
    d: Signal = field(default_factory=Signal)
    mu: Signal = field(default_factory=Signal)

    @property
    def active(self) -> bool:
        return self.d.kind != "none" or self.mu.kind != "none"


# --------------------------------------------------------------------------
# scenario and trace

@dataclass(frozen=True)
class Scenario:
    system: SystemModel
    feedback: FeedbackLaw
    sampler: Sampler
    x0: np.ndarray
    t_final: float
    certificate: Optional[LyapunovCertificate] = None
    t0: float = 0.0
    delay: DelayModel = field(default_factory=DelayModel)
    disturbance: DisturbanceModel = field(default_factory=DisturbanceModel)
    integrator_step: float = 1e-3
    rng_seed: int = 0
    delta: Optional[float] = None
    divergence_radius: Optional[float] = None
    name: str = "scenario"

    def __post_init__(self):
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if x0.shape != (self.system.n,):
            raise UsageError(f"x0 must have length {self.system.n}")
        object.__setattr__(self, "x0", x0)
        if not self.t_final > self.t0:
            raise UsageError("t_final must exceed t0")
        if not self.integrator_step > 0:
            raise UsageError("integrator_step must be positive")
        if isinstance(self.sampler, SelfTriggered):
            policy = self.sampler.policy
            if self.delta is None and policy.delta is not None:
                object.__setattr__(self, "delta", policy.delta)
        if self.delta is not None and np.linalg.norm(x0) >= self.delta:
            raise UsageError("safety scenarios need ||x0|| < delta")
        self.disturbance.d.check_within(self.system.d_bounds, "d")
        self.disturbance.mu.check_within(self.system.mu_bounds, "mu")

    @property
    def guard_radius(self) -> float:
        if self.divergence_radius is not None:
            return self.divergence_radius
        if self.delta is not None:
            return 1e3 * self.delta
        r0 = float(np.linalg.norm(self.x0))
        # a start at the origin says nothing about scale; use the working region
        return 1e3 * (r0 if r0 > 0 else self.system.domain_radius)


@dataclass(frozen=True)
class SampleEvent:
    k: int
    t_k: float
    delta_k: float
    tau_s: float
    x_k: np.ndarray
    u_k: np.ndarray


@dataclass(frozen=True)
class SafetyVerdict:
    safe: bool
    first_violation: Optional[float] = None
    max_norm: float = 0.0


@dataclass(frozen=True)
class DecreaseVerdict:
    ok: bool
    worst_margin: float
    n_checked: int
    first_violation: Optional[float] = None


@dataclass(frozen=True)
class TraceStats:
    n_samples: int
    mean_interval: float
    min_interval: float
    max_interval: float
    mean_delay: float
    max_delay: float
    samples_per_second: float


@dataclass
class Trace:
    """Time grid with states, applied inputs, ``V`` values and event labels.

    ``controls[i]`` is the input applied on ``[times[i], times[i+1])``.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    V_values: np.ndarray
    labels: list
    events: list
    diverged: bool = False
    domain_exit: bool = False
    internal_error: bool = False
    safety: Optional[SafetyVerdict] = None
    stats: Optional[TraceStats] = None

    @property
    def completed(self) -> bool:
        return not (self.diverged or self.domain_exit or self.internal_error)


def rk4_step(fun, x, h):
    k1 = fun(x)
    k2 = fun(x + (0.5 * h) * k1)
    k3 = fun(x + (0.5 * h) * k2)
    k4 = fun(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate_fixed(fun, x0, t0: float, t1: float, step: float):
    """RK4 from ``t0`` to ``t1`` in equal sub-steps of at most ``step``.

    ``fun(t, x)``; returns the final state.
    """
    n = max(1, math.ceil((t1 - t0) / step - 1e-9))
    h = (t1 - t0) / n
    x = np.asarray(x0, dtype=float)
    for i in range(n):
        t = t0 + i * h
        x = rk4_step(lambda z: fun(t, z), x, h)
    return x


class _Recorder:
    def __init__(self):
        self.t, self.x, self.u, self.label = [], [], [], []

    def add(self, t, x, u, label):
        if self.t and t <= self.t[-1]:
            # zero-length remainder; keep the newer label information
            if label != "-":
                self.label[-1] = label if self.label[-1] == "-" else self.label[-1]
            self.u[-1] = u
            return
        self.t.append(t)
        self.x.append(x)
        self.u.append(u)
        self.label.append(label)


def run_scenario(scenario: Scenario) -> Trace:
    sys = scenario.system
    fb = scenario.feedback
    sampler = scenario.sampler
    if isinstance(sampler, Continuous) and sampler.dt_limit is None:
        sampler = Continuous(scenario.integrator_step)
    rng = np.random.default_rng(scenario.rng_seed)
    step = scenario.integrator_step
    guard = scenario.guard_radius
    dist = scenario.disturbance
    perturbed = dist.active
    t_end = scenario.t_final
    tau_floor = (sampler.policy.bounds.tau_floor if isinstance(sampler, SelfTriggered)
                 else 0.0)

    rec = _Recorder()
    events = []
    flags = {"diverged": False, "domain_exit": False, "internal_error": False}

    t = scenario.t0
    x = scenario.x0.copy()
    u_prev = np.zeros(sys.p)
    held_d = held_mu = None

    def advance(x, t_a, t_b, u, first_label):
        """Integrate on [t_a, t_b) with input ``u``; returns (x, stopped)."""
        n = max(1, math.ceil((t_b - t_a) / step - 1e-9))
        h = (t_b - t_a) / n
        label = first_label
        for i in range(n):
            ts = t_a + i * h
            rec.add(ts, x, u, label)
            label = "-"
            if perturbed:
                d = dist.d.value(ts, held_d, sys.d_bounds.dim)
                mu = dist.mu.value(ts, held_mu, sys.mu_bounds.dim)
                rhs = lambda z: sys.nominal_field(z, u) + sys.perturbation_field(z, u, mu, d)
            else:
                rhs = lambda z: sys.nominal_field(z, u)
            x = rk4_step(rhs, x, h)
            if not np.all(np.isfinite(x)) or np.linalg.norm(x) > guard:
                flags["diverged"] = True
                rec.add(t_a + (i + 1) * h, x, u, "-")
                return x, True
        return x, False

    k = 0
    stopped = False
    while t < t_end and not stopped:
        x_k = x.copy()
        try:
            tau = float(sampler.interval(x_k))
        except DomainError:
            flags["domain_exit"] = True
            break
        if isinstance(sampler, SelfTriggered) and tau < tau_floor * sampler.tau_scale:
            flags["internal_error"] = True
            break
        gap = tau
        delta_k = clamp_delay(scenario.delay.draw(rng), sampler.delta_max, gap)
        u_k = fb(x_k).copy()
        events.append(SampleEvent(k, t, delta_k, tau, x_k, u_k))
        held_d = dist.d.redraw(rng)
        held_mu = dist.mu.redraw(rng)

        t_act = min(t + delta_k, t_end)
        t_next = min(t + tau, t_end)
        if t_act > t:
            x, stopped = advance(x, t, t_act, u_prev, "sample")
            if not stopped and t_next > t_act:
                x, stopped = advance(x, t_act, t_next, u_k, "actuate")
        elif t_next > t:
            x, stopped = advance(x, t, t_next, u_k, "sample")
        u_prev = u_k
        t = t + tau
        k += 1

    if not stopped:
        rec.add(min(t, t_end), x, u_prev, "-")

    states = np.array(rec.x)
    V = (scenario.certificate.value(states) if scenario.certificate is not None
         else np.full(len(states), np.nan))
    trace = Trace(times=np.array(rec.t), states=states, controls=np.array(rec.u),
                  V_values=np.asarray(V, dtype=float), labels=rec.label, events=events,
                  **flags)
    if scenario.delta is not None:
        trace.safety = check_safety(trace, scenario.delta)
    if events:
        trace.stats = trace_stats(trace)
    return trace


# --------------------------------------------------------------------------
# monitors

def check_safety(trace: Trace, delta: float) -> SafetyVerdict:
    """First grid time with ``||x|| >= delta``, if any."""
    if len(trace.times) == 0:
        raise UsageError("empty trace")
    norms = np.linalg.norm(trace.states, axis=-1)
    bad = np.flatnonzero(norms >= delta)
    max_norm = float(norms.max())
    if trace.diverged and not bad.size:
        return SafetyVerdict(False, float(trace.times[-1]), max_norm)
    if bad.size:
        return SafetyVerdict(False, float(trace.times[bad[0]]), max_norm)
    return SafetyVerdict(True, None, max_norm)


def check_lyapunov_decrease(trace: Trace, cert: LyapunovCertificate, theta: float,
                            tol: float = 1e-6) -> DecreaseVerdict:
    """Difference-quotient check of ``dV/dt <= -(1 - theta) alpha3(||x||)``.

    Each step is compared against ``alpha3`` at the smaller of its two end-point
    norms (mean-value bound). Steps with an end point inside the certificate's
    inner radius are skipped.
    """
    t = trace.times
    V = cert.value(trace.states) if np.all(np.isnan(trace.V_values)) else trace.V_values
    r = np.linalg.norm(trace.states, axis=-1)
    dt = np.diff(t)
    keep = (dt > 0) & (r[:-1] > cert.inner_radius) & (r[1:] > cert.inner_radius)
    keep &= (r[:-1] <= cert.valid_radius) & (r[1:] <= cert.valid_radius)
    if trace.events:
        keep &= t[:-1] >= trace.events[0].t_k + trace.events[0].delta_k
    if not np.any(keep):
        return DecreaseVerdict(True, -np.inf, 0)
    idx = np.flatnonzero(keep)
    rate = (V[idx + 1] - V[idx]) / dt[idx]
    r_lo = np.minimum(r[idx], r[idx + 1])
    margin = rate + (1.0 - theta) * cert.alpha3(r_lo)
    bad = np.flatnonzero(margin > tol)
    first = float(t[idx[bad[0]]]) if bad.size else None
    return DecreaseVerdict(not bad.size, float(margin.max()), int(idx.size), first)


def trace_stats(trace: Trace) -> TraceStats:
    ev = trace.events
    if not ev:
        raise UsageError("trace has no sampling events")
    times = np.array([e.t_k for e in ev])
    intervals = np.diff(times) if len(ev) > 1 else np.array([ev[0].tau_s])
    delays = np.array([e.delta_k for e in ev])
    span = trace.times[-1] - trace.times[0]
    return TraceStats(
        n_samples=len(ev),
        mean_interval=float(intervals.mean()),
        min_interval=float(intervals.min()),
        max_interval=float(intervals.max()),
        mean_delay=float(delays.mean()),
        max_delay=float(delays.max()),
        samples_per_second=float(len(ev) / span) if span > 0 else float("nan"),
    )

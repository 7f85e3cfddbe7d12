"""
Self-triggered sampling rules.

Given a plant, a feedback law and a Lyapunov certificate, the functions here
bound the error caused by holding a stale input,

    ||d_h(t)|| <= M1(x_k) (t - t_k) + M2 (t - t_k)^2,

and turn the certificate's decrease budget into a next sampling time
``tau_s(x_k)`` and a tolerable actuation delay ``delta_max``. The maxima that
define M2 and M3 are estimated by uniform sampling inflated by
``BoundConfig.safety_margin``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .dynamics import FeedbackLaw, SystemModel, jacobians, sample_ball
from .errors import ConfigError, DomainError, NoSolutionError, UsageError
from .lyapunov import LyapunovCertificate, compose_chain


class TriggerMode(str, enum.Enum):
    STABILITY = "stability"
    SAFETY_NOMINAL = "safety-nominal"
    SAFETY_PERTURBED = "safety-perturbed"

    @property
    def is_safety(self) -> bool:
        return self is not TriggerMode.STABILITY


@dataclass(frozen=True)
class TriggerBudget:
    """Split of the decrease budget: hold error, delay, perturbation."""

    theta1: float
    theta2: float
    theta_g: float = 0.0

    def __post_init__(self):
        for name in ("theta1", "theta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise UsageError(f"{name} must lie in (0, 1)")
        if not 0.0 <= self.theta_g < 1.0:
            raise UsageError("theta_g must lie in [0, 1)")
        if self.theta1 + self.theta2 + self.theta_g >= 1.0:
            raise UsageError("theta1 + theta2 + theta_g must be < 1")

    @property
    def total(self) -> float:
        return self.theta1 + self.theta2 + self.theta_g


@dataclass(frozen=True)
class BoundConfig:
    n_level_samples: int = 4000
    n_lipschitz_samples: int = 4000
    n_scan: int = 4000
    fd_step: float = 1e-3
    safety_margin: float = 1.25
    tau_cap: float = 1e3
    tau_floor: float = 1e-6
    m2_mode: str = "global"          # or "level-set"
    seed: int = 0                    # level-set M2 draws, reseeded per call
    delta_max_rule: str = "sound"    # or "literal"

    def __post_init__(self):
        for name in ("n_level_samples", "n_lipschitz_samples", "n_scan", "fd_step",
                     "tau_cap", "tau_floor"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        if not self.safety_margin > 0:
            raise UsageError("safety_margin must be positive")
        if self.m2_mode not in ("global", "level-set"):
            raise UsageError(f"unknown m2_mode {self.m2_mode!r}")
        if self.delta_max_rule not in ("sound", "literal"):
            raise UsageError(f"unknown delta_max_rule {self.delta_max_rule!r}")
        if self.tau_floor >= self.tau_cap:
            raise UsageError("tau_floor must be below tau_cap")


@dataclass(frozen=True)
class Region:
    """Ball of radius ``radius``, optionally cut to the sublevel set ``V <= level``."""

    radius: float
    cert: Optional[LyapunovCertificate] = None
    level: Optional[float] = None

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        inside = np.linalg.norm(x, axis=-1) <= self.radius * (1 + 1e-12)
        if self.level is not None:
            inside &= self.cert.value(x) <= self.level * (1 + 1e-12)
        return inside

    def sample(self, rng: np.random.Generator, n: int, size: int) -> np.ndarray:
        if self.level is None:
            return sample_ball(rng, n, self.radius, size)
        # alpha1(||x||) <= V(x) <= level bounds the sublevel set by a ball
        radius = min(self.radius, float(self.cert.alpha1.inverse(
            min(self.level, self.cert.alpha1.range_max))))
        out = []
        have = 0
        for _ in range(1000):
            x = sample_ball(rng, n, radius, 2 * size)
            x = x[self.contains(x)]
            out.append(x)
            have += len(x)
            if have >= size:
                return np.concatenate(out)[:size]
        raise UsageError("rejection sampling of the level set failed; region is too thin")

    def enlarged(self, factor: float) -> "Region":
        level = None if self.level is None else self.level * factor**2
        return replace(self, radius=self.radius * factor, level=level)


@dataclass(frozen=True)
class BoundEstimates:
    M2: float
    M3: float
    tau_min: float
    delta_max: float
    L_f0: float = float("nan")
    L_kappa: float = float("nan")
    L_x: float = float("nan")

    def __post_init__(self):
        for name in ("M2", "M3"):
            if not (np.isfinite(getattr(self, name)) and getattr(self, name) >= 0):
                raise UsageError(f"{name} must be finite and non-negative")
        for name in ("tau_min", "delta_max"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class TriggerPolicy:
    mode: TriggerMode
    budget: TriggerBudget
    cert: LyapunovCertificate
    system: SystemModel
    feedback: FeedbackLaw
    region: Region
    delta: Optional[float] = None
    bounds: BoundConfig = field(default_factory=BoundConfig)
    precomputed: Optional[BoundEstimates] = None

    def __post_init__(self):
        mode = TriggerMode(self.mode)
        object.__setattr__(self, "mode", mode)
        if mode.is_safety:
            if self.delta is None or not self.delta > 0:
                raise ConfigError("safety modes need a safe radius delta > 0")
            if self.delta > self.cert.valid_radius:
                raise ConfigError("delta exceeds the certificate's valid radius")
        else:
            if (self.cert.alpha3.inverse_lipschitz_const is None
                    or self.cert.alpha4.lipschitz_const is None):
                raise ConfigError("stability mode needs declared Lipschitz constants "
                                  "for alpha3^{-1} and alpha4")
        if mode is TriggerMode.SAFETY_PERTURBED and not self.budget.theta_g > 0:
            raise ConfigError("safety-perturbed mode needs theta_g > 0")
        if mode is not TriggerMode.SAFETY_PERTURBED and self.budget.theta_g != 0:
            raise ConfigError("theta_g is only meaningful in safety-perturbed mode")


def safety_region(delta: float) -> Region:
    return Region(radius=delta)


def stability_region(cert: LyapunovCertificate, x0, working_radius: float) -> Region:
    """Sublevel set through ``x0`` clipped to the working ball."""
    level = float(cert.value(x0))
    radius = min(working_radius, float(cert.alpha1.inverse(min(level, cert.alpha1.range_max))))
    return Region(radius=radius, cert=cert, level=level)


# --------------------------------------------------------------------------
# Hold-error Taylor coefficients

def compute_phi1(sys: SystemModel, fb: FeedbackLaw, x_k, h_fd=None) -> np.ndarray:
    """First time derivative of ``d_h`` at the sampling instant.

    With ``d_h(t_k) = 0`` this is ``-(df0/du) Dkappa f0`` at ``(x_k, kappa(x_k))``.
    Accepts a single state or a batch.
    """
    x_k = np.asarray(x_k, dtype=float)
    u_k = fb(x_k)
    jac = jacobians(sys, x_k, u_k, h_fd)
    dk = fb.jacobian(x_k, h_fd)
    flow = sys.nominal_field(x_k, u_k)
    dkf = np.einsum("...ij,...j->...i", dk, flow)
    return -np.einsum("...ij,...j->...i", jac.dfdu, dkf)


def compute_M1(sys, fb, x_k, h_fd=None):
    return np.linalg.norm(compute_phi1(sys, fb, x_k, h_fd), axis=-1)


def _rk4(fun, x, h):
    k1 = fun(x)
    k2 = fun(x + 0.5 * h * k1)
    k3 = fun(x + 0.5 * h * k2)
    k4 = fun(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def compute_phi2(sys: SystemModel, fb: FeedbackLaw, xbar, x_k, fd_step: float = 1e-3):
    """Half the second time derivative of ``d_h`` at ``xbar`` along the held flow.

    The held flow ``dx/dt = f0(x, kappa(x_k))`` is integrated one RK4 step of
    ``fd_step`` forwards and backwards from ``xbar``; ``d_h`` is then
    central-differenced component-wise.
    """
    xbar = np.asarray(xbar, dtype=float)
    u_k = fb(np.asarray(x_k, dtype=float))

    def held(x):
        return sys.nominal_field(x, u_k)

    def d_h(x):
        return held(x) - sys.nominal_field(x, fb(x))

    h = fd_step
    fwd = _rk4(held, xbar, h)
    bwd = _rk4(held, xbar, -h)
    second = (d_h(fwd) - 2.0 * d_h(xbar) + d_h(bwd)) / h**2
    return 0.5 * second


def estimate_M2(policy_or_sys, fb=None, cert=None, region: Optional[Region] = None,
                bounds: Optional[BoundConfig] = None, x_k=None, rng=None) -> float:
    """Sampled bound on ``||phi2||``.

    Global mode (``x_k=None``) maximises over ``xbar, x_k`` both in ``region``;
    with ``x_k`` given, ``xbar`` ranges over the sublevel set ``V <= V(x_k)``
    intersected with ``region``.
    """
    sys, fb, cert, region, bounds = _unpack(policy_or_sys, fb, cert, region, bounds)
    rng = np.random.default_rng(rng)
    n = bounds.n_level_samples
    if n < 1:
        raise UsageError("empty sample set")
    if x_k is None:
        xbar = region.sample(rng, sys.n, n)
        xk = region.sample(rng, sys.n, n)
    else:
        x_k = np.asarray(x_k, dtype=float)
        level = float(cert.value(x_k))
        sub = Region(radius=region.radius, cert=cert,
                     level=level if region.level is None else min(level, region.level))
        xbar = sub.sample(rng, sys.n, n) if level > 0 else np.zeros((1, sys.n))
        xk = np.broadcast_to(x_k, xbar.shape)
    norms = np.linalg.norm(compute_phi2(sys, fb, xbar, xk, bounds.fd_step), axis=-1)
    return float(bounds.safety_margin * norms.max())


def lipschitz_factors(sys: SystemModel, fb: FeedbackLaw, region: Region, n_samples: int,
                      rng=None) -> tuple[float, float, float]:
    """Sampled ``(L_f0, L_kappa, L_x)`` over ``x, x_k`` in ``region``, no margin."""
    rng = np.random.default_rng(rng)
    x = region.sample(rng, sys.n, n_samples)
    xk = region.sample(rng, sys.n, n_samples)
    u_held = fb(xk)
    jac = jacobians(sys, x, u_held)
    L_f0 = np.linalg.norm(jac.dfdu, ord=2, axis=(-2, -1)).max()
    L_kappa = np.linalg.norm(fb.jacobian(x), ord=2, axis=(-2, -1)).max()
    L_x = np.linalg.norm(sys.nominal_field(x, u_held), axis=-1).max()
    return float(L_f0), float(L_kappa), float(L_x)


def estimate_M3(policy_or_sys, fb=None, region: Optional[Region] = None,
                bounds: Optional[BoundConfig] = None, rng=None) -> float:
    """Delay sensitivity ``L_f0 * L_kappa * L_x``, inflated once by the margin."""
    sys, fb, _, region, bounds = _unpack(policy_or_sys, fb, None, region, bounds)
    L = lipschitz_factors(sys, fb, region, bounds.n_lipschitz_samples, rng)
    return float(bounds.safety_margin * np.prod(L))


def _unpack(policy_or_sys, fb, cert, region, bounds):
    if isinstance(policy_or_sys, TriggerPolicy):
        p = policy_or_sys
        return (p.system, p.feedback, p.cert, region or p.region, bounds or p.bounds)
    if fb is None or region is None:
        raise UsageError("feedback and region are required without a policy")
    return policy_or_sys, fb, cert, region, bounds or BoundConfig()


# --------------------------------------------------------------------------
# Trigger inequality

def solve_hold_inequality(M1: float, M2: float, c: float, tau_cap: float = np.inf) -> float:
    """Largest ``y >= 0`` with ``M1 y + M2 y^2 <= c``, capped at ``tau_cap``."""
    if not c > 0:
        raise NoSolutionError(f"budget c={c} leaves no positive hold time")
    if M1 < 0 or M2 < 0:
        raise UsageError("M1 and M2 must be non-negative")
    if M1 == 0 and M2 == 0:
        return float(tau_cap)
    # rationalised root: no cancellation when M2 * c << M1^2
    y = 2.0 * c / (M1 + np.sqrt(M1 * M1 + 4.0 * M2 * c))
    return float(min(y, tau_cap))


def rhs_for_mode(policy: TriggerPolicy, x_k=None) -> float:
    """Budget ``c`` on the hold-error polynomial for the policy's mode."""
    theta1 = policy.budget.theta1
    cert = policy.cert
    if policy.mode is TriggerMode.STABILITY:
        L3 = cert.alpha3.inverse_lipschitz_const
        L4 = cert.alpha4.lipschitz_const
        if L3 is None or L4 is None:
            raise ConfigError("missing Lipschitz constants for stability mode")
        return theta1 / (L3 * L4)
    return theta1 * compose_chain(cert, policy.delta) / float(cert.alpha4(policy.delta))


def _delay_scale(policy: TriggerPolicy) -> float:
    cert = policy.cert
    if policy.mode is TriggerMode.STABILITY:
        return 1.0 / (cert.alpha3.inverse_lipschitz_const * cert.alpha4.lipschitz_const)
    return compose_chain(cert, policy.delta) / float(cert.alpha4(policy.delta))


def delay_numerator(policy: TriggerPolicy) -> float:
    b = policy.budget
    if policy.bounds.delta_max_rule == "sound":
        return b.theta2
    if policy.mode is TriggerMode.SAFETY_PERTURBED:
        return 1.0 - b.theta1 - b.theta_g
    return 1.0 - b.theta1


def compute_delta_max(policy: TriggerPolicy, M3: float, tau_min: float) -> float:
    if M3 < 0 or not tau_min > 0:
        raise UsageError("need M3 >= 0 and tau_min > 0")
    if M3 == 0:
        return float(tau_min)
    bound = delay_numerator(policy) * _delay_scale(policy) / M3
    return float(min(bound, tau_min))


def _policy_M2(policy: TriggerPolicy, x_k, rng=None) -> float:
    if policy.bounds.m2_mode == "global":
        if policy.precomputed is None:
            raise UsageError("policy has no precomputed bounds; call precompute() first")
        return policy.precomputed.M2
    return estimate_M2(policy, x_k=x_k, rng=policy.bounds.seed if rng is None else rng)


def check_domain(policy: TriggerPolicy, x_k) -> None:
    r = float(np.linalg.norm(x_k))
    if policy.mode.is_safety:
        if r >= policy.delta:
            raise DomainError(f"||x_k||={r:.3e} is outside the safe ball of radius {policy.delta}")
    elif r > policy.system.domain_radius * (1 + 1e-12):
        raise DomainError(f"||x_k||={r:.3e} is outside the working region")


def hold_times(policy: TriggerPolicy, x_k, rng=None) -> tuple[float, float, float]:
    """``(M1(x_k), tau'_s(x_k), tau_s(x_k))``."""
    x_k = np.asarray(x_k, dtype=float)
    check_domain(policy, x_k)
    M1 = float(compute_M1(policy.system, policy.feedback, x_k))
    M2 = _policy_M2(policy, x_k, rng)
    tau_prime = solve_hold_inequality(M1, M2, rhs_for_mode(policy), policy.bounds.tau_cap)
    delta_max = policy.precomputed.delta_max if policy.precomputed else 0.0
    tau = max(tau_prime - delta_max, policy.bounds.tau_floor)
    return M1, tau_prime, tau


def next_sample_time(policy: TriggerPolicy, x_k, rng=None) -> float:
    """Hold duration ``tau_s(x_k) = max(tau'_s(x_k) - delta_max, tau_floor)``."""
    return hold_times(policy, x_k, rng)[2]


def scan_tau_min(policy: TriggerPolicy, region: Optional[Region] = None,
                 n_scan: Optional[int] = None, M2: Optional[float] = None, rng=None) -> float:
    """Minimum of ``tau'_s`` over ``n_scan`` sampled states of ``region``."""
    region = region or policy.region
    n_scan = n_scan or policy.bounds.n_scan
    if n_scan < 1:
        raise UsageError("n_scan must be >= 1")
    rng = np.random.default_rng(rng)
    xs = region.sample(rng, policy.system.n, n_scan)
    M1 = compute_M1(policy.system, policy.feedback, xs)
    c = rhs_for_mode(policy)
    if M2 is None:
        if policy.bounds.m2_mode == "global":
            M2 = policy.precomputed.M2 if policy.precomputed else estimate_M2(policy, rng=rng)
        else:
            M2s = [estimate_M2(policy, x_k=x, rng=rng) for x in xs]
            return float(min(solve_hold_inequality(m1, m2, c, policy.bounds.tau_cap)
                             for m1, m2 in zip(M1, M2s)))
    return float(min(solve_hold_inequality(m1, M2, c, policy.bounds.tau_cap) for m1 in M1))


def precompute(policy: TriggerPolicy, rng=None) -> TriggerPolicy:
    """Return a copy of ``policy`` carrying M2, M3, tau_min and delta_max."""
    rng = np.random.default_rng(rng)
    b = policy.bounds
    M2 = estimate_M2(policy, rng=rng)
    L = lipschitz_factors(policy.system, policy.feedback, policy.region,
                          b.n_lipschitz_samples, rng)
    M3 = float(b.safety_margin * np.prod(L))
    tau_min = scan_tau_min(policy, M2=M2 if b.m2_mode == "global" else None, rng=rng)
    delta_max = compute_delta_max(policy, M3, tau_min)
    est = BoundEstimates(M2=M2, M3=M3, tau_min=tau_min, delta_max=delta_max,
                         L_f0=L[0], L_kappa=L[1], L_x=L[2])
    return replace(policy, precomputed=est)


def make_policy(mode, budget: TriggerBudget, cert: LyapunovCertificate, system: SystemModel,
                feedback: FeedbackLaw, delta: Optional[float] = None, x0=None,
                bounds: Optional[BoundConfig] = None, rng=None) -> TriggerPolicy:
    """Build and precompute a policy; ``x0`` fixes the stability-mode level set."""
    mode = TriggerMode(mode)
    if mode.is_safety:
        region = safety_region(delta)
    else:
        if x0 is None:
            raise UsageError("stability mode needs x0 to fix the sublevel set")
        region = stability_region(cert, x0, system.domain_radius)
    policy = TriggerPolicy(mode=mode, budget=budget, cert=cert, system=system,
                           feedback=feedback, region=region, delta=delta,
                           bounds=bounds or BoundConfig())
    return precompute(policy, rng)


# --------------------------------------------------------------------------
# Perturbation admissibility

def nu_threshold(cert: LyapunovCertificate, delta: float, theta_g: float) -> float:
    """Largest perturbation norm the safe ball ``B_delta`` can absorb."""
    if not delta > 0:
        raise UsageError("delta must be positive")
    if not 0 < theta_g < 1:
        raise UsageError("theta_g must lie in (0, 1)")
    return theta_g * compose_chain(cert, delta) / float(cert.alpha4(delta))


@dataclass(frozen=True)
class AdmissibilityReport:
    admissible: bool
    margin: float
    nu: float
    max_norm: float


def check_admissible(sys: SystemModel, fb: FeedbackLaw, cert: LyapunovCertificate,
                     delta: float, theta_g: float, n_samples: int = 4000, rng=None,
                     margin: float = 1.0) -> AdmissibilityReport:
    """Sampled worst ``||g(x, kappa(x_k), mu, d)||`` against ``nu(delta)``.

    States are drawn uniformly from ``B_delta``; ``mu`` and ``d`` are drawn from
    their boxes, and every box vertex is also evaluated on a subset of states.
    """
    rng = np.random.default_rng(rng)
    nu = nu_threshold(cert, delta, theta_g)
    x = sample_ball(rng, sys.n, delta, n_samples)
    xk = sample_ball(rng, sys.n, delta, n_samples)
    u = fb(xk)
    mu = sys.mu_bounds.sample(rng, n_samples)
    d = sys.d_bounds.sample(rng, n_samples)
    worst = np.linalg.norm(sys.perturbation_field(x, u, mu, d), axis=-1).max()
    m = min(n_samples, 256)
    for mv in sys.mu_bounds.vertices():
        for dv in sys.d_bounds.vertices():
            g = sys.perturbation_field(x[:m], u[:m], np.broadcast_to(mv, (m, mv.size)),
                                       np.broadcast_to(dv, (m, dv.size)))
            worst = max(worst, np.linalg.norm(g, axis=-1).max())
    worst = float(margin * worst)
    return AdmissibilityReport(admissible=worst <= nu, margin=nu - worst, nu=nu, max_norm=worst)

"""
Brute-force baselines for the trigger module.

Nothing here shares code with the bound estimators beyond the plant
callbacks: hold times come from simulating the held flow and testing the
criterion point by point, maxima from dense sampling, and roots from
bisection.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import FeedbackLaw, SystemModel, sample_ball
from .errors import NoSolutionError, UsageError
from .lyapunov import LyapunovCertificate
from .sim import rk4_step


@dataclass(frozen=True)
class LyapunovDecrease:
    """``grad V . f0(x, kappa(x_k)) <= -(1 - theta) alpha3(||x||)`` along the hold.

    Points inside the certificate's inner radius are not checked; leaving the
    valid radius counts as a failure.
    """

    cert: LyapunovCertificate
    theta: float

    def __post_init__(self):
        if not 0 <= self.theta < 1:
            raise UsageError("theta must lie in [0, 1)")

    def passes(self, sys: SystemModel, u_k, x) -> bool:
        r = float(np.linalg.norm(x))
        if r <= self.cert.inner_radius:
            return True
        if r > self.cert.valid_radius:
            return False
        vdot = float(np.dot(self.cert.grad(x), sys.nominal_field(x, u_k)))
        return vdot <= -(1.0 - self.theta) * float(self.cert.alpha3(r))


@dataclass(frozen=True)
class SafetyBall:
    """``||x(t)|| < delta`` along the hold and for ``horizon`` seconds after it.

    The extra horizon models the stale input that stays on until the next
    actuation, i.e. up to one actuation delay past the next sampling instant.
    """

    delta: float
    horizon: float = 0.0

    def __post_init__(self):
        if not self.delta > 0 or self.horizon < 0:
            raise UsageError("need delta > 0 and horizon >= 0")

    def passes(self, sys: SystemModel, u_k, x) -> bool:
        return float(np.linalg.norm(x)) < self.delta


HoldCriterion = LyapunovDecrease | SafetyBall


@dataclass(frozen=True)
class OracleHold:
    hold: float
    # True when the criterion already fails within ``tol`` of the sampling instant
    failed_at_start: bool
    # True when no failure was found up to h_max
    saturated: bool


def _first_failure(rhs, ok, x0, t_max, step):
    """Scan ``[0, t_max]`` step by step; returns ``(t_pass, x_pass, t_fail)``."""
    n = max(1, math.ceil(t_max / step - 1e-9))
    h = t_max / n
    x = np.asarray(x0, dtype=float)
    for i in range(n):
        x_new = rk4_step(rhs, x, h)
        if not ok(x_new):
            return i * h, x, (i + 1) * h
        x = x_new
    return t_max, x, None


def oracle_hold_time(sys: SystemModel, fb: FeedbackLaw, x_k, criterion: HoldCriterion,
                     h_max: float, tol: float = 1e-6, step: Optional[float] = None,
                     n_prescan: int = 32) -> OracleHold:
    """Longest hold ``h <= h_max`` for which the held flow meets ``criterion``.

    The held flow ``dx/dt = f0(x, kappa(x_k))`` is integrated from ``x_k`` with
    RK4 steps of at most ``step`` (default ``h_max / (64 n_prescan)``). The
    first step whose end point fails is then bisected down to ``tol``. Scanning
    every step makes the result the first failure time even if the criterion
    is not monotone in the hold length.
    """
    if not h_max > 0 or not tol > 0:
        raise UsageError("h_max and tol must be positive")
    x_k = np.asarray(x_k, dtype=float)
    u_k = fb(x_k)
    rhs = lambda z: sys.nominal_field(z, u_k)
    ok = lambda z: bool(np.all(np.isfinite(z))) and criterion.passes(sys, u_k, z)
    extra = criterion.horizon if isinstance(criterion, SafetyBall) else 0.0
    step = step or h_max / (64 * n_prescan)

    if not ok(x_k):
        return OracleHold(0.0, True, False)
    t_pass, x_pass, t_fail = _first_failure(rhs, ok, x_k, h_max + extra, step)
    if t_fail is None:
        return OracleHold(h_max, False, True)
    lo, hi = 0.0, t_fail - t_pass
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        n = max(1, math.ceil(mid / (step / 16)))
        x = x_pass
        for _ in range(n):
            x = rk4_step(rhs, x, mid / n)
        if ok(x):
            lo = mid
        else:
            hi = mid
    t_first = t_pass + lo
    hold = max(0.0, min(h_max, t_first - extra))
    return OracleHold(hold, hold <= tol, False)


def ball_sampler(n: int, radius: float) -> Callable:
    """``(rng, size) -> points`` drawing uniformly from the ball of ``radius``."""
    return lambda rng, size: sample_ball(rng, n, radius, size)


def pair_sampler(n: int, radius: float) -> Callable:
    """Draws concatenated pairs ``(xbar, x_k)`` from the same ball."""
    return lambda rng, size: np.concatenate(
        [sample_ball(rng, n, radius, size), sample_ball(rng, n, radius, size)], axis=-1)


def oracle_max_norm(field: Callable, sampler: Callable, n_dense: int, rng=None,
                    chunk: int = 50_000) -> float:
    """Largest ``||field(z)||`` over ``n_dense`` points from ``sampler``."""
    if n_dense < 1:
        raise UsageError("n_dense must be >= 1")
    rng = np.random.default_rng(rng)
    best = 0.0
    done = 0
    while done < n_dense:
        m = min(chunk, n_dense - done)
        z = sampler(rng, m)
        vals = np.asarray(field(z), dtype=float)
        norms = np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals, axis=-1)
        best = max(best, float(norms.max()))
        done += m
    return best


def oracle_root(M1: float, M2: float, c: float, tol: float = 1e-13,
                tau_cap: float = math.inf) -> float:
    """Largest ``y`` with ``M1 y + M2 y^2 <= c`` by bracketing and bisection.

    ``tol`` is relative to the bracket.
    """
    if not c > 0:
        raise NoSolutionError(f"budget c={c} leaves no positive hold time")
    if M1 < 0 or M2 < 0:
        raise UsageError("M1 and M2 must be non-negative")
    if M1 == 0 and M2 == 0:
        return float(tau_cap)
    g = lambda y: M1 * y + M2 * y * y - c
    lo, hi = 0.0, 1.0
    while g(hi) <= 0:
        lo, hi = hi, 2.0 * hi
        if lo >= tau_cap:
            return float(tau_cap)
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if g(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return float(min(lo, tau_cap))

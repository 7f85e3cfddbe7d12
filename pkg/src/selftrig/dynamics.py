"""
Plant models, feedback laws and derivative information.

All vector fields follow one convention: states and inputs live on the last
axis, so a field written with ``x[..., 0]`` style indexing evaluates a single
point or a whole batch of points without change. Batched evaluation is what
keeps the sampling-based bound estimators cheap.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, NumericError, UsageError

Field = Callable[..., np.ndarray]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``{v : lower <= v <= upper}``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise UsageError("box bounds must be 1-D arrays of equal length")
        if np.any(lo > hi):
            raise UsageError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def point(cls, value) -> "Box":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(v, v.copy())

    @classmethod
    def zero(cls, dim: int) -> "Box":
        return cls.point(np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.lower.size

    def contains(self, v, tol: float = 0.0) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.lower - tol) and np.all(v <= self.upper + tol))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((size, self.dim))

    def vertices(self) -> np.ndarray:
        """All ``2**dim`` corners (duplicates kept for degenerate sides)."""
        grids = np.meshgrid(*[(lo, hi) for lo, hi in zip(self.lower, self.upper)],
                            indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)


def sample_ball(rng: np.random.Generator, n: int, radius: float, size: int,
                inner: float = 0.0) -> np.ndarray:
    """Uniform samples from the shell ``inner <= ||x|| <= radius`` in R^n."""
    if radius <= 0 or inner < 0 or inner > radius:
        raise UsageError(f"bad shell radii inner={inner}, radius={radius}")
    direction = rng.standard_normal((size, n))
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    # inverse-CDF of the radial density r^(n-1) on [inner, radius]
    r = (inner**n + (radius**n - inner**n) * rng.random(size)) ** (1.0 / n)
    return direction * r[:, None]


def _zero_perturbation(x, u, mu, d):
    return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SystemModel:
    """Perturbed plant ``dx/dt = f0(x, u) + g(x, u, mu, d)``.

    ``perturbation_field`` must vanish at ``mu = 0, d = 0``. Optional
    ``dfdx``/``dfdu`` callbacks return analytic Jacobians of ``f0``; without
    them central finite differences are used.
    """

    n: int
    p: int
    nominal_field: Field
    domain_radius: float
    perturbation_field: Field = _zero_perturbation
    mu_bounds: Optional[Box] = None
    d_bounds: Optional[Box] = None
    dfdx: Optional[Field] = None
    dfdu: Optional[Field] = None
    name: str = "custom"

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise UsageError("state and input dimensions must be positive")
        if not self.domain_radius > 0:
            raise UsageError("domain_radius must be positive")
        for label in ("mu_bounds", "d_bounds"):
            box = getattr(self, label)
            if box is None:
                object.__setattr__(self, label, Box.zero(1))
            elif not box.contains(np.zeros(box.dim)):
                raise UsageError(f"{label} must contain the origin")

    def zero_mu(self) -> np.ndarray:
        return np.zeros(self.mu_bounds.dim)

    def zero_d(self) -> np.ndarray:
        return np.zeros(self.d_bounds.dim)


@dataclass(frozen=True)
class FeedbackLaw:
    """State feedback ``u = kappa(x)`` with an optional analytic Jacobian."""

    kappa: Field
    kappa_jacobian: Optional[Field] = None

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.kappa(np.asarray(x, dtype=float)), dtype=float)

    def jacobian(self, x, h_fd: Optional[float] = None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kappa_jacobian is not None:
            jac = np.asarray(self.kappa_jacobian(x), dtype=float)
        else:
            jac = fd_jacobian(self.kappa, x, h_fd)
        _check_finite(jac, "feedback Jacobian")
        return jac


@dataclass(frozen=True)
class JacobianBundle:
    dfdx: np.ndarray
    dfdu: np.ndarray
    x: np.ndarray
    u: np.ndarray


def _check_finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite {what}")


def _as_vector(v, dim, what):
    v = np.asarray(v, dtype=float)
    if v.shape[-1:] != (dim,):
        raise UsageError(f"{what} must have trailing dimension {dim}, got shape {v.shape}")
    return v


def default_fd_step(x) -> np.ndarray:
    """``1e-6 * (1 + ||x||)`` per point, shaped to broadcast against ``x``."""
    return 1e-6 * (1.0 + np.linalg.norm(x, axis=-1, keepdims=True))


def fd_jacobian(fun: Field, x, h_fd=None) -> np.ndarray:
    """Central-difference Jacobian of ``fun`` at ``x``; shape ``(..., m, n)``."""
    x = np.asarray(x, dtype=float)
    h = default_fd_step(x) if h_fd is None else np.broadcast_to(
        np.asarray(h_fd, dtype=float), x.shape[:-1] + (1,))
    cols = []
    for j in range(x.shape[-1]):
        step = np.zeros_like(x)
        step[..., j] = h[..., 0]
        fp = np.asarray(fun(x + step), dtype=float)
        fm = np.asarray(fun(x - step), dtype=float)
        cols.append((fp - fm) / (2.0 * h))
    return np.stack(cols, axis=-1)


def eval_nominal(sys: SystemModel, x, u) -> np.ndarray:
    x = _as_vector(x, sys.n, "state")
    u = _as_vector(u, sys.p, "input")
    out = np.asarray(sys.nominal_field(x, u), dtype=float)
    _check_finite(out, "nominal field value")
    return out


def eval_perturbation(sys: SystemModel, x, u, mu, d) -> np.ndarray:
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if not sys.mu_bounds.contains(mu, tol=1e-12):
        raise DomainError(f"mu={mu} outside its declared box")
    if not sys.d_bounds.contains(d, tol=1e-12):
        raise DomainError(f"d={d} outside its declared box")
    out = np.asarray(sys.perturbation_field(x, u, mu, d), dtype=float)
    _check_finite(out, "perturbation value")
    return np.broadcast_to(out, np.shape(x)).copy() if out.shape != np.shape(x) else out


def eval_perturbed(sys: SystemModel, x, u, mu, d) -> np.ndarray:
    """``f(x, u, mu, d) = f0(x, u) + g(x, u, mu, d)``."""
    return eval_nominal(sys, x, u) + eval_perturbation(sys, x, u, mu, d)


def holding_error(sys: SystemModel, fb: FeedbackLaw, x, x_k) -> np.ndarray:
    """Vector-field error ``f0(x, kappa(x_k)) - f0(x, kappa(x))`` from a stale input."""
    x = _as_vector(x, sys.n, "state")
    x_k = _as_vector(x_k, sys.n, "sampled state")
    return eval_nominal(sys, x, fb(x_k)) - eval_nominal(sys, x, fb(x))


def jacobians(sys: SystemModel, x, u, h_fd=None) -> JacobianBundle:
    """Jacobians of ``f0`` at ``(x, u)``; works on single points or batches."""
    x = _as_vector(x, sys.n, "state")
    u = _as_vector(u, sys.p, "input")
    if sys.dfdx is not None:
        dfdx = np.asarray(sys.dfdx(x, u), dtype=float)
    else:
        dfdx = fd_jacobian(lambda z: sys.nominal_field(z, u), x, h_fd)
    if sys.dfdu is not None:
        dfdu = np.asarray(sys.dfdu(x, u), dtype=float)
    else:
        h_u = None if h_fd is None else h_fd
        dfdu = fd_jacobian(lambda v: sys.nominal_field(x, v), u, h_u)
    _check_finite(dfdx, "state Jacobian")
    _check_finite(dfdu, "input Jacobian")
    return JacobianBundle(dfdx=dfdx, dfdu=dfdu, x=x, u=u)

"""Built-in plants, feedback laws and certificates addressable by name."""
from __future__ import annotations

import numpy as np

from .dynamics import Box, FeedbackLaw, SystemModel
from .errors import UsageError
from .lyapunov import (ClassKFunction, LyapunovCertificate, quadratic_certificate,
                       solve_lyapunov_equation)

#: radius on which the benchmark decrease inequality holds
EXAMPLE1_RADIUS = 2.0 / 3.0
EXAMPLE1_A_C = np.array([[-1.0, 1.0], [0.0, -1.0]])


def _example1_f0(x, u):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([-x1 + x2 + x1**2, (1.0 + x1) * u[..., 0]], axis=-1)


def _example1_dfdx(x, u):
    x1 = x[..., 0]
    zero = np.zeros_like(x1)
    return np.stack([np.stack([-1.0 + 2.0 * x1, np.ones_like(x1)], axis=-1),
                     np.stack([u[..., 0] + zero, zero], axis=-1)], axis=-2)


def _example1_dfdu(x, u):
    x1 = x[..., 0]
    return np.stack([np.zeros_like(x1), 1.0 + x1], axis=-1)[..., None]


def _example1_g(x, u, mu, d):
    # input-gain uncertainty mu on the actuated channel plus additive d
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    gain = np.stack([np.zeros_like(x[..., 0]),
                     mu[..., 0] * (1.0 + x[..., 0]) * u[..., 0]], axis=-1)
    return gain + d


def example1_system(mu_bounds: Box | None = None, d_bounds: Box | None = None,
                    domain_radius: float = EXAMPLE1_RADIUS) -> SystemModel:
    """``f0(x, u) = (-x1 + x2 + x1^2, (1 + x1) u)``."""
    return SystemModel(
        n=2, p=1,
        nominal_field=_example1_f0,
        perturbation_field=_example1_g,
        mu_bounds=mu_bounds if mu_bounds is not None else Box.zero(1),
        d_bounds=d_bounds if d_bounds is not None else Box.zero(2),
        domain_radius=domain_radius,
        dfdx=_example1_dfdx,
        dfdu=_example1_dfdu,
        name="example1",
    )


def example1_feedback() -> FeedbackLaw:
    """``kappa(x) = -x2``."""
    return FeedbackLaw(
        kappa=lambda x: -np.asarray(x)[..., 1:2],
        kappa_jacobian=lambda x: np.broadcast_to(
            np.array([[0.0, -1.0]]), np.shape(x)[:-1] + (1, 2)).copy(),
    )


#: weight giving P = [[2, 1], [1, 3]]; the weight 2I printed next to that P
#: actually yields P / 2
EXAMPLE1_Q = 4.0 * np.eye(2)


def example1_certificate(alpha4_factor: float = 2.0) -> LyapunovCertificate:
    """Quadratic certificate with ``P = [[2, 1], [1, 3]]`` and ``alpha3 = r^2 / 2``.

    ``alpha4_factor=1`` gives the printed ``lambda_max r`` gradient bound, which
    understates ``||2 P x||``; the default 2 is the tight valid bound.
    """
    P = solve_lyapunov_equation(EXAMPLE1_A_C, EXAMPLE1_Q)
    alpha3 = ClassKFunction.power(0.5, 2.0, EXAMPLE1_RADIUS)
    return quadratic_certificate(P, alpha3, EXAMPLE1_RADIUS, alpha4_factor=alpha4_factor)


ANNULUS_OUTER = 1.0
ANNULUS_INNER = 0.1


def annulus_system(d_bounds: Box | None = None, mu_bounds: Box | None = None,
                   domain_radius: float = ANNULUS_OUTER) -> SystemModel:
    """Scalar integrator ``dx/dt = u`` with additive disturbance."""
    return SystemModel(
        n=1, p=1,
        nominal_field=lambda x, u: np.asarray(u, dtype=float) + 0.0 * np.asarray(x),
        perturbation_field=lambda x, u, mu, d: np.zeros_like(np.asarray(x, dtype=float)) + d,
        mu_bounds=mu_bounds if mu_bounds is not None else Box.zero(1),
        d_bounds=d_bounds if d_bounds is not None else Box.zero(1),
        domain_radius=domain_radius,
        dfdx=lambda x, u: np.zeros(np.shape(x)[:-1] + (1, 1)),
        dfdu=lambda x, u: np.ones(np.shape(x)[:-1] + (1, 1)),
        name="annulus-linear",
    )


def annulus_feedback() -> FeedbackLaw:
    return FeedbackLaw(
        kappa=lambda x: -np.asarray(x, dtype=float),
        kappa_jacobian=lambda x: -np.ones(np.shape(x)[:-1] + (1, 1)),
    )


def annulus_certificate() -> LyapunovCertificate:
    """``V = x^2`` with linear alpha3/alpha4, valid on ``0.1 <= |x| <= 1``.

    Both alpha3^{-1} and alpha4 are Lipschitz (constants 5 and 2), which is
    what the stability trigger needs.
    """
    R = ANNULUS_OUTER
    return LyapunovCertificate(
        V=lambda x: np.sum(np.asarray(x) ** 2, axis=-1),
        gradV=lambda x: 2.0 * np.asarray(x, dtype=float),
        alpha1=ClassKFunction.power(1.0, 2.0, R),
        alpha2=ClassKFunction.power(1.0, 2.0, R),
        alpha3=ClassKFunction.power(0.2, 1.0, R, inverse_lipschitz_const=5.0),
        alpha4=ClassKFunction.power(2.0, 1.0, R, lipschitz_const=2.0),
        valid_radius=R,
        inner_radius=ANNULUS_INNER,
    )


def linear_system(A, B, domain_radius: float = 1.0, name: str = "linear") -> SystemModel:
    """``dx/dt = A x + B u`` with exact Jacobians."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, p = B.shape
    return SystemModel(
        n=n, p=p,
        nominal_field=lambda x, u: np.asarray(x) @ A.T + np.asarray(u) @ B.T,
        domain_radius=domain_radius,
        d_bounds=Box.zero(n),
        perturbation_field=lambda x, u, mu, d: np.zeros_like(np.asarray(x, dtype=float)) + d,
        dfdx=lambda x, u: np.broadcast_to(A, np.shape(x)[:-1] + A.shape).copy(),
        dfdu=lambda x, u: np.broadcast_to(B, np.shape(x)[:-1] + B.shape).copy(),
        name=name,
    )


def linear_feedback(K) -> FeedbackLaw:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return FeedbackLaw(
        kappa=lambda x: np.asarray(x, dtype=float) @ K.T,
        kappa_jacobian=lambda x: np.broadcast_to(K, np.shape(x)[:-1] + K.shape).copy(),
    )


BUILTIN = {
    "example1": (example1_system, example1_feedback),
    "annulus-linear": (annulus_system, annulus_feedback),
}


def builtin(name: str, **kwargs):
    """Return ``(system, feedback)`` for a built-in plant name."""
    try:
        make_sys, make_fb = BUILTIN[name]
    except KeyError:
        raise UsageError(f"unknown system {name!r}; choose from {sorted(BUILTIN)}") from None
    return make_sys(**kwargs), make_fb()

"""Class-K comparison functions, Lyapunov certificates and quadratic forms."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import FeedbackLaw, SystemModel, sample_ball
from .errors import DomainError, NoSolutionError, NumericError, UsageError


@dataclass(frozen=True)
class ClassKFunction:
    """A class-K function, either ``c * r**q`` or a strictly increasing table.

    Lipschitz constants are declarations used by the stability trigger. They
    are only accepted when they can actually hold on the bounded domain, and
    never below the true constant.
    """

    kind: str
    coefficient: float = 1.0
    exponent: float = 1.0
    domain_max: float = np.inf
    lipschitz_const: Optional[float] = None
    inverse_lipschitz_const: Optional[float] = None
    table_r: Optional[np.ndarray] = field(default=None, repr=False)
    table_v: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def power(cls, coefficient, exponent, domain_max=np.inf, lipschitz_const=None,
              inverse_lipschitz_const=None) -> "ClassKFunction":
        return cls("power", float(coefficient), float(exponent), float(domain_max),
                   lipschitz_const, inverse_lipschitz_const)

    @classmethod
    def tabulated(cls, r, v, lipschitz_const=None,
                  inverse_lipschitz_const=None) -> "ClassKFunction":
        r = np.asarray(r, dtype=float)
        v = np.asarray(v, dtype=float)
        return cls("table", domain_max=float(r[-1]) if r.size else 0.0,
                   lipschitz_const=lipschitz_const,
                   inverse_lipschitz_const=inverse_lipschitz_const,
                   table_r=r, table_v=v)

    @classmethod
    def identity(cls, domain_max=np.inf) -> "ClassKFunction":
        return cls.power(1.0, 1.0, domain_max, 1.0, 1.0)

    def __post_init__(self):
        if self.kind == "power":
            if not (self.coefficient > 0 and self.exponent > 0):
                raise UsageError("power-law class-K needs coefficient > 0 and exponent > 0")
            if not self.domain_max > 0:
                raise UsageError("domain_max must be positive")
        elif self.kind == "table":
            r, v = self.table_r, self.table_v
            if r is None or v is None or r.ndim != 1 or r.shape != v.shape or r.size < 2:
                raise UsageError("tabulated class-K needs two equal 1-D arrays of length >= 2")
            if r[0] != 0.0 or v[0] != 0.0:
                raise UsageError("tabulated class-K must start at (0, 0)")
            if np.any(np.diff(r) <= 0) or np.any(np.diff(v) <= 0):
                raise UsageError("tabulated class-K must be strictly increasing")
        else:
            raise UsageError(f"unknown class-K kind {self.kind!r}")
        if self.lipschitz_const is not None:
            true = self._true_lipschitz()
            if true is None:
                raise UsageError("function is not Lipschitz on its domain; "
                                 "refusing the declared constant")
            if self.lipschitz_const < true * (1 - 1e-12):
                raise UsageError(f"declared Lipschitz constant {self.lipschitz_const} "
                                 f"is below the true value {true}")
        if self.inverse_lipschitz_const is not None:
            true = self._true_inverse_lipschitz()
            if true is None:
                raise UsageError("inverse is not Lipschitz on the range; "
                                 "refusing the declared constant")
            if self.inverse_lipschitz_const < true * (1 - 1e-12):
                raise UsageError(f"declared inverse Lipschitz constant "
                                 f"{self.inverse_lipschitz_const} is below the true value {true}")

    def _true_lipschitz(self):
        if self.kind == "table":
            return float(np.max(np.diff(self.table_v) / np.diff(self.table_r)))
        c, q, R = self.coefficient, self.exponent, self.domain_max
        if q == 1:
            return c
        if q > 1 and np.isfinite(R):
            return c * q * R ** (q - 1)
        return None

    def _true_inverse_lipschitz(self):
        if self.kind == "table":
            return float(1.0 / np.min(np.diff(self.table_v) / np.diff(self.table_r)))
        c, q = self.coefficient, self.exponent
        if q == 1:
            return 1.0 / c
        if q < 1 and np.isfinite(self.domain_max):
            s_max = c * self.domain_max ** q
            return (1.0 / q) * c ** (-1.0 / q) * s_max ** (1.0 / q - 1.0)
        return None

    @property
    def range_max(self) -> float:
        return float(self(self.domain_max)) if np.isfinite(self.domain_max) else np.inf

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(r > self.domain_max * (1 + 1e-12)):
            raise DomainError(f"class-K argument outside [0, {self.domain_max}]")
        if self.kind == "power":
            out = self.coefficient * r ** self.exponent
        else:
            out = np.interp(r, self.table_r, self.table_v)
        return out if out.ndim else float(out)

    def inverse(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0) or np.any(s > self.range_max * (1 + 1e-12)):
            raise DomainError(f"class-K inverse argument outside [0, {self.range_max}]")
        if self.kind == "power":
            out = (s / self.coefficient) ** (1.0 / self.exponent)
        else:
            out = self._bisect_inverse(s)
        return out if out.ndim else float(out)

    def _bisect_inverse(self, s):
        lo = np.zeros_like(s)
        hi = np.full_like(s, self.domain_max)
        tol = 1e-12 * self.domain_max
        while np.any(hi - lo > tol):
            mid = 0.5 * (lo + hi)
            below = np.interp(mid, self.table_r, self.table_v) < s
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def to_dict(self) -> dict:
        if self.kind == "power":
            out = {"coefficient": self.coefficient, "exponent": self.exponent}
            if np.isfinite(self.domain_max):
                out["domain_max"] = self.domain_max
        else:
            out = {"table_r": self.table_r.tolist(), "table_v": self.table_v.tolist()}
        if self.lipschitz_const is not None:
            out["lipschitz"] = self.lipschitz_const
        if self.inverse_lipschitz_const is not None:
            out["inverse_lipschitz"] = self.inverse_lipschitz_const
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ClassKFunction":
        if "table_r" in data:
            return cls.tabulated(data["table_r"], data["table_v"], data.get("lipschitz"),
                                 data.get("inverse_lipschitz"))
        return cls.power(data["coefficient"], data["exponent"],
                         data.get("domain_max", np.inf), data.get("lipschitz"),
                         data.get("inverse_lipschitz"))


@dataclass(frozen=True)
class LyapunovCertificate:
    """``V`` with comparison functions ``alpha1..alpha4``.

    The inequalities are declared on ``inner_radius <= ||x|| <= valid_radius``;
    ``inner_radius`` is zero except for certificates valid only on an annulus.
    """

    V: Callable
    gradV: Callable
    alpha1: ClassKFunction
    alpha2: ClassKFunction
    alpha3: ClassKFunction
    alpha4: ClassKFunction
    valid_radius: float
    inner_radius: float = 0.0
    P: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.valid_radius > self.inner_radius >= 0:
            raise UsageError("need valid_radius > inner_radius >= 0")

    def value(self, x):
        return np.asarray(self.V(np.asarray(x, dtype=float)), dtype=float)

    def grad(self, x):
        return np.asarray(self.gradV(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class QuadraticForm:
    P: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise UsageError("P must be square")
        if not np.allclose(P, P.T, rtol=0, atol=1e-12):
            raise UsageError("P must be symmetric")
        if symmetric_eigen_bounds(P)[0] <= 0:
            raise UsageError("P must be positive definite")
        object.__setattr__(self, "P", P)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,ij,...j->...", x, self.P, x)

    def grad(self, x):
        return 2.0 * np.asarray(x, dtype=float) @ self.P


def solve_lyapunov_equation(A_c, Q) -> QuadraticForm:
    """Solve ``P A_c + A_c^T P = -Q`` via the vectorised n^2 x n^2 system."""
    A = np.atleast_2d(np.asarray(A_c, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = A.shape[0]
    if A.shape != (n, n) or Q.shape != (n, n):
        raise UsageError("A_c and Q must be square with matching size")
    if np.max(np.linalg.eigvals(A).real) >= 0:
        raise NoSolutionError("A_c is not Hurwitz")
    eye = np.eye(n)
    # vec(P A) = (A^T kron I) vec(P), vec(A^T P) = (I kron A^T) vec(P), row-major vec
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    try:
        vecP = np.linalg.solve(K, -Q.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular Lyapunov system: {exc}") from exc
    P = vecP.reshape(n, n)
    P = 0.5 * (P + P.T)
    residual = np.linalg.norm(P @ A + A.T @ P + Q)
    if residual > 1e-9 * max(1.0, np.linalg.norm(Q)):
        raise NumericError(f"Lyapunov residual {residual:.3e} too large")
    return QuadraticForm(P)


def symmetric_eigen_bounds(P) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix."""
    P = np.atleast_2d(np.asarray(P.P if isinstance(P, QuadraticForm) else P, dtype=float))
    if P.shape[0] != P.shape[1] or not np.allclose(P, P.T, rtol=0, atol=1e-12):
        raise UsageError("matrix must be square and symmetric")
    if P.shape == (2, 2):
        a, b, d = P[0, 0], P[0, 1], P[1, 1]
        mean = 0.5 * (a + d)
        radius = np.hypot(0.5 * (a - d), b)
        return float(mean - radius), float(mean + radius)
    w = np.linalg.eigvalsh(P)
    return float(w[0]), float(w[-1])


def extremal_eigenpairs(P):
    """``((lambda_min, v_min), (lambda_max, v_max))`` with unit eigenvectors."""
    lmin, lmax = symmetric_eigen_bounds(P)
    P = np.atleast_2d(np.asarray(P.P if isinstance(P, QuadraticForm) else P, dtype=float))
    w, v = np.linalg.eigh(P)
    return (lmin, v[:, 0]), (lmax, v[:, -1])


def quadratic_certificate(P, alpha3: ClassKFunction, valid_radius: float,
                          alpha4_factor: float = 2.0) -> LyapunovCertificate:
    """Certificate for ``V = x^T P x``.

    ``alpha4_factor=2`` gives the tight gradient bound ``2 lambda_max r``;
    ``1`` gives the smaller ``lambda_max r`` form used by the benchmark configs,
    which does not bound the gradient everywhere.
    """
    form = P if isinstance(P, QuadraticForm) else QuadraticForm(P)
    lmin, lmax = symmetric_eigen_bounds(form)
    R = float(valid_radius)
    return LyapunovCertificate(
        V=form,
        gradV=form.grad,
        alpha1=ClassKFunction.power(lmin, 2.0, R),
        alpha2=ClassKFunction.power(lmax, 2.0, R),
        alpha3=alpha3,
        alpha4=ClassKFunction.power(alpha4_factor * lmax, 1.0, R),
        valid_radius=R,
        P=form.P,
    )


def compose_chain(cert: LyapunovCertificate, delta: float) -> float:
    """``alpha3(alpha2^{-1}(alpha1(delta)))``, the decrease level guarding ``B_delta``."""
    if delta > cert.valid_radius * (1 + 1e-12):
        raise DomainError(f"delta={delta} exceeds the certificate radius {cert.valid_radius}")
    return float(cert.alpha3(cert.alpha2.inverse(cert.alpha1(delta))))


@dataclass(frozen=True)
class CertificateReport:
    """Worst margins (positive means violated) of the three inequality groups."""

    n_samples: int
    sandwich_margin: float
    decrease_margin: float
    gradient_margin: float
    tol: float

    @property
    def violations(self) -> dict:
        out = {}
        for name in ("sandwich", "decrease", "gradient"):
            margin = getattr(self, f"{name}_margin")
            if margin > self.tol:
                out[name] = margin
        return out

    @property
    def ok(self) -> bool:
        return not self.violations


def check_certificate(cert: LyapunovCertificate, sys: SystemModel, fb: FeedbackLaw,
                      n_samples: int = 10_000, rng=None, tol: float = 1e-12,
                      radius: Optional[float] = None) -> CertificateReport:
    rng = np.random.default_rng(rng)
    R = cert.valid_radius if radius is None else radius
    x = sample_ball(rng, sys.n, R, n_samples, inner=min(cert.inner_radius, R))
    r = np.linalg.norm(x, axis=-1)
    V = cert.value(x)
    grad = cert.grad(x)
    vdot = np.einsum("...i,...i->...", grad, sys.nominal_field(x, fb(x)))
    sandwich = np.maximum(cert.alpha1(r) - V, V - cert.alpha2(r))
    decrease = vdot + cert.alpha3(r)
    gradient = np.linalg.norm(grad, axis=-1) - cert.alpha4(r)
    return CertificateReport(n_samples, float(sandwich.max()), float(decrease.max()),
                             float(gradient.max()), tol)

import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selftrig.dynamics import sample_ball
from selftrig.errors import DomainError, NoSolutionError, UsageError
from selftrig.lyapunov import (ClassKFunction, QuadraticForm, check_certificate, compose_chain,
                               extremal_eigenpairs, quadratic_certificate,
                               solve_lyapunov_equation, symmetric_eigen_bounds)
from selftrig.systems import (EXAMPLE1_A_C, EXAMPLE1_Q, annulus_certificate, annulus_feedback,
                              annulus_system, example1_certificate, example1_feedback,
                              example1_system, linear_feedback, linear_system)

P_EX1 = np.array([[2.0, 1.0], [1.0, 3.0]])


def _stable(rng, n):
    M = rng.standard_normal((n, n))
    return M - (np.max(np.linalg.eigvals(M).real) + 0.5) * np.eye(n)


# class-K functions

@given(c=st.floats(0.1, 10), q=st.floats(0.3, 3.0), s=st.floats(0.0, 1.0))
def test_power_law_round_trip(c, q, s):
    a = ClassKFunction.power(c, q, domain_max=2.0)
    s = s * a.range_max
    assert abs(float(a(a.inverse(s))) - s) <= 1e-9 * (1 + s)


def test_round_trip_on_grid():
    for a in (ClassKFunction.power(3.618, 2.0, 1.0),
              ClassKFunction.tabulated([0, 0.5, 1.0, 2.0], [0, 0.1, 0.7, 3.0])):
        s = np.linspace(0, a.range_max, 1000)
        assert np.all(np.abs(a(a.inverse(s)) - s) <= 1e-9 * (1 + s))


def test_class_k_is_zero_at_zero_and_increasing():
    for a in (ClassKFunction.power(0.5, 2.0, 2 / 3), ClassKFunction.power(2.0, 0.5, 1.0),
              ClassKFunction.tabulated([0, 1, 2], [0, 1, 5])):
        r = np.linspace(0, a.domain_max, 200)
        v = a(r)
        assert v[0] == 0.0 and np.all(np.diff(v) > 0)


def test_class_k_outside_domain():
    a = ClassKFunction.power(1.0, 2.0, 1.0)
    with pytest.raises(DomainError):
        a(1.5)
    with pytest.raises(DomainError):
        a(-0.1)


def test_tabulated_must_increase_from_zero():
    with pytest.raises(UsageError):
        ClassKFunction.tabulated([0, 1, 2], [0, 2, 1])
    with pytest.raises(UsageError):
        ClassKFunction.tabulated([0, 1], [0.1, 2])


def test_declared_lipschitz_constants_are_checked():
    # r^2 on [0, 1] is Lipschitz with constant 2; its inverse sqrt is not
    assert ClassKFunction.power(1.0, 2.0, 1.0, lipschitz_const=2.0).lipschitz_const == 2.0
    with pytest.raises(UsageError):
        ClassKFunction.power(1.0, 2.0, 1.0, lipschitz_const=1.0)
    with pytest.raises(UsageError):
        ClassKFunction.power(1.0, 2.0, 1.0, inverse_lipschitz_const=100.0)
    with pytest.raises(UsageError):
        ClassKFunction.power(1.0, 0.5, 1.0, lipschitz_const=100.0)
    assert ClassKFunction.power(0.2, 1.0, 1.0, inverse_lipschitz_const=5.0)


def test_class_k_dict_round_trip():
    for a in (ClassKFunction.power(0.2, 1.0, 1.0, inverse_lipschitz_const=5.0),
              ClassKFunction.tabulated([0, 1, 2], [0, 1, 5])):
        b = ClassKFunction.from_dict(a.to_dict())
        r = np.linspace(0, 1, 11)
        np.testing.assert_array_equal(a(r), b(r))
        assert b.inverse_lipschitz_const == a.inverse_lipschitz_const


# Lyapunov equation and eigenvalues

def test_example1_lyapunov_solution():
    P = solve_lyapunov_equation(EXAMPLE1_A_C, EXAMPLE1_Q).P
    np.testing.assert_allclose(P, P_EX1, atol=1e-9)
    lmin, lmax = symmetric_eigen_bounds(P)
    assert abs(lmin - 1.382) < 1e-3 and abs(lmax - 3.618) < 1e-3


def test_printed_weight_gives_half_of_example1_P():
    P = solve_lyapunov_equation(EXAMPLE1_A_C, 2 * np.eye(2)).P
    np.testing.assert_allclose(P, P_EX1 / 2, atol=1e-12)


def test_diagonal_lyapunov_solution():
    np.testing.assert_allclose(solve_lyapunov_equation(-np.eye(2), 2 * np.eye(2)).P, np.eye(2),
                               atol=1e-14)


@given(seed=st.integers(0, 10_000))
def test_lyapunov_residual_random(seed):
    rng = np.random.default_rng(seed)
    A = _stable(rng, 4)
    M = rng.standard_normal((4, 4))
    Q = M @ M.T + np.eye(4)
    P = solve_lyapunov_equation(A, Q).P
    assert np.linalg.norm(P @ A + A.T @ P + Q) <= 1e-9 * max(1.0, np.linalg.norm(Q))
    assert np.all(P == P.T) and symmetric_eigen_bounds(P)[0] > 0


def test_unstable_matrix_has_no_solution():
    with pytest.raises(NoSolutionError):
        solve_lyapunov_equation([[1.0, 0.0], [0.0, -1.0]], np.eye(2))


def test_eigen_bounds_identity():
    assert symmetric_eigen_bounds(np.eye(3)) == (1.0, 1.0)


@given(seed=st.integers(0, 10_000))
def test_eigen_residual_random(seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((5, 5))
    P = 0.5 * (M + M.T)
    for lam, v in extremal_eigenpairs(P):
        assert np.linalg.norm(P @ v - lam * v) <= 1e-8


def test_eigen_bounds_reject_asymmetric():
    with pytest.raises(UsageError):
        symmetric_eigen_bounds([[1.0, 2.0], [0.0, 1.0]])


def test_quadratic_form_checks():
    with pytest.raises(UsageError):
        QuadraticForm([[1.0, 0.5], [0.4, 1.0]])
    with pytest.raises(UsageError):
        QuadraticForm([[1.0, 0.0], [0.0, -1.0]])


# certificates

def test_identity_quadratic_certificate():
    cert = quadratic_certificate(np.eye(2), ClassKFunction.power(1.0, 2.0, 1.0), 1.0)
    x = np.array([0.3, -0.4])
    assert float(cert.value(x)) == pytest.approx(0.25)
    assert cert.alpha1.coefficient == cert.alpha2.coefficient == 1.0


def test_example1_certificate_coefficients():
    cert = example1_certificate()
    assert cert.alpha1.coefficient == pytest.approx(1.382, abs=1e-3)
    assert cert.alpha2.coefficient == pytest.approx(3.618, abs=1e-3)
    assert cert.alpha4.coefficient == pytest.approx(2 * 3.618, abs=2e-3)
    assert example1_certificate(1.0).alpha4.coefficient == pytest.approx(3.618, abs=1e-3)


def test_gradient_bound_at_random_points():
    cert = example1_certificate()
    x = sample_ball(np.random.default_rng(0), 2, cert.valid_radius, 10_000)
    r = np.linalg.norm(x, axis=1)
    assert np.all(np.linalg.norm(cert.grad(x), axis=1) <= cert.alpha4(r) * (1 + 1e-12))


def test_printed_gradient_bound_is_too_small():
    cert = example1_certificate(1.0)
    x = sample_ball(np.random.default_rng(0), 2, cert.valid_radius, 1000)
    r = np.linalg.norm(x, axis=1)
    assert np.any(np.linalg.norm(cert.grad(x), axis=1) > cert.alpha4(r))


def test_compose_chain_values():
    ident = dataclasses.replace(
        quadratic_certificate(np.eye(1), ClassKFunction.identity(2.0), 2.0),
        alpha1=ClassKFunction.identity(2.0), alpha2=ClassKFunction.identity(2.0))
    assert compose_chain(ident, 1.0) == pytest.approx(1.0)
    cert = example1_certificate()
    expected = 0.5 * (cert.alpha1.coefficient / cert.alpha2.coefficient) * 1e-8
    assert compose_chain(cert, 1e-4) == pytest.approx(expected, rel=1e-12)
    assert compose_chain(cert, 1e-4) == pytest.approx(1.910e-9, rel=1e-3)


@given(d1=st.floats(1e-6, 0.6), d2=st.floats(1e-6, 0.6))
def test_compose_chain_increasing(d1, d2):
    cert = example1_certificate()
    if d1 < d2:
        assert compose_chain(cert, d1) < compose_chain(cert, d2)


def test_compose_chain_outside_radius():
    with pytest.raises(DomainError):
        compose_chain(example1_certificate(), 1.0)


def test_example1_certificate_holds():
    rep = check_certificate(example1_certificate(), example1_system(), example1_feedback(),
                            rng=0)
    assert rep.ok, rep.violations


def test_inflated_alpha3_is_flagged():
    cert = example1_certificate()
    bad = dataclasses.replace(cert, alpha3=ClassKFunction.power(5.0, 2.0, cert.valid_radius))
    rep = check_certificate(bad, example1_system(), example1_feedback(), rng=0)
    assert "decrease" in rep.violations


def test_annulus_certificate_holds():
    rep = check_certificate(annulus_certificate(), annulus_system(), annulus_feedback(), rng=0)
    assert rep.ok, rep.violations


@given(seed=st.integers(0, 1000))
def test_random_linear_certificate_holds(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2))
    B = rng.standard_normal((2, 1))
    K = rng.standard_normal((1, 2))
    A_c = A + B @ K
    if np.max(np.linalg.eigvals(A_c).real) > -0.05:
        A = A - (np.max(np.linalg.eigvals(A_c).real) + 0.5) * np.eye(2)
        A_c = A + B @ K
    Q = np.eye(2)
    P = solve_lyapunov_equation(A_c, Q).P
    # V' = -x^T Q x <= -lambda_min(Q) |x|^2
    cert = quadratic_certificate(P, ClassKFunction.power(1.0 - 1e-9, 2.0, 1.0), 1.0)
    rep = check_certificate(cert, linear_system(A, B), linear_feedback(K), n_samples=2000,
                            rng=seed)
    assert rep.ok, rep.violations

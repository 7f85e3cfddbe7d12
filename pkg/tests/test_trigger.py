import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import DELTA, example1_policy
from selftrig.dynamics import Box, FeedbackLaw, SystemModel, sample_ball
from selftrig.errors import ConfigError, DomainError, NoSolutionError, UsageError
from selftrig.lyapunov import ClassKFunction, LyapunovCertificate
from selftrig.oracle import SafetyBall, oracle_hold_time, oracle_root
from selftrig.systems import (annulus_certificate, annulus_feedback, annulus_system,
                              example1_certificate, example1_feedback, example1_system,
                              linear_feedback, linear_system)
from selftrig.trigger import (BoundConfig, Region, TriggerBudget, TriggerMode, TriggerPolicy,
                              check_admissible, compute_delta_max, compute_phi1, compute_phi2,
                              delay_numerator, estimate_M2, estimate_M3, hold_times,
                              lipschitz_factors, make_policy, next_sample_time, nu_threshold,
                              rhs_for_mode, scan_tau_min, solve_hold_inequality)

A_LIN = np.array([[0.0, 1.0], [-1.0, -0.3]])
B_LIN = np.array([[0.0], [1.0]])
K_LIN = np.array([[-1.0, -1.5]])


def identity_cert(R=2.0):
    ident = ClassKFunction.identity(R)
    return LyapunovCertificate(V=lambda x: np.linalg.norm(x, axis=-1),
                               gradV=lambda x: x / np.linalg.norm(x, axis=-1, keepdims=True),
                               alpha1=ident, alpha2=ident, alpha3=ident, alpha4=ident,
                               valid_radius=R)


def bare_policy(mode="safety-nominal", theta1=0.5, theta2=0.3, cert=None, delta=1.0, **kw):
    sys, fb = example1_system(), example1_feedback()
    cert = cert or identity_cert()
    return TriggerPolicy(mode=mode, budget=TriggerBudget(theta1, theta2), cert=cert, system=sys,
                         feedback=fb, region=Region(delta or 1.0), delta=delta, **kw)


# phi1 / M1

def test_phi1_zero_at_origin():
    assert np.all(compute_phi1(example1_system(), example1_feedback(), np.zeros(2)) == 0)


def test_phi1_example_value():
    phi = compute_phi1(example1_system(), example1_feedback(), [0.1, 0.1])
    np.testing.assert_allclose(phi, [0.0, -0.121], atol=1e-15)


def test_phi1_zero_for_constant_law():
    fb = FeedbackLaw(lambda x: np.full(np.shape(x)[:-1] + (1,), 0.2))
    assert np.all(compute_phi1(example1_system(), fb, [0.3, -0.2]) == 0)


@given(x=st.tuples(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5)))
def test_phi1_matches_finite_difference_along_held_flow(x):
    sys, fb = example1_system(), example1_feedback()
    x_k = np.array(x)
    phi = compute_phi1(sys, fb, x_k)
    u_k = fb(x_k)
    h = 1e-5
    d_h = lambda z: sys.nominal_field(z, u_k) - sys.nominal_field(z, fb(z))
    # one RK4 step forward and back along the held flow
    from selftrig.sim import rk4_step
    fwd = rk4_step(lambda z: sys.nominal_field(z, u_k), x_k, h)
    bwd = rk4_step(lambda z: sys.nominal_field(z, u_k), x_k, -h)
    fd = (d_h(fwd) - d_h(bwd)) / (2 * h)
    assert np.linalg.norm(fd - phi) <= 1e-4 * np.linalg.norm(phi) + 1e-12


# M2

def test_M2_linear_below_analytic_bound():
    sys, fb = linear_system(A_LIN, B_LIN), linear_feedback(K_LIN)
    r = 0.5
    BK = B_LIN @ K_LIN
    analytic = 0.5 * np.linalg.norm(BK @ A_LIN, 2) * (np.linalg.norm(A_LIN, 2)
                                                      + np.linalg.norm(BK, 2)) * r
    b = BoundConfig(n_level_samples=4000)
    est = estimate_M2(sys, fb, region=Region(r), bounds=b, rng=0)
    assert 0 < est <= analytic * b.safety_margin
    # phi2 is exact for a linear held flow up to the RK4 local error
    x = sample_ball(np.random.default_rng(1), 2, r, 50)
    xk = sample_ball(np.random.default_rng(2), 2, r, 50)
    exact = -0.5 * (BK @ A_LIN @ (x @ A_LIN.T + xk @ BK.T).T).T
    np.testing.assert_allclose(compute_phi2(sys, fb, x, xk), exact, atol=1e-6)


def test_M2_zero_for_input_free_plant():
    sys = SystemModel(n=2, p=1, nominal_field=lambda x, u: -x + 0.0 * u[..., :1],
                      domain_radius=1.0)
    assert estimate_M2(sys, example1_feedback(), region=Region(0.5), rng=0) == 0.0


def test_M2_global_converges_under_refinement():
    sys, fb = example1_system(), example1_feedback()
    region = Region(2e-4)
    m_a = estimate_M2(sys, fb, region=region, bounds=BoundConfig(n_level_samples=4000), rng=0)
    m_b = estimate_M2(sys, fb, region=region, bounds=BoundConfig(n_level_samples=8000), rng=1)
    assert abs(m_a - m_b) <= 0.05 * max(m_a, m_b)


def test_M2_level_set_is_deterministic(policy_099):
    x = np.array([3e-5, -2e-5])
    assert estimate_M2(policy_099, x_k=x, rng=5) == estimate_M2(policy_099, x_k=x, rng=5)
    assert hold_times(policy_099, x) == hold_times(policy_099, x)


def test_M2_level_set_below_global(policy_099):
    x = np.array([3e-5, -2e-5])
    glob = estimate_M2(policy_099, rng=0)
    assert estimate_M2(policy_099, x_k=x, rng=0) <= glob


# M3

def test_M3_zero_for_constant_feedback():
    fb = FeedbackLaw(lambda x: np.full(np.shape(x)[:-1] + (1,), 0.2),
                     kappa_jacobian=lambda x: np.zeros(np.shape(x)[:-1] + (1, 2)))
    assert estimate_M3(example1_system(), fb, region=Region(0.5), rng=0) == 0.0


def test_M3_linear_closed_form():
    sys, fb = linear_system(A_LIN, B_LIN), linear_feedback(K_LIN)
    r = 0.7
    b = BoundConfig()
    L_f0, L_k, L_x = lipschitz_factors(sys, fb, Region(r), 4000, rng=0)
    assert L_f0 == pytest.approx(np.linalg.norm(B_LIN, 2))
    assert L_k == pytest.approx(np.linalg.norm(K_LIN, 2))
    bound_x = (np.linalg.norm(A_LIN, 2) + np.linalg.norm(B_LIN @ K_LIN, 2)) * r
    assert L_x <= bound_x
    analytic = np.linalg.norm(B_LIN, 2) * np.linalg.norm(K_LIN, 2) * bound_x
    assert estimate_M3(sys, fb, region=Region(r), bounds=b, rng=0) <= analytic * b.safety_margin


def test_M3_converges_under_refinement():
    sys, fb = example1_system(), example1_feedback()
    m_a = estimate_M3(sys, fb, region=Region(0.5), bounds=BoundConfig(n_lipschitz_samples=4000),
                      rng=0)
    m_b = estimate_M3(sys, fb, region=Region(0.5), bounds=BoundConfig(n_lipschitz_samples=8000),
                      rng=1)
    assert abs(m_a - m_b) <= 0.05 * max(m_a, m_b)


@pytest.mark.parametrize("factor", [1.5, 2.0, 4.0])
def test_bounds_grow_with_region(factor):
    sys, fb = example1_system(), example1_feedback()
    small, big = Region(1e-3), Region(1e-3 * factor)
    assert estimate_M2(sys, fb, region=big, rng=0) >= estimate_M2(sys, fb, region=small, rng=0)
    assert estimate_M3(sys, fb, region=big, rng=0) >= estimate_M3(sys, fb, region=small, rng=0)


# trigger inequality

@pytest.mark.parametrize("M1, M2, c, expected", [(1, 0, 2, 2.0), (1, 1, 2, 1.0),
                                                 (0, 0, 3, 1e3), (0, 4, 1, 0.5)])
def test_solve_hold_inequality_examples(M1, M2, c, expected):
    assert solve_hold_inequality(M1, M2, c, tau_cap=1e3) == pytest.approx(expected, rel=1e-15)


def test_solve_hold_inequality_needs_positive_budget():
    with pytest.raises(NoSolutionError):
        solve_hold_inequality(1.0, 1.0, 0.0)
    with pytest.raises(UsageError):
        solve_hold_inequality(-1.0, 1.0, 1.0)


@given(M1=st.floats(0, 1e3), M2=st.floats(0, 1e3), c=st.floats(1e-9, 1e3))
def test_solve_hold_inequality_is_maximal(M1, M2, c):
    if M1 == 0 and M2 == 0:
        return
    y = solve_hold_inequality(M1, M2, c, tau_cap=1e12)
    assert M1 * y + M2 * y * y <= c * (1 + 1e-12)
    if y < 1e12:
        z = y + 1e-8 * (1 + y)
        assert M1 * z + M2 * z * z > c


def test_closed_form_matches_bisection_sweep():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        M1, M2, c = 10.0 ** rng.uniform(-6, 3, 3)
        y = solve_hold_inequality(M1, M2, c)
        assert abs(oracle_root(M1, M2, c) - y) <= 1e-9 * (1 + y)


@given(M1=st.floats(0, 10), M2=st.floats(0, 10), dM1=st.floats(0, 5), dM2=st.floats(0, 5))
def test_root_decreases_in_coefficients(M1, M2, dM1, dM2):
    y = solve_hold_inequality(M1, M2, 1.0, 1e6)
    assert solve_hold_inequality(M1 + dM1, M2 + dM2, 1.0, 1e6) <= y


def test_rhs_examples():
    stab = TriggerPolicy(mode="stability", budget=TriggerBudget(0.5, 0.3),
                         cert=annulus_certificate(), system=annulus_system(),
                         feedback=annulus_feedback(), region=Region(1.0))
    assert rhs_for_mode(stab) == pytest.approx(0.05)
    assert rhs_for_mode(bare_policy(theta1=0.5)) == pytest.approx(0.5)
    ex1 = bare_policy(theta1=0.99, theta2=0.009, cert=example1_certificate(1.0), delta=1e-4)
    assert rhs_for_mode(ex1) == pytest.approx(0.99 * 1.910e-9 / 3.618e-4, rel=1e-3)


def test_delta_max_examples():
    pol = bare_policy(theta1=0.5, theta2=0.3)
    assert compute_delta_max(pol, 0.0, 0.7) == 0.7
    assert compute_delta_max(pol, 1.0, 10.0) == pytest.approx(0.3)
    literal = dataclasses.replace(pol, bounds=BoundConfig(delta_max_rule="literal"))
    assert compute_delta_max(literal, 1.0, 10.0) == pytest.approx(0.5)
    assert compute_delta_max(pol, 1.0, 0.1) == 0.1


def test_delta_max_literal_rule_example1():
    pol = example1_policy(0.99, 0.009, delta_max_rule="literal")
    # printed value is 0.17 ms; the sampled M3 leaves a factor-2 band
    assert 0.085e-3 <= pol.precomputed.delta_max <= 0.34e-3


def test_delta_numerator_perturbed_rule():
    pol = TriggerPolicy(mode="safety-perturbed", budget=TriggerBudget(0.5, 0.1, 0.2),
                        cert=identity_cert(), system=example1_system(),
                        feedback=example1_feedback(), region=Region(1.0), delta=1.0,
                        bounds=BoundConfig(delta_max_rule="literal"))
    assert delay_numerator(pol) == pytest.approx(0.3)
    assert delay_numerator(dataclasses.replace(pol, bounds=BoundConfig())) == 0.1


# next_sample_time / tau_min

def test_origin_hold_time(policy_099):
    M1, tau_p, _ = hold_times(policy_099, np.zeros(2))
    assert M1 == 0.0 and tau_p == policy_099.bounds.tau_cap
    glob = example1_policy(0.99, 0.009, m2_mode="global")
    c = rhs_for_mode(glob)
    assert hold_times(glob, np.zeros(2))[1] == pytest.approx(np.sqrt(c / glob.precomputed.M2))


def test_hold_time_floor_and_domain(policy_099):
    xs = sample_ball(np.random.default_rng(0), 2, DELTA, 200)
    for x in xs:
        assert next_sample_time(policy_099, x) >= policy_099.bounds.tau_floor
    with pytest.raises(DomainError):
        next_sample_time(policy_099, [DELTA, 0.0])


def test_tau_min_is_positive_and_below_scan(policy_099):
    pc = policy_099.precomputed
    assert pc.tau_min > 0
    xs = sample_ball(np.random.default_rng(3), 2, DELTA, 50)
    assert min(hold_times(policy_099, x)[1] for x in xs) >= 0.5 * pc.tau_min


def test_tau_min_refinement():
    pol = example1_policy(0.99, 0.009, m2_mode="global")
    a = scan_tau_min(pol, n_scan=4000, rng=0)
    b = scan_tau_min(pol, n_scan=8000, rng=1)
    assert abs(a - b) <= 0.1 * max(a, b)


def test_tau_min_constant_field():
    # d_h has constant rate when f0 is linear in u with constant gain and kappa is linear
    sys = SystemModel(n=1, p=1, nominal_field=lambda x, u: u + 0.0 * x, domain_radius=1.0)
    fb = FeedbackLaw(lambda x: np.full(np.shape(x), 1.0),
                     kappa_jacobian=lambda x: np.zeros(np.shape(x)[:-1] + (1, 1)))
    pol = make_policy("safety-nominal", TriggerBudget(0.5, 0.3), identity_cert(), sys, fb,
                      delta=1.0, bounds=BoundConfig(n_scan=50, tau_cap=7.0), rng=0)
    assert scan_tau_min(pol, rng=0) == 7.0


def test_monotone_budget_tradeoff():
    theta = 0.999
    xs = sample_ball(np.random.default_rng(7), 2, DELTA, 20)
    prev = None
    for th1 in (0.5, 0.6, 0.7, 0.8, 0.9, 0.99):
        pol = example1_policy(th1, theta - th1)
        taus = np.array([hold_times(pol, x)[1] for x in xs])
        dmax = pol.precomputed.delta_max
        if prev is not None:
            assert np.all(taus >= prev[0]) and dmax <= prev[1]
        prev = (taus, dmax)


def test_conservative_against_oracle(policy_05):
    xs = sample_ball(np.random.default_rng(11), 2, DELTA, 30)
    crit = SafetyBall(DELTA, policy_05.precomputed.delta_max)
    for x in xs:
        tau = next_sample_time(policy_05, x)
        assert tau <= oracle_hold_time(example1_system(), example1_feedback(), x, crit,
                                       h_max=2 * tau + 1.0).hold


# policy validation

def test_policy_preconditions():
    with pytest.raises(ConfigError):
        bare_policy(delta=None)
    with pytest.raises(ConfigError):
        bare_policy(cert=example1_certificate(), delta=1.0)
    with pytest.raises(ConfigError):
        bare_policy(mode="stability", cert=example1_certificate(), delta=None)
    with pytest.raises(UsageError):
        TriggerBudget(0.6, 0.3, 0.2)
    with pytest.raises(UsageError):
        BoundConfig(safety_margin=0.0)
    with pytest.raises(ConfigError):
        TriggerPolicy(mode="safety-perturbed", budget=TriggerBudget(0.5, 0.3),
                      cert=identity_cert(), system=example1_system(),
                      feedback=example1_feedback(), region=Region(1.0), delta=1.0)


def test_mode_enum():
    assert TriggerMode("stability") is TriggerMode.STABILITY
    assert TriggerMode.SAFETY_PERTURBED.is_safety and not TriggerMode.STABILITY.is_safety


# admissibility

def test_nu_examples():
    ident = identity_cert()
    assert nu_threshold(ident, 1.0, 0.5) == pytest.approx(0.5)
    assert nu_threshold(example1_certificate(1.0), 1e-4, 0.5) == pytest.approx(2.64e-6,
                                                                               rel=1e-2)


@given(a=st.floats(0.01, 0.98), b=st.floats(0.01, 0.98))
def test_nu_increasing_in_theta_g(a, b):
    cert = example1_certificate(1.0)
    if b - a > 1e-9:
        assert nu_threshold(cert, 1e-4, a) < nu_threshold(cert, 1e-4, b)


def test_admissibility_dichotomy():
    cert, fb = example1_certificate(1.0), example1_feedback()
    nu = nu_threshold(cert, DELTA, 0.3)
    zero = check_admissible(example1_system(), fb, cert, DELTA, 0.3, rng=0)
    assert zero.admissible and zero.margin == pytest.approx(nu)
    ok = example1_system(d_bounds=Box([0, 0], [0, 0.9 * nu]))
    assert check_admissible(ok, fb, cert, DELTA, 0.3, rng=0).admissible
    bad = example1_system(d_bounds=Box([0, 0], [0, 10 * nu]))
    rep = check_admissible(bad, fb, cert, DELTA, 0.3, rng=0)
    assert not rep.admissible and rep.margin < 0

"""Self-triggered sampled-data control with actuation delays and perturbations."""

__version__ = "0.1.0"

from .dynamics import (Box, FeedbackLaw, JacobianBundle, SystemModel, eval_nominal,
                       eval_perturbation, eval_perturbed, holding_error, jacobians)
from .errors import (ConfigError, DomainError, NoSolutionError, NumericError, SelfTrigError,
                     UsageError)
from .lyapunov import (ClassKFunction, LyapunovCertificate, QuadraticForm, check_certificate,
                       compose_chain, quadratic_certificate, solve_lyapunov_equation,
                       symmetric_eigen_bounds)
from .oracle import (LyapunovDecrease, SafetyBall, oracle_hold_time, oracle_max_norm,
                     oracle_root)
from .sim import (ConstantPeriod, Continuous, DelayModel, DisturbanceModel, Scenario,
                  SelfTriggered, Signal, Trace, check_lyapunov_decrease, check_safety,
                  run_scenario, trace_stats)
from .trigger import (BoundConfig, TriggerBudget, TriggerMode, TriggerPolicy, check_admissible,
                      compute_delta_max, compute_phi1, compute_phi2, estimate_M2, estimate_M3,
                      make_policy, next_sample_time, nu_threshold, rhs_for_mode, scan_tau_min,
                      solve_hold_inequality)

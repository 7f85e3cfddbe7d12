import numpy as np
import pytest
from hypothesis import settings

from selftrig.config import load_config, resolve
from selftrig.systems import example1_certificate, example1_feedback, example1_system
from selftrig.trigger import BoundConfig, TriggerBudget, make_policy
from importlib import resources

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")

DELTA = 1e-4
X0 = np.array([1e-5, 1e-5])


def bundled(name):
    return str(resources.files("selftrig") / "configs" / f"{name}.yaml")


def example1_policy(theta1, theta2, mode="safety-nominal", theta_g=0.0, **bounds):
    kw = dict(m2_mode="level-set", n_level_samples=1000, n_scan=300)
    kw.update(bounds)
    return make_policy(mode, TriggerBudget(theta1, theta2, theta_g), example1_certificate(1.0),
                       example1_system(), example1_feedback(), delta=DELTA,
                       bounds=BoundConfig(**kw), rng=0)


@pytest.fixture(scope="session")
def policy_099():
    return example1_policy(0.99, 0.009)


@pytest.fixture(scope="session")
def policy_05():
    return example1_policy(0.5, 0.49)


@pytest.fixture(scope="session")
def resolved():
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = resolve(load_config(bundled(name)))
        return cache[name]
    return get


# acceptance verdicts, echoed in the terminal summary
ACCEPTANCE = []


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)

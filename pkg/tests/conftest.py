import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from thzlab import absorption as A
from thzlab import rate as R
from thzlab import scenario as S

settings.register_profile("thzlab", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("thzlab")

# Exponential absorption used across cross-checks (per metre, f in Hz).
ETA = (1.5, -2e-11, 0.1)


@pytest.fixture(scope="session")
def table1():
    return S.table1_defaults()


@pytest.fixture(scope="session")
def quad():
    return R.QuadratureSpec()


@pytest.fixture(scope="session")
def smooth_table(table1):
    _, _, spec = table1
    return A.synthesize_nacsr((spec.epsilon_f, spec.f_hi), A.Profile.SMOOTH_EXPONENTIAL, 7)


@pytest.fixture(scope="session")
def smooth_scenario(table1, smooth_table):
    geo, bud, spec = table1
    d = S.sample_distances(geo, spec.n_s, 42)
    return S.Scenario(d, geo, bud, spec, A.TableAbsorption(smooth_table))


@pytest.fixture(scope="session")
def exp_scenario(table1):
    geo, bud, spec = table1
    model = A.ExponentialAbsorption(*ETA, spec.epsilon_f, spec.f_hi)
    return S.Scenario(S.sample_distances(geo, spec.n_s, 3), geo, bud, spec, model)


@pytest.fixture(scope="session")
def toy():
    """Two users at 3 m and 9 m sharing 8 GHz under exponential absorption."""
    geo, bud, spec = S.table1_defaults(2, b_tot=8e9)
    model = A.ExponentialAbsorption(*ETA, spec.epsilon_f, spec.f_hi)
    return S.Scenario(np.array([3.0, 9.0]), geo, bud, spec, model)


@pytest.fixture(scope="session")
def fig4_run(tmp_path_factory):
    """The default convergence experiment on smooth absorption (desk scale, seed 7).

    Shared by the trainer and acceptance tests; it is the most expensive fixture.
    """
    from thzlab import experiments as E

    out = tmp_path_factory.mktemp("fig4_seed7")
    manifest = E.run(E.ExperimentConfig("fig4", 7, "desk", {}, out))
    return out, manifest


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "ACCEPTANCE_LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])

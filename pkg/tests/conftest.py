import numpy as np
import pytest

from ness_kmc.lyapunov import calibrate_thresholds
from ness_kmc.model import ModelParams

# thresholds from calibrate_thresholds(standard params, seed 0); frozen so
# that unit tests do not pay for a pilot run
M0_STD = 5325.008267306124
M1_STD = 10.440677379189339


@pytest.fixture(scope="session")
def std_params():
    """N=3, T_L=1, T_R=2, K=10, eta=0.05 with calibrated thresholds."""
    return ModelParams(N=3, T_L=1.0, T_R=2.0, K=10.0, eta=0.05, M0=M0_STD, M1=M1_STD, seed=0)


@pytest.fixture(scope="session")
def calibrated_params():
    return calibrate_thresholds(ModelParams(N=3, T_L=1.0, T_R=2.0, K=10.0, eta=0.05, seed=0))


def ks_critical_1pct(n):
    # asymptotic one-sample Kolmogorov-Smirnov critical value at level 0.01
    return 1.6276 / np.sqrt(n)


# one verdict line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def record(tag, ok, detail):
    line = f"{tag}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

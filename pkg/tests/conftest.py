import numpy as np
import pytest

from genebo.surrogate import Coregionalization, Hyperparameters

_ACCEPTANCE = []


def to_hyper(P):
    return Hyperparameters(
        coreg_lin=Coregionalization(P["w_lin"], P["kappa_lin"]),
        coreg_se=Coregionalization(P["w_se"], P["kappa_se"]),
        lengthscales=P["lengthscales"],
        lin_variance=P["lin_variance"],
        se_variance=P["se_variance"],
        noise=P["noise"],
        mean=P["mean"],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion():
    """Record one acceptance verdict; summarized at the end of the session."""
    def record(name, passed, detail=""):
        _ACCEPTANCE.append((name, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}  {detail}")

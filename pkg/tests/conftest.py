"""Shared models, independent oracles and the acceptance report hook."""
from __future__ import annotations

import itertools

import numpy as np
import pytest
from scipy import stats

from phmm import EmissionSpec, HMMModel, PeriodicTPM, TrigLinkSpec, build_tpm

L24 = 24

SCENARIOS = {
    "scenario1": TrigLinkSpec.two_state([-2, -1, -1], [-2, 2, 2], L24),
    "scenario2": TrigLinkSpec.two_state([-5, -1, -1], [-5, 1, 1], L24),
    "scenario3": TrigLinkSpec.two_state([-3, -0.5, -1, 1, -2], [-3, -0.5, 2, 0.5, -0.5], L24),
}
FIG3 = TrigLinkSpec.two_state([-1.2, 0.85, 0.15], [-1.5, -0.7, -1.3], L24)
FIG4 = TrigLinkSpec.two_state([-3, 1.5, -0.9], [-3, 1.2, -1.1], L24)
NB_EMISSIONS = EmissionSpec("negative_binomial", [2.0, 20.0], [1.5, 3.0])


@pytest.fixture(scope="session")
def fig4_tpm() -> PeriodicTPM:
    return build_tpm(FIG4)


@pytest.fixture(scope="session")
def fig3_model() -> HMMModel:
    return HMMModel(FIG3, NB_EMISSIONS)


def random_periodic_tpm(rng: np.random.Generator, period: int, n_states: int,
                        low: float = 0.0) -> PeriodicTPM:
    """Dirichlet rows, optionally bounded away from zero."""
    mats = rng.dirichlet(np.ones(n_states), size=(period, n_states))
    if low > 0:
        mats = low / n_states + (1 - low) * mats
    return PeriodicTPM(mats)


def runs_with_start(states: np.ndarray):
    """Run-length encoding of a path: (state, start index, length), censored runs dropped."""
    states = np.asarray(states)
    change = np.flatnonzero(np.diff(states)) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [states.size]])
    vals = states[starts]
    return vals[1:-1], starts[1:-1], (ends - starts)[1:-1]


def nb_pmf(x, mean, dispersion):
    """scipy's negative binomial in (mean, dispersion) form."""
    return stats.nbinom.pmf(x, dispersion, dispersion / (dispersion + mean))


def brute_force(model: HMMModel, series, init=None):
    """Likelihood and posteriors by enumerating every state path."""
    tpm = model.tpm(series.condition if isinstance(series.condition, str) else None)
    N, T = model.n_states, len(series)
    em = model.emissions
    x = series.values
    b = np.ones((T, N))
    for i in range(N):
        if em.family == "poisson":
            p = stats.poisson.pmf(x, em.mean[i])
        else:
            p = nb_pmf(x, em.mean[i], em.dispersion[i])
        b[:, i] = np.where(np.isnan(x), 1.0, p)
    phases = series.phases(tpm.period)
    if init is None:
        from phmm import stationary_exact
        init = stationary_exact(tpm)[series.start_phase]
    total = 0.0
    post = np.zeros((T, N))
    for path in itertools.product(range(N), repeat=T):
        p = init[path[0]] * b[0, path[0]]
        for k in range(1, T):
            p *= tpm[phases[k - 1]][path[k - 1], path[k]] * b[k, path[k]]
        total += p
        post[np.arange(T), list(path)] += p
    return np.log(total), post / total


# one PASS/FAIL line per acceptance criterion

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if report.skipped:
            status = "SKIP"
        else:
            status = "PASS" if report.passed else "FAIL"
        detail = item.user_properties[-1][1] if item.user_properties else ""
        _ACCEPTANCE[n] = (status, item.name, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, name, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {name}  {detail}")

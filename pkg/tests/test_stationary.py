import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phmm import (
    DistributionKind,
    ModelError,
    PeriodicTPM,
    build_tpm,
    empirical_state_frequencies,
    stationary_exact,
    stationary_hypothetical,
    thinned_tpm,
)

from conftest import SCENARIOS, random_periodic_tpm


def two_state(g12, g21, period):
    return PeriodicTPM.homogeneous([[1 - g12, g12], [g21, 1 - g21]], period)


@st.composite
def periodic_tpms(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    L = draw(st.integers(1, 30))
    n = draw(st.integers(2, 5))
    return random_periodic_tpm(np.random.default_rng(seed), L, n, low=0.05)


def test_thinned_homogeneous_is_matrix_power():
    G = np.array([[0.7, 0.3], [0.4, 0.6]])
    tpm = PeriodicTPM.homogeneous(G, 5)
    for t in range(1, 6):
        np.testing.assert_allclose(thinned_tpm(tpm, t).matrix, np.linalg.matrix_power(G, 5), atol=1e-15)


def test_thinned_single_factor():
    G = np.array([[0.7, 0.3], [0.4, 0.6]])
    np.testing.assert_array_equal(thinned_tpm(PeriodicTPM.homogeneous(G, 1), 1).matrix, G)


def test_thinned_identity_drops_out():
    tpm = PeriodicTPM(np.array([np.eye(2), np.full((2, 2), 0.5)]))
    np.testing.assert_array_equal(thinned_tpm(tpm, 1).matrix, np.full((2, 2), 0.5))


def test_thinned_rejects_bad_anchor():
    tpm = two_state(0.1, 0.2, 3)
    with pytest.raises(ValueError):
        thinned_tpm(tpm, 0)
    with pytest.raises(ValueError):
        thinned_tpm(tpm, 4)


def test_two_state_closed_form():
    delta = stationary_exact(two_state(0.1, 0.2, 24))
    assert delta.kind is DistributionKind.EXACT_DELTA
    np.testing.assert_allclose(delta.probs, np.tile([2 / 3, 1 / 3], (24, 1)), atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(periodic_tpms())
def test_recursion_matches_direct_solve(tpm):
    rec = stationary_exact(tpm).probs
    direct = stationary_exact(tpm, direct=True).probs
    np.testing.assert_allclose(rec, direct, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(periodic_tpms())
def test_stationarity_and_cycle_closure(tpm):
    delta = stationary_exact(tpm)
    L = tpm.period
    for t in range(1, L + 1):
        G = thinned_tpm(tpm, t).matrix
        np.testing.assert_allclose(delta[t] @ G, delta[t], atol=1e-10)
        np.testing.assert_allclose(delta[t] @ tpm[t], delta[t + 1], atol=1e-10)
    np.testing.assert_allclose(delta[L] @ tpm[L], delta[1], atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(2, 5))
def test_homogeneous_collapse(seed, L, n):
    G = random_periodic_tpm(np.random.default_rng(seed), 1, n, low=0.05).matrices[0]
    tpm = PeriodicTPM.homogeneous(G, L)
    np.testing.assert_allclose(stationary_exact(tpm).probs, stationary_hypothetical(tpm).probs, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(periodic_tpms())
def test_hypothetical_solves_each_matrix(tpm):
    rho = stationary_hypothetical(tpm)
    assert rho.kind is DistributionKind.HYPOTHETICAL_RHO
    for t in range(1, tpm.period + 1):
        np.testing.assert_allclose(rho[t] @ tpm[t], rho[t], atol=1e-12)


@pytest.mark.parametrize("name", sorted(SCENARIOS))
def test_hypothetical_two_state_closed_form(name):
    tpm = build_tpm(SCENARIOS[name])
    g12, g21 = tpm.matrices[:, 0, 1], tpm.matrices[:, 1, 0]
    np.testing.assert_allclose(stationary_hypothetical(tpm).probs[:, 0], g21 / (g12 + g21), atol=1e-13)


def test_scenario2_bias():
    tpm = build_tpm(SCENARIOS["scenario2"])
    rho1 = stationary_hypothetical(tpm).probs[:, 0]
    delta1 = stationary_exact(tpm).probs[:, 0]
    assert rho1.max() > 0.9 and rho1.min() < 0.1
    assert np.abs(delta1 - 0.5).max() < 0.1
    emp = empirical_state_frequencies(tpm, 1000, seed=2)
    assert np.abs(emp.probs - stationary_exact(tpm).probs).max() < 0.05


def test_scenario1_empirical_frequencies():
    tpm = build_tpm(SCENARIOS["scenario1"])
    emp = empirical_state_frequencies(tpm, 1000, seed=1)
    assert emp.kind is DistributionKind.EMPIRICAL
    assert np.abs(emp.probs - stationary_exact(tpm).probs).max() < 0.05


def test_empirical_identity_chain_is_absorbed():
    # reducible, so start from a fixed state instead of delta
    from phmm.stationary import simulate_states

    tpm = PeriodicTPM.homogeneous(np.eye(3), 4)
    path = simulate_states(tpm, 400, np.random.default_rng(0), initial=[0, 0, 1])
    assert np.all(path == 2)


def test_empirical_is_seeded():
    tpm = build_tpm(SCENARIOS["scenario3"])
    a = empirical_state_frequencies(tpm, 50, seed=7).probs
    b = empirical_state_frequencies(tpm, 50, seed=7).probs
    c = empirical_state_frequencies(tpm, 50, seed=8).probs
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_empirical_rejects_zero_cycles():
    with pytest.raises(ValueError):
        empirical_state_frequencies(two_state(0.1, 0.2, 3), 0, seed=1)


def test_reducible_thinned_chain():
    tpm = PeriodicTPM.homogeneous(np.eye(2), 3)
    with pytest.raises(ModelError, match="no unique periodically stationary distribution"):
        stationary_exact(tpm)
    with pytest.raises(ModelError):
        empirical_state_frequencies(tpm, 10, seed=1)


def test_hypothetical_names_reducible_time():
    mats = np.array([np.full((2, 2), 0.5), np.eye(2), np.full((2, 2), 0.5)])
    with pytest.raises(ModelError, match="t=2"):
        stationary_hypothetical(PeriodicTPM(mats))


def test_csv_layout():
    dist = stationary_exact(two_state(0.1, 0.2, 3))
    rows = list(csv.DictReader(io.StringIO(dist.to_csv())))
    assert len(rows) == 6
    assert list(rows[0]) == ["t", "state", "probability", "kind"]
    assert rows[1]["t"] == "1" and rows[1]["state"] == "2"
    assert float(rows[1]["probability"]) == pytest.approx(1 / 3, abs=1e-15)
    assert {r["kind"] for r in rows} == {"exact_delta"}

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phmm import (
    DataError,
    EmissionSpec,
    FitOptions,
    FitResult,
    HMMModel,
    ObservationSeries,
    TrigLinkSpec,
    UncertaintyError,
    WorkingParams,
    fit,
    log_likelihood,
    mc_confidence,
    simulate,
    stationary_exact,
)
from phmm.estimate import _Objective

from conftest import FIG3, NB_EMISSIONS


def fig3_data(seed, n_series=15, n_obs=480):
    model = HMMModel(FIG3, NB_EMISSIONS)
    rng = np.random.default_rng(seed)
    starts = rng.integers(1, 25, n_series)
    return [simulate(model, n_obs, int(starts[k]), [seed, k], series_id=f"{k:02d}")[1]
            for k in range(n_series)]


@pytest.fixture(scope="module")
def fitted(fig3_model):
    data = fig3_data(100)
    return fit(data, fig3_model), data


def pentadiagonal_gradient(f, x, h=1e-4):
    """Fourth-order central differences, an independent check on the optimiser's gradient."""
    g = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g


@st.composite
def working_vectors(draw, layout):
    beta = draw(st.lists(st.floats(-5, 5), min_size=layout.n_link, max_size=layout.n_link))
    log_mean = sorted(draw(st.lists(st.floats(-2, 4), min_size=layout.n_states,
                                    max_size=layout.n_states, unique=True)))
    log_disp = draw(st.lists(st.floats(-3, 3), min_size=layout.n_states, max_size=layout.n_states))
    return np.array(beta + log_mean + log_disp)


LAYOUT = WorkingParams(HMMModel(FIG3, NB_EMISSIONS))
COND_LAYOUT = WorkingParams(HMMModel({"LD": FIG3, "DD": FIG3}, NB_EMISSIONS))


@settings(max_examples=80, deadline=None)
@given(working_vectors(LAYOUT))
def test_working_round_trip(theta):
    back = LAYOUT.pack(LAYOUT.unpack(theta))
    np.testing.assert_allclose(back, theta, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(working_vectors(COND_LAYOUT))
def test_working_round_trip_conditions(theta):
    model = COND_LAYOUT.unpack(theta)
    assert model.conditions == ["DD", "LD"]
    np.testing.assert_allclose(COND_LAYOUT.pack(model), theta, rtol=1e-12, atol=1e-12)


def test_layout_names():
    assert LAYOUT.names() == [
        "beta_12[0]", "beta_12[sin1]", "beta_12[cos1]",
        "beta_21[0]", "beta_21[sin1]", "beta_21[cos1]",
        "log_mean[1]", "log_mean[2]", "log_dispersion[1]", "log_dispersion[2]",
    ]
    assert LAYOUT.size == 10


def test_relabel_keeps_likelihood(fitted):
    res, data = fitted
    swapped = res.layout.relabel(res.theta, [1, 0])
    mean, _ = res.layout.emission_params(swapped)
    assert mean[0] > mean[1]
    model = res.layout.unpack(swapped)
    np.testing.assert_allclose(res.layout.pack(model), res.theta, atol=1e-12)
    assert log_likelihood(model, data) == pytest.approx(res.log_likelihood, abs=1e-8)


def test_gradient_agrees_with_independent_stencil(fig3_model):
    data = fig3_data(7, n_series=4, n_obs=240)
    obj = _Objective(LAYOUT, fig3_model, data)
    f = lambda th: -log_likelihood(LAYOUT.unpack(th), data)
    truth = LAYOUT.pack(fig3_model)
    rng = np.random.default_rng(3)
    for _ in range(10):
        th = truth + rng.normal(0, 0.3, truth.size)
        th[6:8] = np.sort(th[6:8])
        g_opt = obj.gradient(th)
        g_ref = pentadiagonal_gradient(f, th)
        assert np.abs(g_opt - g_ref).max() <= 1e-4 * np.abs(g_ref).max()


def test_fit_converges(fitted):
    res, _ = fitted
    assert res.convergence.converged
    assert res.convergence.grad_norm < 1e-4
    assert np.all(np.diff(res.model.emissions.mean) > 0)
    assert res.n_obs == 15 * 480


def test_mle_dominance(fitted, fig3_model):
    res, data = fitted
    assert res.log_likelihood >= log_likelihood(fig3_model, data) - 1e-6
    assert res.log_likelihood == pytest.approx(log_likelihood(res.model, data), abs=1e-8)


def test_refit_is_fixed_point(fitted, fig3_model):
    res, data = fitted
    again = fit(data, fig3_model, FitOptions(start=res.model))
    np.testing.assert_allclose(again.theta, res.theta, atol=1e-6)
    assert again.log_likelihood == pytest.approx(res.log_likelihood, abs=1e-8)


def test_homogeneous_recovery():
    truth = HMMModel(TrigLinkSpec.two_state([-2.5], [-1.8], 24), NB_EMISSIONS)
    _, s = simulate(truth, 20_000, 1, 11)
    res = fit(s, truth)
    assert res.model.tpm().is_homogeneous
    assert np.abs(res.model.tpm().matrices - truth.tpm().matrices).max() < 0.05


def test_fit_result_json(tmp_path, fitted):
    res, _ = fitted
    path = tmp_path / "fit.json"
    res.to_json(path)
    back = FitResult.from_json(path)
    np.testing.assert_array_equal(back.theta, res.theta)
    np.testing.assert_array_equal(back.hessian, res.hessian)
    assert back.log_likelihood == res.log_likelihood
    assert back.convergence == res.convergence
    np.testing.assert_allclose(back.standard_errors(), res.standard_errors())


def test_all_zero_counts_rejected(fig3_model):
    with pytest.raises(DataError):
        fit(ObservationSeries("z", 1, np.zeros(100)), fig3_model)


def test_iteration_budget_reports_failure(fig3_model):
    res = fit(fig3_data(5, n_series=3, n_obs=240), fig3_model, FitOptions(max_iterations=1))
    assert res.convergence.status == "failed"
    assert res.convergence.grad_norm >= 1e-4
    assert np.isfinite(res.log_likelihood)


def test_fixed_schedule_cannot_be_fitted(fig3_model):
    with pytest.raises(TypeError):
        WorkingParams(HMMModel(fig3_model.tpm(), NB_EMISSIONS))


# Monte Carlo bands

def test_bands_are_seeded(fitted):
    res, _ = fitted
    a = mc_confidence(res, "delta_t", 200, 0.95, seed=1)
    b = mc_confidence(res, "delta_t", 200, 0.95, seed=1)
    np.testing.assert_array_equal(a.lower, b.lower)
    np.testing.assert_array_equal(a.upper, b.upper)
    assert np.all(a.lower <= a.upper)
    np.testing.assert_allclose(a.estimate, stationary_exact(res.model.tpm()).probs, atol=1e-12)


def test_single_draw_zero_level(fitted):
    res, _ = fitted
    bands = mc_confidence(res, "rho_t", 1, 0.0, seed=4)
    np.testing.assert_array_equal(bands.lower, bands.upper)
    rng = np.random.default_rng(4)
    draw = res.theta + np.linalg.cholesky(res.covariance()) @ rng.standard_normal(res.theta.size)
    from phmm import stationary_hypothetical
    expected = stationary_hypothetical(res.layout.unpack(draw).tpm()).probs
    np.testing.assert_allclose(bands.lower, expected, atol=1e-12)


@pytest.mark.parametrize("functional,shape", [
    ("delta_t", (24, 2)), ("rho_t", (24, 2)), ("dwell_mean_t", (2, 24)), ("dwell_pmf_overall", (2, 48)),
])
def test_band_shapes(fitted, functional, shape):
    res, _ = fitted
    bands = mc_confidence(res, functional, 20, 0.9, seed=0, r_max=48)
    assert bands.estimate.shape == bands.lower.shape == bands.upper.shape == shape


def test_non_pd_hessian(fitted):
    res, _ = fitted
    broken = FitResult(res.model, res.log_likelihood, -np.eye(res.theta.size), res.convergence,
                       res.theta, res.layout, res.n_obs)
    with pytest.raises(UncertaintyError, match="profile"):
        mc_confidence(broken, "delta_t", 10, 0.95, seed=0)


def test_band_argument_checks(fitted):
    res, _ = fitted
    with pytest.raises(ValueError):
        mc_confidence(res, "variance", 10, 0.95, seed=0)
    with pytest.raises(ValueError):
        mc_confidence(res, "delta_t", 0, 0.95, seed=0)
    with pytest.raises(ValueError):
        mc_confidence(res, "delta_t", 10, 1.0, seed=0)


@pytest.mark.slow
def test_delta_band_coverage(fig3_model):
    truth = stationary_exact(fig3_model.tpm()).probs[:, 0]
    covered = []
    for rep in range(20):
        res = fit(fig3_data(1000 + rep), fig3_model)
        bands = mc_confidence(res, "delta_t", 1000, 0.95, seed=rep)
        covered.append((bands.lower[:, 0] <= truth) & (truth <= bands.upper[:, 0]))
    assert np.mean(covered) >= 0.85

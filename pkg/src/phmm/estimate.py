"""Maximum-likelihood fitting and Monte Carlo uncertainty for derived quantities.

Parameters live on an unconstrained working scale: link coefficients as they
are, emission means and dispersions on the log scale.  The optimiser is BFGS
with central finite-difference gradients; the Hessian of the negative
log-likelihood at the optimum is also obtained by finite differences and
drives the normal approximation used by :func:`mc_confidence`.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from ._kernels import forward_loglik
from .dwell import default_r_max, dwell_means, dwell_pmf_all, mixture_weights
from .errors import DataError, PHMMError, UncertaintyError
from .hmm import (
    EmissionSpec,
    HMMModel,
    ObservationSeries,
    _as_series_list,
    _Chain,
    _step_index,
    nbinom_logpmf,
    poisson_logpmf,
)
from .link import PeriodicTPM, TrigLinkSpec, design_matrix, tpm_from_predictors
from .stationary import DistributionKind, PeriodicDistribution, _stationary_exact_probs, solve_stationary

__all__ = [
    "WorkingParams",
    "FitOptions",
    "Convergence",
    "FitResult",
    "Bands",
    "FUNCTIONALS",
    "fit",
    "mc_confidence",
    "numerical_gradient",
    "numerical_hessian",
]

log = logging.getLogger(__name__)

GRAD_TOL = 1e-4


def numerical_gradient(f: Callable, x: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central differences with step ``rel_step * max(1, |x_k|)``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (xp[k] - xm[k])
    return g


def numerical_hessian(f: Callable, x: np.ndarray, rel_step: float = 1e-4) -> np.ndarray:
    """Symmetric central second differences."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    H = np.empty((n, n))

    def at(*moves):
        y = x.copy()
        for k, s in moves:
            y[k] += s * h[k]
        return f(y)

    for i in range(n):
        H[i, i] = (at((i, 1)) - 2.0 * f0 + at((i, -1))) / h[i] ** 2
        for j in range(i):
            H[i, j] = H[j, i] = (
                at((i, 1), (j, 1)) - at((i, 1), (j, -1)) - at((i, -1), (j, 1)) + at((i, -1), (j, -1))
            ) / (4.0 * h[i] * h[j])
    return H


class WorkingParams:
    """Bijection between an :class:`HMMModel` shape and a flat real vector.

    The vector holds, for each condition in sorted order and each off-diagonal
    pair in row-major order, the link coefficients; then the log means; then
    the log dispersions (negative binomial only).

    Parameters
    ----------
    template : HMMModel
        Fixes states, period, harmonics, conditions and emission family.
        Every state process must be a :class:`TrigLinkSpec`.
    """

    def __init__(self, template: HMMModel):
        procs = template.processes
        for key, proc in procs.items():
            if not isinstance(proc, TrigLinkSpec):
                raise TypeError(f"state process {key!r} is a fixed matrix schedule and cannot be fitted")
        self.keys = list(procs)
        first = procs[self.keys[0]]
        self.n_states = first.n_states
        self.period = first.period
        self.n_harmonics = {k: p.n_harmonics for k, p in procs.items()}
        self.family = template.emissions.family
        self.initial_policy = template.initial_policy
        self.pairs = first.pairs
        self._X = {k: design_matrix(self.period, K) for k, K in self.n_harmonics.items()}
        sizes = [len(self.pairs) * (1 + 2 * self.n_harmonics[k]) for k in self.keys]
        self._block_slices = {}
        start = 0
        for k, size in zip(self.keys, sizes):
            self._block_slices[k] = slice(start, start + size)
            start += size
        self.n_link = start
        self.n_emission = self.n_states * (2 if self.family == "negative_binomial" else 1)
        self.size = self.n_link + self.n_emission

    @property
    def is_conditional(self) -> bool:
        return self.keys != [None]

    def names(self) -> list[str]:
        out = []
        for key in self.keys:
            K = self.n_harmonics[key]
            terms = ["0"] + [f"sin{k}" for k in range(1, K + 1)] + [f"cos{k}" for k in range(1, K + 1)]
            prefix = "" if key is None else f"{key}:"
            for i, j in self.pairs:
                out += [f"{prefix}beta_{i + 1}{j + 1}[{term}]" for term in terms]
        out += [f"log_mean[{i + 1}]" for i in range(self.n_states)]
        if self.family == "negative_binomial":
            out += [f"log_dispersion[{i + 1}]" for i in range(self.n_states)]
        return out

    def pack(self, model: HMMModel) -> np.ndarray:
        procs = model.processes
        if list(procs) != self.keys:
            raise ValueError("model conditions do not match the parameter layout")
        theta = np.empty(self.size)
        for key in self.keys:
            spec = procs[key]
            if spec.n_harmonics != self.n_harmonics[key] or spec.period != self.period:
                raise ValueError("model link shape does not match the parameter layout")
            theta[self._block_slices[key]] = np.concatenate([spec.coeffs[p] for p in self.pairs])
        em = model.emissions
        n = self.n_states
        theta[self.n_link:self.n_link + n] = np.log(em.mean)
        if self.family == "negative_binomial":
            theta[self.n_link + n:] = np.log(em.dispersion)
        return theta

    def coefficients(self, theta: np.ndarray, key) -> np.ndarray:
        """Link coefficients of one condition, shape (n_pairs, 1 + 2K)."""
        return theta[self._block_slices[key]].reshape(len(self.pairs), -1)

    def matrices(self, theta: np.ndarray) -> dict:
        """Transition matrices per condition without building model objects."""
        out = {}
        n = self.n_states
        for key in self.keys:
            coef = self.coefficients(theta, key)
            eta = np.zeros((self.period, n, n))
            vals = self._X[key] @ coef.T
            for col, (i, j) in enumerate(self.pairs):
                eta[:, i, j] = vals[:, col]
            out[key] = tpm_from_predictors(eta)
        return out

    def emission_params(self, theta: np.ndarray):
        n = self.n_states
        mean = np.exp(theta[self.n_link:self.n_link + n])
        disp = np.exp(theta[self.n_link + n:]) if self.family == "negative_binomial" else None
        return mean, disp

    def ascending_order(self, theta: np.ndarray) -> np.ndarray:
        mean, _ = self.emission_params(theta)
        return np.argsort(mean, kind="stable")

    def relabel(self, theta: np.ndarray, order: Sequence[int]) -> np.ndarray:
        """Vector for the model whose state ``a`` is old state ``order[a]``."""
        order = np.asarray(order)
        out = theta.copy()
        pair_pos = {p: n for n, p in enumerate(self.pairs)}
        for key in self.keys:
            coef = self.coefficients(theta, key)
            new = np.empty_like(coef)
            for n, (a, b) in enumerate(self.pairs):
                new[n] = coef[pair_pos[(int(order[a]), int(order[b]))]]
            out[self._block_slices[key]] = new.reshape(-1)
        n = self.n_states
        out[self.n_link:self.n_link + n] = theta[self.n_link:self.n_link + n][order]
        if self.family == "negative_binomial":
            out[self.n_link + n:] = theta[self.n_link + n:][order]
        return out

    def unpack(self, theta: np.ndarray) -> HMMModel:
        """Model for ``theta``; states are relabelled so emission means ascend."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,) or not np.all(np.isfinite(theta)):
            raise ValueError(f"theta must be a finite vector of length {self.size}")
        order = self.ascending_order(theta)
        if np.any(order != np.arange(self.n_states)):
            theta = self.relabel(theta, order)
        procs = {}
        for key in self.keys:
            coef = self.coefficients(theta, key)
            procs[key] = TrigLinkSpec(self.n_states, self.period, self.n_harmonics[key],
                                      {p: coef[n] for n, p in enumerate(self.pairs)})
        mean, disp = self.emission_params(theta)
        link = procs[None] if not self.is_conditional else procs
        return HMMModel(link, EmissionSpec(self.family, mean, disp), self.initial_policy)


class _Objective:
    """Negative log-likelihood of a fixed data set as a function of ``theta``."""

    def __init__(self, layout: WorkingParams, template: HMMModel, series: list):
        self.layout = layout
        self.series = sorted(series, key=lambda s: s.id)
        chain = _Chain(template)
        self.offsets = chain.offsets
        self.step_idx = [_step_index(template, s, chain.offsets) for s in self.series]
        self.first_key = [None if None in chain.offsets else s.conditions()[0] for s in self.series]
        values = np.concatenate([s.values for s in self.series])
        self.missing = np.isnan(values)
        self.x = np.where(self.missing, 0.0, values)[:, None]
        self.bounds = np.cumsum([0] + [len(s) for s in self.series])
        self.n_evals = 0

    def log_b(self, theta):
        mean, disp = self.layout.emission_params(theta)
        if disp is None:
            lb = poisson_logpmf(self.x, mean)
        else:
            lb = nbinom_logpmf(self.x, mean, disp)
        lb[self.missing] = 0.0
        return lb

    def loglik(self, theta) -> float:
        self.n_evals += 1
        mats = self.layout.matrices(theta)
        stack = np.ascontiguousarray(np.concatenate([mats[k] for k in self.layout.keys]))
        policy = self.layout.initial_policy
        n = self.layout.n_states
        deltas = {}
        lb = self.log_b(theta)
        total = 0.0
        for k, s in enumerate(self.series):
            if isinstance(policy, str) and policy == "periodic_stationary":
                key = self.first_key[k]
                if key not in deltas:
                    deltas[key] = _stationary_exact_probs(mats[key])
                init = deltas[key][(s.start_phase - 1) % self.layout.period]
            elif isinstance(policy, str):
                init = np.full(n, 1.0 / n)
            else:
                init = policy
            seg = np.ascontiguousarray(lb[self.bounds[k]:self.bounds[k + 1]])
            ll, bad = forward_loglik(seg, stack, self.step_idx[k], init)
            if bad >= 0:
                return -np.inf
            total += ll
        return float(total)

    def __call__(self, theta) -> float:
        try:
            ll = self.loglik(theta)
        except PHMMError:
            return np.inf
        return -ll if np.isfinite(ll) else np.inf

    def gradient(self, theta) -> np.ndarray:
        return numerical_gradient(self, theta)


@dataclass
class FitOptions:
    """Optimiser settings.

    ``start`` overrides the default starting point with a model of the same
    shape as the template or a working-scale vector.
    """

    max_iterations: int = 500
    tolerance: float = 1e-5
    start: object = None


@dataclass(frozen=True)
class Convergence:
    status: str
    iterations: int
    grad_norm: float
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class FitResult:
    """Fitted model, log-likelihood, working-scale Hessian and optimiser report."""

    model: HMMModel
    log_likelihood: float
    hessian: np.ndarray
    convergence: Convergence
    theta: np.ndarray
    layout: WorkingParams = field(repr=False)
    n_obs: int = 0

    @property
    def n_parameters(self) -> int:
        return self.theta.size

    def covariance(self) -> np.ndarray:
        """Inverse Hessian; raises UncertaintyError unless the Hessian is positive definite."""
        try:
            chol = np.linalg.cholesky(self.hessian)
        except np.linalg.LinAlgError:
            raise UncertaintyError(
                "Hessian of the negative log-likelihood is not positive definite; the normal "
                "approximation is unavailable (consider profile-likelihood intervals)"
            ) from None
        inv = np.linalg.inv(chol)
        return inv.T @ inv

    def standard_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance()))

    def to_dict(self) -> dict:
        try:
            se = self.standard_errors().tolist()
        except UncertaintyError:
            se = None
        return {
            "model": self.model.to_dict(),
            "log_likelihood": self.log_likelihood,
            "n_parameters": self.n_parameters,
            "n_obs": self.n_obs,
            "parameter_names": self.layout.names(),
            "theta": self.theta.tolist(),
            "standard_errors": se,
            "hessian": self.hessian.tolist(),
            "convergence": {
                "status": self.convergence.status,
                "iterations": self.convergence.iterations,
                "grad_norm": self.convergence.grad_norm,
                "message": self.convergence.message,
            },
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_dict(cls, doc) -> "FitResult":
        model = HMMModel.from_dict(doc["model"])
        layout = WorkingParams(model)
        conv = Convergence(**doc["convergence"])
        return cls(model, float(doc["log_likelihood"]), np.asarray(doc["hessian"], dtype=float),
                   conv, np.asarray(doc["theta"], dtype=float), layout, int(doc.get("n_obs", 0)))

    @classmethod
    def from_json(cls, source) -> "FitResult":
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(source))


def default_start(layout: WorkingParams, series: list) -> np.ndarray:
    """Intercepts -2, harmonics 0, means at spread quantiles, dispersions 1."""
    values = np.concatenate([s.values for s in series])
    values = values[~np.isnan(values)]
    if values.size == 0 or not np.any(values > 0):
        raise DataError("observations are all zero or missing; emission means are not identifiable")
    theta = np.zeros(layout.size)
    for key in layout.keys:
        coef = np.zeros((len(layout.pairs), 1 + 2 * layout.n_harmonics[key]))
        coef[:, 0] = -2.0
        theta[layout._block_slices[key]] = coef.reshape(-1)
    n = layout.n_states
    probs = np.linspace(0.25, 0.75, n)
    q = np.quantile(values, probs)
    floor = max(values[values > 0].min(), 1.0) * 0.1
    means = np.maximum(q, floor)
    for i in range(1, n):
        if means[i] <= means[i - 1]:
            means[i] = means[i - 1] * 1.5 + floor
    theta[layout.n_link:layout.n_link + n] = np.log(means)
    return theta


def _newton_polish(objective, theta, grad, hessian, max_steps: int = 5):
    # BFGS with finite-difference gradients can stall short of the gradient
    # tolerance.  Near the optimum the decrease of a Newton step falls below the
    # rounding noise of a large log-likelihood, so a step is accepted when the
    # gradient shrinks and the objective does not rise beyond that noise.
    for _ in range(max_steps):
        gnorm = np.max(np.abs(grad))
        if gnorm < GRAD_TOL:
            break
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            break
        f0 = objective(theta)
        slack = 1e-12 * max(1.0, abs(f0))
        for damping in (1.0, 0.5, 0.25):
            cand = theta - damping * step
            if objective(cand) <= f0 + slack:
                cand_grad = objective.gradient(cand)
                if np.max(np.abs(cand_grad)) < gnorm:
                    break
        else:
            break
        theta, grad = cand, cand_grad
        hessian = numerical_hessian(objective, theta)
    return theta, grad, hessian


def fit(data, template: HMMModel, options: Optional[FitOptions] = None) -> FitResult:
    """Maximise the joint log-likelihood over the template's parameters.

    Parameters
    ----------
    data : ObservationSeries or iterable of them
    template : HMMModel
        Shape of the model to fit; its parameter values are only used when
        ``options.start`` is the template itself.
    options : FitOptions, optional

    Returns
    -------
    FitResult
        States are relabelled so that emission means ascend.  ``status`` is
        ``"converged"`` when the gradient max-norm at the optimum is below 1e-4,
        otherwise ``"failed"`` with the best point found.
    """
    options = options or FitOptions()
    series = _as_series_list(data)
    layout = WorkingParams(template)
    objective = _Objective(layout, template, series)
    if options.start is None:
        theta0 = default_start(layout, series)
    elif isinstance(options.start, HMMModel):
        theta0 = layout.pack(options.start)
    else:
        theta0 = np.asarray(options.start, dtype=float)
    if not np.isfinite(objective(theta0)):
        raise DataError("the log-likelihood is not finite at the starting values")

    res = minimize(objective, theta0, jac=objective.gradient, method="BFGS",
                   options={"gtol": options.tolerance, "maxiter": options.max_iterations})
    theta = res.x
    order = layout.ascending_order(theta)
    if np.any(order != np.arange(layout.n_states)):
        theta = layout.relabel(theta, order)
    grad = objective.gradient(theta)
    hessian = numerical_hessian(objective, theta)
    if res.status != 1:  # iteration budget not exhausted
        theta, grad, hessian = _newton_polish(objective, theta, grad, hessian)
    gnorm = float(np.max(np.abs(grad)))
    status = "converged" if gnorm < GRAD_TOL else "failed"
    if status == "failed":
        log.warning("fit did not converge: %s (gradient max-norm %.3g)", res.message, gnorm)
    ll = -objective(theta)
    return FitResult(
        model=layout.unpack(theta),
        log_likelihood=float(ll),
        hessian=hessian,
        convergence=Convergence(status, int(res.nit), gnorm, str(res.message)),
        theta=theta,
        layout=layout,
        n_obs=int(sum(int(np.sum(~np.isnan(s.values))) for s in series)),
    )


def _tpm_for(layout: WorkingParams, theta: np.ndarray, condition) -> PeriodicTPM:
    mats = layout.matrices(theta)
    if condition not in mats:
        if None in mats:
            condition = None
        else:
            raise ValueError(f"unknown condition {condition!r}; fit has {layout.keys}")
    return PeriodicTPM(mats[condition])


def _functional_delta(tpm, r_max):
    return _stationary_exact_probs(tpm.matrices)


def _functional_rho(tpm, r_max):
    return np.array([solve_stationary(m) for m in tpm.matrices])


def _functional_dwell_mean(tpm, r_max):
    return np.array([dwell_means(tpm, i) for i in range(tpm.n_states)])


def _functional_dwell_pmf(tpm, r_max):
    delta = PeriodicDistribution(_stationary_exact_probs(tpm.matrices), DistributionKind.EXACT_DELTA)
    out = []
    for i in range(tpm.n_states):
        w = mixture_weights(tpm, delta, i).weights
        pmfs = np.array([d.pmf for d in dwell_pmf_all(tpm, i, r_max)])
        out.append(w @ pmfs)
    return np.array(out)


FUNCTIONALS = {
    "delta_t": _functional_delta,
    "rho_t": _functional_rho,
    "dwell_mean_t": _functional_dwell_mean,
    "dwell_pmf_overall": _functional_dwell_pmf,
}


@dataclass(frozen=True)
class Bands:
    """Pointwise Monte Carlo bands.

    Arrays share the functional's shape: (L, N) for ``delta_t`` and ``rho_t``,
    (N, L) for ``dwell_mean_t`` and (N, r_max) for ``dwell_pmf_overall``.
    """

    functional: str
    level: float
    estimate: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    condition: Optional[str] = None


def mc_confidence(fit_result: FitResult, functional: str, n_draws: int, level: float, seed,
                  condition: Optional[str] = None, r_max: Optional[int] = None) -> Bands:
    """Pointwise bands for a derived quantity from the estimator's normal approximation.

    Draws ``n_draws`` working-scale vectors from ``N(theta_hat, H^-1)``, maps each
    through ``functional`` and takes empirical quantiles at ``(1 -+ level) / 2``.

    Raises
    ------
    UncertaintyError
        If the Hessian is not positive definite.
    """
    if functional not in FUNCTIONALS:
        raise ValueError(f"functional must be one of {sorted(FUNCTIONALS)}, got {functional!r}")
    if int(n_draws) != n_draws or n_draws < 1:
        raise ValueError("n_draws must be a positive integer")
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1)")
    cov = fit_result.covariance()
    layout, theta_hat = fit_result.layout, fit_result.theta
    fn = FUNCTIONALS[functional]
    tpm_hat = _tpm_for(layout, theta_hat, condition)
    if functional == "dwell_pmf_overall" and r_max is None:
        r_max = max(default_r_max(tpm_hat, i) for i in range(tpm_hat.n_states))
    estimate = fn(tpm_hat, r_max)
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(cov)
    z = rng.standard_normal((int(n_draws), theta_hat.size))
    draws = theta_hat + z @ chol.T
    values = np.array([fn(_tpm_for(layout, th, condition), r_max) for th in draws])
    lower, upper = np.quantile(values, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0)
    return Bands(functional, float(level), estimate, lower, upper, condition)

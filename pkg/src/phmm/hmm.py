"""Count-emission HMMs driven by a periodic state process.

The state process is a :class:`~phmm.link.TrigLinkSpec` or a fixed
:class:`~phmm.link.PeriodicTPM`.  A model may instead carry one state process
per condition tag (for example light-dark versus constant darkness); each
observation then selects its process through the series' condition labels,
while emission parameters are shared.

Observation ``k`` (0-based) of a series starting at phase ``p`` sits at cycle
position ``(p - 1 + k) % L + 1``, and the move to observation ``k + 1`` uses the
transition matrix at that position.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import gammaln, xlogy

from ._kernels import forward_backward, forward_loglik, simulate_chain
from .errors import DataError, NumericError
from .link import PeriodicTPM, TrigLinkSpec, build_tpm
from .stationary import _stationary_exact_probs

__all__ = [
    "EmissionSpec",
    "HMMModel",
    "ObservationSeries",
    "log_likelihood",
    "series_log_likelihood",
    "local_decode",
    "simulate",
    "read_series_csv",
    "write_series_csv",
]

StateProcess = Union[TrigLinkSpec, PeriodicTPM]
FAMILIES = ("negative_binomial", "poisson")


def nbinom_logpmf(x, mean, dispersion):
    """Negative binomial log-pmf with variance ``mean + mean**2 / dispersion``."""
    x = np.asarray(x, dtype=float)
    return (
        gammaln(x + dispersion) - gammaln(dispersion) - gammaln(x + 1.0)
        - dispersion * np.log1p(mean / dispersion)
        + xlogy(x, mean) - xlogy(x, mean + dispersion)
    )


def poisson_logpmf(x, mean):
    x = np.asarray(x, dtype=float)
    return xlogy(x, mean) - mean - gammaln(x + 1.0)


@dataclass(frozen=True)
class EmissionSpec:
    """Per-state count distributions.

    Parameters
    ----------
    family : {"negative_binomial", "poisson"}
    mean : array of shape (N,)
        State means, non-decreasing in the state index.
    dispersion : array of shape (N,), optional
        Negative binomial size parameters; required for that family only.
    """

    family: str
    mean: np.ndarray
    dispersion: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        mean = np.array(self.mean, dtype=float).reshape(-1)
        if mean.size < 1 or not np.all(np.isfinite(mean)) or np.any(mean <= 0):
            raise ValueError("state means must be positive and finite")
        if np.any(np.diff(mean) < 0):
            raise ValueError("state means must be sorted ascending")
        mean.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        if self.family == "negative_binomial":
            if self.dispersion is None:
                raise ValueError("negative binomial emissions need dispersion parameters")
            disp = np.array(self.dispersion, dtype=float).reshape(-1)
            if disp.shape != mean.shape or not np.all(np.isfinite(disp)) or np.any(disp <= 0):
                raise ValueError("dispersions must be positive, finite, one per state")
            disp.flags.writeable = False
            object.__setattr__(self, "dispersion", disp)
        elif self.dispersion is not None:
            raise ValueError("poisson emissions take no dispersion")

    @property
    def n_states(self) -> int:
        return self.mean.size

    def log_pmf(self, x) -> np.ndarray:
        """Log-probabilities, shape ``x.shape + (N,)``; NaN (missing) maps to 0."""
        x = np.asarray(x, dtype=float)
        missing = np.isnan(x)
        xx = np.where(missing, 0.0, x)[..., None]
        if self.family == "negative_binomial":
            out = nbinom_logpmf(xx, self.mean, self.dispersion)
        else:
            out = poisson_logpmf(xx, self.mean)
        out[missing] = 0.0
        return out

    def sample(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mu = self.mean[states]
        if self.family == "negative_binomial":
            phi = self.dispersion[states]
            return rng.negative_binomial(phi, phi / (phi + mu))
        return rng.poisson(mu)

    def to_dict(self) -> dict:
        doc = {"family": self.family, "mean": self.mean.tolist()}
        if self.dispersion is not None:
            doc["dispersion"] = self.dispersion.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EmissionSpec":
        return cls(doc["family"], doc["mean"], doc.get("dispersion"))


def _process_to_dict(proc: StateProcess) -> dict:
    return proc.to_dict()


def _process_from_dict(doc: Mapping) -> StateProcess:
    if "coeffs" in doc:
        return TrigLinkSpec.from_dict(doc)
    if "matrices" in doc:
        return PeriodicTPM.from_dict(doc)
    raise ValueError("a state process needs either 'coeffs' or 'matrices'")


def as_tpm(proc: StateProcess) -> PeriodicTPM:
    return build_tpm(proc) if isinstance(proc, TrigLinkSpec) else proc


@dataclass(frozen=True)
class HMMModel:
    """State process plus emissions plus an initial-distribution policy.

    Parameters
    ----------
    link : TrigLinkSpec, PeriodicTPM, or mapping of condition tag to either
    emissions : EmissionSpec
    initial_policy : "periodic_stationary", "uniform" or a probability vector
        The default starts every series in the periodically stationary
        distribution at its first phase.
    """

    link: Union[StateProcess, Mapping[str, StateProcess]]
    emissions: EmissionSpec
    initial_policy: Union[str, np.ndarray] = "periodic_stationary"
    _tpms: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        procs = dict(sorted(self.link.items())) if isinstance(self.link, Mapping) else {None: self.link}
        if not procs:
            raise ValueError("at least one state process is required")
        tpms = {k: as_tpm(p) for k, p in procs.items()}
        sizes = {t.n_states for t in tpms.values()}
        periods = {t.period for t in tpms.values()}
        if sizes != {self.emissions.n_states}:
            raise ValueError("state processes and emissions disagree on the number of states")
        if len(periods) != 1:
            raise ValueError("all condition-specific state processes must share a period")
        if isinstance(self.initial_policy, str):
            if self.initial_policy not in ("periodic_stationary", "uniform"):
                raise ValueError(f"unknown initial policy {self.initial_policy!r}")
        else:
            init = np.array(self.initial_policy, dtype=float)
            if init.shape != (self.emissions.n_states,) or init.min() < 0 or abs(init.sum() - 1) > 1e-10:
                raise ValueError("a fixed initial distribution must be a probability vector over states")
            object.__setattr__(self, "initial_policy", init)
        if isinstance(self.link, Mapping):
            object.__setattr__(self, "link", dict(sorted(self.link.items())))
        object.__setattr__(self, "_tpms", tpms)

    @property
    def n_states(self) -> int:
        return self.emissions.n_states

    @property
    def period(self) -> int:
        return next(iter(self._tpms.values())).period

    @property
    def conditions(self) -> list:
        """Condition tags, or ``[None]`` for a single state process."""
        return list(self._tpms)

    @property
    def processes(self) -> dict:
        return dict(self.link) if isinstance(self.link, Mapping) else {None: self.link}

    def tpm(self, condition: Optional[str] = None) -> PeriodicTPM:
        if None in self._tpms:
            return self._tpms[None]
        try:
            return self._tpms[condition]
        except KeyError:
            raise DataError(
                f"no state process for condition {condition!r}; model has {sorted(self._tpms)}"
            ) from None

    def to_dict(self) -> dict:
        if isinstance(self.link, Mapping):
            link = {k: _process_to_dict(v) for k, v in self.link.items()}
        else:
            link = _process_to_dict(self.link)
        init = self.initial_policy
        return {
            "link": link,
            "emissions": self.emissions.to_dict(),
            "initial_policy": init if isinstance(init, str) else init.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "HMMModel":
        link_doc = doc["link"]
        if "coeffs" in link_doc or "matrices" in link_doc:
            link = _process_from_dict(link_doc)
        else:
            link = {k: _process_from_dict(v) for k, v in link_doc.items()}
        return cls(link, EmissionSpec.from_dict(doc["emissions"]),
                   doc.get("initial_policy", "periodic_stationary"))

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source) -> "HMMModel":
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(source))


@dataclass(frozen=True)
class ObservationSeries:
    """Counts of one individual at consecutive cycle positions.

    ``values`` holds non-negative integer counts with NaN marking missing
    entries.  ``condition`` is either one tag for the whole series or one tag
    per observation.
    """

    id: str
    start_phase: int
    values: np.ndarray
    condition: Union[None, str, Sequence[str]] = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size < 1:
            raise DataError(f"series {self.id!r} is empty")
        obs = vals[~np.isnan(vals)]
        if np.any(obs < 0) or np.any(obs != np.floor(obs)) or np.any(np.isinf(obs)):
            with np.errstate(invalid="ignore"):
                flagged = ~np.isnan(vals) & ((vals < 0) | (vals != np.floor(vals)) | np.isinf(vals))
            bad = int(np.flatnonzero(flagged)[0])
            raise DataError(f"series {self.id!r}: invalid count {vals[bad]!r} at position {bad}")
        if int(self.start_phase) != self.start_phase or self.start_phase < 1:
            raise DataError(f"series {self.id!r}: start_phase must be a positive integer")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "start_phase", int(self.start_phase))
        cond = self.condition
        if cond is not None and not isinstance(cond, str):
            cond = tuple(cond)
            if len(cond) != vals.size:
                raise DataError(f"series {self.id!r}: need one condition tag per observation")
            if len(set(cond)) == 1:
                cond = cond[0]
            object.__setattr__(self, "condition", cond)

    def __len__(self) -> int:
        return self.values.size

    def phases(self, period: int) -> np.ndarray:
        """1-based cycle position of every observation."""
        return (self.start_phase - 1 + np.arange(self.values.size)) % period + 1

    def conditions(self) -> list:
        if self.condition is None or isinstance(self.condition, str):
            return [self.condition] * self.values.size
        return list(self.condition)


def _step_index(model: HMMModel, series: ObservationSeries, offsets: Mapping) -> np.ndarray:
    L = model.period
    if series.start_phase > L:
        raise DataError(f"series {series.id!r}: start_phase {series.start_phase} exceeds period {L}")
    phase0 = (series.start_phase - 1 + np.arange(len(series))) % L
    if None in offsets:
        return phase0.astype(np.int64)
    conds = series.conditions()
    try:
        off = np.array([offsets[c] for c in conds])
    except KeyError as exc:
        raise DataError(f"series {series.id!r}: no state process for condition {exc.args[0]!r}") from None
    return (off + phase0).astype(np.int64)


class _Chain:
    """Stacked matrices and stationary vectors for every condition of a model."""

    def __init__(self, model: HMMModel, mats_by_cond: Optional[Mapping] = None):
        if mats_by_cond is None:
            mats_by_cond = {k: model.tpm(k).matrices for k in model.conditions}
        self.keys = list(mats_by_cond)
        self.L = model.period
        self.offsets = {k: n * self.L for n, k in enumerate(self.keys)}
        self.stack = np.ascontiguousarray(np.concatenate([mats_by_cond[k] for k in self.keys]))
        self.policy = model.initial_policy
        self._delta = {}
        self._mats = mats_by_cond

    def delta(self, key) -> np.ndarray:
        if key not in self._delta:
            self._delta[key] = _stationary_exact_probs(self._mats[key])
        return self._delta[key]

    def initial(self, series: ObservationSeries, n_states: int) -> np.ndarray:
        policy = self.policy
        if isinstance(policy, str) and policy == "uniform":
            return np.full(n_states, 1.0 / n_states)
        if not isinstance(policy, str):
            return np.asarray(policy, dtype=float)
        key = None if None in self.offsets else series.conditions()[0]
        if key not in self.offsets:
            raise DataError(f"series {series.id!r}: no state process for condition {key!r}")
        return self.delta(key)[(series.start_phase - 1) % self.L]


def _loglik_one(model, chain, emissions, series) -> float:
    log_b = np.ascontiguousarray(emissions.log_pmf(series.values))
    idx = _step_index(model, series, chain.offsets)
    init = chain.initial(series, model.n_states)
    ll, bad = forward_loglik(log_b, chain.stack, idx, init)
    if bad >= 0 or not np.isfinite(ll):
        raise NumericError(
            f"series {series.id!r}: forward recursion failed at step {max(bad, 0)}", step=max(bad, 0)
        )
    return float(ll)


def _as_series_list(series) -> list:
    if isinstance(series, ObservationSeries):
        return [series]
    out = list(series)
    if not out:
        raise DataError("at least one observation series is required")
    return out


def series_log_likelihood(model: HMMModel, series) -> np.ndarray:
    """Log-likelihood of each series, in the order given."""
    chain = _Chain(model)
    return np.array([_loglik_one(model, chain, model.emissions, s) for s in _as_series_list(series)])


def log_likelihood(model: HMMModel, series) -> float:
    """Joint log-likelihood of independent series.

    Series are summed in order of their ids, so the result does not depend on
    the order they are passed in.

    Raises
    ------
    DataError
        If no series are given or a condition tag has no state process.
    NumericError
        If the forward recursion hits a zero or non-finite normaliser.
    """
    items = sorted(_as_series_list(series), key=lambda s: s.id)
    chain = _Chain(model)
    return float(sum(_loglik_one(model, chain, model.emissions, s) for s in items))


def local_decode(model: HMMModel, series: ObservationSeries) -> np.ndarray:
    """Posterior state probabilities ``Pr(S_t = i | all observations)``, shape (T, N)."""
    chain = _Chain(model)
    log_b = np.ascontiguousarray(model.emissions.log_pmf(series.values))
    idx = _step_index(model, series, chain.offsets)
    post, ll, bad = forward_backward(log_b, chain.stack, idx, chain.initial(series, model.n_states))
    if bad >= 0 or not np.isfinite(ll):
        raise NumericError(f"series {series.id!r}: forward recursion failed at step {max(bad, 0)}",
                           step=max(bad, 0))
    return post


def simulate(model: HMMModel, n_obs: int, start_phase: int, seed,
             condition: Union[None, str, Sequence[str]] = None, series_id: str = "1"):
    """Simulate a state path and its counts.

    Returns
    -------
    states : ndarray of int, shape (n_obs,)
        0-based hidden states.
    series : ObservationSeries
    """
    if int(n_obs) != n_obs or n_obs < 1:
        raise ValueError(f"n_obs must be a positive integer, got {n_obs}")
    rng = np.random.default_rng(seed)
    placeholder = ObservationSeries(series_id, start_phase, np.full(int(n_obs), np.nan), condition)
    chain = _Chain(model)
    idx = _step_index(model, placeholder, chain.offsets)
    init = chain.initial(placeholder, model.n_states)
    u = rng.random(int(n_obs))
    states = simulate_chain(np.cumsum(init), np.cumsum(chain.stack, axis=2), idx, u)
    counts = model.emissions.sample(states, rng)
    return states, ObservationSeries(series_id, start_phase, counts, condition)


def read_series_csv(path, period: Optional[int] = None) -> list[ObservationSeries]:
    """Read series from a CSV with columns ``id, phase, count`` (optional ``condition``).

    Rows of one id must be in time order with consecutive phases.  An empty
    ``count`` field is a missing observation.  Extra columns are ignored.

    Raises
    ------
    DataError
        With the offending line number for malformed rows.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file, expected a header with id, phase, count")
        missing = {"id", "phase", "count"} - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: line 1: missing columns {sorted(missing)}")
        has_cond = "condition" in reader.fieldnames
        groups: dict = {}
        for row in reader:
            line = reader.line_num
            sid = (row["id"] or "").strip()
            if not sid:
                raise DataError(f"{path}: line {line}: empty id")
            try:
                phase = int(row["phase"])
            except (TypeError, ValueError):
                raise DataError(f"{path}: line {line}: phase {row['phase']!r} is not an integer") from None
            if phase < 1 or (period is not None and phase > period):
                raise DataError(f"{path}: line {line}: phase {phase} out of range")
            raw = (row["count"] or "").strip()
            if raw == "":
                value = np.nan
            else:
                try:
                    value = float(raw)
                except ValueError:
                    raise DataError(f"{path}: line {line}: count {raw!r} is not a number") from None
                if value < 0 or value != int(value):
                    raise DataError(f"{path}: line {line}: count {raw!r} is not a non-negative integer")
            g = groups.setdefault(sid, {"phases": [], "values": [], "cond": []})
            if g["phases"]:
                prev = g["phases"][-1]
                ok = phase == prev + 1 or (phase == 1 and (period is None or prev == period))
                if not ok:
                    raise DataError(f"{path}: line {line}: phase {phase} does not follow {prev} for id {sid!r}")
            g["phases"].append(phase)
            g["values"].append(value)
            g["cond"].append((row["condition"] or "").strip() or None if has_cond else None)
    if not groups:
        raise DataError(f"{path}: no observations")
    out = []
    for sid, g in groups.items():
        cond = g["cond"]
        cond = None if all(c is None for c in cond) else cond
        out.append(ObservationSeries(sid, g["phases"][0], g["values"], cond))
    return out


def write_series_csv(series, path=None, states=None, period: Optional[int] = None) -> str:
    """Write series as ``id, phase, count[, condition][, state]`` rows.

    ``states`` optionally gives the 0-based hidden path of each series; it is
    written 1-based.  ``period`` is required to compute phases.
    """
    series = _as_series_list(series)
    if period is None:
        raise ValueError("period is required to write phases")
    with_cond = any(s.condition is not None for s in series)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["id", "phase", "count"] + (["condition"] if with_cond else []) + (["state"] if states is not None else [])
    writer.writerow(header)
    for n, s in enumerate(series):
        conds = s.conditions()
        for k, (ph, v) in enumerate(zip(s.phases(period), s.values)):
            row = [s.id, int(ph), "" if np.isnan(v) else int(v)]
            if with_cond:
                row.append(conds[k] or "")
            if states is not None:
                row.append(int(states[n][k]) + 1)
            writer.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text

"""Dwell-time distributions of periodically inhomogeneous Markov chains.

A stay in state ``i`` that begins at cycle position ``t`` lasts ``r`` steps with
probability::

    d_i(t; r) = (1 - g(t + r - 1)) * g(t) g(t + 1) ... g(t + r - 2)

where ``g(t)`` is the staying probability ``gamma_ii`` at time ``t``.  The
overall dwell-time distribution mixes these over entry times, weighting each
``t`` by how often the chain enters ``i`` there under periodic stationarity.

Because one full cycle multiplies the survival function by the constant
``P_i = prod_t g(t)``, all tails and means have closed forms in terms of the
first ``L`` probabilities.  States are 0-based; times are 1-based.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DivergenceError, ModelError
from .link import PeriodicTPM
from .stationary import DistributionKind, PeriodicDistribution, stationary_exact

__all__ = [
    "TAIL_EPS",
    "MAX_SUPPORT",
    "DwellPMF",
    "MixtureWeights",
    "cycle_survival",
    "default_r_max",
    "dwell_pmf_all",
    "dwell_pmf_at",
    "dwell_mean_at",
    "dwell_means",
    "mixture_weights",
    "dwell_pmf_overall",
    "dwell_mean_overall",
    "survival",
    "write_dwell_csv",
    "write_means_csv",
]

TAIL_EPS = 1e-12
MAX_SUPPORT = 10_000


@dataclass(frozen=True)
class DwellPMF:
    """Dwell-time pmf on ``r = 1, ..., support_max``.

    ``pmf[r - 1]`` is the probability of a stay of length ``r``; ``tail_mass``
    is the probability of a stay longer than ``support_max``.
    ``start_time`` is ``None`` for the overall distribution.
    """

    state: int
    start_time: Optional[int]
    pmf: np.ndarray
    tail_mass: float

    @property
    def support_max(self) -> int:
        return self.pmf.size

    @property
    def support(self) -> np.ndarray:
        return np.arange(1, self.pmf.size + 1)

    def mean_truncated(self) -> float:
        return float(self.support @ self.pmf)


@dataclass(frozen=True)
class MixtureWeights:
    """Probability that a stay in ``state`` begins at ``t``, ``weights[t - 1]``."""

    state: int
    weights: np.ndarray


def _check_state(tpm: PeriodicTPM, i: int) -> None:
    if int(i) != i or not 0 <= i < tpm.n_states:
        raise ValueError(f"state must be in 0..{tpm.n_states - 1}, got {i}")


def _check_time(tpm: PeriodicTPM, t: int) -> None:
    if int(t) != t or not 1 <= t <= tpm.period:
        raise ValueError(f"t must be an integer in 1..{tpm.period}, got {t}")


def cycle_survival(tpm: PeriodicTPM, i: int) -> float:
    """Probability of staying in ``i`` for one full cycle, from any start."""
    _check_state(tpm, i)
    return float(np.prod(tpm.diagonals()[:, i]))


def default_r_max(tpm: PeriodicTPM, i: int, eps_tail: float = TAIL_EPS) -> int:
    """Smallest multiple of ``L`` with tail mass below ``eps_tail``, capped at 10 000."""
    L = tpm.period
    P = cycle_survival(tpm, i)
    if P >= 1.0:
        raise DivergenceError(f"state {i} is absorbing over a full cycle; dwell times are infinite")
    if P <= 0.0:
        return L
    cycles = max(1, math.ceil(math.log(eps_tail) / math.log(P)))
    # guard the ceil against rounding right at the boundary
    while P ** cycles >= eps_tail:
        cycles += 1
    r_max = cycles * L
    if r_max > MAX_SUPPORT:
        warnings.warn(
            f"state {i}: tail mass {P ** (MAX_SUPPORT // L):.3g} exceeds {eps_tail:g} at the "
            f"support cap {MAX_SUPPORT}",
            RuntimeWarning,
            stacklevel=3,
        )
        r_max = max(L, (MAX_SUPPORT // L) * L)
    return r_max


def _pmf_table(diag: np.ndarray, r_max: int):
    """pmfs for all start times from one cyclic diagonal, plus survival at r_max.

    Row ``s`` holds the pmf for start time ``s + 1``.  Partial products along the
    cycle are shared: ``cumprod`` runs once over an index table instead of once
    per ``(t, r)`` pair.
    """
    L = diag.size
    idx = (np.arange(L)[:, None] + np.arange(r_max)[None, :]) % L
    g = diag[idx]
    stay = np.cumprod(g, axis=1)
    before = np.empty_like(stay)
    before[:, 0] = 1.0
    before[:, 1:] = stay[:, :-1]
    return before * (1.0 - g), stay[:, -1]


def dwell_pmf_all(tpm: PeriodicTPM, i: int, r_max: Optional[int] = None) -> list[DwellPMF]:
    """Time-varying pmfs for every start time ``t = 1, ..., L``."""
    _check_state(tpm, i)
    if r_max is None:
        r_max = default_r_max(tpm, i)
    if int(r_max) != r_max or r_max < 1:
        raise ValueError(f"r_max must be a positive integer, got {r_max}")
    pmf, tail = _pmf_table(tpm.diagonals()[:, i], int(r_max))
    return [DwellPMF(i, t + 1, pmf[t], float(tail[t])) for t in range(tpm.period)]


def dwell_pmf_at(tpm: PeriodicTPM, i: int, t: int, r_max: Optional[int] = None) -> DwellPMF:
    """pmf of the length of a stay in state ``i`` that begins at time ``t``.

    Examples
    --------
    >>> tpm = PeriodicTPM.homogeneous([[0.9, 0.1], [0.2, 0.8]], period=4)
    >>> dwell_pmf_at(tpm, 0, 1, r_max=3).pmf.round(6)
    array([0.1  , 0.09 , 0.081])
    """
    _check_state(tpm, i)
    _check_time(tpm, t)
    if r_max is None:
        r_max = default_r_max(tpm, i)
    if int(r_max) != r_max or r_max < 1:
        raise ValueError(f"r_max must be a positive integer, got {r_max}")
    diag = np.roll(tpm.diagonals()[:, i], -(int(t) - 1))
    pmf, tail = _pmf_table(diag, int(r_max))
    return DwellPMF(i, int(t), pmf[0], float(tail[0]))


def _means_from_first_cycle(d: np.ndarray) -> np.ndarray:
    """Closed-form means from the first ``L`` pmf values, one row per start time."""
    L = d.shape[1]
    mass = d.sum(axis=1)
    if np.any(mass <= 0.0):
        raise DivergenceError("state is absorbing over a full cycle; expected dwell time is infinite")
    r = np.arange(1, L + 1)
    return (L + d @ r) / mass - L


def dwell_means(tpm: PeriodicTPM, i: int) -> np.ndarray:
    """Expected dwell time in ``i`` for each start time, shape (L,)."""
    _check_state(tpm, i)
    d, _ = _pmf_table(tpm.diagonals()[:, i], tpm.period)
    return _means_from_first_cycle(d)


def dwell_mean_at(tpm: PeriodicTPM, i: int, t: int) -> float:
    """Expected length of a stay in ``i`` beginning at ``t``.

    Raises
    ------
    DivergenceError
        If ``gamma_ii = 1`` throughout the cycle.
    """
    _check_time(tpm, t)
    return float(dwell_means(tpm, i)[int(t) - 1])


def mixture_weights(tpm: PeriodicTPM, delta: Optional[PeriodicDistribution], i: int) -> MixtureWeights:
    """Relative frequency of entering state ``i`` at each cycle position.

    The weight of ``t`` is proportional to ``sum_{l != i} delta_l(t-1) gamma_li(t-1)``
    with ``t - 1`` read cyclically (time 0 is time ``L``).

    Parameters
    ----------
    delta : PeriodicDistribution or None
        Must be the exact periodically stationary distribution; computed if None.
    """
    _check_state(tpm, i)
    if delta is None:
        delta = stationary_exact(tpm)
    if delta.kind is not DistributionKind.EXACT_DELTA:
        raise ValueError("mixture weights require the exact periodically stationary distribution")
    mats = tpm.matrices
    prev = np.roll(np.arange(tpm.period), 1)
    flow = delta.probs[prev] * mats[prev, :, i]
    flow[:, i] = 0.0
    num = flow.sum(axis=1)
    total = num.sum()
    if not total > 0.0:
        raise ModelError(f"state {i} is never entered from another state")
    return MixtureWeights(i, num / total)


def dwell_pmf_overall(tpm: PeriodicTPM, i: int, r_max: Optional[int] = None,
                      delta: Optional[PeriodicDistribution] = None) -> DwellPMF:
    """Overall dwell-time pmf in ``i``: the entry-time mixture of time-varying pmfs."""
    w = mixture_weights(tpm, delta, i).weights
    if r_max is None:
        r_max = default_r_max(tpm, i)
    if int(r_max) != r_max or r_max < 1:
        raise ValueError(f"r_max must be a positive integer, got {r_max}")
    pmf, tail = _pmf_table(tpm.diagonals()[:, i], int(r_max))
    return DwellPMF(i, None, w @ pmf, float(w @ tail))


def dwell_mean_overall(tpm: PeriodicTPM, i: int, delta: Optional[PeriodicDistribution] = None) -> float:
    """Expected overall dwell time in ``i``."""
    w = mixture_weights(tpm, delta, i).weights
    L = tpm.period
    d, _ = _pmf_table(tpm.diagonals()[:, i], L)
    mass = d.sum(axis=1)
    if np.any(mass <= 0.0):
        raise DivergenceError(f"state {i} is absorbing over a full cycle; expected dwell time is infinite")
    r = np.arange(1, L + 1)
    return float(np.sum(w * (L + d @ r) / mass) - L)


def survival(tpm: PeriodicTPM, i: int, t: Optional[int], s: int,
             delta: Optional[PeriodicDistribution] = None) -> float:
    """``Pr(R > s)`` for the stay beginning at ``t``, or overall if ``t`` is None.

    Whole cycles contribute the factor ``P_i ** (s // L)``, so large ``s`` needs
    only the first ``L`` staying probabilities.
    """
    _check_state(tpm, i)
    if int(s) != s or s < 0:
        raise ValueError(f"s must be a non-negative integer, got {s}")
    L = tpm.period
    diag = tpm.diagonals()[:, i]
    k, rem = divmod(int(s), L)
    P = float(np.prod(diag))
    idx = (np.arange(L)[:, None] + np.arange(rem)[None, :]) % L
    partial = np.prod(diag[idx], axis=1) * P ** k
    if t is not None:
        _check_time(tpm, t)
        return float(partial[int(t) - 1])
    w = mixture_weights(tpm, delta, i).weights
    return float(w @ partial)


def write_dwell_csv(pmfs, path=None) -> str:
    """CSV with columns ``state, start_time, r, probability`` (states 1-based)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["state", "start_time", "r", "probability"])
    for d in pmfs:
        start = "" if d.start_time is None else d.start_time
        for r, p in enumerate(d.pmf, start=1):
            writer.writerow([d.state + 1, start, r, repr(float(p))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def write_means_csv(rows, path=None) -> str:
    """CSV with columns ``state, t, mean``; rows are ``(state, t or None, mean)``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["state", "t", "mean"])
    for state, t, mean in rows:
        writer.writerow([state + 1, "" if t is None else t, repr(float(mean))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text

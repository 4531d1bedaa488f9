"""Periodically stationary state distribution and its biased approximation.

For a periodic chain the subsampled chain ``S_t, S_{t+L}, S_{t+2L}, ...`` is
homogeneous with transition matrix ``Gamma(t) Gamma(t+1) ... Gamma(t+L-1)``.
Its stationary vector ``delta(t)`` is the exact marginal state distribution at
cycle position ``t`` of a periodically stationary chain.  The per-matrix
stationary vectors ``rho(t)`` (solving ``rho = rho Gamma(t)``) are a common but
biased substitute, and are provided for comparison.

Aperiodicity of the thinned chain is not checked; ``delta(t)`` is always the
unique invariant vector when the thinned chain is irreducible.
"""
from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import simulate_chain
from .errors import ModelError
from .link import PeriodicTPM, check_irreducible

__all__ = [
    "DistributionKind",
    "PeriodicDistribution",
    "ThinnedTPM",
    "thinned_tpm",
    "solve_stationary",
    "stationary_exact",
    "stationary_hypothetical",
    "empirical_state_frequencies",
    "simulate_states",
]


class DistributionKind(str, enum.Enum):
    EXACT_DELTA = "exact_delta"
    HYPOTHETICAL_RHO = "hypothetical_rho"
    EMPIRICAL = "empirical"


@dataclass(frozen=True)
class PeriodicDistribution:
    """One probability vector per cycle position.

    ``probs[t - 1]`` is the distribution at 1-based time ``t``.
    """

    probs: np.ndarray
    kind: DistributionKind

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2:
            raise ValueError(f"probs must have shape (L, N), got {probs.shape}")
        if probs.min() < -1e-12 or np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-10):
            raise ValueError("each row of probs must be a probability vector")
        probs.flags.writeable = False
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "kind", DistributionKind(self.kind))

    @property
    def period(self) -> int:
        return self.probs.shape[0]

    @property
    def n_states(self) -> int:
        return self.probs.shape[1]

    def __getitem__(self, t: int) -> np.ndarray:
        return self.probs[(int(t) - 1) % self.period]

    def to_csv(self, path=None) -> str:
        """Long-format CSV with columns ``t, state, probability, kind``.

        States are written 1-based.
        """
        return write_distributions_csv([self], path)


def write_distributions_csv(dists, path=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "state", "probability", "kind"])
    for dist in dists:
        for t in range(dist.period):
            for i in range(dist.n_states):
                writer.writerow([t + 1, i + 1, repr(float(dist.probs[t, i])), dist.kind.value])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


@dataclass(frozen=True)
class ThinnedTPM:
    """Transition matrix of the chain observed every ``L`` steps from ``anchor``."""

    anchor: int
    matrix: np.ndarray


def _cyclic_product(mats: np.ndarray, start: int) -> np.ndarray:
    L = mats.shape[0]
    out = mats[start % L].copy()
    for k in range(1, L):
        out = out @ mats[(start + k) % L]
    return out


def thinned_tpm(tpm: PeriodicTPM, t: int) -> ThinnedTPM:
    """``Gamma(t) Gamma(t+1) ... Gamma(t+L-1)`` with cyclic indices."""
    if int(t) != t or not 1 <= t <= tpm.period:
        raise ValueError(f"t must be an integer in 1..{tpm.period}, got {t}")
    return ThinnedTPM(int(t), _cyclic_product(tpm.matrices, int(t) - 1))


def solve_stationary(matrix: np.ndarray) -> np.ndarray:
    """Invariant vector of a stochastic matrix via ``delta (I - G + U) = 1``.

    No irreducibility check is done here.
    """
    n = matrix.shape[0]
    A = np.eye(n) - matrix + np.ones((n, n))
    delta = np.linalg.solve(A.T, np.ones(n))
    delta = np.clip(delta, 0.0, None)
    return delta / delta.sum()


def _stationary_exact_probs(mats: np.ndarray, direct: bool = False) -> np.ndarray:
    L, n, _ = mats.shape
    G1 = _cyclic_product(mats, 0)
    if not check_irreducible(G1):
        raise ModelError(
            "no unique periodically stationary distribution: the thinned chain at t=1 is reducible"
        )
    probs = np.empty((L, n))
    if direct:
        for t in range(L):
            probs[t] = solve_stationary(_cyclic_product(mats, t))
        return probs
    probs[0] = solve_stationary(G1)
    for t in range(1, L):
        probs[t] = probs[t - 1] @ mats[t - 1]
    return probs


def stationary_exact(tpm: PeriodicTPM, direct: bool = False) -> PeriodicDistribution:
    """Periodically stationary distribution ``delta(t)`` for ``t = 1, ..., L``.

    The thinned chain at ``t = 1`` is solved once and propagated forward with
    ``delta(t + 1) = delta(t) Gamma(t)``.

    Parameters
    ----------
    tpm : PeriodicTPM
    direct : bool, default False
        Solve the thinned chain independently at every ``t`` instead of
        propagating.  Costs ``O(N^3 L^2)``; kept as a cross-check.

    Raises
    ------
    ModelError
        If the thinned chain at ``t = 1`` is reducible.
    """
    return PeriodicDistribution(_stationary_exact_probs(tpm.matrices, direct), DistributionKind.EXACT_DELTA)


def stationary_hypothetical(tpm: PeriodicTPM) -> PeriodicDistribution:
    """Stationary vector of each ``Gamma(t)`` held fixed.

    This is what the chain would settle into if time stopped at ``t``; it is
    not the marginal distribution of the periodic chain.
    """
    probs = np.empty((tpm.period, tpm.n_states))
    for t in range(tpm.period):
        if not check_irreducible(tpm.matrices[t]):
            raise ModelError(f"transition matrix at t={t + 1} is reducible")
        probs[t] = solve_stationary(tpm.matrices[t])
    return PeriodicDistribution(probs, DistributionKind.HYPOTHETICAL_RHO)


def simulate_states(tpm: PeriodicTPM, n_steps: int, rng: np.random.Generator,
                    start_phase: int = 1, initial=None) -> np.ndarray:
    """Draw a state path of length ``n_steps`` whose first step sits at ``start_phase``.

    The first state is drawn from ``initial`` (default ``delta(start_phase)``).
    Transition ``S_k -> S_{k+1}`` uses the matrix at the cycle position of step
    ``k``.  States are 0-based.
    """
    if initial is None:
        initial = stationary_exact(tpm)[start_phase]
    initial = np.asarray(initial, dtype=float)
    cum_init = np.cumsum(initial)
    cum_tpm = np.cumsum(tpm.matrices, axis=2)
    u = rng.random(n_steps)
    step_idx = (int(start_phase) - 1 + np.arange(n_steps)) % tpm.period
    return simulate_chain(cum_init, cum_tpm, step_idx, u)


def empirical_state_frequencies(tpm: PeriodicTPM, n_cycles: int, seed: int) -> PeriodicDistribution:
    """Per-phase state frequencies of one simulated chain of ``n_cycles`` cycles.

    The chain starts at ``t = 1`` from ``delta(1)``, so no burn-in is needed.
    """
    if int(n_cycles) != n_cycles or n_cycles < 1:
        raise ValueError(f"n_cycles must be a positive integer, got {n_cycles}")
    L, n = tpm.period, tpm.n_states
    rng = np.random.default_rng(seed)
    states = simulate_states(tpm, int(n_cycles) * L, rng).reshape(int(n_cycles), L)
    counts = np.stack([(states == i).sum(axis=0) for i in range(n)], axis=1)
    return PeriodicDistribution(counts / float(n_cycles), DistributionKind.EMPIRICAL)

"""Trigonometric multinomial-logit link for periodic transition matrices.

Each off-diagonal transition ``i -> j`` gets a linear predictor in cyclic
time ``t = 1, ..., L``::

    eta_ij(t) = b0 + sum_k b1k sin(2 pi k t / L) + sum_k b2k cos(2 pi k t / L)

and row ``i`` of the transition matrix is the softmax of ``eta_i.`` with the
diagonal entry fixed at zero (the staying probability is the reference
category).  For two states this is the plain logistic link.

States are indexed from 0 in the Python API.  Time indices are 1-based and
cyclic: ``t`` and ``t + L`` refer to the same matrix.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ModelError

__all__ = [
    "ETA_CLAMP",
    "TrigLinkSpec",
    "PeriodicTPM",
    "cycle_index",
    "design_matrix",
    "linear_predictor",
    "build_tpm",
]

ETA_CLAMP = 709.0


def cycle_index(t: int, period: int) -> int:
    """Map any integer time to its position in ``{1, ..., period}``."""
    return (int(t) - 1) % period + 1


def design_matrix(period: int, n_harmonics: int) -> np.ndarray:
    """Rows ``(1, sin(2 pi k t/L)..., cos(2 pi k t/L)...)`` for ``t = 1..L``.

    Returns
    -------
    X : ndarray, shape (period, 1 + 2 * n_harmonics)
    """
    t = np.arange(1, period + 1, dtype=float)
    k = np.arange(1, n_harmonics + 1, dtype=float)
    angle = 2.0 * np.pi * np.outer(t, k) / period
    return np.column_stack([np.ones(period), np.sin(angle), np.cos(angle)])


def _pair_key(i: int, j: int, n_states: int) -> str:
    if n_states < 10:
        return f"{i + 1}{j + 1}"
    return f"{i + 1},{j + 1}"


def _parse_pair_key(key: str, n_states: int) -> tuple[int, int]:
    if "," in key:
        a, b = key.split(",")
    elif len(key) == 2:
        a, b = key[0], key[1]
    else:
        raise ValueError(f"cannot parse state pair key {key!r}")
    i, j = int(a) - 1, int(b) - 1
    if not (0 <= i < n_states and 0 <= j < n_states) or i == j:
        raise ValueError(f"state pair key {key!r} out of range for {n_states} states")
    return i, j


@dataclass(frozen=True)
class TrigLinkSpec:
    """Coefficients of the trigonometric logit link.

    Parameters
    ----------
    n_states : int
        Number of hidden states, at least 2.
    period : int
        Cycle length ``L``.
    n_harmonics : int
        Number of sine/cosine pairs ``K``; 0 gives a homogeneous chain.
    coeffs : mapping (i, j) -> array of length 1 + 2K
        One vector ``(b0, b11..b1K, b21..b2K)`` per ordered off-diagonal pair,
        states 0-based.
    """

    n_states: int
    period: int
    n_harmonics: int
    coeffs: Mapping[tuple[int, int], np.ndarray] = field(repr=False)

    def __post_init__(self):
        n, L, K = self.n_states, self.period, self.n_harmonics
        if int(n) != n or n < 2:
            raise ValueError(f"n_states must be an integer >= 2, got {n}")
        if int(L) != L or L < 1:
            raise ValueError(f"period must be an integer >= 1, got {L}")
        if int(K) != K or K < 0:
            raise ValueError(f"n_harmonics must be an integer >= 0, got {K}")
        expected = {(i, j) for i in range(n) for j in range(n) if i != j}
        keys = {(int(i), int(j)) for i, j in self.coeffs}
        if keys != expected:
            raise ValueError(
                f"coeffs must have exactly the {n * (n - 1)} off-diagonal pairs; "
                f"missing {sorted(expected - keys)}, unexpected {sorted(keys - expected)}"
            )
        frozen = {}
        for (i, j), beta in self.coeffs.items():
            beta = np.array(beta, dtype=float).reshape(-1)
            if beta.size != 1 + 2 * K:
                raise ValueError(
                    f"coefficient vector for pair ({i}, {j}) has length {beta.size}, "
                    f"expected {1 + 2 * K}"
                )
            if not np.all(np.isfinite(beta)):
                raise ValueError(f"non-finite coefficient for pair ({i}, {j})")
            beta.flags.writeable = False
            frozen[(int(i), int(j))] = beta
        object.__setattr__(self, "coeffs", dict(sorted(frozen.items())))

    @property
    def pairs(self) -> list[tuple[int, int]]:
        """Off-diagonal pairs in row-major order."""
        return list(self.coeffs)

    @classmethod
    def constant(cls, n_states: int, period: int, n_harmonics: int = 0, intercept: float = 0.0):
        """Spec with every intercept equal to ``intercept`` and zero harmonics."""
        beta = np.zeros(1 + 2 * n_harmonics)
        beta[0] = intercept
        coeffs = {(i, j): beta for i in range(n_states) for j in range(n_states) if i != j}
        return cls(n_states, period, n_harmonics, coeffs)

    @classmethod
    def two_state(cls, beta12, beta21, period: int):
        """Two-state spec from the ``1 -> 2`` and ``2 -> 1`` coefficient vectors."""
        beta12 = np.asarray(beta12, dtype=float)
        beta21 = np.asarray(beta21, dtype=float)
        if beta12.size % 2 == 0 or beta12.size != beta21.size:
            raise ValueError("coefficient vectors must share an odd length 1 + 2K")
        return cls(2, period, (beta12.size - 1) // 2, {(0, 1): beta12, (1, 0): beta21})

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "period": self.period,
            "n_harmonics": self.n_harmonics,
            "coeffs": {
                _pair_key(i, j, self.n_states): [float(b) for b in beta]
                for (i, j), beta in self.coeffs.items()
            },
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TrigLinkSpec":
        n = int(doc["n_states"])
        coeffs = {_parse_pair_key(k, n): v for k, v in doc["coeffs"].items()}
        return cls(n, int(doc["period"]), int(doc["n_harmonics"]), coeffs)

    def to_json(self, path=None, **kwargs) -> str:
        text = json.dumps(self.to_dict(), indent=2, **kwargs)
        if path is not None:
            Path(path).write_text(text + "\n", encoding="utf-8")
        return text

    @classmethod
    def from_json(cls, source) -> "TrigLinkSpec":
        """Load from a JSON string or a path to a JSON file."""
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(source))


@dataclass(frozen=True)
class PeriodicTPM:
    """The ``L`` distinct transition matrices of a periodic chain.

    ``tpm[t]`` returns the matrix at 1-based cyclic time ``t``; any integer
    is accepted and reduced modulo the period.
    """

    matrices: np.ndarray

    def __post_init__(self):
        mats = np.array(self.matrices, dtype=float)
        if mats.ndim == 2:
            mats = mats[None]
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2] or mats.shape[0] < 1:
            raise ValueError(f"matrices must have shape (L, N, N), got {mats.shape}")
        if not np.all(np.isfinite(mats)) or mats.min() < 0.0 or mats.max() > 1.0:
            raise ValueError("transition probabilities must lie in [0, 1]")
        bad = np.abs(mats.sum(axis=2) - 1.0) > 1e-12
        if bad.any():
            t, i = np.argwhere(bad)[0]
            raise ValueError(f"row {i} of the matrix at t={t + 1} does not sum to 1")
        mats.flags.writeable = False
        object.__setattr__(self, "matrices", mats)

    @property
    def period(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_states(self) -> int:
        return self.matrices.shape[1]

    def __getitem__(self, t: int) -> np.ndarray:
        return self.matrices[(int(t) - 1) % self.period]

    def __len__(self) -> int:
        return self.period

    def diagonals(self) -> np.ndarray:
        """Staying probabilities, shape (L, N); row ``t - 1`` holds ``gamma_ii(t)``."""
        return np.diagonal(self.matrices, axis1=1, axis2=2).copy()

    @property
    def is_homogeneous(self) -> bool:
        return bool(np.all(self.matrices == self.matrices[0]))

    @classmethod
    def homogeneous(cls, matrix, period: int = 1) -> "PeriodicTPM":
        matrix = np.asarray(matrix, dtype=float)
        return cls(np.broadcast_to(matrix, (period,) + matrix.shape))

    def to_dict(self) -> dict:
        return {"period": self.period, "matrices": self.matrices.tolist()}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "PeriodicTPM":
        tpm = cls(np.asarray(doc["matrices"], dtype=float))
        if "period" in doc and int(doc["period"]) != tpm.period:
            raise ValueError("period does not match the number of matrices")
        return tpm


def linear_predictor(spec: TrigLinkSpec, i: int, j: int, t: int) -> float:
    """Linear predictor of the ``i -> j`` transition at time ``t`` (1-based)."""
    if i == j:
        raise ValueError("the linear predictor is defined for off-diagonal pairs only")
    if not (0 <= i < spec.n_states and 0 <= j < spec.n_states):
        raise ValueError(f"state pair ({i}, {j}) out of range")
    if int(t) != t or not 1 <= t <= spec.period:
        raise ValueError(f"t must be an integer in 1..{spec.period}, got {t}")
    K, L = spec.n_harmonics, spec.period
    beta = spec.coeffs[(i, j)]
    k = np.arange(1, K + 1)
    angle = 2.0 * np.pi * k * t / L
    return float(beta[0] + beta[1:K + 1] @ np.sin(angle) + beta[K + 1:] @ np.cos(angle))


def predictors(spec: TrigLinkSpec) -> np.ndarray:
    """All linear predictors, shape (L, N, N), zeros on the diagonal."""
    X = design_matrix(spec.period, spec.n_harmonics)
    eta = np.zeros((spec.period, spec.n_states, spec.n_states))
    for (i, j), beta in spec.coeffs.items():
        eta[:, i, j] = X @ beta
    return eta


def tpm_from_predictors(eta: np.ndarray) -> np.ndarray:
    """Row-wise softmax of clamped predictors; diagonal entries must be 0."""
    eta = np.clip(eta, -ETA_CLAMP, ETA_CLAMP)
    eta = eta - eta.max(axis=-1, keepdims=True)
    w = np.exp(eta)
    return w / w.sum(axis=-1, keepdims=True)


def build_tpm(spec: TrigLinkSpec) -> PeriodicTPM:
    """Evaluate the link at ``t = 1, ..., L``.

    Examples
    --------
    >>> spec = TrigLinkSpec.two_state([0.0], [0.0], period=3)
    >>> build_tpm(spec)[2]
    array([[0.5, 0.5],
           [0.5, 0.5]])
    """
    return PeriodicTPM(tpm_from_predictors(predictors(spec)))


def check_irreducible(matrix: np.ndarray, eps: float = 1e-12) -> bool:
    """Strong connectivity of the graph with edges where ``matrix > eps``."""
    from scipy.sparse.csgraph import connected_components

    n_comp, _ = connected_components(np.asarray(matrix) > eps, directed=True, connection="strong")
    return n_comp == 1


def require_irreducible(matrix: np.ndarray, what: str) -> None:
    if not check_irreducible(matrix):
        raise ModelError(f"{what} is reducible")

"""Dwell-time model checking.

State sequences are drawn from the locally decoded state probabilities,
independently at every time step, and their run lengths give an empirical
dwell-time distribution to hold against the model-implied one.  The first and
last run of each sequence are censored (their true length is unknown) and are
never counted.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import tally_runs
from .dwell import DwellPMF
from .errors import CheckError
from .hmm import HMMModel, ObservationSeries, local_decode

__all__ = [
    "EmpiricalDwell",
    "DwellComparison",
    "sample_from_posterior",
    "sample_decoded_sequences",
    "empirical_dwell",
    "compare_dwell",
    "total_variation",
]


@dataclass(frozen=True)
class EmpiricalDwell:
    """Run-length frequencies ``pmf[r - 1]`` for ``r = 1..r_max``, averaged over draws.

    Runs longer than ``r_max`` count towards each draw's normalisation, so the
    pmf may sum to less than one.
    """

    state: int
    pmf: np.ndarray
    n_sequences: int
    n_runs: int

    @property
    def support_max(self) -> int:
        return self.pmf.size


def sample_from_posterior(posterior: np.ndarray, n_seq: int, rng: np.random.Generator) -> np.ndarray:
    """Independent per-step draws from the rows of ``posterior``; shape (n_seq, T)."""
    cum = np.cumsum(posterior, axis=1)
    cum[:, -1] = 1.0
    u = rng.random((int(n_seq), posterior.shape[0]))
    n = posterior.shape[1]
    states = np.zeros(u.shape, dtype=np.int64)
    for i in range(n - 1):
        states += u >= cum[None, :, i]
    return states


def sample_decoded_sequences(model: HMMModel, series, n_seq: int, seed):
    """State sequences drawn from local decoding.

    Parameters
    ----------
    series : ObservationSeries or list of them
    n_seq : int
        Number of draws.

    Returns
    -------
    ndarray of shape (n_seq, T) for a single series, otherwise a list with one
    such array per series.  Draw ``k`` of every array together forms one
    sampled state history.
    """
    if int(n_seq) != n_seq or n_seq < 1:
        raise ValueError("n_seq must be a positive integer")
    rng = np.random.default_rng(seed)
    if isinstance(series, ObservationSeries):
        return sample_from_posterior(local_decode(model, series), n_seq, rng)
    return [sample_from_posterior(local_decode(model, s), n_seq, rng) for s in series]


def empirical_dwell(sequences, i: int, r_max: int) -> EmpiricalDwell:
    """Average per-draw run-length frequencies of state ``i``.

    Parameters
    ----------
    sequences : array (n_seq, T), a single sequence, or a list of such arrays
        A list is read as several series sampled with the same number of
        draws; draw ``k`` pools the runs of row ``k`` of every array.
    i : int
        0-based state.
    r_max : int

    Raises
    ------
    CheckError
        If no draw contains a complete run of state ``i``.
    """
    if int(r_max) != r_max or r_max < 1:
        raise ValueError("r_max must be a positive integer")
    if len(sequences) == 0:
        raise CheckError("no sequences given")
    if isinstance(sequences, np.ndarray) or np.isscalar(sequences[0]):
        # one array: a single sequence or one row per draw
        rows = [(k, row) for k, row in enumerate(np.atleast_2d(np.asarray(sequences)))]
    elif all(np.ndim(b) == 1 for b in sequences):
        # separate sequences, possibly of different lengths
        rows = [(k, np.asarray(b)) for k, b in enumerate(sequences)]
    else:
        blocks = [np.atleast_2d(np.asarray(b)) for b in sequences]
        if any(b.shape[0] != blocks[0].shape[0] for b in blocks):
            raise ValueError("all series must carry the same number of draws")
        rows = [(k, row) for b in blocks for k, row in enumerate(b)]
    n_seq = max(k for k, _ in rows) + 1
    counts = np.zeros((n_seq, int(r_max)))
    totals = np.zeros(n_seq)
    for k, row in rows:
        if row.size:
            tally_runs(np.ascontiguousarray(row[None, :], dtype=np.int64), int(i), int(r_max),
                       counts[k:k + 1], totals[k:k + 1])
    has_runs = totals > 0
    if not has_runs.any():
        raise CheckError(f"state {i} has no complete run in any sampled sequence")
    freqs = counts[has_runs] / totals[has_runs, None]
    return EmpiricalDwell(int(i), freqs.mean(axis=0), n_seq, int(totals.sum()))


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    """Half the L1 distance on a common truncated support."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(frozen=True)
class DwellComparison:
    """Analytic versus empirical dwell-time pmf of one state."""

    state: int
    r: np.ndarray
    analytic: np.ndarray
    empirical: np.ndarray
    tv_distance: float

    @property
    def difference(self) -> np.ndarray:
        return self.empirical - self.analytic

    def summary(self) -> dict:
        return {
            "state": self.state + 1,
            "r_max": int(self.r[-1]),
            "tv_distance": self.tv_distance,
            "analytic_mass": float(self.analytic.sum()),
            "empirical_mass": float(self.empirical.sum()),
        }


def compare_dwell(analytic: DwellPMF, empirical: EmpiricalDwell) -> DwellComparison:
    """Per-length differences and total-variation distance."""
    if analytic.state != empirical.state:
        raise ValueError("analytic and empirical pmfs refer to different states")
    if analytic.support_max != empirical.support_max:
        raise ValueError("analytic and empirical pmfs have different support")
    r = np.arange(1, analytic.support_max + 1)
    return DwellComparison(analytic.state, r, analytic.pmf.copy(), empirical.pmf.copy(),
                           total_variation(analytic.pmf, empirical.pmf))


def write_comparison_csv(comparisons: Sequence[DwellComparison], path=None) -> str:
    """CSV with columns ``state, r, analytic, empirical`` (states 1-based)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["state", "r", "analytic", "empirical"])
    for c in comparisons:
        for r, a, e in zip(c.r, c.analytic, c.empirical):
            writer.writerow([c.state + 1, int(r), repr(float(a)), repr(float(e))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def write_comparison_json(comparisons: Sequence[DwellComparison], path=None, **extra) -> str:
    doc = dict(extra)
    doc["states"] = [c.summary() for c in comparisons]
    text = json.dumps(doc, indent=2)
    if path is not None:
        Path(path).write_text(text + "\n", encoding="utf-8")
    return text

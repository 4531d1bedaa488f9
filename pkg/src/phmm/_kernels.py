"""Compiled inner loops for chain simulation and the HMM recursions.

``step_idx[t]`` selects the matrix in ``mats`` (or ``cum_tpm``) that moves the
chain from step ``t`` to step ``t + 1``.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def _draw(cum, u):
    n = cum.shape[0]
    for k in range(n - 1):
        if u < cum[k]:
            return k
    return n - 1


@njit(cache=True)
def simulate_chain(cum_init, cum_tpm, step_idx, u):
    T = u.shape[0]
    states = np.empty(T, dtype=np.int64)
    s = _draw(cum_init, u[0])
    states[0] = s
    for k in range(1, T):
        s = _draw(cum_tpm[step_idx[k - 1], s], u[k])
        states[k] = s
    return states


@njit(cache=True)
def _kahan_add(total, comp, x):
    # compensated sum keeps long series' log-likelihoods smooth in the parameters
    y = x - comp
    t = total + y
    return t, (t - total) - y


@njit(cache=True)
def forward_loglik(log_b, mats, step_idx, init):
    """Scaled forward pass; returns (log-likelihood, failing step or -1)."""
    T, N = log_b.shape
    alpha = np.empty(N)
    new = np.empty(N)
    m = log_b[0].max()
    c = 0.0
    for j in range(N):
        alpha[j] = init[j] * np.exp(log_b[0, j] - m)
        c += alpha[j]
    if not (c > 0.0) or not np.isfinite(c):
        return np.nan, 0
    ll = np.log(c) + m
    comp = 0.0
    for j in range(N):
        alpha[j] /= c
    for t in range(1, T):
        p = step_idx[t - 1]
        m = log_b[t].max()
        c = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += alpha[i] * mats[p, i, j]
            new[j] = acc * np.exp(log_b[t, j] - m)
            c += new[j]
        if not (c > 0.0) or not np.isfinite(c):
            return np.nan, t
        ll, comp = _kahan_add(ll, comp, np.log(c) + m)
        for j in range(N):
            alpha[j] = new[j] / c
    return ll, -1


@njit(cache=True)
def forward_backward(log_b, mats, step_idx, init):
    """Local state probabilities; returns (posterior, log-likelihood, failing step)."""
    T, N = log_b.shape
    b = np.empty((T, N))
    logm = np.empty(T)
    for t in range(T):
        m = log_b[t].max()
        logm[t] = m
        for j in range(N):
            b[t, j] = np.exp(log_b[t, j] - m)
    alpha = np.empty((T, N))
    scale = np.empty(T)
    c = 0.0
    for j in range(N):
        alpha[0, j] = init[j] * b[0, j]
        c += alpha[0, j]
    if not (c > 0.0) or not np.isfinite(c):
        return alpha, np.nan, 0
    scale[0] = c
    for j in range(N):
        alpha[0, j] /= c
    for t in range(1, T):
        p = step_idx[t - 1]
        c = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += alpha[t - 1, i] * mats[p, i, j]
            alpha[t, j] = acc * b[t, j]
            c += alpha[t, j]
        if not (c > 0.0) or not np.isfinite(c):
            return alpha, np.nan, t
        scale[t] = c
        for j in range(N):
            alpha[t, j] /= c
    beta = np.ones(N)
    new = np.empty(N)
    post = np.empty((T, N))
    for j in range(N):
        post[T - 1, j] = alpha[T - 1, j]
    for t in range(T - 2, -1, -1):
        p = step_idx[t]
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += mats[p, i, j] * b[t + 1, j] * beta[j]
            new[i] = acc / scale[t + 1]
        s = 0.0
        for i in range(N):
            beta[i] = new[i]
            post[t, i] = alpha[t, i] * beta[i]
            s += post[t, i]
        for i in range(N):
            post[t, i] /= s
    ll = 0.0
    comp = 0.0
    for t in range(T):
        ll, comp = _kahan_add(ll, comp, np.log(scale[t]) + logm[t])
    return post, ll, -1


@njit(cache=True)
def tally_runs(seqs, state, r_max, counts, totals):
    """Add complete runs of ``state`` in each row of ``seqs`` to the tallies.

    The first and last run of every row are censored and skipped.
    ``counts[k, r - 1]`` counts runs of length ``r <= r_max`` in row ``k``;
    ``totals[k]`` counts all complete runs, including longer ones.
    """
    n_seq, T = seqs.shape
    for k in range(n_seq):
        row = seqs[k]
        start = 0
        first = True
        for t in range(1, T + 1):
            if t == T or row[t] != row[t - 1]:
                if t == T:
                    break
                if not first and row[start] == state:
                    r = t - start
                    totals[k] += 1
                    if r <= r_max:
                        counts[k, r - 1] += 1
                first = False
                start = t

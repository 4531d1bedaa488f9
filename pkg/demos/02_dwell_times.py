"""
Dwell times of a periodic chain
===============================

When transition probabilities vary over the day, how long the chain stays in
a state depends on when it entered.  Mixing the entry-time distributions
gives the overall dwell-time distribution, which need not be geometric and can
have more than one mode.
"""

import numpy as np

from phmm import (
    TrigLinkSpec,
    build_tpm,
    dwell_mean_overall,
    dwell_means,
    dwell_pmf_at,
    dwell_pmf_overall,
    empirical_dwell,
    mixture_weights,
    survival,
)
from phmm.stationary import simulate_states

tpm = build_tpm(TrigLinkSpec.two_state([-3, 1.5, -0.9], [-3, 1.2, -1.1], period=24))
state = 1  # 0-based, so this is state 2

# Expected stay by entry hour.
means = dwell_means(tpm, state)
for t in (1, 7, 13, 19):
    print(f"entered at t={t:2d}: mean stay {means[t - 1]:.2f} steps, "
          f"P(leave after 1 step) = {dwell_pmf_at(tpm, state, t).pmf[0]:.3f}")

# Entry-time weights and the overall pmf.
w = mixture_weights(tpm, None, state).weights
print(f"\nmost likely entry hour: t={np.argmax(w) + 1} (weight {w.max():.3f})")
overall = dwell_pmf_overall(tpm, state)
d = overall.pmf
rises = np.flatnonzero(np.diff(d) > 0) + 1
print(f"overall mean dwell: {dwell_mean_overall(tpm, state):.2f} steps")
print(f"pmf dips at r={rises[0]} and peaks again at r={rises[0] + np.argmax(d[rises[0]:48])}")

# Stays that last a full day forget how long they have lasted.
L = tpm.period
print(f"P(R > L+5 | R > L) = {survival(tpm, state, None, L + 5) / survival(tpm, state, None, L):.6f}")
print(f"P(R > 5)           = {survival(tpm, state, None, 5):.6f}")

# Monte Carlo check with a long simulated chain.
path = simulate_states(tpm, 100_000 * L, np.random.default_rng(0))
emp = empirical_dwell(path, state, overall.support_max)
print(f"\nTV(analytic, simulated) over {emp.n_runs} runs: {0.5 * np.abs(emp.pmf - d).sum():.4f}")

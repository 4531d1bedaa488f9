"""
Exact versus hypothetical stationary distributions
==================================================

A common shortcut for a periodic chain is to take, at each time of day, the
stationary vector of that hour's transition matrix.  This script shows how far
that shortcut can drift from the true marginal state distribution.
"""

import numpy as np

from phmm import TrigLinkSpec, build_tpm, empirical_state_frequencies, stationary_exact, stationary_hypothetical
from phmm.stationary import write_distributions_csv

# A nearly homogeneous chain: both switching probabilities stay small all day.
spec = TrigLinkSpec.two_state([-5, -1, -1], [-5, 1, 1], period=24)
tpm = build_tpm(spec)

delta = stationary_exact(tpm)        # marginal distribution of the periodic chain
rho = stationary_hypothetical(tpm)   # per-hour stationary vectors
emp = empirical_state_frequencies(tpm, n_cycles=1000, seed=1)

print(" t   delta_1   rho_1   empirical_1")
for t in range(1, 25):
    print(f"{t:2d}   {delta[t][0]:.3f}    {rho[t][0]:.3f}     {emp[t][0]:.3f}")

# delta hugs 0.5 while rho swings across almost the whole unit interval
print(f"\nrho_1 range:   {rho.probs[:, 0].min():.3f} .. {rho.probs[:, 0].max():.3f}")
print(f"delta_1 range: {delta.probs[:, 0].min():.3f} .. {delta.probs[:, 0].max():.3f}")
print(f"max |empirical - delta|: {np.abs(emp.probs - delta.probs).max():.3f}")

# The same numbers as a CSV, ready for plotting elsewhere.
write_distributions_csv([delta, rho, emp], "stationary_bias.csv")

"""Periodically inhomogeneous hidden Markov models.

Exact periodically stationary state distributions, time-varying and overall
dwell-time distributions, maximum-likelihood fitting of count HMMs with a
trigonometric transition link, and dwell-time model checks.
"""
from .check import (
    DwellComparison,
    EmpiricalDwell,
    compare_dwell,
    empirical_dwell,
    sample_decoded_sequences,
    total_variation,
)
from .dwell import (
    DwellPMF,
    MixtureWeights,
    default_r_max,
    dwell_mean_at,
    dwell_mean_overall,
    dwell_means,
    dwell_pmf_all,
    dwell_pmf_at,
    dwell_pmf_overall,
    mixture_weights,
    survival,
)
from .errors import (
    CheckError,
    DataError,
    DivergenceError,
    ModelError,
    NumericError,
    PHMMError,
    UncertaintyError,
)
from .estimate import Bands, FitOptions, FitResult, WorkingParams, fit, mc_confidence
from .hmm import (
    EmissionSpec,
    HMMModel,
    ObservationSeries,
    local_decode,
    log_likelihood,
    read_series_csv,
    simulate,
    write_series_csv,
)
from .link import PeriodicTPM, TrigLinkSpec, build_tpm, linear_predictor
from .stationary import (
    DistributionKind,
    PeriodicDistribution,
    ThinnedTPM,
    empirical_state_frequencies,
    stationary_exact,
    stationary_hypothetical,
    thinned_tpm,
)

__version__ = "0.1.0"

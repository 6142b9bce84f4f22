"""Model zoo: the concrete models, their MLE routines, reference RLCTs and
the cormorant fixture."""

from rlct.zoo.data import CORMORANT_FREQUENCIES, CORMORANT_TRIALS, cormorant_fixture, counts_dataset
from rlct.zoo.mle import MleResult, mle_mixture_em, mle_rrr, rrr_coefficients
from rlct.zoo.models import (
    GMM2_STANDARD_NORMAL_TRUTH,
    BinomialMixture,
    GaussianMixture2,
    NormalLocation,
    ReducedRankRegression,
    binom_mixture_model,
    binomial_truth,
    gmm2_model,
    normal_location_model,
    rrr_model,
    rrr_truth,
)
from rlct.zoo.references import (
    BINOMIAL_TABLE_ESTIMATES,
    RRR_EXACT_RLCT,
    RRR_TABLE_ESTIMATES,
    RlctReference,
    binomial_bound_05,
    binomial_bound_1,
    binomial_reference,
    rrr_exact_rlct,
    rrr_reference,
    rrr_regular_rlct,
)

__all__ = [
    "BINOMIAL_TABLE_ESTIMATES",
    "BinomialMixture",
    "CORMORANT_FREQUENCIES",
    "CORMORANT_TRIALS",
    "GMM2_STANDARD_NORMAL_TRUTH",
    "GaussianMixture2",
    "MleResult",
    "NormalLocation",
    "RRR_EXACT_RLCT",
    "RRR_TABLE_ESTIMATES",
    "ReducedRankRegression",
    "RlctReference",
    "binom_mixture_model",
    "binomial_bound_05",
    "binomial_bound_1",
    "binomial_reference",
    "binomial_truth",
    "cormorant_fixture",
    "counts_dataset",
    "gmm2_model",
    "mle_mixture_em",
    "mle_rrr",
    "normal_location_model",
    "rrr_coefficients",
    "rrr_exact_rlct",
    "rrr_model",
    "rrr_reference",
    "rrr_regular_rlct",
    "rrr_truth",
]

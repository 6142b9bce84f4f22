"""RLCT estimators and tempered-posterior information criteria.

The variance estimator ``t^2 V^t[log p]`` (``lambda_v1``) and its replicate
average (``lambda_vm``) are the main entry points; the mean-difference
estimators, the effective numbers of parameters and WBIC are provided for
comparison.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from rlct.model_core import (
    CHAIN_STREAM,
    DATA_STREAM,
    MAX_SIMULATION_SIZE,
    SECOND_CHAIN_STREAM,
    Dataset,
    ModelSpec,
    RngPlan,
)
from rlct.sampler import (
    McmcConfig,
    TemperedChain,
    posterior_mean_loglik,
    posterior_var_loglik,
    sample_tempered,
    sample_tempered_lanes,
)

#: importance-weight ESS below which the one-chain approximation warns
MIN_WEIGHT_ESS = 10.0


class DegenerateWeightsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ReplicationPlan:
    n_s: int
    m: int
    c: float = 1.0
    generating_params: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.n_s < 2:
            raise ValueError("n_s must be >= 2 so that log(n_s) > 0")
        if self.n_s > MAX_SIMULATION_SIZE:
            raise ValueError(f"n_s is capped at {MAX_SIMULATION_SIZE}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not self.c > 0:
            raise ValueError("c must be positive")

    @property
    def temperature(self) -> float:
        return self.c / math.log(self.n_s)


@dataclass(frozen=True)
class RlctEstimate:
    lambda_hat: float
    std_error: float
    m: int
    n_s: int
    c: float
    per_replicate: Tuple[float, ...]
    warnings: Tuple[str, ...] = field(default=())

    CSV_FIELDS = ("model_i", "truth_j", "n_s", "m", "c", "lambda_hat", "std_error", "warnings")

    def csv_row(self, model_i, truth_j) -> list:
        return [model_i, truth_j, self.n_s, self.m, repr(self.c), f"{self.lambda_hat:.10g}",
                f"{self.std_error:.10g}", "; ".join(self.warnings)]


@dataclass(frozen=True)
class EEstimatorConfig:
    c: float = 1.0
    d: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.d > 0:
            raise ValueError("d must be positive (d = 0 makes the estimator incomputable)")

    def temperatures(self, n: int) -> Tuple[float, float]:
        """``(t, delta)`` with ``t = c / log n`` and ``delta = d / log n``."""
        if n < 2:
            raise ValueError("need n >= 2")
        return self.c / math.log(n), self.d / math.log(n)


# ---------------------------------------------------------------------------
# variance estimator
# ---------------------------------------------------------------------------


def lambda_v1(chain: TemperedChain, n: Optional[int] = None) -> float:
    """``t^2 V^t[log p(X^n | theta)]`` from a chain sampled at ``t = c / log n``."""
    if n is not None and chain.n_obs is not None and n != chain.n_obs:
        raise ValueError(f"chain was sampled on {chain.n_obs} observations, not {n}")
    return chain.t**2 * posterior_var_loglik(chain)


def _replicate_lanes(fit_model, truth_model, truth_params, n_s, t, plans: Sequence[RngPlan], m,
                     mcmc, workers):
    stats, seeds = [], []
    for plan in plans:
        for k in range(m):
            data = truth_model.simulate(truth_params, n_s, plan.stream(k, DATA_STREAM))
            stats.append(fit_model.summarize(data))
            seeds.append(plan.seed_sequence(k, CHAIN_STREAM))
    chains = sample_tempered_lanes(fit_model, stats, [t] * len(stats), mcmc, seeds, workers=workers,
                                   n_obs=[n_s] * len(stats))
    return [chains[r * m:(r + 1) * m] for r in range(len(plans))]


def _summarize(chains, plan: ReplicationPlan) -> RlctEstimate:
    per = np.array([lambda_v1(c) for c in chains])
    se = float(per.std(ddof=1) / math.sqrt(per.size)) if per.size > 1 else float("nan")
    notes = tuple(f"replicate {k}: {w}" for k, c in enumerate(chains) for w in c.warnings)
    return RlctEstimate(float(per.mean()), se, plan.m, plan.n_s, plan.c, tuple(per.tolist()), notes)


def lambda_vm(fit_model: ModelSpec, plan: ReplicationPlan, mcmc: McmcConfig = McmcConfig(), rng=0,
              truth_model: Optional[ModelSpec] = None, workers: int = 1) -> RlctEstimate:
    """Average of ``lambda_v1`` over ``plan.m`` datasets simulated from the truth.

    ``truth_model`` (default: ``fit_model``) with ``plan.generating_params``
    generates the data.  Replicate ``k`` draws its data from
    ``rng.stream(k, DATA_STREAM)`` and its chain from
    ``rng.stream(k, CHAIN_STREAM)``, so the estimate does not depend on
    ``workers``.  Low-ESS replicates are reported in ``warnings``.
    """
    return replicate_lambda_vm(fit_model, plan, mcmc, rng, truth_model, 1, workers)[0]


def replicate_lambda_vm(fit_model: ModelSpec, plan: ReplicationPlan, mcmc: McmcConfig, rng,
                        truth_model: Optional[ModelSpec] = None, replications: int = 1,
                        workers: int = 1) -> List[RlctEstimate]:
    """Independent repetitions of :func:`lambda_vm`; repetition ``r`` uses
    ``rng.child(r)`` (a single repetition uses ``rng`` itself)."""
    if plan.generating_params is None:
        raise ValueError("the replication plan needs generating parameters")
    rng = rng if isinstance(rng, RngPlan) else RngPlan(int(rng))
    truth_model = truth_model or fit_model
    plans = [rng] if replications == 1 else [rng.child(r) for r in range(replications)]
    groups = _replicate_lanes(fit_model, truth_model, np.asarray(plan.generating_params, float),
                              plan.n_s, plan.temperature, plans, plan.m, mcmc, workers)
    return [_summarize(g, plan) for g in groups]


# ---------------------------------------------------------------------------
# mean-difference estimators
# ---------------------------------------------------------------------------


def lambda_e_from_means(mean_t: float, mean_t_delta: float, t: float, delta: float) -> float:
    """``t (t + delta) (E^{t+delta} - E^t) / delta``."""
    if not delta > 0:
        raise ValueError("delta must be positive; the estimator is incomputable at delta = 0")
    return t * (t + delta) * (mean_t_delta - mean_t) / delta


def lambda_e(model: ModelSpec, dataset: Dataset, cfg: EEstimatorConfig = EEstimatorConfig(),
             mcmc: McmcConfig = McmcConfig(), rng=0) -> float:
    """Two chains, at ``t`` and ``t + delta``, on independent streams."""
    t, delta = cfg.temperatures(dataset.n)
    plan = rng if isinstance(rng, RngPlan) else RngPlan(int(rng))
    stats = model.summarize(dataset)
    lo, hi = sample_tempered_lanes(model, [stats, stats], [t, t + delta], mcmc,
                                   [plan.seed_sequence(0, CHAIN_STREAM), plan.seed_sequence(0, SECOND_CHAIN_STREAM)])
    return lambda_e_from_means(posterior_mean_loglik(lo), posterior_mean_loglik(hi), t, delta)


def reweighted_mean_shift(draws, delta: float) -> Tuple[float, float]:
    """``E~^{t+delta}[log p] - E^t[log p]`` by self-normalised reweighting.

    Weights are ``exp(delta (l - max l))``; the shift cancels in the ratio.
    Returns the shift and the ESS of the weights.
    """
    ll = np.asarray(getattr(draws, "loglik_draws", draws), dtype=float)
    w = np.exp(delta * (ll - ll.max()))
    centred = ll - ll.mean()
    shift = float(np.dot(w, centred) / w.sum())
    ess = float(w.sum() ** 2 / np.dot(w, w))
    return shift, ess


def lambda_e_tilde(chain: TemperedChain, n: int, cfg: EEstimatorConfig = EEstimatorConfig(),
                   delta: Optional[float] = None) -> float:
    """One-chain approximation of :func:`lambda_e`.

    ``delta`` overrides ``cfg.d / log n`` when given.  The chain's own ``t``
    is used as the lower temperature.
    """
    if isinstance(n, Dataset):
        n = n.n
    t = chain.t
    if delta is None:
        delta = cfg.temperatures(n)[1]
    if not delta > 0:
        raise ValueError("delta must be positive")
    shift, ess = reweighted_mean_shift(chain, delta)
    if ess < MIN_WEIGHT_ESS:
        warnings.warn(f"importance weights degenerate (ESS {ess:.1f})", DegenerateWeightsWarning, stacklevel=2)
    return t * (t + delta) * shift / delta


# ---------------------------------------------------------------------------
# effective number of parameters, WBIC
# ---------------------------------------------------------------------------


def _require_posterior(chain):
    if abs(chain.t - 1.0) > 1e-12:
        raise ValueError(f"chain must be sampled at t = 1, got t = {chain.t}")


def p_v_half(chain: TemperedChain) -> float:
    """Half of ``p_V = 2 V^{t=1}[log p]``."""
    _require_posterior(chain)
    return posterior_var_loglik(chain)


def p_d(chain: TemperedChain, model: ModelSpec, dataset: Dataset) -> float:
    """``-2 E[log p] + 2 log p(X^n | theta_bar)``.

    ``theta_bar`` is the posterior mean taken in unconstrained coordinates and
    mapped back, so it always lies inside the parameter space.  May be
    negative.
    """
    _require_posterior(chain)
    theta_bar, _ = model.from_unconstrained(chain.mean_unconstrained)
    return -2.0 * posterior_mean_loglik(chain) + 2.0 * model.log_lik(theta_bar, dataset)


def wbic_temperature(n: int) -> float:
    if n < 2:
        raise ValueError("WBIC needs n >= 2")
    return 1.0 / math.log(n)


def wbic(model: ModelSpec, dataset: Dataset, mcmc: McmcConfig = McmcConfig(), rng=0) -> float:
    """``E^{t_w}[log p(X^n | theta)]`` with ``t_w = 1 / log n``."""
    chain = sample_tempered(model, dataset, wbic_temperature(dataset.n), mcmc, rng)
    return posterior_mean_loglik(chain)


def wbic_batch(model: ModelSpec, datasets: Sequence[Dataset], mcmc: McmcConfig,
               seeds: Sequence[np.random.SeedSequence], workers: int = 1) -> np.ndarray:
    """WBIC of ``model`` on each dataset, one lane per dataset."""
    ts = [wbic_temperature(ds.n) for ds in datasets]
    chains = sample_tempered_lanes(model, [model.summarize(ds) for ds in datasets], ts, mcmc, seeds,
                                   workers=workers, n_obs=[ds.n for ds in datasets])
    return np.array([posterior_mean_loglik(c) for c in chains])


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def write_estimates_csv(rows: Sequence[Tuple[object, object, RlctEstimate]], fh) -> None:
    """One row per ``(model_i, truth_j, estimate)``, in the given order."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(RlctEstimate.CSV_FIELDS)
    for model_i, truth_j, est in rows:
        writer.writerow(est.csv_row(model_i, truth_j))


def read_estimates_csv(fh) -> dict:
    """``{(i, j): lambda_hat}`` from a file written by :func:`write_estimates_csv`.

    Repeated ``(i, j)`` rows (independent repetitions) are averaged.
    """
    lines = [line for line in fh if not line.startswith("#")]
    values: dict = {}
    for row in csv.DictReader(lines):
        values.setdefault((int(row["model_i"]), int(row["truth_j"])), []).append(float(row["lambda_hat"]))
    return {key: float(np.mean(v)) for key, v in values.items()}

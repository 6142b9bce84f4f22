"""Maximum-likelihood fits: EM with restarts for mixtures, SVD truncation
for reduced-rank regression."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.special import logsumexp

from rlct.model_core import Dataset, as_generator
from rlct.zoo.models import BinomialMixture, GaussianMixture2, ReducedRankRegression

#: tolerated per-iteration decrease of the EM log-likelihood (round-off)
EM_MONOTONE_SLACK = 1e-9


class EMMonotonicityError(RuntimeError):
    pass


@dataclass
class MleResult:
    params_hat: np.ndarray
    max_loglik: float
    converged: bool
    restarts_used: int
    restart_logliks: List[float] = field(default_factory=list)
    loglik_trace: Optional[np.ndarray] = None  # EM trace of the winning restart


# ---------------------------------------------------------------------------
# mixtures
# ---------------------------------------------------------------------------


class _Family:
    """Weighted-data view of a mixture model for EM."""

    def __init__(self, model, dataset: Dataset):
        self.model = model
        x = dataset.column(0)
        if isinstance(model, BinomialMixture):
            counts = model.summarize(dataset)["counts"]
            keep = counts > 0
            self.values = np.arange(model.trials + 1, dtype=float)[keep]
            self.weights = counts[keep]
            self.kind = "binomial"
        elif isinstance(model, GaussianMixture2):
            self.values = np.asarray(x, dtype=float)
            self.weights = np.ones_like(self.values)
            self.kind = "gaussian"
        else:
            raise TypeError(f"EM is not implemented for {type(model).__name__}")
        self.n = self.weights.sum()
        self.components = model.n_components

    def log_density(self, loc):
        v = self.values
        if self.kind == "gaussian":
            return -0.5 * np.log(2 * np.pi) - 0.5 * (v[None, :] - loc[:, None]) ** 2
        return self.model.component_log_pmf(loc)[:, v.astype(int)]

    def loc_from_center(self, centers):
        if self.kind == "gaussian":
            return centers
        k = self.model.trials
        return np.clip(centers / k, 1e-3, 1 - 1e-3)

    def m_step_loc(self, resp_w, nk, old):
        num = resp_w @ self.values
        with np.errstate(invalid="ignore", divide="ignore"):
            loc = num / nk
        if self.kind == "binomial":
            loc = loc / self.model.trials
        return np.where(nk > 0, loc, old)


def _lloyd(values, weights, centers, iters=10):
    for _ in range(iters):
        assign = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
        for h in range(centers.size):
            w = weights[assign == h]
            if w.sum() > 0:
                centers[h] = np.dot(w, values[assign == h]) / w.sum()
    assign = np.argmin(np.abs(values[:, None] - centers[None, :]), axis=1)
    props = np.bincount(assign, weights=weights, minlength=centers.size) / weights.sum()
    return centers, props


def _init_centers(fam: _Family, restart: int, rng: np.random.Generator):
    v, w, i = fam.values, fam.weights, fam.components
    if restart == 0:
        # quantile split of the sorted sample, refined by Lloyd iterations
        order = np.argsort(v, kind="stable")
        cum = np.cumsum(w[order]) / w.sum()
        groups = np.minimum((cum * i - 1e-12).astype(int), i - 1)
        centers = np.array(
            [np.average(v[order][groups == h], weights=w[order][groups == h]) if np.any(groups == h) else v[order][-1]
             for h in range(i)]
        )
    else:
        # k-means++ seeding
        centers = [v[rng.choice(v.size, p=w / w.sum())]]
        for _ in range(1, i):
            d2 = np.min((v[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1) * w
            if d2.sum() <= 0:
                centers.append(v[rng.integers(v.size)] + rng.normal(0.0, 0.1))
            else:
                centers.append(v[rng.choice(v.size, p=d2 / d2.sum())])
        centers = np.asarray(centers, dtype=float)
    centers, props = _lloyd(v, w, centers.astype(float))
    props = np.maximum(props, 1e-3)
    return fam.loc_from_center(centers), props / props.sum()


def _run_em(fam: _Family, weights, loc, tol, max_iter):
    log_w = fam.weights
    trace = []
    converged = False
    prev = -np.inf
    for _ in range(max_iter):
        with np.errstate(divide="ignore"):
            terms = np.log(weights)[:, None] + fam.log_density(loc)
        log_mix = logsumexp(terms, axis=0)
        ll = float(np.dot(log_w, log_mix))
        trace.append(ll)
        if ll < prev - EM_MONOTONE_SLACK:
            raise EMMonotonicityError(f"EM log-likelihood decreased from {prev} to {ll}")
        if abs(ll - prev) < tol:
            converged = True
            break
        prev = ll
        resp_w = np.exp(terms - log_mix) * log_w
        nk = resp_w.sum(axis=1)
        weights = nk / fam.n
        loc = fam.m_step_loc(resp_w, nk, loc)
    return weights, loc, np.asarray(trace), converged


def mle_mixture_em(model, dataset: Dataset, restarts: int = 20, tol: float = 1e-8,
                   max_iter: int = 2000, rng=None) -> MleResult:
    """Best EM fixed point over ``restarts`` initialisations.

    Restart 0 starts from a k-means fit seeded by sample quantiles, the rest
    from k-means++ seeds.  Ties are broken towards the lowest restart index.
    Components of the result are ordered by location.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = as_generator(rng)
    fam = _Family(model, dataset)
    if fam.components == 1:
        loc = fam.m_step_loc(fam.weights[None, :], np.array([fam.n]), np.zeros(1))
        params = model.from_components(np.ones(1), loc)
        ll = model.log_lik(params, dataset)
        return MleResult(params, ll, True, 1, [ll], np.array([ll]))

    best = None
    finals, any_converged = [], False
    for r in range(restarts):
        loc0, w0 = _init_centers(fam, r, rng)
        w, loc, trace, conv = _run_em(fam, w0, loc0, tol, max_iter)
        finals.append(float(trace[-1]))
        any_converged |= conv
        if best is None or trace[-1] > best[3][-1]:
            best = (w, loc, conv, trace)
    w, loc, _, trace = best
    order = np.argsort(loc, kind="stable")
    params = model.from_components(w[order], loc[order])
    return MleResult(params, float(trace[-1]), any_converged, restarts, finals, trace)


# ---------------------------------------------------------------------------
# reduced-rank regression
# ---------------------------------------------------------------------------


def rrr_coefficients(X: np.ndarray, Y: np.ndarray, rank: int):
    """Rank-constrained least squares ``min ||Y - X C^T||_F``.

    The OLS fit is truncated in the metric ``X^T X``: with ``X^T X = L L^T``
    the best rank-``H`` coefficient is ``[C_ols L]_H L^{-1}``.
    Returns ``(C, B, A)`` with ``C = B A``.
    """
    n, M = X.shape
    N = Y.shape[1]
    sxx = X.T @ X
    if np.linalg.matrix_rank(X) < M:
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    c_ols = np.linalg.solve(sxx, X.T @ Y).T  # N x M
    if rank == 0:
        return np.zeros((N, M)), np.zeros((N, 0)), np.zeros((0, M))
    L = np.linalg.cholesky(sxx)
    U, s, Wt = np.linalg.svd(c_ols @ L, full_matrices=False)
    root = np.sqrt(s[:rank])
    B = U[:, :rank] * root
    A = (root[:, None] * Wt[:rank]) @ np.linalg.inv(L)
    return B @ A, B, A


def mle_rrr(dataset: Dataset, rank: int, input_dim: int) -> MleResult:
    obs = dataset.observations
    X, Y = obs[:, :input_dim], obs[:, input_dim:]
    model = ReducedRankRegression(input_dim, Y.shape[1], rank)
    _, B, A = rrr_coefficients(X, Y, rank)
    params = model.from_factors(B, A)
    ll = model.log_lik(params, dataset)
    return MleResult(params, ll, True, 1, [ll])

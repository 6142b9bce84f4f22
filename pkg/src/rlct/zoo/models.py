"""Concrete models: Gaussian mixture, binomial mixtures, reduced-rank
regression and a conjugate normal-location oracle model."""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, logsumexp

from rlct.model_core import (
    Dataset,
    IdentityBlock,
    LogitBlock,
    ModelSpec,
    ParamTransform,
    StickBreakingBlock,
    log_dirichlet_flat,
)

_LOG_2PI = np.log(2.0 * np.pi)


def _log_normal(x, mean, var):
    return -0.5 * (_LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


def _softplus_sum(z: np.ndarray) -> np.ndarray:
    """Row sums of ``log(1 + exp(z))``; kept to SIMD-friendly ufuncs."""
    pos = np.maximum(z, 0.0)
    np.abs(z, out=z)
    np.negative(z, out=z)
    np.exp(z, out=z)
    np.log1p(z, out=z)
    return pos.sum(axis=-1) + z.sum(axis=-1)


class NormalLocation(ModelSpec):
    """``x ~ N(theta, 1)`` with prior ``theta ~ N(0, 1)``.

    Regular (``lambda = 1/2``) and conjugate: the tempered posterior at
    inverse temperature ``t`` is ``N(t S / (t n + 1), 1 / (t n + 1))``.
    """

    name = "normal_location"

    def __init__(self):
        self.transform = ParamTransform([IdentityBlock(1)])

    def summarize(self, dataset):
        x = dataset.column(0)
        return {"n": np.float64(x.size), "s": x.sum(), "ss": np.dot(x, x)}

    def loglik_stats(self, params, stats):
        theta = params[..., 0]
        n, s, ss = stats["n"], stats["s"], stats["ss"]
        return -0.5 * n * _LOG_2PI - 0.5 * (ss - 2.0 * theta * s + n * theta**2)

    def log_prior(self, params):
        return _log_normal(np.asarray(params)[..., 0], 0.0, 1.0)

    def simulate(self, params, n, rng):
        return Dataset(rng.normal(float(np.asarray(params).ravel()[0]), 1.0, size=n))

    def initial_params(self, rng):
        return rng.standard_normal(1)

    # closed forms -----------------------------------------------------------

    @staticmethod
    def tempered_posterior(t: float, n: float, s: float):
        """Mean and variance of the tempered posterior of ``theta``."""
        prec = t * n + 1.0
        return t * s / prec, 1.0 / prec

    def tempered_loglik_moments(self, dataset: Dataset, t: float):
        """Exact ``(E^t[log p], V^t[log p])``.

        ``log p = const - n/2 (theta - xbar)^2`` and ``theta`` is Gaussian, so
        the needed moments are those of a scaled non-central chi-square.
        """
        st = self.summarize(dataset)
        n, s, ss = float(st["n"]), float(st["s"]), float(st["ss"])
        mean, var = self.tempered_posterior(t, n, s)
        xbar = s / n
        delta2 = (mean - xbar) ** 2
        const = -0.5 * n * _LOG_2PI - 0.5 * (ss - n * xbar**2)
        e = const - 0.5 * n * (var + delta2)
        v = 0.25 * n**2 * (2.0 * var**2 + 4.0 * var * delta2)
        return e, v


class GaussianMixture2(ModelSpec):
    """``alpha N(mu1, 1) + (1 - alpha) N(mu2, 1)``.

    Parameters are ``(alpha, mu1, mu2)`` with priors ``alpha ~ U(0, 1)`` and
    ``mu1, mu2 ~ N(0, prior_var)``.
    """

    name = "gmm2"
    n_components = 2

    def __init__(self, prior_var: float = 4.0):
        self.prior_var = float(prior_var)
        self.transform = ParamTransform([LogitBlock(1), IdentityBlock(2)])

    def summarize(self, dataset):
        x = np.ascontiguousarray(dataset.column(0))
        return {"x": x, "sx": x.sum(), "sxx": np.dot(x, x)}

    def loglik_stats(self, params, stats):
        # log-mixture = log(w_r phi(x - mu_r)) + softplus(z) with z linear in x,
        # taking the heavier component as reference r so alpha in {0, 1} is exact
        params = np.asarray(params, dtype=float)
        alpha, mu1, mu2 = params[..., 0], params[..., 1], params[..., 2]
        x, sx, sxx = stats["x"], stats["sx"], stats["sxx"]
        n = x.shape[-1]
        first = alpha >= 0.5
        with np.errstate(divide="ignore"):
            log_a, log_1ma = np.log(alpha), np.log1p(-alpha)
        log_ref, log_other = np.where(first, log_a, log_1ma), np.where(first, log_1ma, log_a)
        mu_ref, mu_other = np.where(first, mu1, mu2), np.where(first, mu2, mu1)
        z = x * (mu_other - mu_ref)[..., None]
        z += (log_other - log_ref - 0.5 * (mu_other**2 - mu_ref**2))[..., None]
        base = n * log_ref - 0.5 * n * _LOG_2PI - 0.5 * (sxx - 2.0 * mu_ref * sx + n * mu_ref**2)
        return base + _softplus_sum(z)

    def log_prior(self, params):
        params = np.asarray(params, dtype=float)
        alpha = params[..., 0]
        inside = (alpha > 0.0) & (alpha < 1.0)
        lp = _log_normal(params[..., 1], 0.0, self.prior_var) + _log_normal(
            params[..., 2], 0.0, self.prior_var
        )
        return np.where(inside, lp, -np.inf)

    def simulate(self, params, n, rng):
        alpha, mu1, mu2 = np.asarray(params, dtype=float)
        first = rng.random(n) < alpha
        x = rng.standard_normal(n) + np.where(first, mu1, mu2)
        return Dataset(x)

    def initial_params(self, rng):
        return np.array(
            [rng.uniform(0.05, 0.95), *rng.normal(0.0, np.sqrt(self.prior_var), 2)]
        )

    def component_view(self, params):
        """Weights and means as arrays of length 2."""
        alpha, mu1, mu2 = np.asarray(params, dtype=float)
        return np.array([alpha, 1.0 - alpha]), np.array([mu1, mu2])

    def from_components(self, weights, means):
        return np.array([weights[0], means[0], means[1]])


#: the Gaussian-mixture data-generating truth ``N(0, 1)``
GMM2_STANDARD_NORMAL_TRUTH = np.array([0.5, 0.0, 0.0])


class BinomialMixture(ModelSpec):
    """``sum_h pi_h B(k, p_h)`` with ``components`` terms.

    Parameters are ``(pi_1, ..., pi_{i-1}, p_1, ..., p_i)``; the last weight
    is implied.  Weights get the flat Dirichlet prior.  ``p_prior`` selects
    the prior on each success probability:

    ``"flat_logit"``
        flat density on ``logit(p)`` (improper; ``1 / (p (1 - p))`` on ``p``)
    ``"uniform"``
        ``p ~ U(0, 1)``
    """

    def __init__(self, components: int, trials: int, p_prior: str = "flat_logit"):
        if components < 1 or trials < 1:
            raise ValueError("need components >= 1 and trials >= 1")
        if p_prior not in ("flat_logit", "uniform"):
            raise ValueError(f"unknown p_prior {p_prior!r}")
        self.components = int(components)
        self.trials = int(trials)
        self.p_prior = p_prior
        self.name = f"binom{self.components}"
        blocks = [LogitBlock(self.components)]
        if self.components > 1:
            blocks.insert(0, StickBreakingBlock(self.components))
        self.transform = ParamTransform(blocks)
        v = np.arange(self.trials + 1, dtype=float)
        self._values = v
        self._log_choose = gammaln(self.trials + 1) - gammaln(v + 1) - gammaln(self.trials - v + 1)

    @property
    def n_components(self):
        return self.components

    def summarize(self, dataset):
        x = dataset.column(0)
        xi = np.rint(x).astype(int)
        if np.any(xi != x) or np.any(xi < 0) or np.any(xi > self.trials):
            raise ValueError(f"binomial observations must be integers in [0, {self.trials}]")
        counts = np.bincount(xi, minlength=self.trials + 1).astype(float)
        return {"counts": counts}

    def split(self, params):
        params = np.asarray(params, dtype=float)
        i = self.components
        head = params[..., : i - 1]
        weights = np.concatenate([head, 1.0 - head.sum(axis=-1, keepdims=True)], axis=-1)
        return weights, params[..., i - 1:]

    def component_log_pmf(self, p):
        """``log B(v | k, p_h)`` for ``v = 0..k``; shape ``p.shape + (k + 1,)``."""
        p = np.asarray(p, dtype=float)[..., None]
        v, k = self._values, self.trials
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = self._log_choose + np.where(v > 0, v * np.log(p), 0.0) + np.where(
                v < k, (k - v) * np.log1p(-p), 0.0
            )
        return lp

    def loglik_stats(self, params, stats):
        weights, p = self.split(params)
        with np.errstate(divide="ignore"):
            terms = np.log(weights)[..., None] + self.component_log_pmf(p)
        log_mix = logsumexp(terms, axis=-2)
        counts = stats["counts"]
        with np.errstate(invalid="ignore"):
            contrib = np.where(counts > 0, counts * log_mix, 0.0)
        return contrib.sum(axis=-1)

    def log_prior(self, params):
        weights, p = self.split(params)
        inside = np.all(weights > 0.0, axis=-1) & np.all((p > 0.0) & (p < 1.0), axis=-1)
        lp = np.full(inside.shape, log_dirichlet_flat(self.components))
        if self.p_prior == "flat_logit":
            with np.errstate(divide="ignore", invalid="ignore"):
                lp = lp - np.sum(np.log(p) + np.log1p(-p), axis=-1)
        return np.where(inside, lp, -np.inf)

    def simulate(self, params, n, rng):
        weights, p = self.split(params)
        z = rng.choice(self.components, size=n, p=weights / weights.sum())
        return Dataset(rng.binomial(self.trials, p[z]).astype(float))

    def initial_params(self, rng):
        weights = rng.dirichlet(np.ones(self.components))
        p = np.sort(rng.uniform(0.02, 0.98, self.components))
        return self.from_components(weights, p)

    def from_components(self, weights, p):
        return np.concatenate([np.asarray(weights, float)[:-1], np.asarray(p, float)])

    def component_view(self, params):
        w, p = self.split(params)
        return w, p


def binomial_truth(components: int, probs=None) -> np.ndarray:
    """Generating parameters used for truth ``M_j``: equal weights and
    success probabilities ``probs`` (default evenly spaced, ``h / (j + 1)``)."""
    j = int(components)
    weights = np.full(j, 1.0 / j)
    p = np.arange(1, j + 1) / (j + 1.0) if probs is None else np.asarray(probs, dtype=float)
    if p.shape != (j,) or np.any((p <= 0) | (p >= 1)):
        raise ValueError(f"need {j} success probabilities in (0, 1)")
    return np.concatenate([weights[:-1], p])


class ReducedRankRegression(ModelSpec):
    """``Y = B A X + noise`` with ``B`` (``N x H``) and ``A`` (``H x M``).

    Observations are rows ``(x, y)`` of length ``M + N``; the simulator draws
    ``x ~ N(0, I_M)``.  Factor entries have i.i.d. ``N(0, prior_sd^2)``
    priors.  Parameters are ``vec(B)`` then ``vec(A)`` (row-major).
    """

    def __init__(self, input_dim: int = 6, output_dim: int = 6, rank: int = 1, prior_sd: float = 10.0):
        M, N, H = int(input_dim), int(output_dim), int(rank)
        if M < 1 or N < 1:
            raise ValueError("input and output dimensions must be positive")
        if not 0 <= H <= min(M, N):
            raise ValueError(f"rank {H} must satisfy 0 <= H <= min(M, N) = {min(M, N)}")
        self.M, self.N, self.H = M, N, H
        self.prior_sd = float(prior_sd)
        self.name = f"rrr{H}"
        self.transform = ParamTransform([IdentityBlock(H * (M + N))] if H else [])

    def factors(self, params):
        params = np.asarray(params, dtype=float)
        lead = params.shape[:-1]
        nb = self.N * self.H
        B = params[..., :nb].reshape(lead + (self.N, self.H))
        A = params[..., nb:].reshape(lead + (self.H, self.M))
        return B, A

    def coefficient(self, params):
        B, A = self.factors(params)
        return B @ A

    def from_factors(self, B, A):
        return np.concatenate([np.ravel(B), np.ravel(A)])

    def summarize(self, dataset):
        obs = dataset.observations
        if obs.shape[1] != self.M + self.N:
            raise ValueError(f"rows must have length M + N = {self.M + self.N}")
        X, Y = obs[:, : self.M], obs[:, self.M:]
        return {
            "n": np.float64(obs.shape[0]),
            "sxx": X.T @ X,
            "sxy": X.T @ Y,
            "syy": np.float64(np.sum(Y * Y)),
        }

    def loglik_stats(self, params, stats):
        n, sxx, sxy, syy = stats["n"], stats["sxx"], stats["sxy"], stats["syy"]
        const = -0.5 * n * self.N * _LOG_2PI
        if self.H == 0:
            return np.broadcast_to(const - 0.5 * syy, np.shape(params)[:-1]).copy()
        C = self.coefficient(params)
        cross = np.einsum("...nm,...mn->...", C, sxy)
        quad = np.einsum("...nm,...ml,...nl->...", C, sxx, C)
        return const - 0.5 * (syy - 2.0 * cross + quad)

    def log_prior(self, params):
        params = np.asarray(params, dtype=float)
        return np.sum(_log_normal(params, 0.0, self.prior_sd**2), axis=-1)

    def simulate(self, params, n, rng):
        C = self.coefficient(params) if self.H else np.zeros((self.N, self.M))
        X = rng.standard_normal((n, self.M))
        Y = X @ C.T + rng.standard_normal((n, self.N))
        return Dataset(np.hstack([X, Y]))

    def initial_params(self, rng):
        return rng.normal(0.0, 1.0, self.dim)

    @property
    def has_conditional_sweep(self) -> bool:
        return self.H > 0

    def conditional_sweep(self, params, stats, t, normals):
        """Draw ``B | A`` then ``A | B``; both conditionals are Gaussian."""
        M, N, H = self.M, self.N, self.H
        K = params.shape[0]
        t = np.asarray(t, dtype=float).reshape(K, 1, 1)
        sxx, sxy = stats["sxx"], stats["sxy"]
        ridge = 1.0 / self.prior_sd**2
        _, A = self.factors(params)
        zb = normals[:, : N * H].reshape(K, H, N)
        za = normals[:, N * H:]

        # rows of B are i.i.d. given A
        prec = t * (A @ sxx @ np.swapaxes(A, 1, 2)) + ridge * np.eye(H)
        L = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, t * (A @ sxy))
        B = np.swapaxes(mean + _solve_upper(L, zb), 1, 2)

        # vec(A), row-major: precision t (B^T B kron Sxx) + ridge I
        btb = np.swapaxes(B, 1, 2) @ B
        prec = t * np.einsum("khg,kml->khmgl", btb, sxx).reshape(K, H * M, H * M) + ridge * np.eye(H * M)
        lin = (t * (np.swapaxes(B, 1, 2) @ np.swapaxes(sxy, 1, 2))).reshape(K, H * M)
        L = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, lin[..., None])
        A = (mean + _solve_upper(L, za[..., None]))[..., 0]
        return np.concatenate([B.reshape(K, -1), A], axis=1)


def _solve_upper(L, z):
    """``L^{-T} z`` for a batch of lower Cholesky factors ``L``."""
    return np.linalg.solve(np.swapaxes(L, -1, -2), z)


def rrr_truth(input_dim: int, output_dim: int, rank: int) -> np.ndarray:
    """Generating factors of the rank-``rank`` truth: ``C`` has unit entries
    on its leading diagonal and zeros elsewhere."""
    model = ReducedRankRegression(input_dim, output_dim, rank)
    B = np.eye(output_dim, rank)
    A = np.eye(rank, input_dim)
    return model.from_factors(B, A)


def gmm2_model(prior_var: float = 4.0) -> GaussianMixture2:
    return GaussianMixture2(prior_var)


def binom_mixture_model(components: int, trials: int, p_prior: str = "flat_logit") -> BinomialMixture:
    return BinomialMixture(components, trials, p_prior)


def rrr_model(input_dim: int = 6, output_dim: int = 6, rank: int = 1, prior_sd: float = 10.0) -> ReducedRankRegression:
    return ReducedRankRegression(input_dim, output_dim, rank, prior_sd)


def normal_location_model() -> NormalLocation:
    return NormalLocation()

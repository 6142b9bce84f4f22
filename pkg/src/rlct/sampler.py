"""Tempered-posterior sampling.

:func:`sample_tempered` draws from ``p(X^n | theta)^t phi(theta) / Z(t)`` by
adaptive random-walk Metropolis-Hastings in unconstrained coordinates.  The
workhorse, :func:`sample_tempered_lanes`, advances many independent chains
("lanes") at once; each lane owns its dataset statistics, its temperature and
its random stream, so a lane's draws do not depend on which other lanes it
was batched with or on how lanes are spread over worker processes.

:func:`quadrature_tempered_moments` is an independent tensor-grid oracle for
models with at most two parameters.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from rlct.model_core import Dataset, ModelSpec, Stats

logger = logging.getLogger(__name__)

#: retained-draw ESS below which a chain carries a warning
LOW_ESS = 50.0
#: fraction of burn-in after which each preconditioning window closes
_WINDOW_ENDS = (0.1, 0.25, 0.5, 0.75)
#: stats elements processed per lane chunk (keeps temporaries cache sized)
_CHUNK_ELEMENTS = 1 << 18


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class TemperingConfig:
    """Inverse temperature ``t = c / log(n)`` unless ``t`` is given."""

    c: float = 1.0
    t: Optional[float] = None

    def temperature(self, n: int) -> float:
        if self.t is not None:
            t = float(self.t)
        else:
            if self.c <= 0:
                raise ValueError("c must be positive")
            if n < 2:
                raise ValueError("t = c / log(n) needs n >= 2")
            t = self.c / math.log(n)
        if not 0.0 < t <= 1.0:
            raise ValueError(f"inverse temperature {t} outside (0, 1]")
        return t


@dataclass(frozen=True)
class McmcConfig:
    n_iters: int = 60_000
    burn_in: int = 10_000
    thin: int = 5
    target_accept: float = 0.3
    initial_scale: float = 0.1
    preconditioning: str = "diag"
    keep_params: bool = False
    conditional_sweeps: bool = True

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if not 0 <= self.burn_in < self.n_iters:
            raise ValueError("need 0 <= burn_in < n_iters")
        if self.retained < 100:
            raise ValueError(f"only {self.retained} retained draws; at least 100 required")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not self.initial_scale > 0:
            raise ValueError("initial_scale must be positive")
        if self.preconditioning not in ("diag", "full"):
            raise ValueError("preconditioning must be 'diag' or 'full'")

    @property
    def retained(self) -> int:
        return (self.n_iters - self.burn_in) // self.thin


@dataclass(frozen=True)
class TemperedChain:
    t: float
    loglik_draws: np.ndarray
    acceptance_rate: float
    ess_loglik: float
    mean_unconstrained: np.ndarray
    param_draws: Optional[np.ndarray] = None
    warnings: Tuple[str, ...] = ()
    n_obs: Optional[int] = None
    mcmc: Optional[McmcConfig] = None

    @property
    def n_draws(self) -> int:
        return self.loglik_draws.size

    def draw_iterations(self) -> np.ndarray:
        cfg = self.mcmc or McmcConfig()
        return cfg.burn_in + cfg.thin * np.arange(1, self.n_draws + 1) - 1


# ---------------------------------------------------------------------------
# chain statistics
# ---------------------------------------------------------------------------


def posterior_mean_loglik(chain: TemperedChain) -> float:
    draws = _draws(chain)
    return float(np.mean(draws))


def posterior_var_loglik(chain: TemperedChain) -> float:
    """Sample variance with denominator equal to the number of draws."""
    draws = _draws(chain)
    return float(np.var(draws))


def _draws(chain) -> np.ndarray:
    draws = np.asarray(getattr(chain, "loglik_draws", chain), dtype=float)
    if draws.size < 2:
        raise ValueError("need at least two retained draws")
    return draws


def effective_sample_size(x: np.ndarray) -> np.ndarray:
    """ESS along the last axis (Geyer's initial monotone sequence estimator)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[-1]
    centred = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(centred, size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n] / n
    out = np.empty(x.shape[0])
    for k in range(x.shape[0]):
        if acov[k, 0] <= 0:
            out[k] = float(n)
            continue
        rho = acov[k] / acov[k, 0]
        pairs = rho[: n - (n % 2)].reshape(-1, 2).sum(axis=1)
        stop = np.argmax(pairs <= 0) if np.any(pairs <= 0) else pairs.size
        gamma = np.minimum.accumulate(pairs[:stop]) if stop else np.zeros(0)
        tau = -1.0 + 2.0 * gamma.sum()
        out[k] = n / max(tau, 1.0 / np.log10(max(n, 10)))
    return out


def mc_standard_errors(chain: TemperedChain) -> Tuple[float, float]:
    """Monte-Carlo standard errors of the chain's loglik mean and variance."""
    draws = _draws(chain)
    dev2 = (draws - draws.mean()) ** 2
    ess_mean = effective_sample_size(draws)[0]
    ess_var = effective_sample_size(dev2)[0]
    return float(draws.std() / math.sqrt(ess_mean)), float(dev2.std() / math.sqrt(ess_var))


def write_chain_csv(chain: TemperedChain, fh, param_names: Optional[Sequence[str]] = None) -> None:
    """Columns ``iter, loglik`` followed by parameters when they were kept."""
    writer = csv.writer(fh, lineterminator="\n")
    params = chain.param_draws
    header = ["iter", "loglik"]
    if params is not None:
        header += list(param_names or [f"theta{j}" for j in range(params.shape[1])])
    writer.writerow(header)
    for row, (it, ll) in enumerate(zip(chain.draw_iterations(), chain.loglik_draws)):
        values = [int(it), repr(float(ll))]
        if params is not None:
            values += [repr(float(v)) for v in params[row]]
        writer.writerow(values)


# ---------------------------------------------------------------------------
# random-walk Metropolis-Hastings over lanes
# ---------------------------------------------------------------------------


def _log_target(model: ModelSpec, u, stats, t):
    theta, logjac = model.from_unconstrained(u)
    with np.errstate(all="ignore"):
        lp = model.log_prior(theta)
        ll = model.loglik_stats(theta, stats)
        tll = np.where(t == 0.0, 0.0, t * ll)
        target = tll + lp + logjac
    bad = ~np.isfinite(target)
    target = np.where(bad, -np.inf, target)
    ll = np.where(bad, np.nan, ll)
    return target, ll, theta


def _initialise(model, stats_lane, t, rng, max_tries=100):
    for _ in range(max_tries):
        theta0 = np.asarray(model.initial_params(rng), dtype=float)
        try:
            u0, _ = model.to_unconstrained(theta0)
        except ValueError:
            continue
        target, ll, _ = _log_target(model, u0[None, :], stats_lane, np.array([t]))
        if np.isfinite(target[0]):
            return u0
    raise SamplerError(f"no finite starting point for {model.name} after {max_tries} tries")


def _run_chunk(model: ModelSpec, stats: Stats, ts: np.ndarray, mcmc: McmcConfig,
               rngs: Sequence[np.random.Generator], block: int = 1000) -> List[TemperedChain]:
    K, d = len(rngs), model.dim
    if d == 0:
        raise SamplerError("model has no parameters to sample")
    lane_stats = [{k: v[i:i + 1] for k, v in stats.items()} for i in range(K)]
    u = np.stack([_initialise(model, lane_stats[i], ts[i], rngs[i]) for i in range(K)])
    cur_target, cur_ll, cur_theta = _log_target(model, u, stats, ts)

    log_scale = np.full(K, math.log(mcmc.initial_scale))
    sd = np.ones((K, d))
    chol = np.broadcast_to(np.eye(d), (K, d, d)).copy()
    full = mcmc.preconditioning == "full"
    gibbs = mcmc.conditional_sweeps and model.has_conditional_sweep
    window_ends = sorted({int(f * mcmc.burn_in) for f in _WINDOW_ENDS if int(f * mcmc.burn_in) > 2 * d + 10})
    win_start = 0
    win_sum = np.zeros((K, d))
    win_outer = np.zeros((K, d, d)) if full else np.zeros((K, d))

    n_keep = mcmc.retained
    ll_draws = np.empty((K, n_keep))
    theta_draws = np.empty((K, n_keep, d)) if mcmc.keep_params else None
    u_sum = np.zeros((K, d))
    accepted = np.zeros(K)
    keep_idx = 0
    post_iters = 0

    for start in range(0, mcmc.n_iters, block):
        stop = min(start + block, mcmc.n_iters)
        size = stop - start
        z_blk = np.empty((K, size, d))
        logu_blk = np.empty((K, size))
        for i, g in enumerate(rngs):
            z_blk[i] = g.standard_normal((size, d))
            logu_blk[i] = np.log(g.random(size))
        if gibbs:
            g_blk = np.stack([g.standard_normal((size, d)) for g in rngs])
        for b in range(size):
            it = start + b
            z = z_blk[:, b]
            if full:
                step = np.einsum("kij,kj->ki", chol, z)
            else:
                step = sd * z
            prop = u + np.exp(log_scale)[:, None] * step
            prop_target, prop_ll, prop_theta = _log_target(model, prop, stats, ts)
            with np.errstate(invalid="ignore"):
                log_alpha = prop_target - cur_target
            accept = logu_blk[:, b] < log_alpha
            if accept.any():
                u = np.where(accept[:, None], prop, u)
                cur_target = np.where(accept, prop_target, cur_target)
                cur_ll = np.where(accept, prop_ll, cur_ll)
                if theta_draws is not None:
                    cur_theta = np.where(accept[:, None], prop_theta, cur_theta)
            if gibbs:
                theta_g = model.conditional_sweep(model.from_unconstrained(u)[0], stats, ts, g_blk[:, b])
                u = model.to_unconstrained(theta_g)[0]
                cur_target, cur_ll, cur_theta = _log_target(model, u, stats, ts)
            if it < mcmc.burn_in:
                prob = np.exp(np.minimum(np.nan_to_num(log_alpha, nan=-np.inf), 0.0))
                log_scale += (it + 1.0) ** -0.6 * (prob - mcmc.target_accept)
                win_sum += u
                win_outer += np.einsum("ki,kj->kij", u, u) if full else u * u
                if window_ends and it + 1 == window_ends[0]:
                    count = it + 1 - win_start
                    mean = win_sum / count
                    if full:
                        cov = win_outer / count - np.einsum("ki,kj->kij", mean, mean)
                        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2)) + 1e-10 * np.eye(d)
                        chol = np.linalg.cholesky(cov)
                    else:
                        sd = np.sqrt(np.maximum(win_outer / count - mean**2, 1e-20))
                    log_scale[:] = math.log(2.38 / math.sqrt(d))
                    window_ends.pop(0)
                    win_start = it + 1
                    win_sum[:] = 0.0
                    win_outer[:] = 0.0
            else:
                post_iters += 1
                accepted += accept
                if (it - mcmc.burn_in) % mcmc.thin == mcmc.thin - 1 and keep_idx < n_keep:
                    ll_draws[:, keep_idx] = cur_ll
                    if theta_draws is not None:
                        theta_draws[:, keep_idx] = cur_theta
                    u_sum += u
                    keep_idx += 1

    ess = effective_sample_size(ll_draws)
    chains = []
    for i in range(K):
        warn = []
        if ess[i] < LOW_ESS:
            warn.append(f"low ESS of loglik draws ({ess[i]:.1f})")
        if not np.all(np.isfinite(ll_draws[i])):
            raise SamplerError("non-finite log-likelihood among retained draws")
        chains.append(
            TemperedChain(
                t=float(ts[i]),
                loglik_draws=ll_draws[i].copy(),
                acceptance_rate=float(accepted[i] / max(post_iters, 1)),
                ess_loglik=float(ess[i]),
                mean_unconstrained=u_sum[i] / n_keep,
                param_draws=None if theta_draws is None else theta_draws[i].copy(),
                warnings=tuple(warn),
                n_obs=None,
                mcmc=mcmc,
            )
        )
    return chains


def _lane_cost(stats: Stats) -> int:
    return max(int(np.prod(v.shape[1:])) if v.ndim > 1 else 1 for v in stats.values())


def _chunk_task(args):
    model, stats, ts, mcmc, seeds = args
    rngs = [np.random.Generator(np.random.PCG64(s)) for s in seeds]
    return _run_chunk(model, stats, ts, mcmc, rngs)


def sample_tempered_lanes(model: ModelSpec, lane_stats: Sequence[Stats], ts: Sequence[float],
                          mcmc: McmcConfig, seeds: Sequence[np.random.SeedSequence],
                          workers: int = 1, n_obs: Optional[Sequence[int]] = None) -> List[TemperedChain]:
    """Run one chain per lane; lane ``k`` uses statistics ``lane_stats[k]``,
    temperature ``ts[k]`` and a generator seeded from ``seeds[k]``.

    Lanes are processed in chunks (optionally on ``workers`` processes); the
    output for each lane is independent of the chunking.
    """
    K = len(lane_stats)
    if not (len(ts) == len(seeds) == K):
        raise ValueError("lane_stats, ts and seeds must have equal length")
    if K == 0:
        return []
    ts = np.asarray(ts, dtype=float)
    if np.any(ts < 0):
        raise ValueError("inverse temperature must be non-negative")
    per_chunk = max(1, _CHUNK_ELEMENTS // max(_lane_cost(lane_stats[0]), 1))
    tasks = []
    for lo in range(0, K, per_chunk):
        hi = min(lo + per_chunk, K)
        stacked = model.stack_stats(lane_stats[lo:hi])
        tasks.append((model, stacked, ts[lo:hi], mcmc, list(seeds[lo:hi])))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_chunk_task, tasks))
    else:
        parts = [_chunk_task(task) for task in tasks]
    chains = [c for part in parts for c in part]
    if n_obs is not None:
        chains = [replace(c, n_obs=int(n)) for c, n in zip(chains, n_obs)]
    for c in chains:
        for w in c.warnings:
            logger.warning("%s chain at t=%.4g: %s", model.name, c.t, w)
    return chains


def sample_tempered(model: ModelSpec, dataset: Dataset, t: float, mcmc: McmcConfig = McmcConfig(),
                    rng=None) -> TemperedChain:
    """One chain targeting ``exp(t loglik + log prior + log Jacobian)`` on ``R^d``.

    Step-size adaptation (Robbins-Monro towards ``mcmc.target_accept``) and
    preconditioning from burn-in moments happen only during burn-in.
    ``rng`` may be a seed, a ``SeedSequence`` or a ``Generator``.
    """
    if t < 0:
        raise ValueError("inverse temperature must be non-negative")
    if isinstance(rng, np.random.Generator):
        rngs = [rng]
        stats = model.stack_stats([model.summarize(dataset)])
        chain = _run_chunk(model, stats, np.array([float(t)]), mcmc, rngs)[0]
    else:
        seed = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
        chain = sample_tempered_lanes(model, [model.summarize(dataset)], [t], mcmc, [seed])[0]
    return replace(chain, n_obs=dataset.n)


# ---------------------------------------------------------------------------
# quadrature oracle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureResult:
    mean_loglik: float
    var_loglik: float
    tail_mass: float
    log_normalizer: float

    def __iter__(self):
        return iter((self.mean_loglik, self.var_loglik))


class TailMassError(ValueError):
    pass


def quadrature_tempered_moments(model: ModelSpec, dataset: Dataset, t: float,
                                bounds: Sequence[Tuple[float, float]], resolution: int = 4001,
                                tail_tol: float = 1e-10, edge_fraction: float = 0.01) -> QuadratureResult:
    """``E^t`` and ``V^t`` of the log-likelihood on a tensor grid.

    The grid lives in unconstrained coordinates (the log-Jacobian is added),
    so ``bounds`` are given there too.  The normalising constant is computed
    on the same grid.  ``tail_mass`` is the normalised mass in the outer
    ``edge_fraction`` of grid points along each axis; if it exceeds
    ``tail_tol`` the bounds are too narrow and :class:`TailMassError` is raised.
    """
    d = model.dim
    if d > 2 or d < 1:
        raise ValueError("quadrature oracle supports models with 1 or 2 parameters")
    if len(bounds) != d:
        raise ValueError(f"need {d} (lo, hi) bounds")
    axes = [np.linspace(lo, hi, resolution) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    u = np.stack([m.ravel() for m in mesh], axis=-1)
    stats = model.stack_stats([model.summarize(dataset)])
    theta, logjac = model.from_unconstrained(u)
    with np.errstate(all="ignore"):
        ll = model.loglik_stats(theta, stats)
        log_w = (t * ll if t != 0 else 0.0) + model.log_prior(theta) + logjac
    log_w = np.where(np.isfinite(log_w), log_w, -np.inf)
    # trapezoid weights
    wts = np.ones(u.shape[0])
    for ax in range(d):
        edge = np.ones(resolution)
        edge[0] = edge[-1] = 0.5
        wts *= np.broadcast_to(edge.reshape([-1 if a == ax else 1 for a in range(d)]), mesh[0].shape).ravel()
    shift = np.max(log_w)
    dens = np.exp(log_w - shift) * wts
    total = dens.sum()
    p = dens / total
    ll_safe = np.where(p > 0, ll, 0.0)
    mean = float(np.dot(p, ll_safe))
    var = float(np.dot(p, (ll_safe - mean) ** 2))
    cell = np.prod([(hi - lo) / (resolution - 1) for lo, hi in bounds])
    band = max(1, int(edge_fraction * resolution))
    near_edge = np.zeros(mesh[0].shape, dtype=bool)
    for ax in range(d):
        idx = np.arange(resolution)
        mask = (idx < band) | (idx >= resolution - band)
        near_edge |= mask.reshape([-1 if a == ax else 1 for a in range(d)])
    tail = float(p[near_edge.ravel()].sum())
    if tail > tail_tol:
        raise TailMassError(f"tail mass {tail:.3g} exceeds {tail_tol:g}; widen the bounds")
    return QuadratureResult(mean, var, tail, float(shift + np.log(total * cell)))

"""Model abstraction, datasets, parameter transforms and seeded RNG streams.

Every model works on two coordinate systems: the constrained parameter
space ``Omega`` where the likelihood and prior are defined, and ``R^d`` where
the sampler moves.  A :class:`ParamTransform` maps between them and reports
``log|det d(theta)/d(u)|`` so densities can be pushed forward correctly.

All model evaluations are vectorised over leading axes: ``params`` may have
shape ``(d,)`` or ``(K, d)`` and sufficient statistics are stacked along a
leading lane axis.  This lets the sampler advance many independent chains
with a single numpy call per iteration.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import expit, gammaln, log_expit

#: Largest simulated sample size accepted by replication plans.
MAX_SIMULATION_SIZE = 100_000

Stats = Dict[str, np.ndarray]


class BoundaryError(ValueError):
    """Raised when a transform is asked to map a point on the boundary of Omega."""


@dataclass(frozen=True)
class Dataset:
    """``n`` observations, each a real vector of dimension ``h``."""

    observations: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2:
            raise ValueError("observations must be a sequence of vectors")
        if obs.shape[0] < 1:
            raise ValueError("a dataset needs at least one observation")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def h(self) -> int:
        return self.observations.shape[1]

    def column(self, j: int = 0) -> np.ndarray:
        return self.observations[:, j]


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


class _Block(abc.ABC):
    size: int

    @abc.abstractmethod
    def forward(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Constrained -> unconstrained; log-Jacobian of the inverse map."""

    @abc.abstractmethod
    def inverse(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Unconstrained -> constrained, with its log-Jacobian."""


class IdentityBlock(_Block):
    def __init__(self, size: int):
        self.size = size

    def forward(self, theta):
        return theta.copy(), np.zeros(theta.shape[:-1])

    def inverse(self, u):
        return u.copy(), np.zeros(u.shape[:-1])


class LogitBlock(_Block):
    """Coordinates in the open unit interval, mapped by the logit."""

    def __init__(self, size: int):
        self.size = size

    def forward(self, theta):
        if np.any((theta <= 0.0) | (theta >= 1.0)):
            raise BoundaryError("logit transform undefined on the boundary of (0, 1)")
        u = np.log(theta) - np.log1p(-theta)
        return u, np.sum(np.log(theta) + np.log1p(-theta), axis=-1)

    def inverse(self, u):
        # log(a(1-a)) = log_expit(u) + log_expit(-u), stable for large |u|
        return expit(u), np.sum(log_expit(u) + log_expit(-u), axis=-1)


class StickBreakingBlock(_Block):
    """First ``K - 1`` weights of a ``K``-simplex via centred stick breaking.

    The break fractions are ``z_k = expit(u_k - log(K - k))`` (``k = 0..K-2``),
    so ``u = 0`` maps to the uniform weight vector.
    """

    def __init__(self, n_weights: int):
        if n_weights < 2:
            raise ValueError("stick breaking needs at least two weights")
        self.n_weights = n_weights
        self.size = n_weights - 1
        self._offset = np.log(n_weights - 1 - np.arange(self.size, dtype=float))

    def forward(self, theta):
        remaining = 1.0 - np.cumsum(theta, axis=-1) + theta  # stick before break k
        last = 1.0 - np.sum(theta, axis=-1)
        if np.any(theta <= 0.0) or np.any(last <= 0.0):
            raise BoundaryError("stick breaking undefined on the boundary of the simplex")
        z = theta / remaining
        u = np.log(z) - np.log1p(-z) + self._offset
        logjac = np.sum(np.log(remaining) + np.log(z) + np.log1p(-z), axis=-1)
        return u, logjac

    def inverse(self, u):
        shifted = u - self._offset
        log_z = log_expit(shifted)
        log_1mz = log_expit(-shifted)
        # log of the stick left before each break: cumulative sum of log(1 - z)
        log_remaining = np.cumsum(log_1mz, axis=-1) - log_1mz
        theta = np.exp(log_remaining + log_z)
        logjac = np.sum(log_remaining + log_z + log_1mz, axis=-1)
        return theta, logjac


class ParamTransform:
    """Concatenation of per-block bijections acting on consecutive coordinates."""

    def __init__(self, blocks: Sequence[_Block]):
        self.blocks = list(blocks)
        self.dim = sum(b.size for b in self.blocks)

    def _split(self, x):
        out, start = [], 0
        for b in self.blocks:
            out.append(x[..., start:start + b.size])
            start += b.size
        return out

    def to_unconstrained(self, theta) -> Tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} parameters, got {theta.shape[-1]}")
        if not self.blocks:
            return theta.copy(), np.zeros(theta.shape[:-1])
        parts = [b.forward(p) for b, p in zip(self.blocks, self._split(theta))]
        u = np.concatenate([p[0] for p in parts], axis=-1)
        return u, sum(p[1] for p in parts)

    def from_unconstrained(self, u) -> Tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {u.shape[-1]}")
        if not self.blocks:
            return u.copy(), np.zeros(u.shape[:-1])
        parts = [b.inverse(p) for b, p in zip(self.blocks, self._split(u))]
        theta = np.concatenate([p[0] for p in parts], axis=-1)
        return theta, sum(p[1] for p in parts)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


class ModelSpec(abc.ABC):
    """A parametric model ``p(x | theta)`` with prior ``phi(theta)``.

    Subclasses implement the vectorised primitives (``summarize``,
    ``loglik_stats``, ``log_prior``, ``simulate``); the convenience
    methods below are shared.
    """

    name: str = "model"
    transform: ParamTransform

    @property
    def dim(self) -> int:
        return self.transform.dim

    @abc.abstractmethod
    def summarize(self, dataset: Dataset) -> Stats:
        """Statistics from which the log-likelihood can be evaluated."""

    @abc.abstractmethod
    def loglik_stats(self, params: np.ndarray, stats: Stats) -> np.ndarray:
        """Total log-likelihood for ``params[k]`` on lane ``k``'s statistics."""

    @abc.abstractmethod
    def log_prior(self, params: np.ndarray) -> np.ndarray:
        """Log prior density in constrained coordinates."""

    @abc.abstractmethod
    def simulate(self, params, n: int, rng: np.random.Generator) -> Dataset:
        """Draw ``n`` i.i.d. observations from ``p(x | params)``."""

    @abc.abstractmethod
    def initial_params(self, rng: np.random.Generator) -> np.ndarray:
        """Starting point for a chain (a prior draw when the prior is proper)."""

    #: whether :meth:`conditional_sweep` is implemented
    has_conditional_sweep: bool = False

    def conditional_sweep(self, params: np.ndarray, stats: Stats, t: np.ndarray,
                          normals: np.ndarray) -> np.ndarray:
        """One sweep of exact conditional (Gibbs) updates of the tempered
        posterior, lane-wise.

        ``normals`` has shape ``(K, dim)`` and supplies all the randomness.
        Models for which blocks of parameters have Gaussian conditionals
        override this and set ``has_conditional_sweep``.
        """
        raise NotImplementedError

    def stack_stats(self, stats: Sequence[Stats]) -> Stats:
        keys = stats[0].keys()
        return {k: np.stack([s[k] for s in stats]) for k in keys}

    def log_lik(self, params, dataset: Dataset) -> float:
        params = np.asarray(params, dtype=float)
        stats = self.stack_stats([self.summarize(dataset)])
        return float(self.loglik_stats(params[None, :], stats)[0])

    def to_unconstrained(self, params):
        return self.transform.to_unconstrained(params)

    def from_unconstrained(self, u):
        return self.transform.from_unconstrained(u)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"


def log_joint_tempered(model: ModelSpec, dataset: Dataset, params, t: float) -> float:
    """``t * log p(X^n | params) + log phi(params)``.

    Returns ``-inf`` rather than raising when either term is not finite, which
    the sampler treats as a rejected state.
    """
    if t < 0:
        raise ValueError("inverse temperature must be non-negative")
    params = np.asarray(params, dtype=float)
    with np.errstate(all="ignore"):
        lp = float(model.log_prior(params))
        if not np.isfinite(lp):
            return -np.inf
        if t == 0:
            return lp
        ll = model.log_lik(params, dataset)
    if not np.isfinite(ll):
        return -np.inf
    return t * ll + lp


def to_unconstrained(model: ModelSpec, params) -> Tuple[np.ndarray, float]:
    """Map ``params`` to ``R^d``; raises :class:`BoundaryError` on the boundary."""
    u, logjac = model.to_unconstrained(params)
    return u, float(logjac)


def from_unconstrained(model: ModelSpec, u) -> Tuple[np.ndarray, float]:
    theta, logjac = model.from_unconstrained(u)
    return theta, float(logjac)


def log_dirichlet_flat(n_weights: int) -> float:
    """Log density of the flat Dirichlet on the ``(K-1)``-dimensional simplex."""
    return float(gammaln(n_weights))


# ---------------------------------------------------------------------------
# RNG streams
# ---------------------------------------------------------------------------

#: chain-index conventions inside one replicate
DATA_STREAM = 0
CHAIN_STREAM = 1
SECOND_CHAIN_STREAM = 2


@dataclass(frozen=True)
class RngPlan:
    """Derives independent, reproducible generators from one master seed.

    ``stream(k, chain)`` depends only on ``(master_seed, path, k, chain)``, so
    results do not depend on how work is split across processes.
    """

    master_seed: int
    path: Tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def seed_sequence(self, *key: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.master_seed, spawn_key=self.path + tuple(key))

    def stream(self, k: int, chain: int = CHAIN_STREAM) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed_sequence(k, chain)))

    def child(self, *key: int) -> "RngPlan":
        return RngPlan(self.master_seed, self.path + tuple(key))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def stats_lane(stats: Mapping[str, np.ndarray], k: int) -> Stats:
    """Statistics of a single lane, keeping the leading axis."""
    return {key: v[k:k + 1] for key, v in stats.items()}

"""Reference RLCT values: exact thresholds, parameter-counting bounds and
reference estimate tables used as fixtures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

KINDS = ("exact", "upper_bound_1", "upper_bound_0.5", "table_fixture")


@dataclass(frozen=True)
class RlctReference:
    kind: str
    value: float
    source: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if not self.value > 0:
            raise ValueError("reference RLCT must be positive")


#: RLCT of the two-component unit-variance Gaussian mixture at truth N(0, 1)
GMM2_STANDARD_NORMAL_RLCT = RlctReference("exact", 0.75, "closed form")


def binomial_bound_1(i: int, j: int) -> float:
    """Parameter-counting upper bound ``(i + j)/2 - 1/2``."""
    return (i + j) / 2.0 - 0.5


def binomial_bound_05(i: int, j: int) -> float:
    """Tighter upper bound ``(i + 3j)/4 - 1/2``."""
    return (i + 3 * j) / 4.0 - 0.5


def binomial_half_dim(i: int) -> float:
    return (2 * i - 1) / 2.0


def binomial_reference(i: int, j: int, kind: str) -> RlctReference:
    if not 1 <= j <= i:
        raise ValueError("need 1 <= j <= i")
    if kind == "upper_bound_1":
        return RlctReference(kind, binomial_bound_1(i, j), "parameter counting")
    if kind == "upper_bound_0.5":
        return RlctReference(kind, binomial_bound_05(i, j), "overfitted-mixture bound")
    if kind == "table_fixture":
        return RlctReference(kind, BINOMIAL_TABLE_ESTIMATES[(i, j)], "variance estimates, n_s=1e4, m=100")
    raise ValueError(f"no binomial reference of kind {kind!r}")


#: reference variance-estimator values for binomial mixtures (k = 30)
BINOMIAL_TABLE_ESTIMATES: Dict[Tuple[int, int], float] = {
    (1, 1): 0.49,
    (2, 1): 0.78,
    (3, 1): 1.29,
    (4, 1): 1.66,
    (2, 2): 1.45,
    (3, 2): 1.84,
    (4, 2): 2.20,
    (3, 3): 2.49,
    (4, 3): 2.79,
    (4, 4): 3.52,
}


def rrr_regular_rlct(rank: int, input_dim: int = 6, output_dim: int = 6) -> float:
    """``(H (M + N) - H^2) / 2``: half the dimension of the rank-``H`` manifold."""
    return (rank * (input_dim + output_dim) - rank**2) / 2.0


def rrr_exact_rlct(rank: int, true_rank: int, input_dim: int = 6, output_dim: int = 6) -> Tuple[float, int]:
    """``(lambda, multiplicity)`` of rank-``rank`` reduced-rank regression
    when the true coefficient has rank ``true_rank <= rank``.

    The multiplicity is 2 exactly when ``M + N + rank + true_rank`` is odd
    in the generic case.
    """
    M, N, H, r = input_dim, output_dim, rank, true_rank
    if not 0 <= r <= H <= min(M, N):
        raise ValueError("need 0 <= true_rank <= rank <= min(M, N)")
    if M + H < N + r:
        return H * M / 2.0, 1
    if N + H < M + r:
        return H * N / 2.0, 1
    if M + N < H + r:
        return M * N / 2.0, 1
    base = 2 * (H + r) * (M + N) - (M - N) ** 2 - (H + r) ** 2
    if (M + H + N + r) % 2 == 0:
        return base / 8.0, 1
    return (base + 1) / 8.0, 2


#: exact reduced-rank regression thresholds (M = N = 6), fit rank i, truth rank j
RRR_EXACT_RLCT: Dict[Tuple[int, int], float] = {
    (1, 1): 5.5,
    (2, 1): 8.0,
    (3, 1): 10.0,
    (4, 1): 12.0,
    (5, 1): 13.5,
    (2, 2): 10.0,
    (3, 2): 12.0,
    (4, 2): 13.5,
    (5, 2): 15.0,
    (3, 3): 13.5,
    (4, 3): 15.0,
    (5, 3): 16.0,
    (4, 4): 16.0,
    (5, 4): 17.0,
    (5, 5): 17.5,
}

#: reference variance-estimator values for the same grid (n_s = 2000, m = 100)
RRR_TABLE_ESTIMATES: Dict[Tuple[int, int], float] = {
    (1, 1): 5.50,
    (2, 1): 7.91,
    (3, 1): 9.92,
    (4, 1): 11.75,
    (5, 1): 13.32,
    (2, 2): 10.01,
    (3, 2): 11.75,
    (4, 2): 13.30,
    (5, 2): 14.65,
    (3, 3): 13.49,
    (4, 3): 14.79,
    (5, 3): 15.81,
    (4, 4): 16.02,
    (5, 4): 16.79,
    (5, 5): 17.35,
}


def rrr_reference(i: int, j: int) -> RlctReference:
    return RlctReference("exact", RRR_EXACT_RLCT[(i, j)], "closed form, M = N = 6")


#: reference Gaussian-mixture results at n_s = 1000: (mean, s.d.) per estimator
GMM2_TABLE_N1000 = {
    "lambda_v1": (0.764, 0.139),
    "p_v_half": (0.786, 0.272),
    "lambda_e_tilde_d0.1": (1.430, 0.833),
    "lambda_e_tilde_d1": (1.026, 0.131),
    "lambda_e_tilde_d10": (0.821, 0.098),
    "lambda_e_d0.1": (0.798, 0.887),
    "lambda_e_d1": (0.777, 0.137),
    "lambda_e_d10": (0.778, 0.088),
    "lambda_v10": (0.762, 0.042),
    "lambda_v100": (0.763, 0.013),
}

#: lambda_v1 means over sample sizes (consistency trend)
GMM2_LAMBDA_V1_MEANS = {50: 0.835, 100: 0.817, 200: 0.807, 500: 0.787, 1000: 0.764}

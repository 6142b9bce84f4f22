"""Singular BIC over a poset of nested models.

The score of model ``i`` is the solution ``S_i`` of

    S_i = sum_{j <= i} L_ij p_j S_j / sum_{j <= i} p_j S_j,

a weighted average of the evidence approximations
``L_ij = p(X | theta_i) (log n)^(m_ij - 1) / n^lambda_ij``.  Solving model by
model in topological order turns each equation into a quadratic with a
single positive root.  Feeding exact RLCTs gives sBIC, upper bounds give
the bounded variant, and estimated RLCTs (with unit multiplicities) give
WsBIC.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

#: tolerated negative discriminant (round-off) before the table is declared corrupt
DISCRIMINANT_TOL = 1e-12


class SbicError(RuntimeError):
    """Internal inconsistency in the fixed-point solve."""


class MonotonicityWarning(UserWarning):
    pass


class MonotonicityError(ValueError):
    pass


# ---------------------------------------------------------------------------
# model poset
# ---------------------------------------------------------------------------


class ModelPoset:
    """Candidate models with the submodel order ``i <= j`` (``M_i`` inside ``M_j``).

    Parameters
    ----------
    labels : sequence of hashable
        Model labels, e.g. numbers of components.
    leq : (K, K) bool array
        ``leq[a, b]`` is true when model ``labels[a]`` is a submodel of
        ``labels[b]``.  Must be a partial order.
    priors : sequence of float, optional
        Positive model priors; normalised to sum to one.  Uniform by default.
    """

    def __init__(self, labels: Sequence[Hashable], leq, priors: Optional[Sequence[float]] = None):
        self.labels = list(labels)
        K = len(self.labels)
        if K == 0:
            raise ValueError("a poset needs at least one model")
        if len(set(self.labels)) != K:
            raise ValueError("model labels must be unique")
        leq = np.array(leq, dtype=bool)
        if leq.shape != (K, K):
            raise ValueError(f"order matrix must be {K} x {K}")
        if not leq.diagonal().all():
            raise ValueError("order is not reflexive")
        if np.any(leq & leq.T & ~np.eye(K, dtype=bool)):
            raise ValueError("order is not antisymmetric")
        composed = (leq.astype(int) @ leq.astype(int)) > 0
        if np.any(composed & ~leq):
            raise ValueError("order is not transitive")
        self.leq = leq
        if priors is None:
            priors = np.full(K, 1.0 / K)
        priors = np.asarray(priors, dtype=float)
        if priors.shape != (K,) or np.any(~(priors > 0)):
            raise ValueError("priors must be K positive numbers")
        self.priors = priors / priors.sum()
        self._index = {lab: a for a, lab in enumerate(self.labels)}

    @classmethod
    def chain(cls, labels: Sequence[Hashable], priors=None) -> "ModelPoset":
        """Totally ordered poset ``labels[0] <= labels[1] <= ...``."""
        K = len(labels)
        return cls(labels, np.triu(np.ones((K, K), dtype=bool)), priors)

    def __len__(self):
        return len(self.labels)

    def index(self, label) -> int:
        return self._index[label]

    def below(self, label, strict: bool = False) -> List[Hashable]:
        """Labels ``j`` with ``j <= label`` (``j < label`` when ``strict``)."""
        b = self.index(label)
        return [lab for a, lab in enumerate(self.labels) if self.leq[a, b] and (a != b or not strict)]

    def pairs(self) -> List[Tuple[Hashable, Hashable]]:
        """All ``(i, j)`` with ``j <= i``."""
        return [(i, j) for i in self.labels for j in self.below(i)]

    def topological_order(self) -> List[Hashable]:
        """Models sorted so that every submodel precedes its supermodels.

        Ties are broken by position in ``labels``.
        """
        counts = self.leq.sum(axis=0)
        order = np.lexsort((np.arange(len(self)), counts))
        return [self.labels[a] for a in order]

    def is_topological(self, order: Sequence[Hashable]) -> bool:
        pos = {lab: k for k, lab in enumerate(order)}
        if sorted(pos.values()) != list(range(len(self))) or set(pos) != set(self.labels):
            return False
        return all(pos[j] <= pos[i] for i, j in self.pairs())

    def __repr__(self):
        return f"ModelPoset({self.labels!r})"


# ---------------------------------------------------------------------------
# evidence table
# ---------------------------------------------------------------------------


@dataclass
class LogEvidenceTable:
    """Inputs to the fixed point: ``log L_ij`` for every pair ``j <= i``.

    ``log L_ij = log_max_lik[i] - lambdas[i, j] log n + (mult[i, j] - 1) log log n``.
    Missing multiplicities default to one.
    """

    n: int
    log_max_lik: Dict[Hashable, float]
    lambdas: Dict[Tuple[Hashable, Hashable], float]
    mult: Dict[Tuple[Hashable, Hashable], int] = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        for key, lam in self.lambdas.items():
            if not (np.isfinite(lam) and lam > 0):
                raise ValueError(f"lambda{key} = {lam} must be finite and positive")
        for key, m in self.mult.items():
            if int(m) != m or m < 1:
                raise ValueError(f"multiplicity{key} = {m} must be an integer >= 1")
        for i, ll in self.log_max_lik.items():
            if not np.isfinite(ll):
                raise ValueError(f"maximum log-likelihood of model {i} is not finite")

    def log_L(self, i, j) -> float:
        m = self.mult.get((i, j), 1)
        value = self.log_max_lik[i] - self.lambdas[(i, j)] * math.log(self.n)
        if m != 1:
            value += (m - 1) * math.log(math.log(self.n))
        return value

    def missing(self, poset: ModelPoset) -> List[Tuple[Hashable, Hashable]]:
        out = [(i, j) for i, j in poset.pairs() if (i, j) not in self.lambdas]
        out += [(i, i) for i in poset.labels if i not in self.log_max_lik and (i, i) not in out]
        return out

    def shifted(self, kappa: float) -> "LogEvidenceTable":
        """Same table with every ``log L_ij`` increased by ``kappa``."""
        return LogEvidenceTable(self.n, {i: v + kappa for i, v in self.log_max_lik.items()},
                                dict(self.lambdas), dict(self.mult))


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def _log_positive_root(b: float, log_beta: float) -> float:
    """``log`` of the positive root of ``s^2 + b s - beta``, without cancellation.

    ``beta`` is passed as its logarithm so that a constant term below the
    smallest double still yields a finite answer.
    """
    beta = math.exp(log_beta)
    disc = b * b + 4.0 * beta
    if disc < -DISCRIMINANT_TOL:
        raise SbicError(f"negative discriminant {disc}")
    root = math.sqrt(max(disc, 0.0))
    if b > 0:
        return math.log(2.0) + log_beta - math.log(b + root)
    if root - b > 0:
        return math.log(0.5 * (root - b))
    return 0.5 * log_beta  # b == 0 and beta underflowed


def solve_sbic(poset: ModelPoset, table: LogEvidenceTable,
               order: Optional[Sequence[Hashable]] = None) -> Dict[Hashable, float]:
    """``log S(M_i)`` for every model.

    Each quadratic is solved after dividing ``S_i`` by ``exp(kappa_i)``,
    where ``kappa_i`` is the largest of ``log L_ii``, ``log(A / p_i)`` and
    ``log(B / p_i) / 2`` (``A`` and ``B`` being the predecessor sums).  All
    rescaled coefficients then lie in ``[-1, 1]``, so no exponential
    overflows or underflows regardless of the size of the log-likelihoods.
    """
    missing = table.missing(poset)
    if missing:
        raise KeyError(f"evidence table lacks pairs {missing}")
    if order is None:
        order = poset.topological_order()
    elif not poset.is_topological(order):
        raise ValueError("order is not a topological order of the poset")
    log_p = {lab: math.log(p) for lab, p in zip(poset.labels, poset.priors)}
    log_s: Dict[Hashable, float] = {}
    for i in order:
        preds = poset.below(i, strict=True)
        log_lii = table.log_L(i, i)
        if not preds:
            log_s[i] = log_lii
            continue
        w = np.array([log_p[j] + log_s[j] for j in preds])
        log_a = float(logsumexp(w)) - log_p[i]
        log_b = float(logsumexp(w + np.array([table.log_L(i, j) for j in preds]))) - log_p[i]
        kappa = max(log_lii, log_a, 0.5 * log_b)
        # s^2 + (alpha - ell) s - beta = 0 with s = S exp(-kappa)
        alpha = math.exp(log_a - kappa)
        ell = math.exp(log_lii - kappa)
        log_s_i = _log_positive_root(alpha - ell, log_b - 2.0 * kappa)
        if not math.isfinite(log_s_i):
            raise SbicError(f"model {i}: no positive root")
        log_s[i] = kappa + log_s_i
    return {lab: log_s[lab] for lab in poset.labels}


def sbic_residuals(poset: ModelPoset, table: LogEvidenceTable, log_s: Mapping[Hashable, float]) -> Dict[Hashable, float]:
    """Relative residual of each model's quadratic at the solution.

    Terms are scaled by ``exp(-max term)`` before summing, so the check is
    itself overflow free.
    """
    log_p = {lab: math.log(p) for lab, p in zip(poset.labels, poset.priors)}
    out = {}
    for i in poset.labels:
        preds = poset.below(i, strict=True)
        if not preds:
            out[i] = abs(math.expm1(log_s[i] - table.log_L(i, i)))
            continue
        pos = [log_p[i] + 2 * log_s[i]] + [log_p[j] + log_s[j] + log_s[i] for j in preds]
        neg = [table.log_L(i, i) + log_p[i] + log_s[i]] + [table.log_L(i, j) + log_p[j] + log_s[j] for j in preds]
        top = max(pos + neg)
        total = sum(math.exp(v - top) for v in pos) - sum(math.exp(v - top) for v in neg)
        out[i] = abs(total)
    return out


def bic(max_loglik, dim: int, n: int) -> float:
    """``loglik - (d / 2) log n``; ``max_loglik`` may be an ``MleResult``."""
    if n < 2:
        raise ValueError("n must be >= 2")
    ll = getattr(max_loglik, "max_loglik", max_loglik)
    return float(ll) - 0.5 * dim * math.log(n)


def posterior_model_probs(scores, priors=None) -> np.ndarray:
    """``softmax(score + log prior)``; models scored ``-inf`` get probability 0."""
    scores = np.asarray(scores, dtype=float)
    if priors is None:
        priors = np.full(scores.shape, 1.0 / scores.size)
    with np.errstate(divide="ignore"):
        z = scores + np.log(np.asarray(priors, dtype=float))
    if np.any(np.isnan(z)) or np.any(z == np.inf):
        raise ValueError("scores must be finite or -inf")
    if np.all(z == -np.inf):
        raise ValueError("every model has score -inf")
    w = np.exp(z - z.max())
    return w / w.sum()


# ---------------------------------------------------------------------------
# WsBIC input assembly
# ---------------------------------------------------------------------------


def monotonicity_violations(poset: ModelPoset, rlcts: Mapping[Tuple[Hashable, Hashable], float],
                            tol: float = 0.0) -> List[Tuple[Hashable, Hashable, Hashable]]:
    """Triples ``(i_small, i, j)`` with ``M_i_small`` inside ``M_i`` but
    ``lambda(i_small, j) > lambda(i, j) + tol``."""
    out = []
    for i in poset.labels:
        for i_small in poset.below(i, strict=True):
            for j in poset.below(i_small):
                if rlcts[(i_small, j)] > rlcts[(i, j)] + tol:
                    out.append((i_small, i, j))
    return out


def assemble_wsbic_table(poset: ModelPoset, max_logliks: Mapping[Hashable, float],
                         rlcts: Mapping[Tuple[Hashable, Hashable], float], n: int, strict: bool = False,
                         reestimate: Optional[Callable[[list], Mapping]] = None) -> LogEvidenceTable:
    """Evidence table with ``L_ij = p(X | theta_i) n^(-lambda_ij)``.

    RLCTs that decrease along the submodel order trigger a
    :class:`MonotonicityWarning`, or :class:`MonotonicityError` when
    ``strict``.  ``reestimate``, if given, is called once with the
    offending triples and returns replacement entries.
    """
    rlcts = dict(rlcts)
    missing = [p for p in poset.pairs() if p not in rlcts]
    if missing:
        raise KeyError(f"RLCT values missing for pairs {missing}")
    bad = monotonicity_violations(poset, rlcts)
    if bad and reestimate is not None:
        rlcts.update(reestimate(bad))
        bad = monotonicity_violations(poset, rlcts)
    if bad:
        msg = "RLCT estimates decrease along the submodel order at " + ", ".join(
            f"lambda({a},{j}) > lambda({b},{j})" for a, b, j in bad)
        if strict:
            raise MonotonicityError(msg)
        warnings.warn(msg, MonotonicityWarning, stacklevel=2)
    lls = {i: float(getattr(max_logliks[i], "max_loglik", max_logliks[i])) for i in poset.labels}
    return LogEvidenceTable(int(n), lls, {p: float(rlcts[p]) for p in poset.pairs()}, {})


# ---------------------------------------------------------------------------
# results and serialisation
# ---------------------------------------------------------------------------


@dataclass
class SelectionResult:
    """Per-criterion log scores and posterior model probabilities."""

    labels: List[Hashable]
    priors: np.ndarray
    scores: Dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, criterion: str, scores) -> None:
        self.scores[criterion] = np.asarray([scores[lab] for lab in self.labels] if isinstance(scores, Mapping)
                                            else scores, dtype=float)

    def probs(self, criterion: str) -> np.ndarray:
        return posterior_model_probs(self.scores[criterion], self.priors)

    def best(self, criterion: str):
        return self.labels[int(np.argmax(self.probs(criterion)))]

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["criterion", "model", "log_score", "posterior_prob"])
        for crit in self.scores:
            for lab, s, p in zip(self.labels, self.scores[crit], self.probs(crit)):
                writer.writerow([crit, lab, f"{s:.12g}", f"{p:.12g}"])

    def summary(self) -> str:
        width = max(len(c) for c in self.scores) if self.scores else 8
        head = " " * width + "".join(f"{str(lab):>10}" for lab in self.labels)
        lines = [head]
        for crit in self.scores:
            probs = self.probs(crit)
            lines.append(f"{crit:<{width}}" + "".join(f"{p:10.4f}" for p in probs) + f"   best: {self.best(crit)}")
        return "\n".join(lines)


TABLE_FIELDS = ("i", "j", "log_max_lik_i", "lambda_ij", "mult_ij")


def write_table_csv(table: LogEvidenceTable, fh) -> None:
    fh.write(f"# n: {table.n}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TABLE_FIELDS)
    for (i, j), lam in table.lambdas.items():
        writer.writerow([i, j, repr(table.log_max_lik[i]), repr(lam), table.mult.get((i, j), 1)])


def _label(text: str):
    try:
        return int(text)
    except ValueError:
        return text


def read_table_csv(fh, n: Optional[int] = None) -> LogEvidenceTable:
    """Inverse of :func:`write_table_csv`; ``n`` overrides the ``# n:`` header."""
    rows, header_n = [], None
    for line in fh:
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            if key.strip() == "n":
                header_n = int(value)
            continue
        rows.append(line)
    n = n if n is not None else header_n
    if n is None:
        raise ValueError("sample size n is neither given nor recorded in the table")
    lls, lambdas, mult = {}, {}, {}
    for row in csv.DictReader(rows):
        i, j = _label(row["i"]), _label(row["j"])
        ll = float(row["log_max_lik_i"])
        if i in lls and lls[i] != ll:
            raise ValueError(f"inconsistent maximum log-likelihood for model {i}")
        lls[i] = ll
        lambdas[(i, j)] = float(row["lambda_ij"])
        mult[(i, j)] = int(row["mult_ij"] or 1)
    return LogEvidenceTable(n, lls, lambdas, mult)

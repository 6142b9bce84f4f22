import io
import math
import warnings

import mpmath
import numpy as np
import pytest

from rlct.sbic import (
    LogEvidenceTable,
    ModelPoset,
    MonotonicityError,
    MonotonicityWarning,
    SelectionResult,
    assemble_wsbic_table,
    bic,
    monotonicity_violations,
    posterior_model_probs,
    read_table_csv,
    sbic_residuals,
    solve_sbic,
    write_table_csv,
)
from rlct.zoo import binomial_bound_1
from rlct.zoo.mle import MleResult


def random_poset(rng, k):
    """Random partial order on ``k`` models with shuffled labels and priors."""
    rel = np.triu(rng.random((k, k)) < 0.5, 1) | np.eye(k, dtype=bool)
    closure = rel.copy()
    for _ in range(k):
        closure = (closure.astype(int) @ closure.astype(int)) > 0
    perm = rng.permutation(k)
    leq = closure[np.ix_(perm, perm)]
    labels = [f"M{a}" for a in perm]
    return ModelPoset(labels, leq, rng.uniform(0.1, 1.0, k))


def random_table(rng, poset, spread=5000.0):
    n = int(rng.integers(10, 10**5))
    lls = {i: float(rng.uniform(-spread, 0)) for i in poset.labels}
    lambdas = {p: float(rng.uniform(0.1, 10)) for p in poset.pairs()}
    mult = {p: int(rng.integers(1, 4)) for p in poset.pairs()}
    return LogEvidenceTable(n, lls, lambdas, mult)


def oracle_sbic(poset, table):
    """Direct high-precision solve of each quadratic with the textbook formula.

    The formula cancels when ``4ac`` is tiny next to ``b^2``, so the working
    precision covers the full range of the log evidences.
    """
    logs = [table.log_L(i, j) for i, j in poset.pairs()]
    mpmath.mp.dps = 60 + int(2 * (max(logs) - min(logs)) / math.log(10))
    p = {lab: mpmath.mpf(float(w)) for lab, w in zip(poset.labels, poset.priors)}
    S = {}
    for i in poset.topological_order():
        preds = poset.below(i, strict=True)
        L = {j: mpmath.exp(mpmath.mpf(table.log_L(i, j))) for j in poset.below(i)}
        if not preds:
            S[i] = L[i]
            continue
        a = p[i]
        b = sum(p[j] * S[j] for j in preds) - L[i] * p[i]
        c = -sum(L[j] * p[j] * S[j] for j in preds)
        S[i] = (-b + mpmath.sqrt(b * b - 4 * a * c)) / (2 * a)
    return {lab: float(mpmath.log(S[lab])) for lab in poset.labels}


@pytest.fixture(scope="module")
def fuzz_cases():
    rng = np.random.default_rng(2024)
    cases = []
    for _ in range(100):
        poset = random_poset(rng, int(rng.integers(1, 7)))
        cases.append((poset, random_table(rng, poset)))
    return cases


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


def test_fixed_point_residual_on_fuzzed_posets(fuzz_cases):
    worst = 0.0
    for poset, table in fuzz_cases:
        res = sbic_residuals(poset, table, solve_sbic(poset, table))
        worst = max(worst, max(res.values()))
    assert worst < 1e-10


def test_agrees_with_high_precision_oracle(fuzz_cases):
    for poset, table in fuzz_cases[:30]:
        got = solve_sbic(poset, table)
        want = oracle_sbic(poset, table)
        for lab in poset.labels:
            assert got[lab] == pytest.approx(want[lab], rel=1e-12, abs=1e-9)


def test_two_model_chain_matches_scalar_quadratic():
    # log L11 = 0, log L21 = -1, log L22 = -3 with n = 100
    ln = math.log(100)
    table = LogEvidenceTable(100, {1: ln, 2: ln - 1}, {(1, 1): 1.0, (2, 1): 1.0, (2, 2): (ln + 2) / ln})
    log_s = solve_sbic(ModelPoset.chain([1, 2]), table)
    mpmath.mp.dps = 50
    b = 1 - mpmath.exp(-3)
    root = (-b + mpmath.sqrt(b * b + 4 * mpmath.exp(-1))) / 2
    assert log_s[1] == pytest.approx(0.0, abs=1e-15)
    assert abs(log_s[2] - float(mpmath.log(root))) < 1e-12 * abs(float(mpmath.log(root)))


def test_single_model_is_its_own_evidence():
    table = LogEvidenceTable(50, {"a": -120.0}, {("a", "a"): 1.5}, {("a", "a"): 2})
    log_s = solve_sbic(ModelPoset(["a"], [[True]]), table)
    assert log_s["a"] == pytest.approx(-120.0 - 1.5 * math.log(50) + math.log(math.log(50)), rel=1e-15)


def test_constant_lambda_collapses_to_bic():
    rng = np.random.default_rng(1)
    dims = {1: 2, 2: 5, 3: 8, 4: 11}
    lls = {i: float(rng.uniform(-900, -800)) for i in dims}
    poset = ModelPoset.chain(list(dims))
    table = LogEvidenceTable(300, lls, {(i, j): dims[i] / 2 for i, j in poset.pairs()})
    log_s = solve_sbic(poset, table)
    for i, d in dims.items():
        assert log_s[i] == pytest.approx(bic(lls[i], d, 300), rel=4 * np.finfo(float).eps)


@pytest.mark.parametrize("kappa", [-1e4, -3.5, 0.25, 700.0, 1e4])
def test_scale_equivariance(fuzz_cases, kappa):
    for poset, table in fuzz_cases[:40]:
        base = solve_sbic(poset, table)
        moved = solve_sbic(poset, table.shifted(kappa))
        for lab in poset.labels:
            scale = max(1.0, abs(base[lab]), abs(kappa))
            assert abs(moved[lab] - (base[lab] + kappa)) <= 8 * np.finfo(float).eps * scale


def test_topological_order_does_not_matter():
    # diamond: 1 below 2 and 3, both below 4
    leq = np.eye(4, dtype=bool)
    for a, b in [(0, 1), (0, 2), (1, 3), (2, 3), (0, 3)]:
        leq[a, b] = True
    poset = ModelPoset([1, 2, 3, 4], leq, [0.1, 0.2, 0.3, 0.4])
    table = random_table(np.random.default_rng(3), poset)
    a = solve_sbic(poset, table, order=[1, 2, 3, 4])
    b = solve_sbic(poset, table, order=[1, 3, 2, 4])
    for lab in poset.labels:
        assert a[lab] == pytest.approx(b[lab], abs=1e-12)
    with pytest.raises(ValueError):
        solve_sbic(poset, table, order=[2, 1, 3, 4])


def test_solution_lies_between_extreme_evidences(fuzz_cases):
    for poset, table in fuzz_cases:
        log_s = solve_sbic(poset, table)
        for i in poset.labels:
            vals = [table.log_L(i, j) for j in poset.below(i)]
            tol = 1e-12 * max(1.0, max(abs(v) for v in vals))
            assert min(vals) - tol <= log_s[i] <= max(vals) + tol


def test_extreme_log_likelihoods_do_not_overflow():
    poset = ModelPoset.chain([1, 2, 3])
    table = LogEvidenceTable(10**6, {1: -1e6, 2: -1e6 + 3000.0, 3: -1e6 + 3005.0},
                             {(1, 1): 0.5, (2, 1): 1.0, (2, 2): 1.5, (3, 1): 1.5, (3, 2): 2.0, (3, 3): 2.5})
    log_s = solve_sbic(poset, table)
    assert all(np.isfinite(v) for v in log_s.values())
    assert max(sbic_residuals(poset, table, log_s).values()) < 1e-10


def test_missing_pairs_are_reported():
    poset = ModelPoset.chain([1, 2])
    table = LogEvidenceTable(100, {1: -10.0, 2: -9.0}, {(1, 1): 0.5, (2, 2): 1.0})
    assert table.missing(poset) == [(2, 1)]
    with pytest.raises(KeyError, match=r"\(2, 1\)"):
        solve_sbic(poset, table)


# ---------------------------------------------------------------------------
# poset and table validation
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "leq",
    [
        [[False, True], [False, True]],  # not reflexive
        [[True, True], [True, True]],  # cycle
        [[True, True, False], [False, True, True], [False, False, True]],  # not transitive
    ],
)
def test_poset_rejects_non_partial_orders(leq):
    with pytest.raises(ValueError):
        ModelPoset(list(range(len(leq))), leq)


def test_poset_rejects_bad_priors_and_labels():
    with pytest.raises(ValueError):
        ModelPoset.chain([1, 2], priors=[1.0, 0.0])
    with pytest.raises(ValueError):
        ModelPoset([1, 1], np.eye(2, dtype=bool))


def test_poset_basics():
    poset = ModelPoset.chain([1, 2, 3], priors=[1, 1, 2])
    np.testing.assert_allclose(poset.priors, [0.25, 0.25, 0.5])
    assert poset.below(3, strict=True) == [1, 2]
    assert poset.pairs() == [(1, 1), (2, 1), (2, 2), (3, 1), (3, 2), (3, 3)]
    assert poset.topological_order() == [1, 2, 3]


def test_random_posets_have_valid_topological_orders():
    rng = np.random.default_rng(8)
    for _ in range(50):
        poset = random_poset(rng, int(rng.integers(1, 7)))
        assert poset.is_topological(poset.topological_order())


@pytest.mark.parametrize(
    "kwargs",
    [dict(n=1), dict(lambdas={(1, 1): 0.0}), dict(lambdas={(1, 1): float("nan")}), dict(mult={(1, 1): 0}),
     dict(log_max_lik={1: -np.inf})],
)
def test_table_validation(kwargs):
    base = dict(n=10, log_max_lik={1: -5.0}, lambdas={(1, 1): 0.5}, mult={})
    with pytest.raises(ValueError):
        LogEvidenceTable(**{**base, **kwargs})


def test_log_evidence_formula():
    table = LogEvidenceTable(1000, {2: -50.0}, {(2, 1): 1.25}, {(2, 1): 3})
    assert table.log_L(2, 1) == pytest.approx(-50.0 - 1.25 * math.log(1000) + 2 * math.log(math.log(1000)))


def test_table_csv_round_trip():
    rng = np.random.default_rng(5)
    poset = random_poset(rng, 5)
    table = random_table(rng, poset)
    buf = io.StringIO()
    write_table_csv(table, buf)
    buf.seek(0)
    back = read_table_csv(buf)
    assert back.n == table.n
    for i, j in poset.pairs():
        assert back.log_L(i, j) == table.log_L(i, j)


def test_table_csv_needs_sample_size():
    with pytest.raises(ValueError):
        read_table_csv(io.StringIO("i,j,log_max_lik_i,lambda_ij,mult_ij\n1,1,-3.0,0.5,1\n"))


# ---------------------------------------------------------------------------
# BIC and posterior probabilities
# ---------------------------------------------------------------------------


def test_bic():
    assert bic(-42.0, 0, 100) == -42.0
    assert bic(MleResult(np.zeros(2), -10.0, True, 1), 4, 100) == pytest.approx(-10.0 - 2 * math.log(100))
    with pytest.raises(ValueError):
        bic(-1.0, 1, 1)


def test_equal_scores_give_uniform_probabilities():
    np.testing.assert_allclose(posterior_model_probs([-3.0] * 4), [0.25] * 4, rtol=1e-15)


def test_excluded_model_gets_zero_probability():
    probs = posterior_model_probs([-1.0, -np.inf, -1.0])
    np.testing.assert_array_equal(probs, [0.5, 0.0, 0.5])


def test_singleton_probability_is_one():
    assert posterior_model_probs([-1e6]).tolist() == [1.0]


def test_priors_enter_probabilities():
    probs = posterior_model_probs([0.0, math.log(2)], [2 / 3, 1 / 3])
    np.testing.assert_allclose(probs, [0.5, 0.5])


def test_softmax_is_shift_safe():
    probs = posterior_model_probs([-1e8, -1e8 - math.log(3)])
    np.testing.assert_allclose(probs, [0.75, 0.25])
    with pytest.raises(ValueError):
        posterior_model_probs([np.nan, 0.0])


def test_selection_result_probabilities_sum_to_one():
    rng = np.random.default_rng(0)
    res = SelectionResult([1, 2, 3], np.full(3, 1 / 3))
    for k in range(5):
        res.add(f"c{k}", rng.normal(-100, 30, 3))
    for crit in res.scores:
        assert abs(res.probs(crit).sum() - 1) < 1e-12
    res.add("fixed", {1: -5.0, 2: -1.0, 3: -9.0})
    assert res.best("fixed") == 2
    buf = io.StringIO()
    res.write_csv(buf)
    assert buf.getvalue().splitlines()[0] == "criterion,model,log_score,posterior_prob"
    assert "best: 2" in res.summary()


# ---------------------------------------------------------------------------
# WsBIC input assembly
# ---------------------------------------------------------------------------


def _binomial_poset(k=4):
    poset = ModelPoset.chain(list(range(1, k + 1)))
    return poset, {p: binomial_bound_1(*p) for p in poset.pairs()}


def test_wsbic_table_has_unit_multiplicities():
    poset, rlcts = _binomial_poset()
    lls = {i: -300.0 + i for i in poset.labels}
    table = assemble_wsbic_table(poset, lls, rlcts, 128)
    assert table.log_L(3, 2) == pytest.approx(-297.0 - binomial_bound_1(3, 2) * math.log(128))
    assert table.mult == {}


def test_wsbic_with_constant_lambda_is_bic_with_that_lambda():
    poset = ModelPoset.chain([1, 2, 3])
    lam = {1: 0.5, 2: 1.4, 3: 2.2}
    lls = {1: -400.0, 2: -395.0, 3: -394.0}
    table = assemble_wsbic_table(poset, lls, {(i, j): lam[i] for i, j in poset.pairs()}, 200)
    log_s = solve_sbic(poset, table)
    for i in poset.labels:
        assert log_s[i] == pytest.approx(lls[i] - lam[i] * math.log(200), rel=1e-14)


def test_monotonicity_violation_warns():
    poset, rlcts = _binomial_poset(3)
    rlcts[(2, 1)] = 1.6  # above lambda(3, 1) = 1.5
    assert monotonicity_violations(poset, rlcts) == [(2, 3, 1)]
    with pytest.warns(MonotonicityWarning, match=r"lambda\(2,1\) > lambda\(3,1\)"):
        assemble_wsbic_table(poset, {1: -1.0, 2: -1.0, 3: -1.0}, rlcts, 100)


def test_monotonicity_violation_strict_mode_raises():
    poset, rlcts = _binomial_poset(3)
    rlcts[(2, 1)] = 1.6
    with pytest.raises(MonotonicityError):
        assemble_wsbic_table(poset, {1: -1.0, 2: -1.0, 3: -1.0}, rlcts, 100, strict=True)


def test_reestimate_hook_repairs_violations():
    poset, rlcts = _binomial_poset(3)
    rlcts[(2, 1)] = 1.6
    seen = []

    def reestimate(bad):
        seen.extend(bad)
        return {(2, 1): 0.8}

    with warnings.catch_warnings():
        warnings.simplefilter("error", MonotonicityWarning)
        table = assemble_wsbic_table(poset, {1: -1.0, 2: -1.0, 3: -1.0}, rlcts, 100, reestimate=reestimate)
    assert seen == [(2, 3, 1)]
    assert table.lambdas[(2, 1)] == 0.8


def test_wsbic_table_requires_every_pair():
    poset, rlcts = _binomial_poset(3)
    del rlcts[(3, 2)]
    with pytest.raises(KeyError, match=r"\(3, 2\)"):
        assemble_wsbic_table(poset, {1: -1.0, 2: -1.0, 3: -1.0}, rlcts, 100)

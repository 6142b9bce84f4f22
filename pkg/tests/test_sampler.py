import io
import math

import numpy as np
import pytest
from scipy import stats

from rlct import sampler
from rlct.model_core import Dataset, RngPlan
from rlct.sampler import (
    McmcConfig,
    SamplerError,
    TailMassError,
    TemperingConfig,
    effective_sample_size,
    mc_standard_errors,
    posterior_mean_loglik,
    posterior_var_loglik,
    quadrature_tempered_moments,
    sample_tempered,
    sample_tempered_lanes,
    write_chain_csv,
)
from rlct.zoo import (
    binom_mixture_model,
    binomial_truth,
    cormorant_fixture,
    gmm2_model,
    normal_location_model,
    rrr_model,
    rrr_truth,
)

FAST = McmcConfig(n_iters=6000, burn_in=1000, thin=2)


@pytest.fixture(scope="module")
def normal_data():
    model = normal_location_model()
    return model, model.simulate(np.array([0.3]), 100, np.random.default_rng(11))


def _normal_bounds(model, ds, t, width=15.0):
    mean, var = model.tempered_posterior(t, ds.n, ds.column(0).sum())
    return [(mean - width * math.sqrt(var), mean + width * math.sqrt(var))]


def test_quadrature_matches_closed_form(normal_data):
    model, ds = normal_data
    t = 1 / math.log(100)
    e, v = model.tempered_loglik_moments(ds, t)
    quad = quadrature_tempered_moments(model, ds, t, _normal_bounds(model, ds, t))
    assert abs(quad.mean_loglik - e) < 1e-8
    assert abs(quad.var_loglik - v) < 1e-8
    assert quad.tail_mass < 1e-10


def test_quadrature_rejects_narrow_bounds(normal_data):
    model, ds = normal_data
    with pytest.raises(TailMassError):
        quadrature_tempered_moments(model, ds, 0.5, _normal_bounds(model, ds, 0.5, width=2.0))


def test_quadrature_rejects_high_dimension():
    with pytest.raises(ValueError):
        quadrature_tempered_moments(gmm2_model(), Dataset([0.0]), 0.5, [(-1, 1)] * 3)


def test_mcmc_matches_conjugate_moments(normal_data):
    model, ds = normal_data
    t = 1 / math.log(100)
    e, v = model.tempered_loglik_moments(ds, t)
    chain = sample_tempered(model, ds, t, McmcConfig(n_iters=40000, burn_in=5000, thin=5), rng=3)
    se_e, se_v = mc_standard_errors(chain)
    assert abs(posterior_mean_loglik(chain) - e) < 3 * se_e
    assert abs(posterior_var_loglik(chain) - v) < 3 * se_v


def test_binomial_chain_matches_quadrature_on_cormorant():
    from rlct.workflows import oracle_bounds

    model = binom_mixture_model(1, 30)
    ds = cormorant_fixture()
    t = 1 / math.log(ds.n)
    quad = quadrature_tempered_moments(model, ds, t, [oracle_bounds(model, ds, t)])
    chain = sample_tempered(model, ds, t, McmcConfig(n_iters=40000, burn_in=5000, thin=5), rng=4)
    se_e, se_v = mc_standard_errors(chain)
    assert abs(posterior_mean_loglik(chain) - quad.mean_loglik) < 3 * se_e
    assert abs(posterior_var_loglik(chain) - quad.var_loglik) < 3 * se_v


@pytest.mark.parametrize("which", ["normal", "binomial_flat", "binomial_uniform"])
def test_quadrature_mean_increases_with_t(which):
    from rlct.workflows import oracle_bounds

    if which == "normal":
        model = normal_location_model()
        ds = model.simulate(np.array([0.5]), 100, np.random.default_rng(0))
    else:
        model = binom_mixture_model(1, 30, "flat_logit" if which == "binomial_flat" else "uniform")
        ds = cormorant_fixture()
    means = []
    for t in np.arange(1, 11) / 10:
        means.append(quadrature_tempered_moments(model, ds, t, [oracle_bounds(model, ds, t)]).mean_loglik)
    assert np.all(np.diff(means) > 0)


def test_prior_sampling_at_t_zero():
    model = gmm2_model()
    ds = model.simulate(np.array([0.5, 0.0, 0.0]), 50, np.random.default_rng(0))
    chain = sample_tempered(model, ds, 0.0, McmcConfig(n_iters=40000, burn_in=5000, thin=5), rng=1)
    rng = np.random.default_rng(2)
    draws = np.column_stack([rng.random(20000), rng.normal(0, 2, 20000), rng.normal(0, 2, 20000)])
    direct = model.loglik_stats(draws, model.stack_stats([model.summarize(ds)] * 20000))
    se_e, _ = mc_standard_errors(chain)
    se = math.hypot(se_e, direct.std() / math.sqrt(direct.size))
    assert abs(posterior_mean_loglik(chain) - direct.mean()) < 3 * se


def test_stationary_distribution_total_variation():
    # 20 lanes x 50000 steps = 1e6 steps targeting N(m, v)
    model = normal_location_model()
    ds = model.simulate(np.array([1.0]), 20, np.random.default_rng(5))
    t = 0.5
    cfg = McmcConfig(n_iters=51000, burn_in=1000, thin=1, keep_params=True)
    plan = RngPlan(9)
    chains = sample_tempered_lanes(model, [model.summarize(ds)] * 20, [t] * 20, cfg,
                                   [plan.seed_sequence(k, 1) for k in range(20)])
    draws = np.concatenate([c.param_draws[:, 0] for c in chains])
    mean, var = model.tempered_posterior(t, ds.n, ds.column(0).sum())
    edges = mean + math.sqrt(var) * np.linspace(-4, 4, 33)
    edges = np.concatenate([[-np.inf], edges, [np.inf]])
    observed = np.histogram(draws, edges)[0] / draws.size
    expected = np.diff(stats.norm.cdf(edges, mean, math.sqrt(var)))
    assert 0.5 * np.abs(observed - expected).sum() < 0.02


@pytest.mark.parametrize(
    "model,truth,n",
    [
        (normal_location_model(), np.array([0.0]), 100),
        (gmm2_model(), np.array([0.5, 0.0, 0.0]), 200),
        (binom_mixture_model(2, 30), binomial_truth(2), 200),
        (rrr_model(6, 6, 1), rrr_truth(6, 6, 1), 200),
    ],
    ids=["normal", "gmm2", "binom2", "rrr1"],
)
def test_acceptance_rate_strictly_inside_unit_interval(model, truth, n):
    truth_model = rrr_model(6, 6, 1) if model.name.startswith("rrr") else model
    ds = truth_model.simulate(truth, n, np.random.default_rng(0))
    chain = sample_tempered(model, ds, 1 / math.log(n), FAST, rng=0)
    assert 0.0 < chain.acceptance_rate < 1.0
    assert chain.n_obs == n


def test_same_seed_same_chain():
    model = binom_mixture_model(2, 30)
    ds = cormorant_fixture()
    a = sample_tempered(model, ds, 0.2, FAST, rng=5)
    b = sample_tempered(model, ds, 0.2, FAST, rng=5)
    c = sample_tempered(model, ds, 0.2, FAST, rng=6)
    np.testing.assert_array_equal(a.loglik_draws, b.loglik_draws)
    assert not np.array_equal(a.loglik_draws, c.loglik_draws)


def test_chunking_and_workers_do_not_change_draws(monkeypatch):
    model = gmm2_model()
    rng = np.random.default_rng(0)
    stats_ = [model.summarize(model.simulate(np.array([0.5, 0, 0]), 100, rng)) for _ in range(5)]
    seeds = [RngPlan(3).seed_sequence(k, 1) for k in range(5)]
    ts = [0.2, 0.3, 0.4, 0.5, 1.0]
    one = sample_tempered_lanes(model, stats_, ts, FAST, seeds)
    monkeypatch.setattr(sampler, "_CHUNK_ELEMENTS", 200)  # two lanes per chunk
    split = sample_tempered_lanes(model, stats_, ts, FAST, seeds)
    parallel = sample_tempered_lanes(model, stats_, ts, FAST, seeds, workers=2)
    for a, b, c in zip(one, split, parallel):
        np.testing.assert_array_equal(a.loglik_draws, b.loglik_draws)
        np.testing.assert_array_equal(a.loglik_draws, c.loglik_draws)


def test_lane_does_not_depend_on_companions():
    model = binom_mixture_model(2, 30)
    ds = cormorant_fixture()
    st = model.summarize(ds)
    seed = RngPlan(1).seed_sequence(0, 1)
    alone = sample_tempered_lanes(model, [st], [0.3], FAST, [seed])[0]
    together = sample_tempered_lanes(model, [st, st], [0.3, 0.9], FAST, [seed, RngPlan(1).seed_sequence(1, 1)])[0]
    np.testing.assert_array_equal(alone.loglik_draws, together.loglik_draws)


def test_effective_sample_size():
    rng = np.random.default_rng(0)
    white = rng.standard_normal((4, 20000))
    np.testing.assert_allclose(effective_sample_size(white), 20000, rtol=0.1)
    rho = 0.9
    x = np.empty((4, 20000))
    x[:, 0] = rng.standard_normal(4)
    for k in range(1, x.shape[1]):
        x[:, k] = rho * x[:, k - 1] + math.sqrt(1 - rho**2) * rng.standard_normal(4)
    expected = 20000 * (1 - rho) / (1 + rho)
    np.testing.assert_allclose(effective_sample_size(x), expected, rtol=0.25)


def test_variance_uses_population_denominator():
    from rlct.sampler import TemperedChain

    chain = TemperedChain(0.5, np.array([1.0, 2.0, 3.0, 4.0]), 0.3, 4.0, np.zeros(1))
    assert posterior_var_loglik(chain) == pytest.approx(1.25)


def test_chain_csv_columns():
    model = binom_mixture_model(1, 30)
    chain = sample_tempered(model, cormorant_fixture(), 0.2,
                            McmcConfig(n_iters=400, burn_in=100, thin=1, keep_params=True), rng=0)
    buf = io.StringIO()
    write_chain_csv(chain, buf, ["p1"])
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iter,loglik,p1"
    assert len(lines) == 301
    assert lines[1].startswith("100,")


@pytest.mark.parametrize(
    "kwargs",
    [dict(thin=0), dict(burn_in=6000), dict(n_iters=1100, burn_in=1000), dict(target_accept=1.0),
     dict(preconditioning="none"), dict(initial_scale=0.0)],
)
def test_mcmc_config_validation(kwargs):
    base = dict(n_iters=6000, burn_in=1000, thin=2)
    with pytest.raises(ValueError):
        McmcConfig(**{**base, **kwargs})


def test_tempering_config():
    assert TemperingConfig().temperature(100) == pytest.approx(1 / math.log(100))
    assert TemperingConfig(t=0.5).temperature(10) == 0.5
    with pytest.raises(ValueError):
        TemperingConfig(c=5.0).temperature(10)
    with pytest.raises(ValueError):
        TemperingConfig().temperature(1)


def test_negative_temperature_rejected():
    with pytest.raises(ValueError):
        sample_tempered(normal_location_model(), Dataset([0.0]), -0.1, FAST)


class _NowhereModel(type(normal_location_model())):
    """Zero likelihood everywhere."""

    def loglik_stats(self, params, stats):
        return np.full(np.shape(params)[:-1], -np.inf)


def test_unreachable_start_raises():
    with pytest.raises(SamplerError):
        sample_tempered(_NowhereModel(), Dataset([0.0]), 0.5, FAST, rng=0)

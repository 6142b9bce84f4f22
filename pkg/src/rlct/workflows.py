"""Experiment drivers behind the command-line interface.

Each command takes a nested configuration (normally read from YAML),
validates it completely against a schema of defaults before any
computation, and writes CSV whose comment header holds the resolved
configuration.  Feeding that header back with ``--config`` reproduces the
file byte for byte.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import io
import math
import os
import warnings
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from rlct.estimators import (
    EEstimatorConfig,
    ReplicationPlan,
    lambda_e_from_means,
    lambda_e_tilde,
    lambda_v1,
    lambda_vm,
    p_v_half,
    posterior_mean_loglik,
    read_estimates_csv,
    wbic_batch,
    write_estimates_csv,
)
from rlct.model_core import CHAIN_STREAM, DATA_STREAM, Dataset, ModelSpec, RngPlan
from rlct.sampler import (
    McmcConfig,
    mc_standard_errors,
    posterior_var_loglik,
    quadrature_tempered_moments,
    sample_tempered,
    sample_tempered_lanes,
    write_chain_csv,
)
from rlct.sbic import (
    LogEvidenceTable,
    ModelPoset,
    SelectionResult,
    assemble_wsbic_table,
    bic,
    solve_sbic,
)
from rlct.zoo import (
    BINOMIAL_TABLE_ESTIMATES,
    GMM2_STANDARD_NORMAL_TRUTH,
    RRR_TABLE_ESTIMATES,
    binom_mixture_model,
    binomial_bound_05,
    binomial_bound_1,
    binomial_truth,
    cormorant_fixture,
    counts_dataset,
    gmm2_model,
    mle_mixture_em,
    mle_rrr,
    normal_location_model,
    rrr_exact_rlct,
    rrr_model,
    rrr_truth,
)
from rlct.zoo.data import CORMORANT_TRIALS

#: environment variable holding the default worker count
WORKERS_ENV = "RLCT_WORKERS"


class ConfigError(ValueError):
    """Invalid configuration; reported before any computation starts."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

MCMC_DEFAULTS = {
    "n_iters": 60000,
    "burn_in": 10000,
    "thin": 5,
    "target_accept": 0.3,
    "initial_scale": 0.1,
    "preconditioning": "diag",
    "conditional_sweeps": True,
}

MODEL_DEFAULTS = {
    "family": "gmm2",
    "fit": 2,
    "truth": 1,
    "trials": 30,
    "input_dim": 6,
    "output_dim": 6,
    "p_prior": "flat_logit",
    "prior_sd": 10.0,
    "prior_var": 4.0,
}

SCHEMAS: Dict[str, Dict[str, Any]] = {
    "estimate-rlct": {
        "seed": 0,
        "model": MODEL_DEFAULTS,
        "plan": {"n_s": 1000, "m": 25, "c": 1.0},
        "replications": 1,
        "mcmc": MCMC_DEFAULTS,
    },
    "select": {
        "seed": 0,
        "trials": CORMORANT_TRIALS,
        "candidates": [1, 2, 3, 4],
        "priors": None,
        "p_prior": "flat_logit",
        "rlct_source": "estimate",
        "estimate": {"n_s": 3000, "m": 25, "c": 1.0},
        "wbic": True,
        "em_restarts": 20,
        "strict_monotonicity": False,
        "mcmc": MCMC_DEFAULTS,
    },
    "replicate": {
        "seed": 0,
        "target": "table1",
        "scale": 1.0,
        "strict_monotonicity": False,
        "settings": {},
        "mcmc": MCMC_DEFAULTS,
    },
    "sample": {
        "seed": 0,
        "model": MODEL_DEFAULTS,
        "n": 1000,
        "c": 1.0,
        "t": None,
        "keep_params": True,
        "mcmc": MCMC_DEFAULTS,
    },
    "oracle": {
        "seed": 0,
        "model": {"family": "normal_location", "trials": 30, "p_prior": "flat_logit", "truth": 0.0},
        "n": 100,
        "t": None,
        "resolution": 4001,
        "mcmc": MCMC_DEFAULTS,
    },
}

TARGET_SETTINGS: Dict[str, Dict[str, Any]] = {
    "table1": {"n_s": [50, 100, 200, 500, 1000], "sims": 1000, "m": [1, 10, 100], "d": [0.1, 1.0, 10.0],
               "c": 1.0, "batch_lanes": 2000},
    "table2": {"n_s": 2000, "m": 100, "max_rank": 5, "input_dim": 6, "output_dim": 6, "c": 1.0},
    "table3": {"n_s": 10000, "m": 100, "max_components": 4, "trials": 30, "c": 1.0},
    "fig2": {"n": [10, 20, 50], "sims": 200, "truth_rank": 2, "max_rank": 5, "input_dim": 6, "output_dim": 6,
             "rlct_table": None},
    "fig3": {"n": [10, 20, 50], "sims": 200, "truth": 2, "truth_probs": None, "max_components": 4, "trials": 30,
             "rlct_table": None},
    "fig4": {"candidates": [1, 2, 3, 4], "rlct_table": None, "em_restarts": 20},
}


def _check(value, default, path):
    if isinstance(default, dict):
        if value is None:
            value = {}
        if not isinstance(value, Mapping):
            raise ConfigError(f"{path or 'config'} must be a mapping")
        if not default:
            return dict(value)  # free-form block, validated by its consumer
        unknown = sorted(set(value) - set(default))
        if unknown:
            raise ConfigError(f"unknown key(s) {', '.join(_join(path, k) for k in unknown)}")
        return {k: _check(value[k], default[k], _join(path, k)) if k in value else copy.deepcopy(default[k])
                for k in default}
    if default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string")
        return value
    if isinstance(default, list):
        items = value if isinstance(value, list) else [value]
        return [_check(v, default[0], f"{path}[{k}]") if default else v for k, v in enumerate(items)]
    return value


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def resolve_config(command: str, user: Optional[Mapping] = None) -> Dict[str, Any]:
    """Defaults for ``command`` overlaid with ``user``; unknown keys are rejected.

    For ``replicate`` the ``settings`` block is validated against the chosen
    target's own defaults.
    """
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    user = dict(user or {})
    cmd = user.pop("command", command)
    if cmd != command:
        raise ConfigError(f"configuration was written by {cmd!r}, not {command!r}")
    cfg = _check(user, SCHEMAS[command], "")
    if command == "replicate":
        if cfg["target"] not in TARGET_SETTINGS:
            raise ConfigError(f"target must be one of {', '.join(TARGET_SETTINGS)}")
        cfg["settings"] = _check(cfg["settings"], TARGET_SETTINGS[cfg["target"]], "settings")
        if not 0 < cfg["scale"] <= 1:
            raise ConfigError("scale must lie in (0, 1]")
    mcmc_config(cfg)  # validate early
    return cfg


def load_config(path: Optional[str]) -> Dict[str, Any]:
    """YAML mapping from ``path``.

    A CSV written by this package is accepted too: its comment header is
    the configuration that produced it.
    """
    if path is None:
        return {}
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if text.startswith("# rlct "):
        lines = []
        for line in text.splitlines()[1:]:
            if not line.startswith("#"):
                break
            lines.append(line[2:])
        text = "\n".join(lines)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return data


def config_header(command: str, cfg: Mapping) -> str:
    """Comment block heading every output file."""
    body = yaml.safe_dump({"command": command, **cfg}, sort_keys=True, default_flow_style=False)
    return f"# rlct {command}\n" + "".join(f"# {line}\n" for line in body.splitlines())


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    return workers


def mcmc_config(cfg: Mapping, **overrides) -> McmcConfig:
    try:
        return McmcConfig(**{**cfg["mcmc"], **overrides})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"mcmc: {exc}") from exc


def _scaled(count: int, scale: float) -> int:
    return max(1, int(round(count * scale)))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------


@dataclass
class ModelPair:
    fit: ModelSpec
    truth: ModelSpec
    truth_params: np.ndarray
    i: int
    j: int


def build_pair(model_cfg: Mapping) -> ModelPair:
    """Fitted model and data-generating truth from a ``model`` block."""
    family, i, j = model_cfg["family"], model_cfg["fit"], model_cfg["truth"]
    try:
        if family == "gmm2":
            if (i, j) != (2, 1):
                raise ConfigError("gmm2 fits two components to a single standard normal: use fit 2, truth 1")
            model = gmm2_model(model_cfg["prior_var"])
            return ModelPair(model, model, np.array(GMM2_STANDARD_NORMAL_TRUTH), 2, 1)
        if family == "binomial":
            if not 1 <= j <= i:
                raise ConfigError(f"binomial pair needs 1 <= truth <= fit, got fit {i}, truth {j}")
            k = model_cfg["trials"]
            return ModelPair(binom_mixture_model(i, k, model_cfg["p_prior"]), binom_mixture_model(j, k),
                             binomial_truth(j), i, j)
        if family == "rrr":
            M, N = model_cfg["input_dim"], model_cfg["output_dim"]
            if not 0 <= j <= i:
                raise ConfigError(f"rrr pair needs 0 <= truth <= fit, got fit {i}, truth {j}")
            return ModelPair(rrr_model(M, N, i, model_cfg["prior_sd"]), rrr_model(M, N, j), rrr_truth(M, N, j), i, j)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown model family {family!r}; use gmm2, binomial or rrr")


# ---------------------------------------------------------------------------
# estimate-rlct
# ---------------------------------------------------------------------------


def run_estimate(cfg: Mapping, workers: int = 1) -> List[Tuple]:
    pair = build_pair(cfg["model"])
    plan_cfg = cfg["plan"]
    if cfg["replications"] < 1:
        raise ConfigError("replications must be >= 1")
    try:
        plan = ReplicationPlan(plan_cfg["n_s"], plan_cfg["m"], plan_cfg["c"], pair.truth_params)
    except ValueError as exc:
        raise ConfigError(f"plan: {exc}") from exc
    from rlct.estimators import replicate_lambda_vm

    ests = replicate_lambda_vm(pair.fit, plan, mcmc_config(cfg), RngPlan(cfg["seed"]), pair.truth,
                               cfg["replications"], workers)
    return [(pair.i, pair.j, est) for est in ests]


def write_estimate_report(cfg, rows, fh) -> None:
    fh.write(config_header("estimate-rlct", cfg))
    write_estimates_csv(rows, fh)


# ---------------------------------------------------------------------------
# model selection
# ---------------------------------------------------------------------------


def binomial_rlcts(source: str, candidates: Sequence[int]) -> Dict[Tuple[int, int], float]:
    """RLCT map for the bounded-sBIC variants (``bound_1``, ``bound_0.5``) or
    the built-in reference estimates (``reference``)."""
    pairs = [(i, j) for i in candidates for j in candidates if j <= i]
    if source == "bound_1":
        return {p: binomial_bound_1(*p) for p in pairs}
    if source == "bound_0.5":
        return {p: binomial_bound_05(*p) for p in pairs}
    if source == "reference":
        return {p: BINOMIAL_TABLE_ESTIMATES[p] for p in pairs if p in BINOMIAL_TABLE_ESTIMATES}
    raise ValueError(source)


def read_rlct_table(path: str) -> Dict[Tuple[int, int], float]:
    try:
        with open(path) as fh:
            return read_estimates_csv(fh)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read RLCT table {path}: {exc}") from exc


def _require_pairs(rlcts: Mapping, poset: ModelPoset, what: str) -> None:
    missing = [p for p in poset.pairs() if p not in rlcts]
    if missing:
        raise ConfigError(f"{what} lacks RLCT values for (i, j) = " + ", ".join(f"({i}, {j})" for i, j in missing))


def _score_models(poset: ModelPoset, n: int, max_ll: Mapping[int, float], dims: Mapping[int, int],
                  tables: Mapping[str, Tuple[Mapping, Mapping]], wsbic: Optional[Mapping] = None,
                  wbic_scores: Optional[Mapping[int, float]] = None, strict: bool = False) -> SelectionResult:
    result = SelectionResult(list(poset.labels), poset.priors)
    result.add("BIC", {i: bic(max_ll[i], dims[i], n) for i in poset.labels})
    for name, (lambdas, mult) in tables.items():
        table = LogEvidenceTable(n, dict(max_ll), {p: lambdas[p] for p in poset.pairs()},
                                 {p: mult.get(p, 1) for p in poset.pairs()})
        result.add(name, solve_sbic(poset, table))
    if wbic_scores is not None:
        result.add("WBIC", wbic_scores)
    if wsbic is not None:
        result.add("WsBIC", solve_sbic(poset, assemble_wsbic_table(poset, max_ll, wsbic, n, strict=strict)))
    return result


@dataclass
class SelectionReport:
    result: SelectionResult
    mles: Dict[int, Any]
    rlcts: Dict[Tuple[int, int], float]


def estimate_binomial_rlcts(candidates, trials, p_prior, est_cfg, mcmc, seed, workers) -> Dict[Tuple[int, int], float]:
    """Fresh ``lambda_vm(i, j)`` for every candidate pair ``j <= i``."""
    base = RngPlan(seed).child(0)
    out = {}
    for i in candidates:
        fit = binom_mixture_model(i, trials, p_prior)
        for j in candidates:
            if j > i:
                continue
            plan = ReplicationPlan(est_cfg["n_s"], est_cfg["m"], est_cfg["c"], binomial_truth(j))
            out[(i, j)] = lambda_vm(fit, plan, mcmc, base.child(i, j), binom_mixture_model(j, trials),
                                    workers).lambda_hat
    return out


def run_select(cfg: Mapping, dataset: Dataset, rlct_table: Optional[str] = None, workers: int = 1,
               strict: Optional[bool] = None) -> SelectionReport:
    """Fit every candidate binomial mixture and score it under each criterion."""
    candidates = sorted(cfg["candidates"])
    if not candidates or candidates[0] < 1 or len(set(candidates)) != len(candidates):
        raise ConfigError("candidates must be distinct positive component counts")
    trials = cfg["trials"]
    obs = dataset.column(0)
    if np.any(obs > trials):
        raise ConfigError(f"counts exceed the number of trials ({trials})")
    poset = ModelPoset.chain(candidates, cfg["priors"])
    strict = cfg["strict_monotonicity"] if strict is None else strict
    mcmc = mcmc_config(cfg)
    source = "table" if rlct_table else cfg["rlct_source"]
    if source == "table":
        rlcts = read_rlct_table(rlct_table)
    elif source == "reference":
        rlcts = binomial_rlcts("reference", candidates)
    elif source == "estimate":
        rlcts = None
    else:
        raise ConfigError("rlct_source must be estimate, reference or table")
    if rlcts is not None:
        _require_pairs(rlcts, poset, "RLCT table")

    models = {i: binom_mixture_model(i, trials, cfg["p_prior"]) for i in candidates}
    base = RngPlan(cfg["seed"])
    mles = {i: mle_mixture_em(models[i], dataset, cfg["em_restarts"], rng=base.child(2).stream(i, DATA_STREAM))
            for i in candidates}
    if rlcts is None:
        rlcts = estimate_binomial_rlcts(candidates, trials, cfg["p_prior"], cfg["estimate"], mcmc, cfg["seed"],
                                        workers)
    wbic_scores = None
    if cfg["wbic"]:
        wbic_scores = {i: float(wbic_batch(models[i], [dataset], mcmc, [base.child(1).seed_sequence(i, CHAIN_STREAM)],
                                           workers)[0]) for i in candidates}
    max_ll = {i: mles[i].max_loglik for i in candidates}
    tables = {"sBIC_bar_1": (binomial_rlcts("bound_1", candidates), {}),
              "sBIC_bar_0.5": (binomial_rlcts("bound_0.5", candidates), {})}
    result = _score_models(poset, dataset.n, max_ll, {i: models[i].dim for i in candidates}, tables,
                           {p: rlcts[p] for p in poset.pairs()}, wbic_scores, strict)
    return SelectionReport(result, mles, rlcts)


def read_counts(path: str) -> Dataset:
    """One non-negative integer per line; blank lines and ``#`` comments are skipped."""
    values = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                try:
                    values.append(int(text))
                except ValueError as exc:
                    raise ConfigError(f"{path}:{lineno}: not an integer: {text!r}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read counts file {path}: {exc}") from exc
    try:
        return counts_dataset(values)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def format_selection(report: SelectionReport) -> str:
    lines = ["posterior model probabilities", report.result.summary(), "", "maximum-likelihood fits"]
    for i, mle in report.mles.items():
        lines.append(f"  {i} components: loglik {mle.max_loglik:.4f}  params {np.array2string(mle.params_hat, precision=4)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# replication targets
# ---------------------------------------------------------------------------


def _write_rows(fh, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


def replicate_table1(settings, scale, mcmc, seed, workers):
    """Gaussian-mixture estimator comparison at each simulation size."""
    model = gmm2_model()
    truth = np.array(GMM2_STANDARD_NORMAL_TRUTH)
    sims = _scaled(settings["sims"], scale)
    m_values = sorted({_scaled(m, scale) for m in settings["m"]})
    ds = list(settings["d"])
    if any(not d > 0 for d in ds):
        raise ConfigError("settings.d must be positive")
    base = RngPlan(seed)
    rows = []
    for a, n_s in enumerate(settings["n_s"]):
        cfg = EEstimatorConfig(settings["c"], 1.0)
        t = cfg.temperatures(n_s)[0]
        deltas = [d / math.log(n_s) for d in ds]
        per_sim = 2 + len(ds) + sum(m for m in m_values if m > 1)
        batch = max(1, settings["batch_lanes"] // per_sim)
        results: Dict[str, List[float]] = {}
        for lo in range(0, sims, batch):
            stats, ts, seeds = [], [], []
            sim_ids = range(lo, min(lo + batch, sims))
            for s in sim_ids:
                plan = base.child(a, s)
                data = model.summarize(model.simulate(truth, n_s, plan.stream(0, DATA_STREAM)))
                stats += [data, data]
                ts += [t, 1.0]
                seeds += [plan.seed_sequence(0, CHAIN_STREAM), plan.child(2).seed_sequence(0, CHAIN_STREAM)]
                for e, delta in enumerate(deltas):
                    stats.append(data)
                    ts.append(t + delta)
                    seeds.append(plan.child(1, e).seed_sequence(0, CHAIN_STREAM))
                for m in m_values:
                    if m == 1:
                        continue
                    rep = plan.child(3, m)
                    for k in range(m):
                        stats.append(model.summarize(model.simulate(truth, n_s, rep.stream(k, DATA_STREAM))))
                        ts.append(t)
                        seeds.append(rep.seed_sequence(k, CHAIN_STREAM))
            chains = sample_tempered_lanes(model, stats, ts, mcmc, seeds, workers, n_obs=[n_s] * len(stats))
            pos = 0
            for _ in sim_ids:
                main, post = chains[pos], chains[pos + 1]
                pos += 2
                results.setdefault("lambda_v1", []).append(lambda_v1(main))
                results.setdefault("p_v_half", []).append(p_v_half(post))
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    for d, delta in zip(ds, deltas):
                        results.setdefault(f"lambda_e_tilde_d{d:g}", []).append(
                            lambda_e_tilde(main, n_s, delta=delta))
                for d, delta in zip(ds, deltas):
                    hi = chains[pos]
                    pos += 1
                    results.setdefault(f"lambda_e_d{d:g}", []).append(
                        lambda_e_from_means(posterior_mean_loglik(main), posterior_mean_loglik(hi), t, delta))
                for m in m_values:
                    if m == 1:
                        continue
                    results.setdefault(f"lambda_v{m}", []).append(
                        float(np.mean([lambda_v1(c) for c in chains[pos:pos + m]])))
                    pos += m
        runs = {"lambda_v1": 1, "p_v_half": 1}
        runs.update({f"lambda_e_tilde_d{d:g}": 1 for d in ds})
        runs.update({f"lambda_e_d{d:g}": 2 for d in ds})
        runs.update({f"lambda_v{m}": m for m in m_values if m > 1})
        for method, values in results.items():
            v = np.asarray(values)
            rows.append([method, runs[method], n_s, len(v), float(v.mean()),
                         float(v.std(ddof=1)) if v.size > 1 else float("nan")])
    return ["method", "mcmc_runs", "n_s", "sims", "mean", "sd"], rows


def replicate_table2(settings, scale, mcmc, seed, workers):
    M, N = settings["input_dim"], settings["output_dim"]
    m = _scaled(settings["m"], scale)
    base = RngPlan(seed)
    rows = []
    for i in range(1, settings["max_rank"] + 1):
        fit = rrr_model(M, N, i)
        for j in range(1, i + 1):
            plan = ReplicationPlan(settings["n_s"], m, settings["c"], rrr_truth(M, N, j))
            est = lambda_vm(fit, plan, mcmc, base.child(i, j), rrr_model(M, N, j), workers)
            lam, mult = rrr_exact_rlct(i, j, M, N)
            rows.append([i, j, lam, mult, est.lambda_hat, est.std_error, est.m, est.n_s])
    return ["i", "j", "lambda_exact", "multiplicity", "lambda_hat", "std_error", "m", "n_s"], rows


def replicate_table3(settings, scale, mcmc, seed, workers):
    k = settings["trials"]
    m = _scaled(settings["m"], scale)
    base = RngPlan(seed)
    rows = []
    for i in range(1, settings["max_components"] + 1):
        fit = binom_mixture_model(i, k)
        for j in range(1, i + 1):
            plan = ReplicationPlan(settings["n_s"], m, settings["c"], binomial_truth(j))
            est = lambda_vm(fit, plan, mcmc, base.child(i, j), binom_mixture_model(j, k), workers)
            rows.append([i, j, binomial_bound_1(i, j), binomial_bound_05(i, j), est.lambda_hat, est.std_error,
                         est.m, est.n_s])
    return ["model_i", "truth_j", "bound_1", "bound_0.5", "lambda_hat", "std_error", "m", "n_s"], rows


def _selection_rates(labels, truth_label, sizes, sims, score_fn):
    """Proportion of simulations in which each criterion's best model is each label."""
    rows = []
    for a, n in enumerate(sizes):
        picks: Dict[str, List] = {}
        for result in score_fn(a, n, sims):
            for crit in result.scores:
                picks.setdefault(crit, []).append(result.best(crit))
        for crit, chosen in picks.items():
            for lab in labels:
                share = sum(c == lab for c in chosen) / len(chosen)
                rows.append([n, crit, lab, share, lab == truth_label])
    return ["n", "criterion", "model", "proportion", "is_truth"], rows


def selection_study_binomial(settings, sims, mcmc, seed, workers, rlcts=None,
                             strict=False) -> Tuple[List[str], List[list]]:
    """Selection rates over simulated binomial-mixture datasets."""
    k, truth_j = settings["trials"], settings["truth"]
    candidates = list(range(1, settings["max_components"] + 1))
    poset = ModelPoset.chain(candidates)
    rlcts = rlcts if rlcts is not None else binomial_rlcts("reference", candidates)
    _require_pairs(rlcts, poset, "RLCT table")
    models = {i: binom_mixture_model(i, k) for i in candidates}
    truth = binom_mixture_model(truth_j, k)
    try:
        truth_params = binomial_truth(truth_j, settings.get("truth_probs"))
    except ValueError as exc:
        raise ConfigError(f"settings.truth_probs: {exc}") from exc
    base = RngPlan(seed)

    def score(a, n, count):
        datasets = [truth.simulate(truth_params, n, base.child(a, s).stream(0, DATA_STREAM))
                    for s in range(count)]
        mles = [{i: mle_mixture_em(models[i], ds, rng=base.child(a, s).stream(i, 3)) for i in candidates}
                for s, ds in enumerate(datasets)]
        wb = {i: wbic_batch(models[i], datasets, mcmc,
                            [base.child(a, s).seed_sequence(i, CHAIN_STREAM) for s in range(count)], workers)
              for i in candidates}
        tables = {"sBIC_bar_1": (binomial_rlcts("bound_1", candidates), {}),
                  "sBIC_bar_0.5": (binomial_rlcts("bound_0.5", candidates), {})}
        for s, ds in enumerate(datasets):
            yield _score_models(poset, n, {i: mles[s][i].max_loglik for i in candidates},
                                {i: models[i].dim for i in candidates}, tables, rlcts,
                                {i: float(wb[i][s]) for i in candidates}, strict)

    return _selection_rates(candidates, truth_j, settings["n"], sims, score)


def selection_study_rrr(settings, sims, mcmc, seed, workers, rlcts=None, strict=False):
    M, N, r = settings["input_dim"], settings["output_dim"], settings["truth_rank"]
    candidates = list(range(1, settings["max_rank"] + 1))
    if not 1 <= r <= settings["max_rank"]:
        raise ConfigError("truth_rank must lie between 1 and max_rank")
    poset = ModelPoset.chain(candidates)
    rlcts = rlcts if rlcts is not None else {p: RRR_TABLE_ESTIMATES[p] for p in poset.pairs() if p in RRR_TABLE_ESTIMATES}
    _require_pairs(rlcts, poset, "RLCT table")
    exact = {p: rrr_exact_rlct(p[0], p[1], M, N) for p in poset.pairs()}
    tables = {"sBIC": ({p: v[0] for p, v in exact.items()}, {p: v[1] for p, v in exact.items()})}
    models = {i: rrr_model(M, N, i) for i in candidates}
    truth = rrr_model(M, N, r)
    base = RngPlan(seed)

    def score(a, n, count):
        if n <= M:
            raise ConfigError(f"sample size {n} must exceed the input dimension {M}")
        datasets = [truth.simulate(rrr_truth(M, N, r), n, base.child(a, s).stream(0, DATA_STREAM)) for s in range(count)]
        wb = {i: wbic_batch(models[i], datasets, mcmc,
                            [base.child(a, s).seed_sequence(i, CHAIN_STREAM) for s in range(count)], workers)
              for i in candidates}
        for s, ds in enumerate(datasets):
            max_ll = {i: mle_rrr(ds, i, M).max_loglik for i in candidates}
            yield _score_models(poset, n, max_ll, {i: models[i].dim - i * i for i in candidates}, tables, rlcts,
                                {i: float(wb[i][s]) for i in candidates}, strict)

    return _selection_rates(candidates, r, settings["n"], sims, score)


def replicate_fig4(settings, scale, mcmc, seed, workers, strict=False):
    cfg = resolve_config("select", {"seed": seed, "candidates": settings["candidates"],
                                    "rlct_source": "table" if settings["rlct_table"] else "reference",
                                    "em_restarts": settings["em_restarts"], "strict_monotonicity": strict})
    cfg["mcmc"] = dataclasses.asdict(mcmc)
    report = run_select(cfg, cormorant_fixture(), settings["rlct_table"], workers)
    res = report.result
    rows = []
    for crit in res.scores:
        for lab, s, p in zip(res.labels, res.scores[crit], res.probs(crit)):
            rows.append([crit, lab, float(s), float(p)])
    return ["criterion", "model", "log_score", "posterior_prob"], rows


def run_replicate(cfg: Mapping, workers: int = 1, strict: Optional[bool] = None):
    """``(header, rows)`` for the configured target."""
    target, settings, scale = cfg["target"], cfg["settings"], cfg["scale"]
    strict = cfg["strict_monotonicity"] if strict is None else strict
    mcmc = mcmc_config(cfg)
    seed = cfg["seed"]
    table = settings.get("rlct_table")
    rlcts = read_rlct_table(table) if table else None
    if target == "table1":
        return replicate_table1(settings, scale, mcmc, seed, workers)
    if target == "table2":
        return replicate_table2(settings, scale, mcmc, seed, workers)
    if target == "table3":
        return replicate_table3(settings, scale, mcmc, seed, workers)
    if target == "fig2":
        return selection_study_rrr(settings, _scaled(settings["sims"], scale), mcmc, seed, workers, rlcts, strict)
    if target == "fig3":
        return selection_study_binomial(settings, _scaled(settings["sims"], scale), mcmc, seed, workers, rlcts, strict)
    return replicate_fig4(settings, scale, mcmc, seed, workers, strict)


def write_rows_report(command: str, cfg, header, rows, fh) -> None:
    fh.write(config_header(command, cfg))
    _write_rows(fh, header, rows)


# ---------------------------------------------------------------------------
# chain dump and quadrature check
# ---------------------------------------------------------------------------


def _sample_dataset(cfg, pair: ModelPair, fixture: Optional[str]) -> Dataset:
    if fixture is not None:
        if fixture != "cormorant":
            raise ConfigError(f"unknown fixture {fixture!r}")
        if cfg["model"]["family"] != "binomial":
            raise ConfigError("the cormorant fixture needs the binomial family")
        return cormorant_fixture()
    return pair.truth.simulate(pair.truth_params, cfg["n"], RngPlan(cfg["seed"]).stream(0, DATA_STREAM))


def run_sample(cfg: Mapping, fixture: Optional[str] = None):
    pair = build_pair(cfg["model"])
    data = _sample_dataset(cfg, pair, fixture)
    t = cfg["t"] if cfg["t"] is not None else cfg["c"] / math.log(data.n)
    if not 0 < t <= 1:
        raise ConfigError(f"inverse temperature {t} outside (0, 1]")
    mcmc = mcmc_config(cfg, keep_params=cfg["keep_params"])
    return sample_tempered(pair.fit, data, t, mcmc, RngPlan(cfg["seed"]).seed_sequence(0, CHAIN_STREAM))


def write_chain_report(cfg, chain, fh) -> None:
    fh.write(config_header("sample", cfg))
    write_chain_csv(chain, fh)


def run_oracle(cfg: Mapping, fixture: Optional[str] = None):
    """Quadrature, closed-form (when available) and MCMC moments side by side."""
    mc = cfg["model"]
    plan = RngPlan(cfg["seed"])
    if mc["family"] == "normal_location":
        if fixture is not None:
            raise ConfigError("fixtures are binomial data; use family binomial")
        model = normal_location_model()
        data = model.simulate(np.array([float(mc["truth"])]), cfg["n"], plan.stream(0, DATA_STREAM))
    elif mc["family"] == "binomial":
        model = binom_mixture_model(1, mc["trials"], mc["p_prior"])
        if fixture == "cormorant":
            data = cormorant_fixture()
        elif fixture is None:
            p = float(mc["truth"]) or 0.5
            data = model.simulate(np.array([p]), cfg["n"], plan.stream(0, DATA_STREAM))
        else:
            raise ConfigError(f"unknown fixture {fixture!r}")
    else:
        raise ConfigError("oracle supports the normal_location and one-component binomial models")
    t = cfg["t"] if cfg["t"] is not None else 1.0 / math.log(data.n)
    if not 0 < t <= 1:
        raise ConfigError(f"inverse temperature {t} outside (0, 1]")
    quad = quadrature_tempered_moments(model, data, t, [oracle_bounds(model, data, t)], cfg["resolution"])
    chain = sample_tempered(model, data, t, mcmc_config(cfg), plan.seed_sequence(0, CHAIN_STREAM))
    se_mean, se_var = mc_standard_errors(chain)
    exact = model.tempered_loglik_moments(data, t) if mc["family"] == "normal_location" else (None, None)
    rows = []
    for name, q, ex, est, se in (("mean_loglik", quad.mean_loglik, exact[0], posterior_mean_loglik(chain), se_mean),
                                 ("var_loglik", quad.var_loglik, exact[1], posterior_var_loglik(chain), se_var)):
        rows.append([name, q, "" if ex is None else float(ex), est, se, (est - q) / se if se > 0 else float("nan")])
    return ["quantity", "quadrature", "closed_form", "mcmc", "mc_se", "z"], rows


def oracle_bounds(model: ModelSpec, data: Dataset, t: float, width: float = 15.0) -> Tuple[float, float]:
    """Integration window in unconstrained coordinates: ``width`` approximate
    posterior standard deviations either side of the tempered mode."""
    x = data.column(0)
    if model.name == "normal_location":
        mean, var = model.tempered_posterior(t, data.n, x.sum())
        sd = math.sqrt(var)
        return mean - width * sd, mean + width * sd
    k = model.trials
    p = min(max(x.mean() / k, 0.5 / (data.n * k)), 1 - 0.5 / (data.n * k))
    centre = math.log(p / (1 - p))
    sd = 1.0 / math.sqrt(t * data.n * k * p * (1 - p))
    return centre - width * sd, centre + width * sd


def render(write_fn, *args) -> str:
    buf = io.StringIO()
    write_fn(*args, buf)
    return buf.getvalue()

import csv
import io

import pytest
import yaml
from click.testing import CliRunner

from rlct.cli import EXIT_CONFIG, EXIT_NUMERIC, main
from rlct.sbic import MonotonicityWarning
from rlct.workflows import WORKERS_ENV, ConfigError, load_config, resolve_config

SHORT_MCMC = {"n_iters": 2000, "burn_in": 500, "thin": 2}


@pytest.fixture
def runner():
    return CliRunner()


def _write(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data) if isinstance(data, dict) else data)
    return str(path)


def _body(text):
    return [row for row in csv.reader(io.StringIO(text)) if row and not row[0].startswith("#")]


def _estimate_config(tmp_path, **extra):
    cfg = {"model": {"family": "gmm2", "fit": 2, "truth": 1}, "plan": {"n_s": 100, "m": 2}, "mcmc": SHORT_MCMC}
    cfg.update(extra)
    return _write(tmp_path, "est.yaml", cfg)


def _select_config(tmp_path, **extra):
    cfg = {"rlct_source": "reference", "wbic": False, "em_restarts": 3, "mcmc": SHORT_MCMC}
    cfg.update(extra)
    return _write(tmp_path, "sel.yaml", cfg)


# ---------------------------------------------------------------------------
# configuration handling
# ---------------------------------------------------------------------------


def test_unknown_key_is_a_config_error(runner, tmp_path):
    path = _write(tmp_path, "bad.yaml", {"plan": {"n_s": 100, "mm": 2}})
    res = runner.invoke(main, ["estimate-rlct", "--config", path])
    assert res.exit_code == EXIT_CONFIG
    assert "plan.mm" in res.output


def test_invalid_model_pair_is_rejected_before_compute(runner, tmp_path):
    path = _write(tmp_path, "pair.yaml", {"model": {"family": "binomial", "fit": 1, "truth": 2}})
    res = runner.invoke(main, ["estimate-rlct", "--config", path])
    assert res.exit_code == EXIT_CONFIG


@pytest.mark.parametrize(
    "text",
    ["plan: [1, 2\n", "- just\n- a list\n", "mcmc: {thin: 0}\n", "plan: {m: 0}\n"],
    ids=["syntax", "not-mapping", "bad-mcmc", "bad-plan"],
)
def test_malformed_configs_exit_with_config_code(runner, tmp_path, text):
    path = _write(tmp_path, "cfg.yaml", text)
    assert runner.invoke(main, ["estimate-rlct", "--config", path]).exit_code == EXIT_CONFIG


def test_missing_config_file(runner, tmp_path):
    res = runner.invoke(main, ["estimate-rlct", "--config", str(tmp_path / "nope.yaml")])
    assert res.exit_code == EXIT_CONFIG


def test_bad_scale_and_workers(runner, tmp_path):
    assert runner.invoke(main, ["replicate", "table1", "--scale", "0"]).exit_code == EXIT_CONFIG
    path = _estimate_config(tmp_path)
    assert runner.invoke(main, ["estimate-rlct", "--config", path, "--workers", "0"]).exit_code == EXIT_CONFIG


def test_resolve_config_fills_defaults_and_keeps_overrides():
    cfg = resolve_config("estimate-rlct", {"plan": {"m": 3}})
    assert cfg["plan"] == {"n_s": 1000, "m": 3, "c": 1.0}
    assert cfg["mcmc"]["conditional_sweeps"] is True
    with pytest.raises(ConfigError):
        resolve_config("select", {"command": "sample"})


# ---------------------------------------------------------------------------
# estimate-rlct
# ---------------------------------------------------------------------------


def test_estimate_writes_header_and_rows(runner, tmp_path):
    out = tmp_path / "a.csv"
    res = runner.invoke(main, ["estimate-rlct", "--config", _estimate_config(tmp_path), "--seed", "5",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    text = out.read_text()
    assert text.startswith("# rlct estimate-rlct")
    assert load_config(str(out))["seed"] == 5
    rows = _body(text)
    assert rows[0] == ["model_i", "truth_j", "n_s", "m", "c", "lambda_hat", "std_error", "warnings"]
    assert rows[1][:5] == ["2", "1", "100", "2", "1.0"] and float(rows[1][5]) > 0


def test_rerun_from_header_is_byte_identical(runner, tmp_path):
    first, second = tmp_path / "first.csv", tmp_path / "second.csv"
    assert runner.invoke(main, ["estimate-rlct", "--config", _estimate_config(tmp_path), "--out", str(first)]).exit_code == 0
    assert runner.invoke(main, ["estimate-rlct", "--config", str(first), "--out", str(second)]).exit_code == 0
    assert first.read_bytes() == second.read_bytes()


def test_single_replicate_rerun_is_byte_identical(runner, tmp_path):
    path = _estimate_config(tmp_path, plan={"n_s": 100, "m": 1})
    a = runner.invoke(main, ["estimate-rlct", "--config", path, "--seed", "9"])
    b = runner.invoke(main, ["estimate-rlct", "--config", path, "--seed", "9"])
    assert a.exit_code == 0 and a.output == b.output
    assert _body(a.output)[1][6] == "nan"


def test_worker_count_does_not_change_output(runner, tmp_path, monkeypatch):
    path = _estimate_config(tmp_path)
    one = runner.invoke(main, ["estimate-rlct", "--config", path, "--workers", "1"])
    two = runner.invoke(main, ["estimate-rlct", "--config", path, "--workers", "2"])
    monkeypatch.setenv(WORKERS_ENV, "2")
    env = runner.invoke(main, ["estimate-rlct", "--config", path])
    assert one.exit_code == 0 and one.output == two.output == env.output


def test_repetitions_give_one_row_each(runner, tmp_path):
    res = runner.invoke(main, ["estimate-rlct", "--config", _estimate_config(tmp_path, replications=3)])
    assert res.exit_code == 0
    rows = _body(res.output)[1:]
    assert len(rows) == 3 and len({r[5] for r in rows}) == 3


# ---------------------------------------------------------------------------
# select
# ---------------------------------------------------------------------------


def test_select_on_fixture_with_reference_rlcts(runner, tmp_path):
    out = tmp_path / "sel.csv"
    res = runner.invoke(main, ["select", "--fixture", "cormorant", "--config", _select_config(tmp_path),
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    assert "WsBIC" in res.output and "best: 3" in res.output
    rows = _body(out.read_text())
    assert rows[0] == ["criterion", "model", "log_score", "posterior_prob"]
    probs = {}
    for crit, model, _, prob in rows[1:]:
        probs.setdefault(crit, {})[int(model)] = float(prob)
    assert max(probs["WsBIC"], key=probs["WsBIC"].get) == 3
    assert max(probs["BIC"], key=probs["BIC"].get) == 2
    for values in probs.values():
        assert sum(values.values()) == pytest.approx(1.0, abs=1e-10)


def test_select_single_candidate_has_probability_one(runner, tmp_path):
    res = runner.invoke(main, ["select", "--fixture", "cormorant", "--config", _select_config(tmp_path, candidates=[2])])
    assert res.exit_code == 0, res.output
    for row in _body(res.stdout)[1:]:
        assert float(row[3]) == 1.0


def test_select_reads_counts_file(runner, tmp_path):
    counts = _write(tmp_path, "counts.txt", "\n".join(["3", "5", "4", "12", "14", "13", "3"]) + "\n")
    res = runner.invoke(main, ["select", "--data", counts, "--config", _select_config(tmp_path, candidates=[1, 2])])
    assert res.exit_code == 0, res.output


def test_select_needs_exactly_one_data_source(runner, tmp_path):
    assert runner.invoke(main, ["select", "--config", _select_config(tmp_path)]).exit_code == EXIT_CONFIG


def test_select_rejects_counts_above_trials(runner, tmp_path):
    counts = _write(tmp_path, "counts.txt", "3\n40\n")
    res = runner.invoke(main, ["select", "--data", counts, "--config", _select_config(tmp_path)])
    assert res.exit_code == EXIT_CONFIG


def _rlct_table(tmp_path, pairs):
    lines = ["model_i,truth_j,n_s,m,c,lambda_hat,std_error,warnings"]
    lines += [f"{i},{j},3000,25,1.0,{lam},0.01," for (i, j), lam in pairs.items()]
    return _write(tmp_path, "rlct.csv", "\n".join(lines) + "\n")


def test_select_lists_missing_table_pairs(runner, tmp_path):
    table = _rlct_table(tmp_path, {(1, 1): 0.5, (2, 1): 0.8, (2, 2): 1.4})
    res = runner.invoke(main, ["select", "--fixture", "cormorant", "--config", _select_config(tmp_path, candidates=[1, 2, 3]),
                               "--rlct-table", table])
    assert res.exit_code == EXIT_CONFIG
    assert "(3, 1), (3, 2), (3, 3)" in res.output


def test_strict_monotonicity_is_a_numeric_failure(runner, tmp_path):
    table = _rlct_table(tmp_path, {(1, 1): 0.5, (2, 1): 0.9, (2, 2): 1.4, (3, 1): 0.8, (3, 2): 1.6, (3, 3): 2.0})
    args = ["select", "--fixture", "cormorant", "--config", _select_config(tmp_path, candidates=[1, 2, 3]),
            "--rlct-table", table]
    with pytest.warns(MonotonicityWarning):
        lenient = runner.invoke(main, args)
    assert lenient.exit_code == 0
    strict = runner.invoke(main, args + ["--strict-monotonicity"])
    assert strict.exit_code == EXIT_NUMERIC
    assert "lambda(2,1) > lambda(3,1)" in strict.output


# ---------------------------------------------------------------------------
# replicate, sample, oracle
# ---------------------------------------------------------------------------


def test_replicate_fig4_with_reference_table(runner, tmp_path):
    path = _write(tmp_path, "fig4.yaml", {"mcmc": SHORT_MCMC, "settings": {"em_restarts": 3}})
    res = runner.invoke(main, ["replicate", "fig4", "--config", path])
    assert res.exit_code == 0, res.output
    assert res.output.startswith("# rlct replicate")
    rows = _body(res.output)
    assert rows[0] == ["criterion", "model", "log_score", "posterior_prob"]
    assert {r[0] for r in rows[1:]} == {"BIC", "sBIC_bar_1", "sBIC_bar_0.5", "WBIC", "WsBIC"}


def test_replicate_rejects_unknown_setting(runner, tmp_path):
    path = _write(tmp_path, "t.yaml", {"settings": {"sims": 3, "bogus": 1}})
    res = runner.invoke(main, ["replicate", "fig3", "--config", path])
    assert res.exit_code == EXIT_CONFIG and "settings.bogus" in res.output


def test_sample_dumps_chain(runner, tmp_path):
    path = _write(tmp_path, "s.yaml", {"model": {"family": "binomial", "fit": 1, "truth": 1}, "mcmc": SHORT_MCMC})
    res = runner.invoke(main, ["sample", "--fixture", "cormorant", "--config", path])
    assert res.exit_code == 0, res.output
    rows = _body(res.output)
    assert rows[0][:2] == ["iter", "loglik"]
    assert len(rows) == 1 + (2000 - 500) // 2


@pytest.mark.parametrize("args", [[], ["--fixture", "cormorant"]])
def test_oracle_agrees_with_mcmc(runner, tmp_path, args):
    family = {"family": "binomial"} if args else {}
    path = _write(tmp_path, "o.yaml", {"model": family, "mcmc": {"n_iters": 20000, "burn_in": 2000, "thin": 2}})
    res = runner.invoke(main, ["oracle", "--config", path] + args)
    assert res.exit_code == 0, res.output
    rows = {r[0]: r for r in _body(res.output)[1:]}
    for name in ("mean_loglik", "var_loglik"):
        assert abs(float(rows[name][5])) < 4
    if not args:
        assert float(rows["mean_loglik"][1]) == pytest.approx(float(rows["mean_loglik"][2]), abs=1e-8)


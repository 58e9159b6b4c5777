import json

import numpy as np
import pandas as pd
import pytest

from errors import ConfigError
from main import load_config, main
from model_factory import get_model
from presets import apply_preset, deep_merge
from samplers import proposal_dimension, run_chain
from models import simulate

SMALL_CHAIN = """
seed = 5

[model]
name = "theta_logistic"

[data]
T = 15

[chain]
n_iters = 25
path_thin = 5
init_theta = [0.3, 1.0, 500.0]

[chain.filter]
n_particles = 20

[chain.proposal]
kind = "random_walk"
rw_variances = [0.001, 0.001, 25.0]
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text(SMALL_CHAIN)
    return path


def test_simulate_writes_dataset_and_manifest(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--seed", "3", "--out", str(out)]) == 0
    data = pd.read_csv(out / "data.csv")
    assert list(data.columns) == ["n", "x_true", "y"]
    assert len(data) == 100
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["command"] == "simulate"
    assert (out / "run_log.jsonl").exists()


def test_chain_output_is_deterministic(tmp_path, small_config):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["pmmh", "--config", str(small_config), "--out", str(first)]) == 0
    assert main(["pmmh", "--config", str(small_config), "--out", str(second)]) == 0
    assert (first / "chain.csv").read_bytes() == (second / "chain.csv").read_bytes()
    frame = pd.read_csv(first / "chain.csv")
    assert len(frame) == 25
    assert {"iter", "accepted", "log_ml", "log_prior", "theta_1", "theta_2", "theta_3", "path_1"} <= set(frame.columns)
    summary = json.loads((first / "summary.json").read_text())
    assert 0.0 <= summary["acceptance_rate"] <= 1.0
    manifest = json.loads((first / "manifest.json").read_text())
    assert manifest["config"]["chain"]["algorithm"] == "pmmh"


def test_run_log_captures_structured_records(tmp_path, small_config):
    out = tmp_path / "run"
    assert main(["pg", "--config", str(small_config), "--out", str(out), "--log-level", "DEBUG"]) == 0
    records = [json.loads(line) for line in (out / "run_log.jsonl").read_text().splitlines()]
    assert any(r["message"].startswith("Starting pg chain") for r in records)
    iterations = [r for r in records if "fields" in r and "iteration" in r["fields"]]
    assert len(iterations) == 25
    assert all(r["fields"]["proposal_dim"] == 18 for r in iterations)


def test_multiple_chains_and_trace(tmp_path, small_config):
    out = tmp_path / "multi"
    assert main(["hybrid", "--config", str(small_config), "--out", str(out), "--chains", "2", "--trace"]) == 0
    assert (out / "chain_1.csv").exists() and (out / "chain_2.csv").exists()
    trace = pd.read_csv(out / "trace_1.csv")
    assert list(trace.columns) == ["n", "k", "x", "weight", "log_weight", "ancestor"]
    summary = json.loads((out / "summary.json").read_text())
    assert [c["seed"] for c in summary["chains"]] == [5, 6]


def test_abc_pmmh_runs(tmp_path, small_config):
    out = tmp_path / "abc"
    assert main(["abc-pmmh", "--config", str(small_config), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["chain"]["filter"]["abc"]["epsilon"] == 0.2


def test_chain_on_a_saved_dataset(tmp_path, small_config):
    sim = tmp_path / "sim"
    assert main(["simulate", "--config", str(small_config), "--out", str(sim)]) == 0
    out = tmp_path / "fit"
    assert main(["pmmh", "--config", str(small_config), "--data", str(sim / "data.csv"), "--out", str(out)]) == 0
    assert len(pd.read_csv(out / "data.csv")) == 15


def test_diagnose_existing_chain(tmp_path, small_config, capsys):
    run = tmp_path / "run"
    assert main(["pmmh", "--config", str(small_config), "--out", str(run)]) == 0
    capsys.readouterr()
    out = tmp_path / "diag"
    assert main(["diagnose", str(run / "chain.csv"), "--data", str(run / "data.csv"), "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["iterations"] == 25
    diagnostics = json.loads((out / "diagnostics.json").read_text())
    assert "mmse_rmse" in diagnostics
    assert len(pd.read_csv(out / "mmse_path.csv")) == 15


def test_unknown_key_is_a_validation_error(tmp_path, capsys):
    path = tmp_path / "typo.toml"
    path.write_text("[chain]\nn_iter = 10\n")
    assert main(["pmmh", "--config", str(path), "--out", str(tmp_path / "x")]) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["error"] == "config_error"
    assert error["field"] == "chain.n_iter"


def test_invalid_value_names_the_field(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text("[chain.filter]\nn_particles = 0\n")
    assert main(["pmmh", "--config", str(path), "--out", str(tmp_path / "x")]) == 2
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert error["field"] == "chain.filter.n_particles"


def test_missing_config_file(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "x")]) == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["field"] == "--config"


def test_abc_with_particle_gibbs_is_rejected(tmp_path):
    path = tmp_path / "abc.toml"
    path.write_text("[chain.filter.abc]\nepsilon = 0.5\n")
    with pytest.raises(ConfigError):
        load_config(str(path), None, "pg")
    assert load_config(str(path), None, "pmmh").chain.filter.abc.epsilon == 0.5


def test_fig2_preset_expands():
    config = load_config(None, "fig2", "pmmh")
    assert config.data.T == 100
    assert config.chain.filter.n_particles == 200
    assert config.chain.n_iters == 100000
    assert config.chain.proposal.am_start == 5000
    model = get_model(config.model)
    assert proposal_dimension(model, np.zeros(config.data.T)) == 103


def test_config_file_overrides_the_preset():
    merged = apply_preset("fig2", {"chain": {"n_iters": 10}})
    assert merged["chain"]["n_iters"] == 10
    assert merged["chain"]["filter"]["n_particles"] == 200
    assert deep_merge({"a": {"b": 1, "c": 2}}, {"a": {"c": 3}}) == {"a": {"b": 1, "c": 3}}


@pytest.mark.slow
def test_unlikely_initial_path_converges():
    config = load_config(None, "fig3", "pmmh")
    model = get_model(config.model)
    x, y = simulate(model, model.default_theta(), config.data.T, config.data.seed)
    out = run_chain(config.chain.algorithm, model, y, config.chain, seed=1, true_path=x)
    assert out.rmse_checkpoints[20000] <= 0.4
    assert out.rmse_checkpoints[10] < out.initial_rmse

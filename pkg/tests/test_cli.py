import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from run_certificate import cli
from src.candidate import CertificateHyper
from src.checkpoint import load_checkpoint, save_checkpoint
from tests.conftest import make_gnn

SCALAR = """
topology:
  kind: edges
  n_nodes: 1
  edges: []
system:
  kind: scalar
  a: 0.5
  state_low: -1.0
  state_high: 1.0
candidate:
  kind: {kind}
gnn:
  graph_widths: [3]
  mlp_widths: [3]
hyper:
  lower: 1.0
  upper: 1.0
  decay: 0.4
  margin: -0.01
verification:
  epsilon_x: {epsilon}
  diagonal_exclusion: 0.5
simulation:
  pairs: 2
  horizon: 3
"""

TEMPERATURE = """
topology:
  kind: {topology}
  n_nodes: 3
system:
  kind: {system}
  state_low: -1.0
  state_high: 1.0
gnn:
  graph_widths: [4]
  mlp_widths: [4]
hyper:
  lower: 0.01
  upper: auto
  decay: 0.005
  margin: -0.01
training:
  samples: 20
  epochs: 3
  learning_rate: 0.01
  margin_epsilon: 0.05
"""


@pytest.fixture
def runner():
    return CliRunner()


def _invoke(runner, config, out, *args):
    return runner.invoke(cli, ["--config", str(config), "--out", str(out), "--threads", "1", *args])


def test_missing_system_section_exits_64(runner, write_config, tmp_path):
    config = write_config("topology:\n  n_nodes: 3\n")
    assert _invoke(runner, config, tmp_path / "out", "verify").exit_code == 64


def test_missing_config_flag_exits_64(runner):
    assert runner.invoke(cli, ["verify"]).exit_code == 64


def test_analytic_verify_passes(runner, write_config, tmp_path):
    config = write_config(SCALAR.format(kind="analytic", epsilon=0.005))
    out = tmp_path / "out"
    result = _invoke(runner, config, out, "verify")
    assert result.exit_code == 0
    summary = json.loads((out / "verify_report.json").read_text())
    assert summary["verdict"] == "PASS"
    assert summary["classes"][0]["passed"]
    assert summary["composition"]["spread"] == 1.0
    assert 'verdict: "PASS"' in (out / "verify_report.txt").read_text()
    assert runner.invoke(cli, ["report", str(out / "verify_report.json")]).exit_code == 0


def test_budget_overflow_exits_3(runner, write_config, tmp_path):
    config = write_config(SCALAR.format(kind="analytic", epsilon=0.005))
    assert _invoke(runner, config, tmp_path / "out", "verify", "--budget", "1").exit_code == 3


def test_zero_weight_checkpoint_fails_verification(runner, write_config, tmp_path):
    config = write_config(SCALAR.format(kind="gnn", epsilon=0.05))
    hyper = CertificateHyper(lower=1.0, upper=1.0, decay=0.4, margin=-0.01)
    checkpoint = save_checkpoint(
        tmp_path / "zero.json", make_gnn(graph_widths=(3,), mlp_widths=(3,), hyper=hyper, zero=True)
    )
    out = tmp_path / "out"
    result = _invoke(runner, config, out, "verify", "--checkpoint", str(checkpoint))
    assert result.exit_code == 2
    summary = json.loads((out / "verify_report.json").read_text())
    assert summary["verdict"] == "FAIL"
    assert summary["classes"][0]["failing_condition"] == 1
    assert summary["classes"][0]["witnesses"][0] is not None


def test_gnn_verify_without_checkpoint_exits_64(runner, write_config, tmp_path):
    config = write_config(SCALAR.format(kind="gnn", epsilon=0.05))
    assert _invoke(runner, config, tmp_path / "out", "verify").exit_code == 64


def test_checkpoint_dimension_mismatch_exits_65(runner, write_config, tmp_path):
    config = write_config(TEMPERATURE.format(topology="ring_directed", system="nonlinear2d"))
    checkpoint = save_checkpoint(tmp_path / "ck.json", make_gnn(graph_widths=(4,), mlp_widths=(4,)))
    assert _invoke(runner, config, tmp_path / "out", "verify", "--checkpoint", str(checkpoint)).exit_code == 65


def test_simulate_writes_tidy_csvs(runner, write_config, tmp_path):
    config = write_config(SCALAR.format(kind="analytic", epsilon=0.05))
    out = tmp_path / "out"
    assert _invoke(runner, config, out, "simulate").exit_code == 0
    trajectories = pd.read_csv(out / "trajectories.csv")
    lyapunov = pd.read_csv(out / "lyapunov.csv")
    assert list(trajectories.columns) == ["k", "traj_id", "node", "dim", "value"]
    assert len(trajectories) == 4 * 4
    assert sorted(trajectories["traj_id"].unique()) == [0, 1, 2, 3]
    assert list(lyapunov.columns) == ["k", "pair_id", "V"]
    assert len(lyapunov) == 4 * 2
    for _, rows in lyapunov.groupby("pair_id"):
        assert rows.sort_values("k")["V"].diff().dropna().le(1e-12).all()


def test_simulate_without_pairs_writes_headers_only(runner, write_config, tmp_path):
    config = write_config(SCALAR.format(kind="analytic", epsilon=0.05))
    out = tmp_path / "out"
    assert _invoke(runner, config, out, "simulate", "--pairs", "0").exit_code == 0
    assert (out / "trajectories.csv").read_text().strip() == "k,traj_id,node,dim,value"
    assert (out / "lyapunov.csv").read_text().strip() == "k,pair_id,V"


def test_train_is_reproducible(runner, write_config, tmp_path):
    config = write_config(TEMPERATURE.format(topology="ring_bidirectional", system="temperature"))
    first, second = tmp_path / "first", tmp_path / "second"
    code_a = _invoke(runner, config, first, "train").exit_code
    code_b = _invoke(runner, config, second, "train").exit_code
    assert code_a in (0, 1)
    assert code_a == code_b
    assert (first / "loss.csv").read_bytes() == (second / "loss.csv").read_bytes()
    assert (first / "checkpoint.json").read_bytes() == (second / "checkpoint.json").read_bytes()
    report = json.loads((first / "train_report.json").read_text())
    assert report["stop_reason"] in ("epoch_cap", "margin", "loss_threshold")
    assert load_checkpoint(first / "checkpoint.json").topology["n_nodes"] == 3
    resumed = _invoke(runner, config, tmp_path / "resumed", "train", "--init", str(first / "checkpoint.json"))
    assert resumed.exit_code in (0, 1)


def test_transfer_binds_to_a_larger_ring(runner, write_config, tmp_path):
    config = write_config(TEMPERATURE.format(topology="ring_bidirectional", system="temperature"))
    topology = {"kind": "ring_bidirectional", "n_nodes": 10, "edges": None}
    checkpoint = save_checkpoint(tmp_path / "ck.json", make_gnn(graph_widths=(4,), mlp_widths=(4,)), topology)
    out = tmp_path / "out"
    assert _invoke(runner, config, out, "transfer", "--checkpoint", str(checkpoint), "--new-n", "20").exit_code == 0
    assert load_checkpoint(out / "checkpoint.json").topology["n_nodes"] == 20


def test_transfer_across_subsystem_dimensions_exits_65(runner, write_config, tmp_path):
    config = write_config(TEMPERATURE.format(topology="ring_directed", system="nonlinear2d"))
    topology = {"kind": "ring_bidirectional", "n_nodes": 5, "edges": None}
    checkpoint = save_checkpoint(tmp_path / "ck.json", make_gnn(graph_widths=(4,), mlp_widths=(4,)), topology)
    result = _invoke(runner, config, tmp_path / "out", "transfer", "--checkpoint", str(checkpoint), "--new-n", "8")
    assert result.exit_code == 65


def test_unreadable_report_exits_65(runner, tmp_path):
    assert runner.invoke(cli, ["report", str(tmp_path / "none.json")]).exit_code == 65


EXTERNAL = """
topology:
  kind: ring_bidirectional
  n_nodes: 3
system:
  kind: external
  step_fn: tests.test_cli:{step_fn}
  state_dim: 1
  dyn_lipschitz: 0.5
  state_low: -1.0
  state_high: 1.0
gnn:
  graph_widths: [3]
  mlp_widths: [3]
hyper:
  lower: 0.01
  upper: 1.0
  decay: 0.005
  margin: -0.01
training:
  samples: 10
  epochs: 2
"""


def nan_step(x, w):
    return np.full_like(x, np.nan)


def dropped_node_step(x, w):
    return 0.5 * x[..., 1:, :]


def test_per_class_list_length_mismatch_exits_64(runner, write_config, tmp_path):
    text = SCALAR.format(kind="analytic", epsilon=0.05).replace("lower: 1.0", "lower: [1.0, 1.0]")
    config = write_config(text)
    assert _invoke(runner, config, tmp_path / "out", "verify").exit_code == 64


def test_non_finite_external_step_exits_3(runner, write_config, tmp_path):
    config = write_config(EXTERNAL.format(step_fn="nan_step"))
    assert _invoke(runner, config, tmp_path / "out", "train").exit_code == 3


def test_wrong_shape_external_step_exits_64(runner, write_config, tmp_path):
    config = write_config(EXTERNAL.format(step_fn="dropped_node_step"))
    assert _invoke(runner, config, tmp_path / "out", "train").exit_code == 64

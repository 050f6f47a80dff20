import math

import numpy as np
import pytest

from src.candidate import (
    AnalyticCandidate,
    CertificateHyper,
    GnnCandidate,
    auto_upper_bound,
    lyapunov_eval,
    power_lipschitz,
)
from src.exceptions import ConfigError
from src.gnn import GnnConfig, capped_embedding_lipschitz, init_params
from src.system import builtin_scalar
from src.topology import ring_bidirectional
from src.verifier import condition_lipschitz
from tests.conftest import make_gnn


def test_hyper_broadcasts_scalars():
    hyper = CertificateHyper(lower=0.1, upper=(1.0, 2.0), decay=0.01)
    assert hyper.n_classes == 2
    assert hyper.for_class(1).alpha_bar == 2.0
    assert hyper.for_class(1).alpha == 0.1
    hyper.check_classes(2)
    with pytest.raises(ConfigError):
        hyper.check_classes(3)
    assert CertificateHyper.from_dict(hyper.to_dict()) == hyper


@pytest.mark.parametrize(
    "kwargs",
    [
        {"lower": 2.0, "upper": 1.0},
        {"lower": 0.0},
        {"decay": 0.0},
        {"margin": 0.0},
        {"input_gain": -1.0},
        {"degree": 0},
        {"loss_weights": (1.0, 0.0, 1.0)},
        {"lower": (0.1, 0.2), "upper": (1.0, 1.0, 1.0)},
    ],
)
def test_hyper_rejects_invalid_values(kwargs):
    with pytest.raises(ValueError):
        CertificateHyper(**kwargs)


def test_remap_follows_the_class_map():
    hyper = CertificateHyper(lower=(0.1, 0.2), upper=(1.0, 2.0), decay=(0.01, 0.02), margin=(-0.1, -0.2))
    remapped = hyper.remap([1, 1, 0])
    assert remapped.lower == (0.2, 0.2, 0.1)
    assert remapped.margin == (-0.2, -0.2, -0.1)


def test_power_lipschitz():
    assert power_lipschitz(1, 5.0) == pytest.approx(math.sqrt(2.0))
    assert power_lipschitz(2, 3.0) == pytest.approx(2 * 3.0 * math.sqrt(2.0))
    assert power_lipschitz(2, 3.0, scale=0.5) == pytest.approx(2 * 1.5 * 0.5 * math.sqrt(2.0))
    assert power_lipschitz(3, 1.0, scale=0.0) == 0.0


@pytest.mark.parametrize("kind", ["gnn", "analytic"])
def test_total_is_the_sum_of_node_values(kind, hyper):
    rng = np.random.default_rng(0)
    graph = ring_bidirectional(6)
    cand = make_gnn(hyper=hyper) if kind == "gnn" else AnalyticCandidate(hyper, 1)
    x = rng.uniform(-1.0, 1.0, (1000, 6, 1))
    xh = rng.uniform(-1.0, 1.0, (1000, 6, 1))
    per_node, total = lyapunov_eval(cand, graph, x, xh)
    assert per_node.shape == (1000, 6)
    np.testing.assert_allclose(total, per_node.sum(axis=1), rtol=1e-12)
    assert np.all(per_node >= 0.0)
    single_nodes, single_total = lyapunov_eval(cand, graph, x[0], xh[0])
    assert isinstance(single_total, float)
    np.testing.assert_allclose(single_nodes, per_node[0])


def test_values_vanish_on_the_diagonal(gnn_candidate):
    x = np.random.default_rng(1).uniform(-1.0, 1.0, (5, 5, 1))
    np.testing.assert_array_equal(gnn_candidate.evaluate(ring_bidirectional(5), x, x), 0.0)


def test_analytic_candidate_is_the_local_norm(harness_hyper):
    graph = ring_bidirectional(4)
    cand = AnalyticCandidate(harness_hyper, state_dim=2)
    x = np.arange(8.0).reshape(4, 2)
    xh = np.zeros((4, 2))
    expected = [np.linalg.norm(x[[0, 1, 3]]), np.linalg.norm(x[[1, 0, 2]]), np.linalg.norm(x[[2, 1, 3]]),
                np.linalg.norm(x[[3, 0, 2]])]
    np.testing.assert_allclose(cand.evaluate(graph, x, xh), expected)


def test_gnn_degree_must_match_hyper():
    config = GnnConfig(state_dim=1, graph_widths=(2,), mlp_widths=(2,), degree=2)
    with pytest.raises(ValueError):
        GnnCandidate(init_params(config, np.random.default_rng(0)), config, CertificateHyper())


def test_zero_weight_lower_condition_constant():
    """Zero weights make L_V vanish, leaving l1 = alpha * sqrt(2) for degree 1."""
    graph = ring_bidirectional(5)
    hyper = CertificateHyper(lower=1.0, upper=1.0, decay=0.4, margin=-0.01)
    cand = make_gnn(hyper=hyper, zero=True)
    oracle = builtin_scalar(a=0.5, graph=graph)
    lip = condition_lipschitz(cand, graph, oracle, hyper)
    assert lip.l1 == pytest.approx(math.sqrt(2.0))
    assert lip.l2 == pytest.approx(math.sqrt(2.0))


def test_analytic_condition_constants(harness_hyper, scalar_oracle):
    graph = scalar_oracle.graph
    cand = AnalyticCandidate(harness_hyper, 1)
    lip = condition_lipschitz(cand, graph, scalar_oracle, harness_hyper)
    assert lip.l1 == 0.0
    assert lip.l2 == 0.0
    assert lip.l3 == pytest.approx(0.5 * math.sqrt(2.0) + 0.6 * math.sqrt(2.0))


def test_auto_upper_bound(hyper):
    graph = ring_bidirectional(5)
    cand = make_gnn(hyper=hyper)
    assert auto_upper_bound(cand, graph, None) == pytest.approx(cand.embedding_lipschitz(graph))
    assert auto_upper_bound(cand, graph, 1.5) == pytest.approx(capped_embedding_lipschitz(cand.config, graph, 1.5))
    assert auto_upper_bound(AnalyticCandidate(hyper, 1), graph, 1.5) == 1.0


def test_upper_bound_holds_with_auto_coefficient(hyper):
    rng = np.random.default_rng(2)
    graph = ring_bidirectional(5)
    cand = make_gnn(hyper=hyper)
    alpha_bar = auto_upper_bound(cand, graph, None)
    x = rng.uniform(-1.0, 1.0, (2000, 5, 1))
    xh = rng.uniform(-1.0, 1.0, (2000, 5, 1))
    values = cand.evaluate(graph, x, xh)
    local = np.sqrt(np.einsum("ij,bj->bi", graph.adjacency.astype(float), np.sum((x - xh) ** 2, axis=-1)))
    assert np.all(values <= alpha_bar * local * (1.0 + 1e-9))

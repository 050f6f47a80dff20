import numpy as np
import pytest

from src.candidate import AnalyticCandidate, CertificateHyper
from src.exceptions import (
    ConfigError,
    DegenerateDomainWarning,
    TrainingDivergedError,
    TransferError,
    TransferMismatchWarning,
)
from src.gnn import forward_with_cache
from src.system import builtin_nonlinear2d, builtin_scalar, builtin_temperature
from src.topology import closure, ring_bidirectional, ring_directed
from src.training import (
    LossContext,
    OptimizerFactory,
    TrainingConfig,
    TrainingDataset,
    loss_terms,
    sample_dataset,
    total_loss,
    train,
    transfer,
    transfer_schedule,
)
from tests.conftest import make_gnn


def _ring_oracle(n_nodes, state_dim):
    if n_nodes == 2:
        graph = ring_directed(2)
    else:
        graph = ring_bidirectional(n_nodes)
    if state_dim == 1:
        return builtin_temperature(state_low=-1.0, state_high=1.0, graph=graph)
    return builtin_nonlinear2d(state_low=-1.0, state_high=1.0, graph=graph)


def _far_from_kinks(cand, ctx, evaluation, tol=1e-4):
    if np.min(np.abs(evaluation.args)) < tol:
        return False
    batches = (ctx.dataset.x, ctx.dataset.xh) + tuple(ctx.next_full)
    for states in batches:
        _, cache = forward_with_cache(cand.params, cand.config, ctx.graph, states)
        for pre in cache.graph_pre + cache.mlp_pre[:-1]:
            if np.min(np.abs(pre)) < tol:
                return False
    return True


def test_sample_dataset_is_deterministic(desk_oracle):
    a = sample_dataset(desk_oracle, 50, seed=3)
    b = sample_dataset(desk_oracle, 50, seed=3)
    assert a.x.shape == (50, 5, 1)
    assert a.w.shape == (50, 5, 0)
    np.testing.assert_array_equal(a.x, b.x)
    np.testing.assert_array_equal(a.xh, b.xh)
    assert not np.any(np.all(a.x == a.xh, axis=(1, 2)))
    assert np.all(desk_oracle.state_box.contains(a.x))


def test_degenerate_box_warns():
    oracle = builtin_scalar(state_low=0.0, state_high=0.0)
    with pytest.warns(DegenerateDomainWarning):
        dataset = sample_dataset(oracle, 3, seed=0)
    np.testing.assert_array_equal(dataset.x, dataset.xh)


def test_loss_terms_of_a_single_sample(scalar_oracle):
    hyper = CertificateHyper(lower=0.01, upper=1.0, decay=0.005, margin=-0.0003)
    cand = AnalyticCandidate(hyper, 1)
    sample = TrainingDataset(
        x=np.array([[[0.8]]]), xh=np.array([[[0.2]]]), w=np.zeros((1, 1, 0)), wh=np.zeros((1, 1, 0)), seed=0
    )
    l1, l2, l3 = loss_terms(cand, scalar_oracle.graph, scalar_oracle, sample)
    assert l1 == 0.0
    assert l2 == pytest.approx(0.0003)
    assert l3 == 0.0


def test_total_loss_is_nonnegative(desk_oracle, hyper):
    cand = make_gnn(hyper=hyper)
    dataset = sample_dataset(desk_oracle, 64, seed=1)
    ctx = LossContext(cand, desk_oracle.graph, desk_oracle, dataset)
    evaluation = ctx.evaluate(cand)
    assert evaluation.loss >= 0.0
    assert evaluation.loss == pytest.approx(total_loss(cand, desk_oracle.graph, desk_oracle, dataset))
    assert evaluation.loss == pytest.approx(sum(evaluation.terms))
    if evaluation.loss == 0.0:
        assert np.all(evaluation.args <= 0.0)
    np.testing.assert_allclose(evaluation.raw - evaluation.args, -0.001)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    checked, attempts = 0, 0
    while checked < 20:
        attempts += 1
        assert attempts < 200
        n_nodes = int(rng.integers(2, 4))
        state_dim = int(rng.integers(1, 3))
        degree = int(rng.integers(1, 3))
        graph_widths = tuple(int(w) for w in rng.integers(2, 7, size=int(rng.integers(1, 3))))
        mlp_widths = tuple(int(w) for w in rng.integers(2, 7, size=int(rng.integers(1, 3))))
        hyper = CertificateHyper(degree=degree, lower=0.01, upper=0.05, decay=0.005, margin=-0.001)
        oracle = _ring_oracle(n_nodes, state_dim)
        cand = make_gnn(state_dim, graph_widths, mlp_widths, hyper=hyper, seed=int(rng.integers(1 << 30)))
        dataset = sample_dataset(oracle, 4, seed=int(rng.integers(1 << 30)))
        ctx = LossContext(cand, oracle.graph, oracle, dataset)
        evaluation = ctx.evaluate(cand, with_grad=True)
        if not _far_from_kinks(cand, ctx, evaluation):
            continue
        grad = evaluation.grad.flat()
        theta = cand.params.flat()
        h = 1e-6
        numeric = np.empty_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            up = ctx.evaluate(cand.with_params(cand.params.from_flat(theta + e))).loss
            down = ctx.evaluate(cand.with_params(cand.params.from_flat(theta - e))).loss
            numeric[i] = (up - down) / (2 * h)
        assert np.linalg.norm(grad - numeric) <= 1e-5 * max(np.linalg.norm(numeric), 1e-2)
        checked += 1


def test_optimizer_factory():
    assert type(OptimizerFactory.get_optimizer("adam", 1e-3)).__name__ == "AdamStrategy"
    assert type(OptimizerFactory.get_optimizer("gd", 1e-3)).__name__ == "GradientDescentStrategy"
    with pytest.raises(ValueError):
        OptimizerFactory.get_optimizer("lbfgs", 1e-3)


def test_training_config_validation():
    with pytest.raises(ValueError):
        TrainingConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainingConfig(closure="three_hop")


def _small_run(oracle, hyper, cfg, seed=0):
    cand = make_gnn(graph_widths=(4,), mlp_widths=(4,), hyper=hyper, seed=seed)
    dataset = sample_dataset(oracle, 20, seed=seed)
    return train(cand, oracle.graph, oracle, dataset, cfg, seed=seed)


def test_train_is_deterministic():
    oracle = builtin_temperature(n_nodes=3, state_low=-1.0, state_high=1.0)
    hyper = CertificateHyper(lower=0.01, upper=0.05, decay=0.005, margin=-0.001)
    cfg = TrainingConfig(epochs=5, learning_rate=1e-2, log_every=1, batch_size=8)
    cand_a, report_a = _small_run(oracle, hyper, cfg)
    cand_b, report_b = _small_run(oracle, hyper, cfg)
    np.testing.assert_array_equal(cand_a.params.flat(), cand_b.params.flat())
    assert report_a.loss_frame().equals(report_b.loss_frame())
    assert report_a.stop_reason in ("epoch_cap", "margin", "loss_threshold")
    assert 1 <= len(report_a.history) <= 6
    assert len(report_a.margin_checks) == 1
    assert list(report_a.loss_frame().columns) == ["epoch", "loss", "l1", "l2", "l3", "worst_margin"]


def test_train_respects_spectral_cap(desk_oracle, hyper):
    cfg = TrainingConfig(epochs=3, learning_rate=0.5, spectral_cap=0.8, log_every=1)
    trained, _ = _small_run(desk_oracle, hyper, cfg)
    for mat in trained.params.matrices():
        assert np.linalg.svd(mat, compute_uv=False)[0] <= 0.8 * (1.0 + 1e-9)


def test_loss_threshold_stops_immediately(desk_oracle, hyper):
    cfg = TrainingConfig(epochs=50, loss_threshold=1e9)
    _, report = _small_run(desk_oracle, hyper, cfg)
    assert report.stop_reason == "loss_threshold"
    assert len(report.history) == 1


def test_small_gradient_step_does_not_increase_loss(desk_oracle):
    hyper = CertificateHyper(lower=0.01, upper=0.05, decay=0.005, margin=-0.001)
    cfg = TrainingConfig(epochs=1, learning_rate=1e-5, optimizer="gd", spectral_cap=None)
    _, report = _small_run(desk_oracle, hyper, cfg)
    assert report.history[1].loss <= report.history[0].loss + 1e-12


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_with_last_finite_parameters(desk_oracle):
    hyper = CertificateHyper(lower=0.01, upper=0.01, decay=0.005, margin=-0.001)
    cfg = TrainingConfig(epochs=5, learning_rate=1e300, optimizer="gd", spectral_cap=None)
    with pytest.raises(TrainingDivergedError) as info:
        _small_run(desk_oracle, hyper, cfg)
    assert info.value.epoch == 1
    assert info.value.last_params.is_finite()


def test_transfer_preserves_node_values_on_replicated_states(hyper):
    rng = np.random.default_rng(12)
    small, large = ring_bidirectional(10), ring_bidirectional(100)
    cand = make_gnn(hyper=hyper)
    result = transfer(cand, large, 1, old_graph=small)
    assert result.compatible
    assert result.class_map == [0]
    x = rng.uniform(-1.0, 1.0, (20, 10, 1))
    xh = rng.uniform(-1.0, 1.0, (20, 10, 1))
    small_values = cand.evaluate(small, x, xh)
    large_values = result.candidate.evaluate(large, np.tile(x, (1, 10, 1)), np.tile(xh, (1, 10, 1)))
    np.testing.assert_allclose(large_values, np.tile(small_values, (1, 10)), rtol=0, atol=1e-9)


def test_transfer_rejects_dimension_mismatch(hyper):
    with pytest.raises(TransferError):
        transfer(make_gnn(hyper=hyper), ring_directed(5), 2, old_graph=ring_bidirectional(5))


def test_transfer_flags_unmatched_neighborhoods(hyper):
    with pytest.warns(TransferMismatchWarning):
        result = transfer(make_gnn(hyper=hyper), ring_directed(8), 1, old_graph=ring_bidirectional(5))
    assert not result.compatible
    assert result.unmatched_classes == [0]


def test_transfer_schedule_chains_graphs(hyper):
    graphs = [ring_bidirectional(n) for n in (12, 24, 48)]
    results = transfer_schedule(make_gnn(hyper=hyper), graphs, 1, old_graph=ring_bidirectional(10))
    assert [r.graph.n_nodes for r in results] == [12, 24, 48]
    assert all(r.compatible for r in results)


def test_loss_context_local_norms_cover_each_one_hop_state(desk_oracle, hyper):
    cand = make_gnn(hyper=hyper)
    dataset = sample_dataset(desk_oracle, 32, seed=2)
    ctx = LossContext(cand, desk_oracle.graph, desk_oracle, dataset)
    diff = dataset.x - dataset.xh
    expected = np.stack(
        [np.linalg.norm(diff[:, list(closure(desk_oracle.graph, i, 1)), :].reshape(32, -1), axis=-1) for i in range(5)],
        axis=-1,
    )
    np.testing.assert_allclose(ctx.state_pow, expected, rtol=1e-12)
    np.testing.assert_array_equal(ctx.input_pow, np.zeros((32, 5)))


def test_transfer_rejects_per_class_lists_that_miss_the_training_partition():
    hyper = CertificateHyper(lower=(0.01, 0.02), upper=1.0, decay=0.005, margin=-0.001)
    cand = make_gnn(hyper=hyper)
    with pytest.raises(ConfigError):
        transfer(cand, ring_bidirectional(20), 1, old_graph=ring_bidirectional(10))

import numpy as np
import pytest

from src.exceptions import NonCertifiedBoundWarning, NumericError, ShapeError, UsageError
from src.gnn import (
    DENSE_SVD_NODES,
    GnnConfig,
    adjacency_norm,
    backward,
    capped_embedding_lipschitz,
    embedding_lipschitz,
    forward,
    forward_with_cache,
    init_params,
    pair_cotangent,
    pair_values,
    spectral_cap,
    spectral_norm,
    spectral_norm_estimate,
    spectral_upper_bound,
    zero_params,
)
from src.topology import induced_subgraph, closure, permute, permute_states, ring_bidirectional, ring_directed


def _far_from_kinks(cache, tol=1e-4):
    pre = cache.graph_pre + cache.mlp_pre[:-1]
    return all(np.min(np.abs(p)) > tol for p in pre)


def test_config_defaults_and_validation():
    config = GnnConfig(state_dim=2, graph_widths=(4,), mlp_widths=(5, 3))
    assert config.output_dim == 3
    assert config.filter_shapes() == [(2, 4)]
    assert config.mlp_shapes() == [(4, 5), (5, 3), (3, 3)]
    assert GnnConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ValueError):
        GnnConfig(state_dim=1, graph_widths=())
    with pytest.raises(ValueError):
        GnnConfig(state_dim=1, degree=0)


def test_forward_shapes():
    config = GnnConfig(state_dim=2, graph_widths=(4, 3), mlp_widths=(5,))
    params = init_params(config, np.random.default_rng(0))
    graph = ring_directed(6)
    assert forward(params, config, graph, np.zeros((6, 2))).shape == (6, 5)
    assert forward(params, config, graph, np.zeros((7, 6, 2))).shape == (7, 6, 5)
    with pytest.raises(ShapeError):
        forward(params, config, graph, np.zeros((5, 2)))


@pytest.mark.parametrize("builder", [ring_bidirectional, ring_directed])
def test_equivariance_under_ring_rotations(builder):
    rng = np.random.default_rng(4)
    graph = builder(7)
    config = GnnConfig(state_dim=2, graph_widths=(5, 4), mlp_widths=(6,))
    for _ in range(10):
        params = init_params(config, rng)
        x = rng.uniform(-1.0, 1.0, (7, 2))
        shift_by = int(rng.integers(1, 7))
        perm = [(i + shift_by) % 7 for i in range(7)]
        assert permute(graph, perm) == graph
        lhs = forward(params, config, graph, permute_states(perm, x))
        rhs = permute_states(perm, forward(params, config, graph, x))
        np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-9)


def test_output_is_local_to_the_receptive_closure():
    rng = np.random.default_rng(5)
    graph = ring_bidirectional(6)
    config = GnnConfig(state_dim=1, graph_widths=(4,), mlp_widths=(4,))
    params = init_params(config, rng)
    x = rng.uniform(-1.0, 1.0, (6, 1))
    y = x.copy()
    y[3] += 0.7
    np.testing.assert_allclose(
        forward(params, config, graph, x)[0], forward(params, config, graph, y)[0], rtol=0, atol=1e-14
    )
    receptive = closure(graph, 0, 1)
    sub = induced_subgraph(graph, receptive)
    np.testing.assert_allclose(
        forward(params, config, sub, x[list(receptive)])[0], forward(params, config, graph, x)[0], atol=1e-12
    )


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    graph = ring_bidirectional(4)
    config = GnnConfig(state_dim=2, graph_widths=(3, 3), mlp_widths=(4,))
    checked = 0
    while checked < 5:
        params = init_params(config, rng)
        x = rng.uniform(-1.0, 1.0, (3, 4, 2))
        out, cache = forward_with_cache(params, config, graph, x)
        if not _far_from_kinks(cache):
            continue
        cotangent = rng.standard_normal(out.shape)
        grad = backward(params, cache, cotangent).flat()
        theta = params.flat()
        h = 1e-6
        numeric = np.empty_like(theta)
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = h
            up = np.sum(cotangent * forward(params.from_flat(theta + e), config, graph, x))
            down = np.sum(cotangent * forward(params.from_flat(theta - e), config, graph, x))
            numeric[i] = (up - down) / (2 * h)
        assert np.linalg.norm(grad - numeric) <= 1e-5 * max(np.linalg.norm(numeric), 1.0)
        checked += 1


def test_backward_needs_a_cache():
    config = GnnConfig(state_dim=1, graph_widths=(2,), mlp_widths=(2,))
    with pytest.raises(UsageError):
        backward(zero_params(config), None, np.zeros((3, 2)))


def test_pair_values_and_cotangent():
    diff = np.array([[3.0, 4.0], [0.0, 0.0]])
    np.testing.assert_allclose(pair_values(diff, 2), [25.0, 0.0])
    cot = pair_cotangent(diff, 1, np.ones(2))
    np.testing.assert_allclose(cot, [[0.6, 0.8], [0.0, 0.0]])


def test_embedding_lipschitz_is_sound():
    rng = np.random.default_rng(7)
    graph = ring_bidirectional(5)
    config = GnnConfig(state_dim=1, graph_widths=(6,), mlp_widths=(6, 6))
    for _ in range(10):
        params = init_params(config, rng)
        bound = embedding_lipschitz(params, config, graph)
        x = rng.uniform(-1.0, 1.0, (10_000, 5, 1))
        y = np.where(rng.random((10_000, 1, 1)) < 0.5, x + 1e-3 * rng.standard_normal(x.shape), rng.uniform(-1.0, 1.0, x.shape))
        num = np.linalg.norm((forward(params, config, graph, x) - forward(params, config, graph, y)).reshape(10_000, -1), axis=1)
        den = np.linalg.norm((x - y).reshape(10_000, -1), axis=1)
        assert np.max(num / den) <= bound * (1.0 + 1e-9)


def test_zero_parameters_have_zero_lipschitz():
    config = GnnConfig(state_dim=1, graph_widths=(3,), mlp_widths=(3,))
    assert embedding_lipschitz(zero_params(config), config, ring_bidirectional(3)) == 0.0


def test_spectral_norm_matches_svd():
    rng = np.random.default_rng(8)
    for shape in [(1, 1), (3, 7), (6, 2), (10, 10)]:
        m = rng.standard_normal(shape)
        expected = np.linalg.svd(m, compute_uv=False)[0]
        assert spectral_norm(m) == pytest.approx(expected, rel=1e-9)
    assert spectral_norm(np.zeros((3, 2))) == 0.0


def test_adjacency_norm_of_rings():
    assert adjacency_norm(ring_bidirectional(6)) == pytest.approx(3.0, rel=1e-9)
    assert adjacency_norm(ring_directed(5)) == pytest.approx(2.0, rel=1e-9)


def test_non_converged_power_iteration_warns():
    m = np.random.default_rng(9).standard_normal((5, 4))
    with pytest.warns(NonCertifiedBoundWarning):
        estimate = spectral_norm_estimate(m, max_iter=1)
    assert not estimate.converged


def test_spectral_cap_projects_onto_the_ceiling():
    rng = np.random.default_rng(10)
    config = GnnConfig(state_dim=2, graph_widths=(5,), mlp_widths=(5,))
    params = init_params(config, rng).scaled(4.0)
    capped = spectral_cap(params, 1.5)
    for mat in capped.matrices():
        assert np.linalg.svd(mat, compute_uv=False)[0] <= 1.5 * (1.0 + 1e-9)
    small = init_params(config, rng).scaled(1e-3)
    for a, b in zip(spectral_cap(small, 1.5).arrays(), small.arrays()):
        np.testing.assert_array_equal(a, b)
    graph = ring_bidirectional(4)
    assert embedding_lipschitz(capped, config, graph) <= capped_embedding_lipschitz(config, graph, 1.5) * (1 + 1e-9)
    with pytest.raises(ValueError):
        spectral_cap(params, 0.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_spectral_upper_bound_dominates_the_largest_singular_value():
    rng = np.random.default_rng(11)
    u, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    v, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    # nearly equal top singular values stall power iteration
    clustered = u[:, :6] @ np.diag([2.0, 2.0 - 1e-9, 1.0, 0.5, 0.1, 0.0]) @ v.T
    matrices = [rng.standard_normal(shape) for shape in [(1, 1), (3, 7), (6, 2), (10, 10)]] + [clustered]
    for m in matrices:
        exact = np.linalg.svd(m, compute_uv=False)[0]
        bound = spectral_upper_bound(m)
        assert exact <= bound <= exact * (1.0 + 1e-9)
        assert spectral_norm_estimate(m, max_iter=1).value <= bound
    assert spectral_upper_bound(np.zeros((3, 2))) == 0.0
    assert spectral_upper_bound(np.zeros((0, 4))) == 0.0
    with pytest.raises(NumericError):
        spectral_upper_bound(np.array([[1.0, np.nan]]))
    with pytest.raises(ShapeError):
        spectral_upper_bound(np.ones(3))


def test_embedding_lipschitz_dominates_the_exact_layer_norms():
    rng = np.random.default_rng(12)
    graph = ring_bidirectional(6)
    config = GnnConfig(state_dim=2, graph_widths=(5, 4), mlp_widths=(7,))
    params = init_params(config, rng)

    def top(m):
        return np.linalg.svd(m, compute_uv=False)[0]

    exact = 1.0
    for h0, h1 in params.filter_coeffs:
        exact *= top(h0) + 3.0 * top(h1)
    for w, _ in params.mlp_weights:
        exact *= top(w)
    bound = embedding_lipschitz(params, config, graph)
    assert exact <= bound <= exact * (1.0 + 1e-8)


def test_spectral_cap_stays_below_the_ceiling():
    rng = np.random.default_rng(13)
    config = GnnConfig(state_dim=1, graph_widths=(6,), mlp_widths=(6, 6))
    capped = spectral_cap(init_params(config, rng).scaled(10.0), 0.7)
    for mat in capped.matrices():
        assert np.linalg.svd(mat, compute_uv=False)[0] <= 0.7 * (1.0 + 1e-12)


def test_adjacency_norm_cache_is_bounded():
    adjacency_norm.cache_clear()
    for n in range(3, 43):
        assert adjacency_norm(ring_bidirectional(n)) == pytest.approx(3.0, rel=1e-9)
    assert adjacency_norm.cache_info().currsize <= 32
    assert adjacency_norm(ring_bidirectional(DENSE_SVD_NODES + 1)) == 3.0

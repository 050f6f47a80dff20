import numpy as np
import pytest

from src.exceptions import ClosureError, ContractivityWarning, DomainError, NumericError, ShapeError
from src.system import (
    Box,
    SystemFactory,
    builtin_nonlinear2d,
    builtin_scalar,
    builtin_temperature,
    check_forward_invariance,
    closure_state,
    estimate_dyn_lipschitz,
    local_state,
    local_step,
    simulate,
    step,
    temperature_contraction_factor,
    trajectory_to_frame,
)
from src.topology import closure, ring_bidirectional, ring_directed


def halving_step(x, w):
    return 0.5 * x


def test_box_basics():
    box = Box.uniform(-1.0, 1.0, 2)
    assert box.dim == 2
    assert box.diameter == pytest.approx(2.0 * np.sqrt(2.0))
    assert box.tile(3).dim == 6
    assert Box.empty().dim == 0
    assert Box.uniform(0.5, 0.5, 1).is_degenerate
    np.testing.assert_array_equal(box.contains(np.array([[0.0, 1.0], [0.0, 1.1]])), [True, False])
    with pytest.raises(ValueError):
        Box(np.array([1.0]), np.array([0.0]))


def test_temperature_step_by_hand():
    oracle = builtin_temperature(n_nodes=3)
    nxt = step(oracle, np.array([[1.0], [0.0], [0.0]]))
    np.testing.assert_allclose(nxt[:, 0], [0.8, 0.05, 0.05])


def test_step_is_deterministic_and_batched(desk_oracle):
    rng = np.random.default_rng(0)
    x = desk_oracle.state_box.sample(rng, (4, 5))
    batched = step(desk_oracle, x)
    for b in range(4):
        np.testing.assert_array_equal(step(desk_oracle, x[b]), batched[b])


def test_step_rejects_bad_shapes_and_escapes(desk_oracle):
    with pytest.raises(ShapeError):
        step(desk_oracle, np.zeros((4, 1)))
    x = np.zeros((5, 1))
    x[2, 0] = 1.5
    with pytest.raises(DomainError) as info:
        step(desk_oracle, x)
    np.testing.assert_array_equal(info.value.point, [1.5])


def test_simulate_horizons():
    oracle = builtin_temperature(n_nodes=3)
    x0 = np.array([[1.0], [0.0], [0.0]])
    assert simulate(oracle, x0, horizon=0).states.shape == (1, 3, 1)
    trajectory = simulate(oracle, x0, horizon=2)
    assert trajectory.horizon == 2
    assert not trajectory.truncated
    np.testing.assert_allclose(trajectory.states[2], step(oracle, step(oracle, x0)))


def test_simulate_truncates_on_escape():
    oracle = builtin_scalar(a=2.0)
    trajectory = simulate(oracle, np.array([[0.4]]), horizon=5)
    assert trajectory.truncated
    assert trajectory.escape_step == 2
    assert trajectory.states.shape[0] == 2


def test_local_state_ordering(desk_oracle):
    x = np.arange(5.0)[:, None]
    state = local_state(desk_oracle, x, 0)
    assert state.nodes == (0, 1, 4)
    np.testing.assert_array_equal(state.values, [0.0, 1.0, 4.0])


@pytest.mark.parametrize(
    "oracle",
    [
        builtin_temperature(n_nodes=6, state_low=-1.0, state_high=1.0),
        builtin_nonlinear2d(n_nodes=5, state_low=-1.0, state_high=1.0),
    ],
    ids=["temperature", "nonlinear2d"],
)
def test_two_hop_local_step_matches_full_step(oracle):
    rng = np.random.default_rng(1)
    x = oracle.state_box.sample(rng, (1000, oracle.n_nodes))
    full = step(oracle, x)
    for i in range(oracle.n_nodes):
        targets = closure(oracle.graph, i, 1)
        local = local_step(oracle, closure_state(oracle, x, i, hops=2))
        expected = full[:, list(targets), :].reshape(1000, -1)
        np.testing.assert_allclose(local.values, expected, rtol=0, atol=1e-12)


def test_two_hop_local_step_needs_the_closure(desk_oracle):
    with pytest.raises(ClosureError) as info:
        local_step(desk_oracle, local_state(desk_oracle, np.zeros((5, 1)), 0))
    assert info.value.missing == (2, 3)


def test_embed_reference_pins_outside_nodes(desk_oracle):
    x = np.full((5, 1), 0.5)
    result = local_step(desk_oracle, local_state(desk_oracle, x, 0), closure_mode="embed_reference")
    pinned = x.copy()
    pinned[[2, 3]] = 0.0
    np.testing.assert_allclose(result.values, step(desk_oracle, pinned)[[0, 1, 4], 0])


def test_temperature_contracts_in_sup_norm(desk_oracle):
    rng = np.random.default_rng(2)
    factor = temperature_contraction_factor(0.05, 0.1)
    assert factor < 1.0
    x = desk_oracle.state_box.sample(rng, (2000, 5))
    xh = desk_oracle.state_box.sample(rng, (2000, 5))
    lhs = np.abs(step(desk_oracle, x) - step(desk_oracle, xh)).max(axis=(1, 2))
    rhs = factor * np.abs(x - xh).max(axis=(1, 2))
    assert np.all(lhs <= rhs + 1e-12)


@pytest.mark.parametrize(
    "oracle",
    [builtin_temperature(), builtin_nonlinear2d(), builtin_scalar(a=0.5, input_gain=0.3)],
    ids=["temperature", "nonlinear2d", "scalar"],
)
def test_declared_lipschitz_bounds_the_estimate(oracle):
    assert estimate_dyn_lipschitz(oracle, n_pairs=10_000) <= oracle.dyn_lipschitz + 1e-12


def test_temperature_box_is_forward_invariant(desk_oracle):
    assert check_forward_invariance(desk_oracle, n_samples=500) == 0.0


def test_non_contractive_temperature_warns():
    with pytest.warns(ContractivityWarning):
        builtin_temperature(n_nodes=4, phi=0.5, theta=0.1)


def test_reference_outside_box_is_rejected():
    with pytest.raises(DomainError):
        builtin_scalar(state_low=0.5, state_high=1.0)


def test_trajectory_frame_columns():
    oracle = builtin_temperature(n_nodes=3)
    single = trajectory_to_frame(simulate(oracle, np.zeros((3, 1)), horizon=1))
    assert list(single.columns) == ["k", "node", "dim", "value"]
    assert len(single) == 2 * 3
    batched = trajectory_to_frame(simulate(oracle, np.zeros((2, 3, 1)), horizon=1), traj_ids=[7, 9])
    assert list(batched.columns) == ["k", "traj_id", "node", "dim", "value"]
    assert set(batched["traj_id"]) == {7, 9}


def test_factory_builds_each_kind():
    ring = ring_bidirectional(4)
    assert SystemFactory.get_system("temperature", ring, phi=0.1, theta=None).name == "temperature"
    assert SystemFactory.get_system("nonlinear2d", ring_directed(3)).state_dim == 2
    scalar = SystemFactory.get_system("scalar", ring, a=0.3, input_gain=1.0)
    assert scalar.input_dim == 1
    external = SystemFactory.get_system(
        "external",
        ring,
        step_fn="tests.test_system:halving_step",
        state_dim=1,
        dyn_lipschitz=0.5,
        state_low=-1.0,
        state_high=1.0,
    )
    np.testing.assert_allclose(step(external, np.full((4, 1), 0.8)), 0.4)
    with pytest.raises(ValueError):
        SystemFactory.get_system("external", ring, step_fn="tests.test_system:halving_step")
    with pytest.raises(ValueError):
        SystemFactory.get_system("pendulum", ring)


def overflowing_step(x, w):
    return np.where(x > 0.5, np.inf, x)


def test_step_rejects_non_finite_outputs():
    oracle = SystemFactory.get_system(
        "external",
        ring_bidirectional(4),
        step_fn="tests.test_system:overflowing_step",
        state_dim=1,
        dyn_lipschitz=1.0,
        state_low=-1.0,
        state_high=1.0,
    )
    np.testing.assert_allclose(step(oracle, np.full((4, 1), 0.2)), 0.2)
    with pytest.raises(NumericError):
        step(oracle, np.full((4, 1), 0.8))

# src/system.py
"""
Black-box interconnected-system oracles.

An oracle wraps a subsystem dynamics strategy, the interconnection graph, the
state and input boxes, and the (assumed known) Lipschitz constant of the local
transition map. Only `step` and its batched relatives touch the dynamics, so
every other component treats the system as a black box on X × W.

Local transitions come in two closure modes:
  - two_hop: caller supplies every state the neighbors' dynamics read; exact.
  - embed_reference: states outside the 1-hop neighborhood are pinned to a
    reference point before stepping; approximate whenever neighbors read
    2-hop states.
"""
from __future__ import annotations

import importlib
import logging
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.exceptions import ClosureError, ContractivityWarning, DomainError, NumericError, ShapeError
from src.topology import InterconnectionGraph, closure, ring_bidirectional, ring_directed, from_edges

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")


class ClosureMode(str, Enum):
    TWO_HOP = "two_hop"
    EMBED_REFERENCE = "embed_reference"


# ---------------------------------- Boxes -----------------------------------
@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned interval [low, high] ⊂ R^dim (dim may be 0)."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float)).copy()
        high = np.atleast_1d(np.asarray(self.high, dtype=float)).copy()
        if low.shape != high.shape or low.ndim != 1:
            raise ShapeError(f"Box bounds must be vectors of equal length, got {low.shape} and {high.shape}.")
        if np.any(low > high):
            raise ValueError(f"Box is empty: low {low} exceeds high {high}.")
        low.setflags(write=False)
        high.setflags(write=False)
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @classmethod
    def uniform(cls, low: float, high: float, dim: int) -> "Box":
        return cls(np.full(dim, float(low)), np.full(dim, float(high)))

    @classmethod
    def empty(cls) -> "Box":
        return cls(np.zeros(0), np.zeros(0))

    @property
    def dim(self) -> int:
        return int(self.low.shape[0])

    @property
    def width(self) -> np.ndarray:
        return self.high - self.low

    @property
    def center(self) -> np.ndarray:
        return (self.low + self.high) / 2.0

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.width))

    @property
    def is_degenerate(self) -> bool:
        return bool(np.all(self.width == 0.0))

    def tile(self, copies: int) -> "Box":
        """Product of `copies` boxes, coordinates laid out copy-major."""
        return Box(np.tile(self.low, copies), np.tile(self.high, copies))

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Elementwise membership over the last axis (tolerance 0)."""
        points = np.asarray(points, dtype=float)
        return np.all((points >= self.low) & (points <= self.high), axis=-1)

    def clip(self, point: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(point, dtype=float), self.low, self.high)

    def sample(self, rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
        return rng.uniform(self.low, self.high, size=tuple(shape) + (self.dim,))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.low, other.low) and np.array_equal(self.high, other.high)

    def __repr__(self) -> str:
        return f"Box(low={self.low.tolist()}, high={self.high.tolist()})"


# --------------------------- Dynamics strategies ----------------------------
class SubsystemDynamics(ABC):
    """Batched full-system transition: (B, N, n), (B, N, m) -> (B, N, n)."""

    @abstractmethod
    def step(self, graph: InterconnectionGraph, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _neighbor_sum(graph: InterconnectionGraph, x: np.ndarray) -> np.ndarray:
    off_diag = graph.adjacency.astype(float) - np.eye(graph.n_nodes)
    return np.matmul(off_diag, x)


class TemperatureDynamics(SubsystemDynamics):
    """Room-temperature network: T + φ(Σ_nbr T_j − deg·T) + θ(T_e − T)."""

    def __init__(self, phi: float, theta: float, t_ext: float):
        self.phi = float(phi)
        self.theta = float(theta)
        self.t_ext = float(t_ext)

    def step(self, graph: InterconnectionGraph, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        degree = np.array([len(n) for n in graph.neighbor_lists], dtype=float)[:, None]
        return x + self.phi * (_neighbor_sum(graph, x) - degree * x) + self.theta * (self.t_ext - x)


class Nonlinear2DDynamics(SubsystemDynamics):
    """Two-state nonlinear subsystem coupled to the next node of a directed ring."""

    def step(self, graph: InterconnectionGraph, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        nbr = _neighbor_sum(graph, x)
        x1, x2 = x[..., 0], x[..., 1]
        radius = np.sqrt(x1 ** 2 + x2 ** 2)
        out = np.empty_like(x)
        out[..., 0] = 0.8 * x1 - 0.1 * radius - 0.02 * nbr[..., 0]
        out[..., 1] = 0.9 * x2 - 0.1 * x1 - 0.03 * nbr[..., 1]
        return out


class ScalarDynamics(SubsystemDynamics):
    """x⁺ = a·x + b·w (b = 0 means no external input)."""

    def __init__(self, a: float, input_gain: float = 0.0):
        self.a = float(a)
        self.input_gain = float(input_gain)

    def step(self, graph: InterconnectionGraph, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        out = self.a * x
        if w.shape[-1]:
            out = out + self.input_gain * w[..., :1]
        return out


class ExternalDynamics(SubsystemDynamics):
    """Loads a batched step function from a `package.module:function` path."""

    def __init__(self, target: str):
        if ":" not in target:
            raise ValueError(f"External step function must look like 'module:function', got '{target}'.")
        self.target = target
        module_name, func_name = target.split(":", 1)
        self._fn: Callable = getattr(importlib.import_module(module_name), func_name)

    def step(self, graph: InterconnectionGraph, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.asarray(self._fn(x, w), dtype=float)

    def __getstate__(self):
        return {"target": self.target}

    def __setstate__(self, state):
        self.__init__(state["target"])


# --------------------------------- Oracle -----------------------------------
@dataclass(frozen=True, eq=False)
class SystemOracle:
    graph: InterconnectionGraph
    state_dim: int
    input_dim: int
    state_box: Box
    input_box: Box
    dynamics: SubsystemDynamics
    dyn_lipschitz: float
    name: str = "system"
    reference: np.ndarray = field(default=None)
    input_reference: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.state_box.dim != self.state_dim:
            raise ShapeError(f"State box has dim {self.state_box.dim}, expected {self.state_dim}.")
        if self.input_box.dim != self.input_dim:
            raise ShapeError(f"Input box has dim {self.input_box.dim}, expected {self.input_dim}.")
        if not self.dyn_lipschitz > 0:
            raise ValueError(f"dyn_lipschitz must be positive, got {self.dyn_lipschitz}.")
        ref = np.zeros(self.state_dim) if self.reference is None else np.asarray(self.reference, dtype=float)
        ref = np.broadcast_to(ref, (self.state_dim,)).copy()
        if not self.state_box.contains(ref):
            raise DomainError(f"Reference point {ref.tolist()} lies outside the state box.", point=ref)
        object.__setattr__(self, "reference", ref)
        w_ref = np.zeros(self.input_dim) if self.input_reference is None else np.asarray(self.input_reference, dtype=float)
        object.__setattr__(self, "input_reference", self.input_box.clip(np.broadcast_to(w_ref, (self.input_dim,))))

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    def step_fn(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        return self.dynamics.step(self.graph, x, w)

    def zero_inputs(self, batch_shape: Tuple[int, ...] = ()) -> np.ndarray:
        return np.broadcast_to(self.input_reference, tuple(batch_shape) + (self.n_nodes, self.input_dim)).copy()

    def __repr__(self) -> str:
        return (
            f"SystemOracle(name={self.name!r}, N={self.n_nodes}, n={self.state_dim}, m={self.input_dim}, "
            f"L_f={self.dyn_lipschitz:.6g})"
        )


@dataclass(frozen=True)
class LocalState:
    """Concatenated states of `nodes` (row-major), rooted at `node`."""

    node: int
    nodes: Tuple[int, ...]
    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(np.asarray(self.values).shape[-1])


@dataclass
class Trajectory:
    states: np.ndarray  # (K+1, N, n) or (K+1, B, N, n)
    inputs: np.ndarray  # (K, N, m) or (K, B, N, m)
    truncated: bool = False
    escape_step: Optional[int] = None

    @property
    def horizon(self) -> int:
        return int(self.states.shape[0]) - 1


# -------------------------------- Builtins ----------------------------------
def temperature_contraction_factor(phi: float, theta: float) -> float:
    """∞-norm gain of the ring difference map: |1 − 2φ − θ| + 2φ."""
    return abs(1.0 - 2.0 * phi - theta) + 2.0 * phi


def builtin_temperature(
    n_nodes: int = 10,
    phi: float = 0.05,
    theta: float = 0.1,
    t_ext: float = 0.0,
    state_low: float = -10.0,
    state_high: float = 10.0,
    dyn_lipschitz: Optional[float] = None,
    graph: Optional[InterconnectionGraph] = None,
) -> SystemOracle:
    graph = graph if graph is not None else ring_bidirectional(n_nodes)
    n_nodes = graph.n_nodes
    if not 2.0 * phi + theta < 1.0 or temperature_contraction_factor(phi, theta) >= 1.0:
        message = (
            f"Temperature ring with phi={phi}, theta={theta} is not contractive "
            f"(factor {temperature_contraction_factor(phi, theta):.4f}); training may fail."
        )
        logging.warning(message)
        warnings.warn(message, ContractivityWarning)
    if dyn_lipschitz is None:
        # Full transition matrix M = (1 − θ)I + φ(A − I − D); sqrt(|M|_1 |M|_inf) bounds |M|_2.
        degree = np.array([len(n) for n in graph.neighbor_lists], dtype=float)
        m = (1.0 - theta) * np.eye(n_nodes) + phi * (graph.adjacency - np.eye(n_nodes) - np.diag(degree))
        dyn_lipschitz = math.sqrt(np.abs(m).sum(axis=0).max() * np.abs(m).sum(axis=1).max())
    return SystemOracle(
        graph=graph,
        state_dim=1,
        input_dim=0,
        state_box=Box.uniform(state_low, state_high, 1),
        input_box=Box.empty(),
        dynamics=TemperatureDynamics(phi, theta, t_ext),
        dyn_lipschitz=float(dyn_lipschitz),
        name="temperature",
        reference=np.clip([t_ext], state_low, state_high),
    )


def builtin_nonlinear2d(
    n_nodes: int = 10,
    state_low: float = -20.0,
    state_high: float = 20.0,
    dyn_lipschitz: Optional[float] = None,
    graph: Optional[InterconnectionGraph] = None,
) -> SystemOracle:
    graph = graph if graph is not None else ring_directed(n_nodes)
    if dyn_lipschitz is None:
        # linear block + 0.03·|A − I|_2 coupling + 0.1·|x_i| term
        block = np.array([[0.8, 0.0], [-0.1, 0.9]])
        off = np.abs(graph.adjacency - np.eye(graph.n_nodes))
        coupling = math.sqrt(off.sum(axis=0).max() * off.sum(axis=1).max())
        dyn_lipschitz = float(np.linalg.norm(block, 2)) + 0.03 * coupling + 0.1
    return SystemOracle(
        graph=graph,
        state_dim=2,
        input_dim=0,
        state_box=Box.uniform(state_low, state_high, 2),
        input_box=Box.empty(),
        dynamics=Nonlinear2DDynamics(),
        dyn_lipschitz=float(dyn_lipschitz),
        name="nonlinear2d",
    )


def builtin_scalar(
    a: float = 0.5,
    input_gain: float = 0.0,
    state_low: float = -1.0,
    state_high: float = 1.0,
    input_low: float = -1.0,
    input_high: float = 1.0,
    dyn_lipschitz: Optional[float] = None,
    graph: Optional[InterconnectionGraph] = None,
) -> SystemOracle:
    """Decoupled scalar nodes (one self-looped node by default); inputs are enabled when input_gain != 0."""
    m = 1 if input_gain != 0.0 else 0
    if dyn_lipschitz is None:
        dyn_lipschitz = math.hypot(a, input_gain)
    return SystemOracle(
        graph=graph if graph is not None else from_edges(1, []),
        state_dim=1,
        input_dim=m,
        state_box=Box.uniform(state_low, state_high, 1),
        input_box=Box.uniform(input_low, input_high, 1) if m else Box.empty(),
        dynamics=ScalarDynamics(a, input_gain),
        dyn_lipschitz=float(dyn_lipschitz),
        name="scalar",
    )


def external_system(
    graph: InterconnectionGraph,
    target: str,
    state_dim: int,
    input_dim: int,
    state_box: Box,
    input_box: Box,
    dyn_lipschitz: float,
    reference: Optional[Sequence[float]] = None,
) -> SystemOracle:
    return SystemOracle(
        graph=graph,
        state_dim=state_dim,
        input_dim=input_dim,
        state_box=state_box,
        input_box=input_box,
        dynamics=ExternalDynamics(target),
        dyn_lipschitz=float(dyn_lipschitz),
        name=f"external:{target}",
        reference=None if reference is None else np.asarray(reference, dtype=float),
    )


# ------------------------------- Stepping -----------------------------------
def _check_domain(box: Box, values: np.ndarray, label: str) -> None:
    if values.shape[-1] == 0:
        return
    inside = box.contains(values)
    if not np.all(inside):
        bad = np.argwhere(~inside)[0]
        point = values[tuple(bad)]
        logging.error(f"{label} {point.tolist()} at index {bad.tolist()} lies outside {box}.")
        raise DomainError(f"{label} at index {bad.tolist()} lies outside the configured box.", point=point)


def step(oracle: SystemOracle, x: np.ndarray, w: Optional[np.ndarray] = None) -> np.ndarray:
    """
    One transition of the full system. x is (N, n) or (B, N, n); w defaults to
    the reference input (the zero input for systems without inputs).
    """
    x = np.asarray(x, dtype=float)
    if x.ndim not in (2, 3) or x.shape[-2:] != (oracle.n_nodes, oracle.state_dim):
        raise ShapeError(f"State must end in ({oracle.n_nodes}, {oracle.state_dim}), got {x.shape}.")
    if w is None:
        w = oracle.zero_inputs(x.shape[:-2])
    w = np.asarray(w, dtype=float)
    if w.shape != x.shape[:-1] + (oracle.input_dim,):
        raise ShapeError(f"Input must have shape {x.shape[:-1] + (oracle.input_dim,)}, got {w.shape}.")
    _check_domain(oracle.state_box, x, "State row")
    _check_domain(oracle.input_box, w, "Input row")
    single = x.ndim == 2
    out = oracle.step_fn(x[None] if single else x, w[None] if single else w)
    out = out[0] if single else out
    if out.shape != x.shape:
        raise ShapeError(f"Step function returned shape {out.shape}, expected {x.shape}.")
    if not np.all(np.isfinite(out)):
        logging.error(f"Step function {oracle.name} returned non-finite values.")
        raise NumericError(f"Step function {oracle.name} returned non-finite values.")
    return out


def step_nodes(
    oracle: SystemOracle,
    nodes: Sequence[int],
    values: np.ndarray,
    targets: Sequence[int],
    target_inputs: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Batched local transition. `values` (B, len(nodes), n) are embedded into a
    full state whose remaining rows hold the reference point, the oracle is
    stepped once, and the rows of `targets` are returned as (B, len(targets), n).
    """
    values = np.asarray(values, dtype=float)
    batch = values.shape[0]
    full = np.broadcast_to(oracle.reference, (batch, oracle.n_nodes, oracle.state_dim)).copy()
    full[:, list(nodes), :] = values
    w = oracle.zero_inputs((batch,))
    if target_inputs is not None and oracle.input_dim:
        w[:, list(targets), :] = np.asarray(target_inputs, dtype=float)
    nxt = step(oracle, full, w)
    return nxt[:, list(targets), :]


# ------------------------------- Local views --------------------------------
def local_state(oracle: SystemOracle, x: np.ndarray, i: int) -> LocalState:
    """x̃ᵢ = [xᵢ, x_j for j ∈ 𝒩ᵢ ascending]."""
    nodes = closure(oracle.graph, i, 1)
    x = np.asarray(x, dtype=float)
    return LocalState(node=i, nodes=nodes, values=x[..., list(nodes), :].reshape(x.shape[:-2] + (-1,)))


def closure_state(oracle: SystemOracle, x: np.ndarray, i: int, hops: int = 2) -> LocalState:
    """States of the `hops`-hop closure of node i, in closure order."""
    nodes = closure(oracle.graph, i, hops)
    x = np.asarray(x, dtype=float)
    return LocalState(node=i, nodes=nodes, values=x[..., list(nodes), :].reshape(x.shape[:-2] + (-1,)))


def local_step(
    oracle: SystemOracle,
    xt: LocalState,
    wt: Optional[np.ndarray] = None,
    closure_mode: ClosureMode | str = ClosureMode.TWO_HOP,
) -> LocalState:
    """
    Evaluates f̃ᵢ: the next states of node i and its neighbors.

    two_hop requires xt to cover the 2-hop closure of node i and is exact;
    embed_reference pins every node outside xt to the oracle reference point.
    """
    mode = ClosureMode(closure_mode)
    i = xt.node
    targets = closure(oracle.graph, i, 1)
    if mode is ClosureMode.TWO_HOP:
        required = closure(oracle.graph, i, 2)
        missing = sorted(set(required) - set(xt.nodes))
        if missing:
            logging.error(f"two_hop local step for node {i} is missing states of nodes {missing}.")
            raise ClosureError(f"two_hop closure of node {i} needs states of nodes {missing}.", missing)
    values = np.asarray(xt.values, dtype=float)
    single = values.ndim == 1
    values = values.reshape((-1, len(xt.nodes), oracle.state_dim))
    inputs = None
    if oracle.input_dim:
        if wt is None:
            inputs = np.broadcast_to(oracle.input_reference, (values.shape[0], len(targets), oracle.input_dim))
        else:
            inputs = np.asarray(wt, dtype=float).reshape((-1, len(targets), oracle.input_dim))
    nxt = step_nodes(oracle, xt.nodes, values, targets, inputs)
    flat = nxt.reshape((nxt.shape[0], -1))
    return LocalState(node=i, nodes=targets, values=flat[0] if single else flat)


# -------------------------------- Simulation --------------------------------
def simulate(
    oracle: SystemOracle,
    x0: np.ndarray,
    input_sequence: Optional[np.ndarray] = None,
    horizon: int = 0,
) -> Trajectory:
    """
    Rolls the oracle forward. x0 may carry a leading batch axis. The rollout is
    truncated (and flagged) at the first state that leaves the state box.
    """
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}.")
    x = np.asarray(x0, dtype=float)
    _check_domain(oracle.state_box, x, "Initial state row")
    if input_sequence is None:
        input_sequence = np.broadcast_to(oracle.zero_inputs(x.shape[:-2]), (horizon,) + x.shape[:-1] + (oracle.input_dim,))
    input_sequence = np.asarray(input_sequence, dtype=float)
    if input_sequence.shape[0] < horizon:
        raise ShapeError(f"Input sequence has {input_sequence.shape[0]} steps, horizon is {horizon}.")

    states = [x]
    for k in range(horizon):
        nxt = step(oracle, states[-1], input_sequence[k])
        if not np.all(oracle.state_box.contains(nxt)):
            logging.warning(f"Trajectory left the state box at step {k + 1}; truncating (forward invariance violated).")
            return Trajectory(np.stack(states), input_sequence[:k].copy(), truncated=True, escape_step=k + 1)
        states.append(nxt)
    return Trajectory(np.stack(states), input_sequence[:horizon].copy())


def trajectory_to_frame(trajectory: Trajectory, traj_ids: Optional[Sequence[int]] = None) -> pd.DataFrame:
    """
    Tidy rows, one per scalar: `k,node,dim,value`, or `k,traj_id,node,dim,value`
    when the trajectory is batched.
    """
    states = trajectory.states
    if states.ndim == 3:
        k, node, dim = np.indices(states.shape)
        return pd.DataFrame(
            {"k": k.ravel(), "node": node.ravel(), "dim": dim.ravel(), "value": states.ravel()}
        )
    k, traj, node, dim = np.indices(states.shape)
    ids = np.arange(states.shape[1]) if traj_ids is None else np.asarray(traj_ids)
    return pd.DataFrame(
        {
            "k": k.ravel(),
            "traj_id": ids[traj.ravel()],
            "node": node.ravel(),
            "dim": dim.ravel(),
            "value": states.ravel(),
        }
    )


# -------------------------------- Diagnostics --------------------------------
def check_forward_invariance(oracle: SystemOracle, n_samples: int = 1000, seed: int = 0) -> float:
    """Fraction of random in-domain (x, w) whose successor leaves the state box."""
    rng = np.random.default_rng(seed)
    x = oracle.state_box.sample(rng, (n_samples, oracle.n_nodes))
    w = oracle.input_box.sample(rng, (n_samples, oracle.n_nodes))
    nxt = step(oracle, x, w)
    escaped = ~np.all(oracle.state_box.contains(nxt), axis=-1)
    fraction = float(escaped.mean())
    if fraction > 0:
        logging.warning(f"Forward invariance spot-check: {fraction:.2%} of samples left the state box of {oracle.name}.")
    return fraction


def estimate_dyn_lipschitz(oracle: SystemOracle, node: int = 0, n_pairs: int = 10_000, seed: int = 0) -> float:
    """
    Largest observed expansion ratio of the exact (two_hop) local transition of
    `node`. Diagnostic only: never used by the formal check.
    """
    rng = np.random.default_rng(seed)
    nodes = closure(oracle.graph, node, 2)
    targets = closure(oracle.graph, node, 1)
    a = oracle.state_box.sample(rng, (n_pairs, len(nodes)))
    b = oracle.state_box.sample(rng, (n_pairs, len(nodes)))
    wa = oracle.input_box.sample(rng, (n_pairs, len(targets)))
    wb = oracle.input_box.sample(rng, (n_pairs, len(targets)))
    fa = step_nodes(oracle, nodes, a, targets, wa).reshape(n_pairs, -1)
    fb = step_nodes(oracle, nodes, b, targets, wb).reshape(n_pairs, -1)
    num = np.linalg.norm(fa - fb, axis=1)
    den = np.sqrt(
        np.sum((a - b).reshape(n_pairs, -1) ** 2, axis=1) + np.sum((wa - wb).reshape(n_pairs, -1) ** 2, axis=1)
    )
    ratios = num[den > 0] / den[den > 0]
    return float(ratios.max()) if ratios.size else 0.0


class SystemFactory:
    """
    Chooses the oracle builder by kind: "temperature", "nonlinear2d", "scalar"
    or "external" (a batched step function given as `module:function`).
    """

    @staticmethod
    def get_system(kind: str, graph: InterconnectionGraph, **options) -> SystemOracle:
        options = {k: v for k, v in options.items() if v is not None}
        if kind == "temperature":
            keys = ("phi", "theta", "t_ext", "state_low", "state_high", "dyn_lipschitz")
            return builtin_temperature(graph=graph, **{k: options[k] for k in keys if k in options})
        if kind == "nonlinear2d":
            keys = ("state_low", "state_high", "dyn_lipschitz")
            return builtin_nonlinear2d(graph=graph, **{k: options[k] for k in keys if k in options})
        if kind == "scalar":
            keys = ("a", "input_gain", "state_low", "state_high", "input_low", "input_high", "dyn_lipschitz")
            return builtin_scalar(graph=graph, **{k: options[k] for k in keys if k in options})
        if kind == "external":
            missing = [k for k in ("step_fn", "state_dim", "dyn_lipschitz", "state_low", "state_high") if k not in options]
            if missing:
                raise ValueError(f"External systems need {missing}.")
            state_dim = int(options["state_dim"])
            input_dim = int(options.get("input_dim", 0))
            input_box = (
                Box.uniform(options.get("input_low", -1.0), options.get("input_high", 1.0), input_dim)
                if input_dim
                else Box.empty()
            )
            return external_system(
                graph=graph,
                target=options["step_fn"],
                state_dim=state_dim,
                input_dim=input_dim,
                state_box=Box.uniform(options["state_low"], options["state_high"], state_dim),
                input_box=input_box,
                dyn_lipschitz=options["dyn_lipschitz"],
                reference=options.get("reference"),
            )
        raise ValueError(
            f"Unsupported system kind '{kind}'. Use 'temperature', 'nonlinear2d', 'scalar' or 'external'."
        )

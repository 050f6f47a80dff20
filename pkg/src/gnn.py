# src/gnn.py
"""
Graph-neural-network embedding used by the learned Lyapunov candidates.

Architecture (row-vector convention, weights shared by every node):
  graph layers   x_{l+1} = relu(x_l·H_l^0 + (A·x_l)·H_l^1)
  node MLP       h_{k+1} = relu(h_k·W_k + b_k) for every hidden layer,
                 followed by one affine output layer h·W_out + b_out

Everything works on a single state matrix (N, n) or a batch (B, N, n).
Gradients are computed by an explicit reverse sweep over the cached forward
activations; the rectifier subgradient at 0 is 0.
"""
from __future__ import annotations

import functools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import NonCertifiedBoundWarning, NumericError, ShapeError, UsageError
from src.topology import InterconnectionGraph

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")


# ------------------------------- Config types -------------------------------
@dataclass(frozen=True)
class GnnConfig:
    state_dim: int
    graph_widths: Tuple[int, ...] = (20,)
    mlp_widths: Tuple[int, ...] = (20, 20)
    output_dim: Optional[int] = None
    degree: int = 1

    def __post_init__(self):
        object.__setattr__(self, "graph_widths", tuple(int(w) for w in self.graph_widths))
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))
        if self.state_dim < 1:
            raise ValueError(f"state_dim must be >= 1, got {self.state_dim}.")
        if len(self.graph_widths) < 1 or len(self.mlp_widths) < 1:
            raise ValueError("At least one graph layer and one MLP layer are required.")
        if min(self.graph_widths + self.mlp_widths) < 1:
            raise ValueError("All layer widths must be >= 1.")
        if self.output_dim is None:
            object.__setattr__(self, "output_dim", self.mlp_widths[-1])
        if self.output_dim < 1:
            raise ValueError(f"output_dim must be >= 1, got {self.output_dim}.")
        if self.degree < 1:
            raise ValueError(f"degree must be a positive integer, got {self.degree}.")

    @property
    def graph_layers(self) -> int:
        return len(self.graph_widths)

    @property
    def mlp_layers(self) -> int:
        return len(self.mlp_widths)

    @property
    def feature_dims(self) -> Tuple[int, ...]:
        """z_0 .. z_{graph_layers}, with z_0 = state_dim."""
        return (self.state_dim,) + self.graph_widths

    @property
    def receptive_depth(self) -> int:
        return self.graph_layers

    def filter_shapes(self) -> List[Tuple[int, int]]:
        z = self.feature_dims
        return [(z[l], z[l + 1]) for l in range(self.graph_layers)]

    def mlp_shapes(self) -> List[Tuple[int, int]]:
        dims = (self.graph_widths[-1],) + self.mlp_widths + (self.output_dim,)
        return [(dims[k], dims[k + 1]) for k in range(len(dims) - 1)]

    def to_dict(self) -> Dict:
        return {
            "state_dim": self.state_dim,
            "graph_widths": list(self.graph_widths),
            "mlp_widths": list(self.mlp_widths),
            "output_dim": self.output_dim,
            "degree": self.degree,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "GnnConfig":
        return cls(
            state_dim=int(data["state_dim"]),
            graph_widths=tuple(data["graph_widths"]),
            mlp_widths=tuple(data["mlp_widths"]),
            output_dim=data.get("output_dim"),
            degree=int(data.get("degree", 1)),
        )


@dataclass
class GnnParams:
    """Filter pairs (H_l^0, H_l^1) per graph layer and (W, b) per MLP layer, output layer last."""

    filter_coeffs: List[Tuple[np.ndarray, np.ndarray]]
    mlp_weights: List[Tuple[np.ndarray, np.ndarray]]

    def arrays(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for h0, h1 in self.filter_coeffs:
            out.extend((h0, h1))
        for w, b in self.mlp_weights:
            out.extend((w, b))
        return out

    def matrices(self) -> List[np.ndarray]:
        """Every weight matrix (biases excluded)."""
        mats: List[np.ndarray] = []
        for h0, h1 in self.filter_coeffs:
            mats.extend((h0, h1))
        mats.extend(w for w, _ in self.mlp_weights)
        return mats

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "GnnParams":
        arrays = list(arrays)
        n_filter = 2 * len(self.filter_coeffs)
        filters = [(arrays[2 * l], arrays[2 * l + 1]) for l in range(len(self.filter_coeffs))]
        mlp = [(arrays[n_filter + 2 * k], arrays[n_filter + 2 * k + 1]) for k in range(len(self.mlp_weights))]
        return GnnParams(filters, mlp)

    def copy(self) -> "GnnParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def zeros_like(self) -> "GnnParams":
        return self.with_arrays([np.zeros_like(a) for a in self.arrays()])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_flat(self, vector: np.ndarray) -> "GnnParams":
        out, offset = [], 0
        for a in self.arrays():
            out.append(np.asarray(vector[offset:offset + a.size], dtype=float).reshape(a.shape))
            offset += a.size
        if offset != vector.size:
            raise ShapeError(f"Flat vector has {vector.size} entries, parameters need {offset}.")
        return self.with_arrays(out)

    def add(self, other: "GnnParams", scale: float = 1.0) -> "GnnParams":
        return self.with_arrays([a + scale * b for a, b in zip(self.arrays(), other.arrays())])

    def scaled(self, factor: float) -> "GnnParams":
        return self.with_arrays([factor * a for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def validate(self, config: GnnConfig) -> None:
        if len(self.filter_coeffs) != config.graph_layers or len(self.mlp_weights) != config.mlp_layers + 1:
            raise ShapeError(
                f"Parameter layer counts ({len(self.filter_coeffs)}, {len(self.mlp_weights)}) do not match "
                f"config ({config.graph_layers}, {config.mlp_layers + 1})."
            )
        for l, ((h0, h1), shape) in enumerate(zip(self.filter_coeffs, config.filter_shapes())):
            if h0.shape != shape or h1.shape != shape:
                raise ShapeError(f"Graph layer {l} expects {shape}, got {h0.shape} and {h1.shape}.")
        for k, ((w, b), shape) in enumerate(zip(self.mlp_weights, config.mlp_shapes())):
            if w.shape != shape or b.shape != (shape[1],):
                raise ShapeError(f"MLP layer {k} expects {shape} and ({shape[1]},), got {w.shape} and {b.shape}.")
        if not self.is_finite():
            raise NumericError("Parameters contain non-finite entries.")


def init_params(config: GnnConfig, rng: np.random.Generator) -> GnnParams:
    """Uniform in [−s, s], s = 1/√fan_in, for every matrix and bias."""

    def uniform(fan_in: int, shape: Tuple[int, ...]) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    filters = [(uniform(a, (a, b)), uniform(a, (a, b))) for a, b in config.filter_shapes()]
    mlp = [(uniform(a, (a, b)), uniform(a, (b,))) for a, b in config.mlp_shapes()]
    return GnnParams(filters, mlp)


def zero_params(config: GnnConfig) -> GnnParams:
    filters = [(np.zeros((a, b)), np.zeros((a, b))) for a, b in config.filter_shapes()]
    mlp = [(np.zeros((a, b)), np.zeros(b)) for a, b in config.mlp_shapes()]
    return GnnParams(filters, mlp)


# ------------------------------ Forward / backward ---------------------------
@dataclass
class ForwardCache:
    adjacency: np.ndarray
    graph_inputs: List[np.ndarray] = field(default_factory=list)
    graph_shifted: List[np.ndarray] = field(default_factory=list)
    graph_pre: List[np.ndarray] = field(default_factory=list)
    mlp_inputs: List[np.ndarray] = field(default_factory=list)
    mlp_pre: List[np.ndarray] = field(default_factory=list)


def _relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0)


def forward_with_cache(
    params: GnnParams, config: GnnConfig, graph: InterconnectionGraph, states: np.ndarray
) -> Tuple[np.ndarray, ForwardCache]:
    states = np.asarray(states, dtype=float)
    if states.ndim not in (2, 3) or states.shape[-2:] != (graph.n_nodes, config.state_dim):
        raise ShapeError(f"States must end in ({graph.n_nodes}, {config.state_dim}), got {states.shape}.")
    if not np.all(np.isfinite(states)):
        logging.error("Non-finite entries in GNN input states.")
        raise NumericError("GNN input states contain non-finite entries.")

    adjacency = graph.adjacency.astype(float)
    cache = ForwardCache(adjacency)
    x = states
    for h0, h1 in params.filter_coeffs:
        ax = np.matmul(adjacency, x)
        pre = x @ h0 + ax @ h1
        cache.graph_inputs.append(x)
        cache.graph_shifted.append(ax)
        cache.graph_pre.append(pre)
        x = _relu(pre)

    h = x
    last = len(params.mlp_weights) - 1
    for k, (w, b) in enumerate(params.mlp_weights):
        pre = h @ w + b
        cache.mlp_inputs.append(h)
        cache.mlp_pre.append(pre)
        h = pre if k == last else _relu(pre)
    return h, cache


def forward(params: GnnParams, config: GnnConfig, graph: InterconnectionGraph, states: np.ndarray) -> np.ndarray:
    """Node embeddings g(x): row i is g_i(x)."""
    return forward_with_cache(params, config, graph, states)[0]


def _sum_outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Σ over all leading axes of aᵀ·b for (..., N, p) and (..., N, q)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def backward(params: GnnParams, cache: Optional[ForwardCache], grad_out: np.ndarray) -> GnnParams:
    """
    Parameter gradient of Σ grad_out ⊙ g(x) for the forward pass held in `cache`.
    """
    if cache is None or not cache.mlp_pre:
        raise UsageError("backward needs the cache returned by forward_with_cache.")
    grad = np.asarray(grad_out, dtype=float)
    if grad.shape != cache.mlp_pre[-1].shape:
        raise ShapeError(f"Cotangent shape {grad.shape} does not match output {cache.mlp_pre[-1].shape}.")

    mlp_grads: List[Tuple[np.ndarray, np.ndarray]] = []
    last = len(params.mlp_weights) - 1
    for k in range(last, -1, -1):
        w, _ = params.mlp_weights[k]
        if k != last:
            grad = grad * (cache.mlp_pre[k] > 0.0)
        mlp_grads.append((_sum_outer(cache.mlp_inputs[k], grad), grad.reshape(-1, grad.shape[-1]).sum(axis=0)))
        grad = grad @ w.T
    mlp_grads.reverse()

    filter_grads: List[Tuple[np.ndarray, np.ndarray]] = []
    adjacency_t = cache.adjacency.T
    for l in range(len(params.filter_coeffs) - 1, -1, -1):
        h0, h1 = params.filter_coeffs[l]
        grad = grad * (cache.graph_pre[l] > 0.0)
        filter_grads.append((_sum_outer(cache.graph_inputs[l], grad), _sum_outer(cache.graph_shifted[l], grad)))
        if l:
            grad = grad @ h0.T + np.matmul(adjacency_t, grad @ h1.T)
    filter_grads.reverse()
    return GnnParams(filter_grads, mlp_grads)


# ------------------------------ Pair evaluation ------------------------------
def pair_values(diff: np.ndarray, degree: int) -> np.ndarray:
    """|d|^κ over the last axis."""
    return np.linalg.norm(diff, axis=-1) ** degree


def pair_cotangent(diff: np.ndarray, degree: int, upstream: np.ndarray) -> np.ndarray:
    """upstream · ∂|d|^κ/∂d = upstream · κ|d|^{κ−2}d, taken as 0 at d = 0."""
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    safe = np.where(norm > 0.0, norm, 1.0)
    coef = np.where(norm > 0.0, degree * safe ** (degree - 2), 0.0)
    return np.asarray(upstream, dtype=float)[..., None] * coef * diff


# -------------------------------- Spectral norms ------------------------------
@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    iterations: int
    converged: bool


def spectral_norm_estimate(
    matrix: np.ndarray,
    seed: int = 0,
    max_iter: int = 100_000,
    tol: float = 1e-12,
    start: Optional[np.ndarray] = None,
) -> SpectralEstimate:
    """
    Largest singular value by power iteration on MᵀM. Converged means the
    eigen-residual |MᵀMv − λv| is within tol·λ.
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ShapeError(f"spectral_norm expects a matrix, got shape {m.shape}.")
    if not np.all(np.isfinite(m)):
        raise NumericError("spectral_norm got non-finite entries.")
    if m.size == 0 or not np.any(m):
        return SpectralEstimate(0.0, 0, True)

    gram = m.T @ m
    v = np.random.default_rng(seed).standard_normal(m.shape[1]) if start is None else np.asarray(start, dtype=float)
    v = v / np.linalg.norm(v)
    lam = 0.0
    for it in range(1, max_iter + 1):
        gv = gram @ v
        lam = float(v @ gv)
        if np.linalg.norm(gv - lam * v) <= tol * max(lam, np.finfo(float).tiny):
            return SpectralEstimate(math.sqrt(max(lam, 0.0)), it, True)
        norm = np.linalg.norm(gv)
        if norm == 0.0:
            # start landed in the null space; restart from a fresh direction
            v = np.random.default_rng(seed + it).standard_normal(m.shape[1])
            v = v / np.linalg.norm(v)
            continue
        v = gv / norm
    message = f"Power iteration hit the cap of {max_iter} iterations; spectral norm {math.sqrt(lam):.12g} is not certified."
    logging.warning(message)
    warnings.warn(message, NonCertifiedBoundWarning)
    return SpectralEstimate(math.sqrt(max(lam, 0.0)), max_iter, False)


def spectral_norm(matrix: np.ndarray, seed: int = 0, max_iter: int = 100_000, tol: float = 1e-12) -> float:
    return spectral_norm_estimate(matrix, seed=seed, max_iter=max_iter, tol=tol).value


# relative pad over the SVD value; covers the backward error of the LAPACK routine
SVD_PAD = 1e-10
# above this node count the adjacency bound skips the dense SVD
DENSE_SVD_NODES = 2000


def spectral_upper_bound(matrix: np.ndarray) -> float:
    """
    Certified upper bound on ‖M‖₂: the largest singular value from a dense SVD,
    padded by SVD_PAD, never above the Hölder bound √(‖M‖₁‖M‖∞).
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ShapeError(f"spectral_upper_bound expects a matrix, got shape {m.shape}.")
    if not np.all(np.isfinite(m)):
        raise NumericError("spectral_upper_bound got non-finite entries.")
    if m.size == 0 or not np.any(m):
        return 0.0
    abs_m = np.abs(m)
    holder = math.sqrt(abs_m.sum(axis=0).max() * abs_m.sum(axis=1).max())
    return float(min(holder, np.linalg.norm(m, 2) * (1.0 + SVD_PAD)))


@functools.lru_cache(maxsize=32)
def adjacency_norm(graph: InterconnectionGraph) -> float:
    """
    Upper bound on ‖A‖₂: the padded SVD value for graphs up to DENSE_SVD_NODES
    nodes, the Hölder bound √(‖A‖₁‖A‖∞) beyond. Both are exact on regular graphs.
    """
    adj = graph.adjacency.astype(float)
    if graph.n_nodes <= DENSE_SVD_NODES:
        return spectral_upper_bound(adj)
    holder = math.sqrt(adj.sum(axis=0).max() * adj.sum(axis=1).max())
    logging.info(f"Adjacency norm uses the Hölder bound {holder:.6g} for {graph}.")
    return float(holder)


def embedding_lipschitz(params: GnnParams, config: GnnConfig, graph: InterconnectionGraph) -> float:
    """
    Upper bound L_g on the Lipschitz constant of x ↦ g(x) (flattened, Euclidean):
    Π_graph (‖H⁰‖ + ‖A‖‖H¹‖) · Π_mlp ‖W‖, every norm a certified upper bound.
    """
    params.validate(config)
    a_norm = adjacency_norm(graph)
    bound = 1.0
    for h0, h1 in params.filter_coeffs:
        bound *= spectral_upper_bound(h0) + a_norm * spectral_upper_bound(h1)
    for w, _ in params.mlp_weights:
        bound *= spectral_upper_bound(w)
    return float(bound)


def spectral_cap(params: GnnParams, ceiling: float) -> GnnParams:
    """Rescales every weight matrix whose spectral norm bound exceeds `ceiling` onto it."""
    if ceiling <= 0:
        raise ValueError(f"Spectral ceiling must be positive, got {ceiling}.")

    def cap(mat: np.ndarray) -> np.ndarray:
        sigma = spectral_upper_bound(mat)
        return mat * (ceiling / sigma) if sigma > ceiling else mat

    filters = [(cap(h0), cap(h1)) for h0, h1 in params.filter_coeffs]
    mlp = [(cap(w), b) for w, b in params.mlp_weights]
    return GnnParams(filters, mlp)


def capped_embedding_lipschitz(config: GnnConfig, graph: InterconnectionGraph, ceiling: float) -> float:
    """L_g reachable by any parameters projected onto the spectral ceiling."""
    a_norm = adjacency_norm(graph)
    return float((ceiling * (1.0 + a_norm)) ** config.graph_layers * ceiling ** (config.mlp_layers + 1))

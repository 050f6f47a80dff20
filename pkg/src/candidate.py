# src/candidate.py
"""
Local incremental Lyapunov candidates.

A candidate maps a pair of full states (x, x̂) to per-node values Vᵢ ≥ 0 with
Vᵢ(x, x) = 0. Two strategies are available:

  - GnnCandidate:      Vᵢ = |gᵢ(x) − gᵢ(x̂)|^κ with g the shared-weight GNN
  - AnalyticCandidate: Vᵢ = |x̃ᵢ − x̂̃ᵢ|^κ on the 1-hop local state

Each strategy also knows how to bound the Lipschitz constants of the three
local conditions, given the geometry of the verification domain.
"""
from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.exceptions import ConfigError, ShapeError
from src.gnn import (
    ForwardCache,
    GnnConfig,
    GnnParams,
    backward,
    capped_embedding_lipschitz,
    embedding_lipschitz,
    forward_with_cache,
    pair_cotangent,
    pair_values,
)
from src.topology import InterconnectionGraph

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

SQRT2 = math.sqrt(2.0)


# ----------------------------- Hyperparameters ------------------------------
@dataclass(frozen=True)
class ClassConstants:
    alpha: float
    alpha_bar: float
    alpha_tilde: float
    sigma: float
    margin: float


def _as_tuple(value) -> Tuple[float, ...]:
    if np.isscalar(value):
        return (float(value),)
    return tuple(float(v) for v in value)


@dataclass(frozen=True)
class CertificateHyper:
    """
    Comparison-function coefficients per node class. Every per-class field is a
    tuple; a single entry applies to all classes.
    """

    degree: int = 1
    lower: Tuple[float, ...] = (0.01,)
    upper: Tuple[float, ...] = (1.0,)
    decay: Tuple[float, ...] = (0.005,)
    input_gain: Tuple[float, ...] = (0.0,)
    margin: Tuple[float, ...] = (-0.0003,)
    loss_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("lower", "upper", "decay", "input_gain", "margin"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))
        object.__setattr__(self, "loss_weights", tuple(float(c) for c in self.loss_weights))
        if self.degree < 1:
            raise ValueError(f"degree must be a positive integer, got {self.degree}.")
        if len(self.loss_weights) != 3 or min(self.loss_weights) <= 0:
            raise ValueError(f"loss_weights must be three positive reals, got {self.loss_weights}.")
        lengths = {len(getattr(self, n)) for n in ("lower", "upper", "decay", "input_gain", "margin")} - {1}
        if len(lengths) > 1:
            raise ValueError(f"Per-class hyperparameters disagree on the class count: {sorted(lengths)}.")
        for c in range(self.n_classes or 1):
            k = self.for_class(c)
            if not 0 < k.alpha <= k.alpha_bar:
                raise ValueError(f"Class {c}: need 0 < alpha <= alpha_bar, got {k.alpha} and {k.alpha_bar}.")
            if k.alpha_tilde <= 0:
                raise ValueError(f"Class {c}: decay coefficient must be positive, got {k.alpha_tilde}.")
            if k.sigma < 0:
                raise ValueError(f"Class {c}: input gain must be nonnegative, got {k.sigma}.")
            if k.margin >= 0:
                raise ValueError(f"Class {c}: margin must be negative, got {k.margin}.")

    @property
    def n_classes(self) -> Optional[int]:
        """Explicit class count, or None when every field broadcasts."""
        lengths = {len(getattr(self, n)) for n in ("lower", "upper", "decay", "input_gain", "margin")} - {1}
        return lengths.pop() if lengths else None

    def check_classes(self, n_classes: int) -> None:
        if self.n_classes not in (None, n_classes):
            raise ConfigError(f"Hyperparameters list {self.n_classes} classes, the graph has {n_classes}.")

    def for_class(self, class_id: int) -> ClassConstants:
        def pick(values: Tuple[float, ...]) -> float:
            return values[0] if len(values) == 1 else values[class_id]

        return ClassConstants(
            alpha=pick(self.lower),
            alpha_bar=pick(self.upper),
            alpha_tilde=pick(self.decay),
            sigma=pick(self.input_gain),
            margin=pick(self.margin),
        )

    def remap(self, class_map: Sequence[int]) -> "CertificateHyper":
        """New per-class tuples: new class c takes the constants of old class class_map[c]."""

        def take(values: Tuple[float, ...]) -> Tuple[float, ...]:
            return values if len(values) == 1 else tuple(values[c] for c in class_map)

        return replace(
            self,
            lower=take(self.lower),
            upper=take(self.upper),
            decay=take(self.decay),
            input_gain=take(self.input_gain),
            margin=take(self.margin),
        )

    def to_dict(self) -> Dict:
        return {
            "degree": self.degree,
            "lower": list(self.lower),
            "upper": list(self.upper),
            "decay": list(self.decay),
            "input_gain": list(self.input_gain),
            "margin": list(self.margin),
            "loss_weights": list(self.loss_weights),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "CertificateHyper":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in data.items()})


# ------------------------- Condition Lipschitz types -------------------------
@dataclass(frozen=True)
class ConditionGeometry:
    """Diameters of the argument boxes the three conditions range over."""

    degree: int
    local_diameter: float  # 1-hop local state box
    receptive_diameter: float  # receptive closure (conditions 1-2)
    next_diameter: float  # (state, input) argument of the local transition
    input_diameter: float  # 1-hop local input box
    dyn_lipschitz: float
    has_inputs: bool


@dataclass(frozen=True)
class ConditionLipschitz:
    l1: float
    l2: float
    l3: float

    @property
    def max(self) -> float:
        return max(self.l1, self.l2, self.l3)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.l1, self.l2, self.l3)


def power_lipschitz(degree: int, diameter: float, scale: float = 1.0) -> float:
    """Joint Lipschitz constant of (z, ẑ) ↦ |scale·(z − ẑ)|^κ on pairs at most `diameter` apart."""
    if scale == 0.0:
        return 0.0
    return degree * (scale * diameter) ** (degree - 1) * scale * SQRT2


# --------------------------------- Strategies --------------------------------
class LyapunovCandidate(ABC):
    kind: str = "abstract"

    def __init__(self, hyper: CertificateHyper, state_dim: int):
        self.hyper = hyper
        self.state_dim = int(state_dim)

    @property
    def degree(self) -> int:
        return self.hyper.degree

    @property
    @abstractmethod
    def receptive_depth(self) -> int:
        """Hop depth of the states Vᵢ reads."""

    @abstractmethod
    def evaluate(self, graph: InterconnectionGraph, x: np.ndarray, xh: np.ndarray) -> np.ndarray:
        """Per-node values, shape (..., N)."""

    @abstractmethod
    def embedding_lipschitz(self, graph: InterconnectionGraph) -> float:
        """Lipschitz bound of the map whose pair distance defines Vᵢ."""

    @abstractmethod
    def local_embedding(self, subgraph: InterconnectionGraph, xr: np.ndarray, n_local: int) -> np.ndarray:
        """
        Root (index 0) embedding e of a receptive closure, for batches of closure
        states (B, |R|, n), such that Vᵢ = |e − ê|^κ. `n_local` is the 1-hop node
        count, which leads the closure ordering.
        """

    def local_values(
        self, subgraph: InterconnectionGraph, xr: np.ndarray, xhr: np.ndarray, n_local: int
    ) -> np.ndarray:
        diff = self.local_embedding(subgraph, xr, n_local) - self.local_embedding(subgraph, xhr, n_local)
        return pair_values(diff, self.degree)

    def condition_lipschitz(
        self, graph: InterconnectionGraph, constants: ClassConstants, geometry: ConditionGeometry
    ) -> ConditionLipschitz:
        k = geometry.degree
        l_g = self.embedding_lipschitz(graph)
        l_v = power_lipschitz(k, geometry.receptive_diameter, l_g)
        l_pow = power_lipschitz(k, geometry.local_diameter)
        l_next = power_lipschitz(k, geometry.next_diameter, l_g * geometry.dyn_lipschitz)
        l_pow_w = power_lipschitz(k, geometry.input_diameter) if geometry.has_inputs else 0.0
        return ConditionLipschitz(
            l1=l_v + constants.alpha * l_pow,
            l2=l_v + constants.alpha_bar * l_pow,
            l3=l_next + l_v + constants.alpha_tilde * l_pow + constants.sigma * l_pow_w,
        )


@dataclass
class PairCache:
    cache: ForwardCache
    diff: np.ndarray
    batch: int


class GnnCandidate(LyapunovCandidate):
    kind = "gnn"

    def __init__(self, params: GnnParams, config: GnnConfig, hyper: CertificateHyper):
        if config.degree != hyper.degree:
            raise ValueError(f"GNN degree {config.degree} differs from hyperparameter degree {hyper.degree}.")
        params.validate(config)
        super().__init__(hyper, config.state_dim)
        self.params = params
        self.config = config

    @property
    def receptive_depth(self) -> int:
        return self.config.receptive_depth

    def with_params(self, params: GnnParams) -> "GnnCandidate":
        return GnnCandidate(params, self.config, self.hyper)

    def with_hyper(self, hyper: CertificateHyper) -> "GnnCandidate":
        return GnnCandidate(self.params, self.config, hyper)

    def pair_forward(
        self, graph: InterconnectionGraph, x: np.ndarray, xh: np.ndarray
    ) -> Tuple[np.ndarray, PairCache]:
        """Values (B, N) for batches x, x̂ of shape (B, N, n), plus the cache for pair_backward."""
        x = np.asarray(x, dtype=float)
        xh = np.asarray(xh, dtype=float)
        if x.shape != xh.shape or x.ndim != 3:
            raise ShapeError(f"Pair batches must share a (B, N, n) shape, got {x.shape} and {xh.shape}.")
        emb, cache = forward_with_cache(self.params, self.config, graph, np.concatenate([x, xh], axis=0))
        batch = x.shape[0]
        diff = emb[:batch] - emb[batch:]
        return pair_values(diff, self.degree), PairCache(cache, diff, batch)

    def pair_backward(self, pair_cache: PairCache, upstream: np.ndarray) -> GnnParams:
        """Parameter gradient of Σ upstream ⊙ V for the pairs in `pair_cache`."""
        cot = pair_cotangent(pair_cache.diff, self.degree, upstream)
        return backward(self.params, pair_cache.cache, np.concatenate([cot, -cot], axis=0))

    def evaluate(self, graph: InterconnectionGraph, x: np.ndarray, xh: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 2
        values, _ = self.pair_forward(graph, x[None] if single else x, np.asarray(xh)[None] if single else xh)
        return values[0] if single else values

    def local_embedding(self, subgraph: InterconnectionGraph, xr: np.ndarray, n_local: int) -> np.ndarray:
        emb, _ = forward_with_cache(self.params, self.config, subgraph, xr)
        return emb[..., 0, :]

    def embedding_lipschitz(self, graph: InterconnectionGraph) -> float:
        return embedding_lipschitz(self.params, self.config, graph)

    def __repr__(self) -> str:
        return (
            f"GnnCandidate(graph_widths={list(self.config.graph_widths)}, mlp_widths={list(self.config.mlp_widths)}, "
            f"output_dim={self.config.output_dim}, degree={self.degree})"
        )


class AnalyticCandidate(LyapunovCandidate):
    """Vᵢ = |x̃ᵢ − x̂̃ᵢ|^κ; a fixed reference candidate with exact condition constants."""

    kind = "analytic"

    @property
    def receptive_depth(self) -> int:
        return 1

    def evaluate(self, graph: InterconnectionGraph, x: np.ndarray, xh: np.ndarray) -> np.ndarray:
        diff = np.asarray(x, dtype=float) - np.asarray(xh, dtype=float)
        if diff.shape[-2:] != (graph.n_nodes, self.state_dim):
            raise ShapeError(f"States must end in ({graph.n_nodes}, {self.state_dim}), got {diff.shape}.")
        squared = np.sum(diff ** 2, axis=-1, keepdims=True)
        local_sq = np.matmul(graph.adjacency.astype(float), squared)[..., 0]
        return np.sqrt(local_sq) ** self.degree

    def local_embedding(self, subgraph: InterconnectionGraph, xr: np.ndarray, n_local: int) -> np.ndarray:
        local = np.asarray(xr, dtype=float)[..., :n_local, :]
        return local.reshape(local.shape[:-2] + (-1,))

    def embedding_lipschitz(self, graph: InterconnectionGraph) -> float:
        return 1.0

    def condition_lipschitz(
        self, graph: InterconnectionGraph, constants: ClassConstants, geometry: ConditionGeometry
    ) -> ConditionLipschitz:
        k = geometry.degree
        l_pow = power_lipschitz(k, geometry.local_diameter)
        l_next = power_lipschitz(k, geometry.next_diameter, geometry.dyn_lipschitz)
        l_pow_w = power_lipschitz(k, geometry.input_diameter) if geometry.has_inputs else 0.0
        # Vᵢ and the comparison terms share |Δ|^κ, so conditions 1-2 collapse to (1 − c)|Δ|^κ
        return ConditionLipschitz(
            l1=abs(1.0 - constants.alpha) * l_pow,
            l2=abs(1.0 - constants.alpha_bar) * l_pow,
            l3=l_next + abs(constants.alpha_tilde - 1.0) * l_pow + constants.sigma * l_pow_w,
        )

    def __repr__(self) -> str:
        return f"AnalyticCandidate(degree={self.degree}, state_dim={self.state_dim})"


# --------------------------------- Operations --------------------------------
def lyapunov_eval(
    cand: LyapunovCandidate, graph: InterconnectionGraph, x: np.ndarray, xh: np.ndarray
) -> Tuple[np.ndarray, float]:
    """Per-node values and their total V(x, x̂) = Σᵢ Vᵢ."""
    per_node = cand.evaluate(graph, x, xh)
    return per_node, float(np.sum(per_node, axis=-1)) if per_node.ndim == 1 else np.sum(per_node, axis=-1)


def auto_upper_bound(cand: LyapunovCandidate, graph: InterconnectionGraph, spectral_cap: Optional[float]) -> float:
    """
    ᾱ that makes the upper comparison bound hold by construction: L_g^κ, using
    the cap-derived L_g when a spectral ceiling bounds every future parameter.
    """
    if isinstance(cand, GnnCandidate) and spectral_cap:
        l_g = capped_embedding_lipschitz(cand.config, graph, spectral_cap)
    else:
        l_g = cand.embedding_lipschitz(graph)
    value = max(l_g, np.finfo(float).eps) ** cand.degree
    logging.info(f"Upper comparison coefficient resolved to {value:.6g} (L_g = {l_g:.6g}).")
    return float(value)

# src/topology.py
"""
Interconnection graphs of large-scale systems.

This module provides:
  - InterconnectionGraph (binary adjacency with self-loops, neighbor lists)
  - ring_bidirectional / ring_directed / from_edges builders
  - TopologyFactory (chooses the builder from a config section)
  - shift (the graph shift operator A·x)
  - local_norm_powers (per-node norms of 1-hop local differences)
  - closure / induced_subgraph (local views around a node)
  - node_equivalence_classes (nodes with isomorphic rooted neighborhoods)
  - permute / permute_states (node relabelling)

Direction convention: adjacency[i][j] = 1 means node j influences node i, so
row i of A·x aggregates node i's own row and its neighbors' rows.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from networkx.algorithms.isomorphism import categorical_node_match

from src.exceptions import InvalidPermutationError, InvalidTopologyError, ShapeError

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")


# ------------------------------- Graph type ---------------------------------
@dataclass(frozen=True, eq=False)
class InterconnectionGraph:
    """Static directed graph of N subsystems with self-loops on every node."""

    adjacency: np.ndarray
    neighbor_lists: Tuple[Tuple[int, ...], ...] = field(init=False)
    # CSR view of the adjacency: row i's members are local_members[local_starts[i]:local_starts[i + 1]]
    local_members: np.ndarray = field(init=False, repr=False)
    local_starts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=np.int8, copy=True)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1] or adj.shape[0] < 1:
            raise InvalidTopologyError(f"Adjacency must be a non-empty square matrix, got shape {adj.shape}.")
        if not np.isin(adj, (0, 1)).all():
            raise InvalidTopologyError("Adjacency must be binary.")
        if not np.all(np.diag(adj) == 1):
            raise InvalidTopologyError("Every node must carry a self-loop (adjacency[i][i] = 1).")
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        nbrs = tuple(
            tuple(int(j) for j in np.flatnonzero(adj[i]) if j != i) for i in range(adj.shape[0])
        )
        object.__setattr__(self, "neighbor_lists", nbrs)
        rows, cols = np.nonzero(adj)
        object.__setattr__(self, "local_members", cols)
        object.__setattr__(self, "local_starts", np.searchsorted(rows, np.arange(adj.shape[0])))

    @property
    def n_nodes(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def key(self) -> Tuple[int, bytes]:
        return (self.n_nodes, self.adjacency.tobytes())

    @property
    def max_degree(self) -> int:
        """Largest neighborhood size d (self excluded)."""
        return max(len(n) for n in self.neighbor_lists)

    def multiplicity(self) -> np.ndarray:
        """Number of local states x̃ᵢ that contain node j, per j (column sums of A)."""
        return self.adjacency.sum(axis=0).astype(int)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InterconnectionGraph):
            return NotImplemented
        return self.key == other.key

    def __hash__(self) -> int:
        return hash(self.key)

    def __repr__(self) -> str:
        return f"InterconnectionGraph(n_nodes={self.n_nodes}, edges={int(self.adjacency.sum()) - self.n_nodes})"


# -------------------------------- Builders ----------------------------------
def ring_bidirectional(n_nodes: int) -> InterconnectionGraph:
    """Circular graph where every node neighbors its predecessor and successor."""
    if n_nodes < 3:
        logging.error(f"Bidirectional ring needs at least 3 nodes, got {n_nodes}.")
        raise InvalidTopologyError(f"ring_bidirectional requires n_nodes >= 3, got {n_nodes}.")
    adj = np.eye(n_nodes, dtype=np.int8)
    for i in range(n_nodes):
        adj[i, (i + 1) % n_nodes] = 1
        adj[i, (i - 1) % n_nodes] = 1
    return InterconnectionGraph(adj)


def ring_directed(n_nodes: int) -> InterconnectionGraph:
    """One-directional ring: node i is influenced by node i+1 (mod N)."""
    if n_nodes < 2:
        logging.error(f"Directed ring needs at least 2 nodes, got {n_nodes}.")
        raise InvalidTopologyError(f"ring_directed requires n_nodes >= 2, got {n_nodes}.")
    adj = np.eye(n_nodes, dtype=np.int8)
    for i in range(n_nodes):
        adj[i, (i + 1) % n_nodes] = 1
    return InterconnectionGraph(adj)


def from_edges(n_nodes: int, edges: Iterable[Sequence[int]]) -> InterconnectionGraph:
    """
    Builds a graph from an explicit edge list.

    Each edge [i, j] sets adjacency[i][j] = 1 (j influences i). Self-loops are
    implied, so listing [i, i] or any edge twice is rejected as a duplicate.
    """
    if n_nodes < 1:
        raise InvalidTopologyError(f"n_nodes must be positive, got {n_nodes}.")
    adj = np.eye(n_nodes, dtype=np.int8)
    for edge in edges:
        if len(edge) != 2:
            raise InvalidTopologyError(f"Edge {list(edge)} must have exactly two endpoints.")
        i, j = int(edge[0]), int(edge[1])
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise InvalidTopologyError(f"Edge {[i, j]} has an index outside [0, {n_nodes}).")
        if adj[i, j]:
            raise InvalidTopologyError(f"Duplicate edge {[i, j]} (self-loops are implied).")
        adj[i, j] = 1
    return InterconnectionGraph(adj)


class TopologyFactory:
    """
    Chooses the graph builder from a topology description:
      - "ring_bidirectional" / "ring_directed" with n_nodes
      - "edges" with n_nodes and an explicit edge list
    """

    @staticmethod
    def get_topology(kind: str, n_nodes: int, edges: Optional[Sequence[Sequence[int]]] = None) -> InterconnectionGraph:
        if kind == "ring_bidirectional":
            return ring_bidirectional(n_nodes)
        if kind == "ring_directed":
            return ring_directed(n_nodes)
        if kind == "edges":
            return from_edges(n_nodes, edges or [])
        raise InvalidTopologyError(
            f"Unsupported topology kind '{kind}'. Use 'ring_bidirectional', 'ring_directed' or 'edges'."
        )


# ------------------------------ Shift operator -------------------------------
def shift(graph: InterconnectionGraph, states: np.ndarray) -> np.ndarray:
    """
    Returns A·states. Accepts an (N, d) matrix or a batch of shape (B, N, d).
    """
    states = np.asarray(states, dtype=float)
    if states.ndim not in (2, 3) or states.shape[-2] != graph.n_nodes:
        raise ShapeError(
            f"States must have shape (N, d) or (B, N, d) with N = {graph.n_nodes}, got {states.shape}."
        )
    return np.matmul(graph.adjacency.astype(float), states)


def local_norm_powers(graph: InterconnectionGraph, diff: np.ndarray, degree: int) -> np.ndarray:
    """
    |Δ̃ᵢ|^κ per node for (..., N, d) differences, where Δ̃ᵢ stacks the rows of
    node i and its neighbors. Sums squared row norms over the adjacency
    pattern, so memory stays linear in the edge count.
    """
    diff = np.asarray(diff, dtype=float)
    if diff.shape[-1] == 0:
        return np.zeros(diff.shape[:-1])
    if diff.ndim < 2 or diff.shape[-2] != graph.n_nodes:
        raise ShapeError(f"Differences must have shape (..., {graph.n_nodes}, d), got {diff.shape}.")
    squared = np.sum(diff ** 2, axis=-1)
    local_sq = np.add.reduceat(squared[..., graph.local_members], graph.local_starts, axis=-1)
    return np.sqrt(local_sq) ** degree


# ------------------------------- Local views --------------------------------
def closure(graph: InterconnectionGraph, node: int, hops: int) -> Tuple[int, ...]:
    """
    Nodes within `hops` in-neighborhood hops of `node`, ordered by hop layer
    and ascending inside each layer. For hops = 1 this is the local-state
    order [self, neighbors ascending].
    """
    if not 0 <= node < graph.n_nodes:
        raise InvalidTopologyError(f"Node {node} outside [0, {graph.n_nodes}).")
    order: List[int] = [node]
    seen = {node}
    frontier = [node]
    for _ in range(max(hops, 0)):
        layer = sorted({j for i in frontier for j in graph.neighbor_lists[i]} - seen)
        if not layer:
            break
        order.extend(layer)
        seen.update(layer)
        frontier = layer
    return tuple(order)


def induced_subgraph(graph: InterconnectionGraph, nodes: Sequence[int]) -> InterconnectionGraph:
    """Subgraph on `nodes`, relabelled 0..len(nodes)-1 in the given order."""
    idx = np.asarray(nodes, dtype=int)
    return InterconnectionGraph(graph.adjacency[np.ix_(idx, idx)])


# --------------------------- Node equivalence classes ------------------------
@dataclass(frozen=True)
class NodeClassPartition:
    class_of: Tuple[int, ...]
    representatives: Tuple[int, ...]

    @property
    def n_classes(self) -> int:
        return len(self.representatives)

    def members(self, class_id: int) -> Tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.class_of) if c == class_id)


PARTITION_CACHE_SIZE = 32


def rooted_neighborhood(graph: InterconnectionGraph, node: int, depth: int) -> nx.DiGraph:
    """Induced depth-limited in-neighborhood of `node` with the root marked."""
    members = closure(graph, node, depth)
    sub = nx.DiGraph()
    for j in members:
        sub.add_node(j, role="root" if j == node else "member")
    member_set = set(members)
    for i in members:
        for j in graph.neighbor_lists[i]:
            if j in member_set:
                sub.add_edge(i, j)
    return sub


@functools.lru_cache(maxsize=PARTITION_CACHE_SIZE)
def node_equivalence_classes(graph: InterconnectionGraph, depth: int) -> NodeClassPartition:
    """
    Groups nodes whose rooted depth-hop neighborhoods are isomorphic.

    A Weisfeiler-Lehman hash buckets candidates; membership inside a bucket is
    decided by an exact isomorphism test against the class representative.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}.")
    node_match = categorical_node_match("role", None)
    buckets: Dict[str, List[Tuple[int, nx.DiGraph]]] = {}
    class_of: List[int] = []
    representatives: List[int] = []
    for i in range(graph.n_nodes):
        hood = rooted_neighborhood(graph, i, depth)
        digest = nx.weisfeiler_lehman_graph_hash(hood, node_attr="role")
        assigned = None
        for class_id, rep_hood in buckets.get(digest, []):
            if nx.is_isomorphic(hood, rep_hood, node_match=node_match):
                assigned = class_id
                break
        if assigned is None:
            assigned = len(representatives)
            representatives.append(i)
            buckets.setdefault(digest, []).append((assigned, hood))
        class_of.append(assigned)

    partition = NodeClassPartition(tuple(class_of), tuple(representatives))
    logging.info(f"Node equivalence classes at depth {depth}: {partition.n_classes} class(es) over {graph.n_nodes} nodes.")
    return partition


def neighborhoods_match(
    graph_a: InterconnectionGraph, node_a: int, graph_b: InterconnectionGraph, node_b: int, depth: int
) -> bool:
    """True when the rooted depth-hop neighborhoods of the two nodes are isomorphic."""
    return nx.is_isomorphic(
        rooted_neighborhood(graph_a, node_a, depth),
        rooted_neighborhood(graph_b, node_b, depth),
        node_match=categorical_node_match("role", None),
    )


def singleton_partition(graph: InterconnectionGraph) -> NodeClassPartition:
    """One class per node; always sound, never exploits symmetry."""
    return NodeClassPartition(tuple(range(graph.n_nodes)), tuple(range(graph.n_nodes)))


# -------------------------------- Permutations -------------------------------
def _validated_permutation(perm: Sequence[int], n_nodes: int) -> np.ndarray:
    p = np.asarray(perm, dtype=int)
    if p.shape != (n_nodes,) or not np.array_equal(np.sort(p), np.arange(n_nodes)):
        raise InvalidPermutationError(f"{list(perm)} is not a permutation of [0, {n_nodes}).")
    return p


def invert_permutation(perm: Sequence[int]) -> List[int]:
    p = _validated_permutation(perm, len(perm))
    return [int(v) for v in np.argsort(p)]


def permute(graph: InterconnectionGraph, perm: Sequence[int]) -> InterconnectionGraph:
    """
    Relabels node i as perm[i]: adjacency' = P·adjacency·Pᵀ with P[perm[i], i] = 1.
    """
    p = _validated_permutation(perm, graph.n_nodes)
    inv = np.argsort(p)
    return InterconnectionGraph(graph.adjacency[np.ix_(inv, inv)])


def permute_states(perm: Sequence[int], states: np.ndarray) -> np.ndarray:
    """Applies the same relabelling to state rows: out[perm[i]] = states[i]."""
    states = np.asarray(states)
    p = _validated_permutation(perm, states.shape[-2])
    return states[..., np.argsort(p), :]

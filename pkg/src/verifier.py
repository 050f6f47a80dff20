# src/verifier.py
"""
Sampling-based verification of local incremental Lyapunov conditions.

For every node class representative i the three local conditions

  (1)  −Vᵢ(x̃, x̂̃) + αᵢ|x̃ − x̂̃|^κ                                   ≤ η̂ᵢ₁
  (2)   Vᵢ(x̃, x̂̃) − ᾱᵢ|x̃ − x̂̃|^κ                                   ≤ η̂ᵢ₂
  (3)   Vᵢ(f̃ᵢ(x̃, w̃), f̃ᵢ(x̂̃, ŵ̃)) − Vᵢ(x̃, x̂̃) + α̃ᵢ|x̃ − x̂̃|^κ − σᵢ|w̃ − ŵ̃|^κ ≤ η̂ᵢ₃

are maximized over every admissible pair of covering-grid points. A condition
extends from the grid to the whole box when η̂ + factor·L·ε ≤ 0, L being a
certified Lipschitz constant of its left-hand side.

Pair reductions are split into row blocks evaluated by joblib workers; partial
maxima are combined in block order, so reports do not depend on worker count.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from src.candidate import (
    ClassConstants,
    ConditionGeometry,
    ConditionLipschitz,
    CertificateHyper,
    LyapunovCandidate,
)
from src.exceptions import CompositionRefusedError, DomainError, GridBudgetError, VerificationAbortedError
from src.gnn import pair_values
from src.system import Box, ClosureMode, SystemOracle, simulate, step_nodes
from src.topology import (
    InterconnectionGraph,
    NodeClassPartition,
    closure,
    induced_subgraph,
    local_norm_powers,
    node_equivalence_classes,
    singleton_partition,
)

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

SQRT2 = math.sqrt(2.0)
# random differences drawn by compose_bounds: a cap on the total element count, and the batch size
COMPOSE_SAMPLE_ELEMENTS = 10_000_000
COMPOSE_BATCH_ELEMENTS = 1 << 20
MIN_COMPOSE_SAMPLES = 1_000
DEFAULT_BUDGET = 100_000_000


# ---------------------------------- Grids -----------------------------------
@dataclass(frozen=True, eq=False)
class CoverGrid:
    points: np.ndarray  # (P, dim)
    radius: float
    box: Box
    counts: Tuple[int, ...]

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return self.box.dim


def grid_cover(box: Box, radius: float, budget: int = DEFAULT_BUDGET) -> CoverGrid:
    """
    Axis-uniform lattice whose radius-balls cover `box`. Per axis the spacing
    is at most 2·radius/√dim and points sit at cell centers, so the farthest
    box point is at most √dim·spacing/2 ≤ radius from the lattice.
    """
    if not radius > 0:
        raise ValueError(f"Covering radius must be positive, got {radius}.")
    if box.dim == 0:
        return CoverGrid(np.zeros((1, 0)), float(radius), box, ())
    max_spacing = 2.0 * radius / math.sqrt(box.dim)
    counts = tuple(max(1, math.ceil(w / max_spacing)) if w > 0 else 1 for w in box.width)
    required = math.prod(counts)
    if required > budget:
        logging.error(f"Covering grid needs {required} points, budget is {budget}.")
        raise GridBudgetError(
            f"Covering {box} at radius {radius} needs {required} grid points (budget {budget}).", required, budget
        )
    axes = []
    for low, width, count in zip(box.low, box.width, counts):
        spacing = width / count
        axes.append(low + spacing * (np.arange(count) + 0.5) if width > 0 else np.array([low]))
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    points = np.clip(points, box.low, box.high)
    return CoverGrid(points, float(radius), box, counts)


# ------------------------------ Local domains -------------------------------
@dataclass(frozen=True)
class LocalDomains:
    """Closures of one representative: R for conditions 1-2, C for condition 3."""

    node: int
    receptive: Tuple[int, ...]
    transition: Tuple[int, ...]
    n_local: int


def local_domains(
    graph: InterconnectionGraph, node: int, receptive_depth: int, closure_mode: ClosureMode | str
) -> LocalDomains:
    mode = ClosureMode(closure_mode)
    receptive = closure(graph, node, receptive_depth)
    transition = closure(graph, node, receptive_depth + 1) if mode is ClosureMode.TWO_HOP else receptive
    return LocalDomains(node, receptive, transition, len(closure(graph, node, 1)))


def partition_depth(cand: LyapunovCandidate, closure_mode: ClosureMode | str) -> int:
    """Neighborhood depth that makes the local verification problems of a class identical."""
    return cand.receptive_depth + (1 if ClosureMode(closure_mode) is ClosureMode.TWO_HOP else 0)


def certificate_partition(
    graph: InterconnectionGraph, cand: LyapunovCandidate, closure_mode: ClosureMode | str, use_symmetry: bool = True
) -> NodeClassPartition:
    if not use_symmetry:
        return singleton_partition(graph)
    return node_equivalence_classes(graph, partition_depth(cand, closure_mode))


def class_geometry(
    cand: LyapunovCandidate, oracle: SystemOracle, domains: LocalDomains
) -> ConditionGeometry:
    state_d = oracle.state_box.diameter
    input_d = oracle.input_box.diameter
    targets = len(domains.receptive)
    return ConditionGeometry(
        degree=cand.degree,
        local_diameter=math.sqrt(domains.n_local) * state_d,
        receptive_diameter=math.sqrt(len(domains.receptive)) * state_d,
        next_diameter=math.sqrt(len(domains.transition) * state_d ** 2 + targets * input_d ** 2),
        input_diameter=math.sqrt(domains.n_local) * input_d,
        dyn_lipschitz=oracle.dyn_lipschitz,
        has_inputs=oracle.input_dim > 0,
    )


def condition_lipschitz(
    cand: LyapunovCandidate,
    graph: InterconnectionGraph,
    oracle: SystemOracle,
    hyper: CertificateHyper,
    class_id: int = 0,
    representative: int = 0,
    closure_mode: ClosureMode | str = ClosureMode.TWO_HOP,
) -> ConditionLipschitz:
    """Certified Lipschitz constants of the three condition left-hand sides for one class."""
    domains = local_domains(graph, representative, cand.receptive_depth, closure_mode)
    return cand.condition_lipschitz(graph, hyper.for_class(class_id), class_geometry(cand, oracle, domains))


# ------------------------------ Theorem check --------------------------------
@dataclass(frozen=True)
class TheoremVerdict:
    passed: bool
    margin: float
    eta: float
    lipschitz: float
    epsilon: float
    factor: float


def theorem_check(eta: float, lipschitz: float, epsilon: float, factor: float = SQRT2) -> TheoremVerdict:
    """PASS iff eta + factor·lipschitz·epsilon ≤ 0."""
    if lipschitz < 0:
        raise ValueError(f"Lipschitz constant must be nonnegative, got {lipschitz}.")
    if not epsilon > 0:
        raise ValueError(f"Covering radius must be positive, got {epsilon}.")
    if factor < SQRT2 - 1e-15:
        raise ValueError(f"Inflation factor must be at least √2, got {factor}.")
    margin = eta + factor * lipschitz * epsilon
    return TheoremVerdict(bool(margin <= 0.0), float(margin), float(eta), float(lipschitz), float(epsilon), float(factor))


# -------------------------------- Residuals ----------------------------------
@dataclass(frozen=True)
class Witness:
    """Grid points attaining a residual: states are closure-ordered rows."""

    x: np.ndarray
    xh: np.ndarray
    w: Optional[np.ndarray] = None
    wh: Optional[np.ndarray] = None

    def to_dict(self) -> Dict:
        out = {"x": self.x.tolist(), "xh": self.xh.tolist()}
        if self.w is not None:
            out.update({"w": self.w.tolist(), "wh": self.wh.tolist()})
        return out


@dataclass
class ResidualResult:
    eta: Tuple[float, float, float]
    witnesses: Tuple[Optional[Witness], Optional[Witness], Optional[Witness]]
    evaluations: Tuple[int, int]  # pairs for conditions 1-2, tuples for condition 3
    excluded: Tuple[int, int]


def _block_bounds(total: int, chunk: int) -> List[Tuple[int, int]]:
    return [(start, min(start + chunk, total)) for start in range(0, total, chunk)]


def _reduce_pairs(
    lhs_fn, n_rows: int, n_cols: int, chunk_size: int, n_jobs: int
) -> Tuple[np.ndarray, List[Optional[Tuple[int, int]]], int]:
    """
    Max over all (row, col) pairs of the stacked left-hand sides returned by
    lhs_fn(rows, cols) -> (K, |rows|, |cols|) with −inf for excluded pairs.
    Ties resolve to the first pair in row-major order.
    """

    def reduce_rows(r0: int, r1: int):
        best, where, excluded = None, None, 0
        for c0, c1 in _block_bounds(n_cols, chunk_size):
            lhs = lhs_fn(slice(r0, r1), slice(c0, c1))
            excluded += int(np.isneginf(lhs[0]).sum())
            flat = lhs.reshape(lhs.shape[0], -1)
            idx = np.argmax(flat, axis=1)
            vals = flat[np.arange(flat.shape[0]), idx]
            if best is None:
                best, where = np.full(len(vals), -np.inf), [None] * len(vals)
            for k, (v, j) in enumerate(zip(vals, idx)):
                if v > best[k]:
                    best[k] = v
                    where[k] = (r0 + j // (c1 - c0), c0 + j % (c1 - c0))
        return best, where, excluded

    blocks = _block_bounds(n_rows, chunk_size)
    partials = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(reduce_rows)(r0, r1) for r0, r1 in blocks)

    best, where, excluded = None, None, 0
    for vals, locs, n_excl in partials:
        excluded += n_excl
        if best is None:
            best, where = np.full(len(vals), -np.inf), [None] * len(vals)
        for k in range(len(vals)):
            if vals[k] > best[k]:
                best[k], where[k] = vals[k], locs[k]
    return best, where, excluded


def _as_pair(grids) -> Tuple[CoverGrid, CoverGrid]:
    if isinstance(grids, CoverGrid):
        return grids, grids
    a, b = grids
    return a, b


def _next_embeddings(
    cand: LyapunovCandidate,
    oracle: SystemOracle,
    domains: LocalDomains,
    subgraph: InterconnectionGraph,
    states: np.ndarray,
    inputs: np.ndarray,
    chunk_size: int,
) -> np.ndarray:
    """Embeddings of the next receptive states for every (state, input) grid combination, state-major."""
    n, m = oracle.state_dim, oracle.input_dim
    n_states, n_inputs = states.shape[0], inputs.shape[0]
    out = []
    for s0, s1 in _block_bounds(n_states * n_inputs, max(chunk_size, 1)):
        idx = np.arange(s0, s1)
        vals = states[idx // n_inputs].reshape(-1, len(domains.transition), n)
        w = inputs[idx % n_inputs].reshape(-1, len(domains.receptive), m) if m else None
        try:
            nxt = step_nodes(oracle, domains.transition, vals, domains.receptive, w)
        except DomainError as exc:
            raise VerificationAbortedError(f"Oracle rejected a grid point: {exc}", witness=exc.point) from exc
        inside = oracle.state_box.contains(nxt)
        if not np.all(inside):
            bad = int(np.argwhere(~np.all(inside, axis=-1))[0][0])
            witness = {"x": vals[bad].tolist(), "next": nxt[bad].tolist()}
            logging.error(f"Local transition left the state box from grid point {witness['x']}.")
            raise VerificationAbortedError("Local transition left the state box (forward invariance).", witness=witness)
        out.append(cand.local_embedding(subgraph, nxt, domains.n_local))
    return np.concatenate(out, axis=0)


def condition_residuals(
    cand: LyapunovCandidate,
    graph: InterconnectionGraph,
    oracle: SystemOracle,
    class_rep: int,
    xg,
    wg,
    constants: ClassConstants,
    closure_mode: ClosureMode | str = ClosureMode.TWO_HOP,
    xg3=None,
    diagonal_exclusion: float = 0.0,
    chunk_size: int = 512,
    n_jobs: int = 1,
    budget: int = DEFAULT_BUDGET,
) -> ResidualResult:
    """
    Worst-case left-hand sides of the three conditions over grid pairs.

    xg is a CoverGrid (or pair of grids for x and x̂) over the receptive closure
    states; xg3 covers the transition closure (defaults to xg in
    embed_reference mode); wg covers the inputs of the receptive closure.
    """
    mode = ClosureMode(closure_mode)
    domains = local_domains(graph, class_rep, cand.receptive_depth, mode)
    if xg3 is None:
        if mode is ClosureMode.TWO_HOP and len(domains.transition) != len(domains.receptive):
            raise ValueError("two_hop residuals need a grid over the transition closure (xg3).")
        xg3 = xg
    gx, gxh = _as_pair(xg)
    g3, g3h = _as_pair(xg3)
    gw, gwh = _as_pair(wg)
    n, k = oracle.state_dim, cand.degree
    n_local = domains.n_local
    subgraph = induced_subgraph(graph, domains.receptive)

    pairs12 = gx.size * gxh.size
    tuples3 = g3.size * gw.size * g3h.size * gwh.size
    for required in (pairs12, tuples3):
        if required > budget:
            logging.error(f"Condition evaluation needs {required} pairs, budget is {budget}.")
            raise GridBudgetError(f"Verification needs {required} condition evaluations (budget {budget}).", required, budget)

    def local_part(points: np.ndarray) -> np.ndarray:
        return points[:, : n_local * n]

    def admissible(delta: np.ndarray) -> np.ndarray:
        return (delta > 0.0) & (delta >= diagonal_exclusion)

    # conditions 1-2 over the receptive closure
    states_x = gx.points.reshape(-1, len(domains.receptive), n)
    states_xh = gxh.points.reshape(-1, len(domains.receptive), n)
    emb_x = cand.local_embedding(subgraph, states_x, n_local)
    emb_xh = emb_x if gxh is gx else cand.local_embedding(subgraph, states_xh, n_local)
    loc_x, loc_xh = local_part(gx.points), local_part(gxh.points)

    def lhs12(rows: slice, cols: slice) -> np.ndarray:
        v = pair_values(emb_x[rows, None, :] - emb_xh[None, cols, :], k)
        delta = np.linalg.norm(loc_x[rows, None, :] - loc_xh[None, cols, :], axis=-1)
        power = delta ** k
        ok = admissible(delta)
        l1 = np.where(ok, -v + constants.alpha * power, -np.inf)
        l2 = np.where(ok, v - constants.alpha_bar * power, -np.inf)
        return np.stack([l1, l2])

    best12, where12, excl12 = _reduce_pairs(lhs12, gx.size, gxh.size, chunk_size, n_jobs)

    # condition 3 over (transition-closure state, receptive input) combinations
    def combo_data(grid: CoverGrid, wgrid: CoverGrid):
        states = grid.points
        r_states = states[:, : len(domains.receptive) * n].reshape(-1, len(domains.receptive), n)
        emb_next = _next_embeddings(cand, oracle, domains, subgraph, states, wgrid.points, chunk_size)
        emb_now = np.repeat(cand.local_embedding(subgraph, r_states, n_local), wgrid.size, axis=0)
        loc = np.repeat(local_part(states), wgrid.size, axis=0)
        w_loc = np.tile(wgrid.points[:, : n_local * oracle.input_dim], (grid.size, 1))
        return emb_next, emb_now, loc, w_loc

    nx_a, now_a, loc_a, w_a = combo_data(g3, gw)
    if g3h is g3 and gwh is gw:
        nx_b, now_b, loc_b, w_b = nx_a, now_a, loc_a, w_a
    else:
        nx_b, now_b, loc_b, w_b = combo_data(g3h, gwh)

    def lhs3(rows: slice, cols: slice) -> np.ndarray:
        v_next = pair_values(nx_a[rows, None, :] - nx_b[None, cols, :], k)
        v_now = pair_values(now_a[rows, None, :] - now_b[None, cols, :], k)
        delta = np.linalg.norm(loc_a[rows, None, :] - loc_b[None, cols, :], axis=-1)
        lhs = v_next - v_now + constants.alpha_tilde * delta ** k
        if oracle.input_dim:
            lhs = lhs - constants.sigma * np.linalg.norm(w_a[rows, None, :] - w_b[None, cols, :], axis=-1) ** k
        return np.where(admissible(delta), lhs, -np.inf)[None]

    best3, where3, excl3 = _reduce_pairs(lhs3, nx_a.shape[0], nx_b.shape[0], chunk_size, n_jobs)

    etas = (float(best12[0]), float(best12[1]), float(best3[0]))
    for c, eta in enumerate(etas, start=1):
        if np.isneginf(eta):
            logging.warning(f"Condition {c} of node {class_rep}: no admissible grid pair; residual is -inf.")

    def witness12(loc) -> Optional[Witness]:
        return None if loc is None else Witness(gx.points[loc[0]].copy(), gxh.points[loc[1]].copy())

    def witness3(loc) -> Optional[Witness]:
        if loc is None:
            return None
        (sa, wa), (sb, wb) = divmod(loc[0], gw.size), divmod(loc[1], gwh.size)
        return Witness(g3.points[sa].copy(), g3h.points[sb].copy(), gw.points[wa].copy(), gwh.points[wb].copy())

    return ResidualResult(
        eta=etas,
        witnesses=(witness12(where12[0]), witness12(where12[1]), witness3(where3[0])),
        evaluations=(pairs12, tuples3),
        excluded=(excl12, excl3),
    )


# --------------------------------- Verify ------------------------------------
@dataclass(frozen=True)
class CoverConfig:
    epsilon_x: float = 0.05
    epsilon_u: float = 0.05
    mode: str = "strict"
    closure: str = "two_hop"
    budget: int = DEFAULT_BUDGET
    diagonal_exclusion: float = 0.0
    chunk_size: int = 512
    use_symmetry: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.mode not in ("strict", "paper"):
            raise ValueError(f"Verification mode must be 'strict' or 'paper', got '{self.mode}'.")
        ClosureMode(self.closure)
        if not (self.epsilon_x > 0 and self.epsilon_u > 0):
            raise ValueError("Covering radii must be positive.")
        if self.diagonal_exclusion < 0:
            raise ValueError(f"diagonal_exclusion must be >= 0, got {self.diagonal_exclusion}.")
        if self.chunk_size < 1 or self.budget < 1:
            raise ValueError("chunk_size and budget must be positive.")

    def factors(self) -> Tuple[float, float, float]:
        return (SQRT2, SQRT2, 2.0 if self.mode == "strict" else SQRT2)


@dataclass
class ClassResult:
    class_id: int
    representative: int
    members: int
    eta: Tuple[float, float, float]
    witnesses: Tuple[Optional[Witness], Optional[Witness], Optional[Witness]]
    lipschitz: ConditionLipschitz
    epsilon: float
    factors: Tuple[float, float, float]
    checks: Tuple[TheoremVerdict, TheoremVerdict, TheoremVerdict]
    collapsed: TheoremVerdict
    evaluations: Tuple[int, int]
    excluded: Tuple[int, int]
    grid_sizes: Dict[str, int]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failing_condition(self) -> Optional[int]:
        for k, check in enumerate(self.checks, start=1):
            if not check.passed:
                return k
        return None


@dataclass
class VerificationReport:
    classes: List[ClassResult]
    cover: CoverConfig
    constants: List[ClassConstants]
    receptive_depth: int
    n_nodes: int
    log10_distributed: float
    log10_centralized: float
    wall_time: float
    composition: Optional["ComposedBounds"] = None
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.classes)

    @property
    def total_evaluations(self) -> int:
        return int(sum(sum(c.evaluations) for c in self.classes))

    @property
    def certified_region(self) -> str:
        r = self.cover.diagonal_exclusion
        eps = max(c.epsilon for c in self.classes) if self.classes else 0.0
        return f"|x̃ − x̂̃| ≥ {r + 2.0 * eps:.6g}"


def verify(
    cand: LyapunovCandidate,
    graph: InterconnectionGraph,
    oracle: SystemOracle,
    cover_config: CoverConfig,
) -> VerificationReport:
    start = time.perf_counter()
    mode = ClosureMode(cover_config.closure)
    hyper = cand.hyper
    partition = certificate_partition(graph, cand, mode, cover_config.use_symmetry)
    hyper.check_classes(partition.n_classes)
    notes: List[str] = []
    logging.info(
        f"Verifying {partition.n_classes} node class(es) in {cover_config.mode} mode with {mode.value} closure."
    )
    if mode is ClosureMode.EMBED_REFERENCE:
        notes.append("embed_reference closure: next states use reference-filled 2-hop states (approximate).")
        logging.warning(notes[-1])
    if cand.receptive_depth > 1:
        notes.append(
            f"receptive depth {cand.receptive_depth} > 1: conditions are checked over the "
            f"{cand.receptive_depth}-hop closure instead of the 1-hop local state."
        )
        logging.warning(notes[-1])

    eps = max(cover_config.epsilon_x, cover_config.epsilon_u) if oracle.input_dim else cover_config.epsilon_x
    factors = cover_config.factors()
    results: List[ClassResult] = []
    constants: List[ClassConstants] = []
    distributed = 0
    state_counts: Tuple[int, ...] = ()
    input_counts: Tuple[int, ...] = ()
    for class_id, rep in enumerate(partition.representatives):
        consts = hyper.for_class(class_id)
        constants.append(consts)
        domains = local_domains(graph, rep, cand.receptive_depth, mode)
        budget = cover_config.budget
        xg = grid_cover(oracle.state_box.tile(len(domains.receptive)), cover_config.epsilon_x, budget)
        xg3 = xg if domains.transition == domains.receptive else grid_cover(
            oracle.state_box.tile(len(domains.transition)), cover_config.epsilon_x, budget
        )
        wg = grid_cover(oracle.input_box.tile(len(domains.receptive)), cover_config.epsilon_u, budget)
        state_counts = tuple(grid_cover(oracle.state_box, cover_config.epsilon_x, budget).counts)
        input_counts = tuple(grid_cover(oracle.input_box, cover_config.epsilon_u, budget).counts) if oracle.input_dim else ()
        logging.info(
            f"Class {class_id} (node {rep}, {len(partition.members(class_id))} member(s)): "
            f"{xg.size} state points, {xg3.size} transition points, {wg.size} input points."
        )
        residuals = condition_residuals(
            cand,
            graph,
            oracle,
            rep,
            xg,
            wg,
            consts,
            closure_mode=mode,
            xg3=xg3,
            diagonal_exclusion=cover_config.diagonal_exclusion,
            chunk_size=cover_config.chunk_size,
            n_jobs=cover_config.n_jobs,
            budget=budget,
        )
        lip = cand.condition_lipschitz(graph, consts, class_geometry(cand, oracle, domains))
        checks = tuple(
            theorem_check(e, l, eps, f) for e, l, f in zip(residuals.eta, lip.as_tuple(), factors)
        )
        collapsed = theorem_check(max(residuals.eta), lip.max, eps, max(factors))
        result = ClassResult(
            class_id=class_id,
            representative=rep,
            members=len(partition.members(class_id)),
            eta=residuals.eta,
            witnesses=residuals.witnesses,
            lipschitz=lip,
            epsilon=eps,
            factors=factors,
            checks=checks,
            collapsed=collapsed,
            evaluations=residuals.evaluations,
            excluded=residuals.excluded,
            grid_sizes={"state": xg.size, "transition": xg3.size, "input": wg.size},
        )
        results.append(result)
        distributed += sum(residuals.evaluations)
        verdict = "PASS" if result.passed else f"FAIL (condition {result.failing_condition})"
        logging.info(
            f"Class {class_id}: eta={['%.6g' % e for e in residuals.eta]}, L={['%.6g' % l for l in lip.as_tuple()]}, "
            f"eps={eps:.6g} -> {verdict}."
        )

    # centralized enumeration: every coordinate of the full state and input pair
    log_centralized = 2 * graph.n_nodes * sum(math.log10(c) for c in state_counts)
    log_centralized += 2 * graph.n_nodes * sum(math.log10(c) for c in input_counts)

    report = VerificationReport(
        classes=results,
        cover=cover_config,
        constants=constants,
        receptive_depth=cand.receptive_depth,
        n_nodes=graph.n_nodes,
        log10_distributed=math.log10(distributed) if distributed else 0.0,
        log10_centralized=float(log_centralized),
        wall_time=time.perf_counter() - start,
        notes=notes,
    )
    if report.passed:
        report.composition = compose_bounds(
            constants, graph, cand.degree, class_of=partition.class_of, state_dim=oracle.state_dim
        )
    logging.info(f"Verification {'PASS' if report.passed else 'FAIL'} in {report.wall_time:.2f}s.")
    return report


# ------------------------------- Composition ---------------------------------
@dataclass(frozen=True)
class ComposedBounds:
    """
    Coefficients of the composed comparison functions against
    ν(Δ) = Σᵢ |xᵢ − x̂ᵢ|^κ, plus Euclidean conversion constants
    c_low·|Δ|^κ ≤ ν(Δ) ≤ c_up·|Δ|^κ.
    """

    alpha: float
    alpha_bar: float
    alpha_tilde: float
    sigma: float
    multiplicity: int
    local_size: int
    spread: float
    c_low: float
    c_up: float
    contraction_rate: float
    tightness: float
    violations: int


def norm_term(diff: np.ndarray, degree: int) -> np.ndarray:
    """ν(Δ) = Σᵢ |Δᵢ|^κ over the node axis for (..., N, d) differences."""
    return np.sum(np.linalg.norm(diff, axis=-1) ** degree, axis=-1)


def compose_bounds(
    per_class_constants: Sequence[ClassConstants],
    graph: InterconnectionGraph,
    kappa: int,
    class_of: Optional[Sequence[int]] = None,
    passed: Optional[Sequence[bool]] = None,
    state_dim: int = 1,
    samples: int = 100_000,
    seed: int = 0,
) -> ComposedBounds:
    """
    Composes local constants into global ones for V = Σᵢ Vᵢ:
      α_glob = min α;  ᾱ_glob = max ᾱ · mult · max(1, s^{κ/2−1});
      α̃_glob = min α̃;  σ_glob = max σ · mult · max(1, s^{κ/2−1}),
    with mult the largest number of local states containing a node and s the
    largest local-state node count. A tightness ratio of the ᾱ spread factor is
    estimated on random differences, drawn in batches of about
    COMPOSE_BATCH_ELEMENTS values and capped at COMPOSE_SAMPLE_ELEMENTS in total.
    """
    if passed is not None and not all(passed):
        failing = [c for c, ok in enumerate(passed) if not ok]
        logging.error(f"Composition refused: classes {failing} did not pass verification.")
        raise CompositionRefusedError(f"Cannot compose local certificates; classes {failing} failed.")
    if not per_class_constants:
        raise ValueError("compose_bounds needs at least one class.")
    used = sorted(set(class_of)) if class_of is not None else range(len(per_class_constants))
    consts = [per_class_constants[c] for c in used]

    multiplicity = int(graph.multiplicity().max())
    local_size = int(graph.adjacency.sum(axis=1).max())
    spread = multiplicity * max(1.0, local_size ** (kappa / 2.0 - 1.0))
    n = graph.n_nodes
    if kappa <= 2:
        c_low, c_up = 1.0, n ** (1.0 - kappa / 2.0)
    else:
        c_low, c_up = n ** (1.0 - kappa / 2.0), 1.0

    alpha = min(c.alpha for c in consts)
    alpha_bar = max(c.alpha_bar for c in consts) * spread
    alpha_tilde = min(c.alpha_tilde for c in consts)
    sigma = max(c.sigma for c in consts) * spread

    rng = np.random.default_rng(seed)
    width = n * state_dim
    samples = min(samples, max(MIN_COMPOSE_SAMPLES, COMPOSE_SAMPLE_ELEMENTS // width))
    batch = max(1, COMPOSE_BATCH_ELEMENTS // width)
    sparse_rows = samples // 2
    violations, worst = 0, 0.0
    for start in range(0, samples, batch):
        size = min(batch, samples - start)
        diff = rng.standard_normal((size, n, state_dim))
        # mix in sparse directions, where the multiplicity bound is closest to tight
        n_sparse = min(max(sparse_rows - start, 0), size)
        if n_sparse:
            diff[:n_sparse] *= rng.random((n_sparse, n, 1)) < 0.3
        nu = norm_term(diff, kappa)
        local_sum = np.sum(local_norm_powers(graph, diff, kappa), axis=-1)
        ok = nu > 0
        ratio = local_sum[ok] / nu[ok]
        violations += int(np.sum(ratio < 1.0 - 1e-12) + np.sum(ratio > spread * (1.0 + 1e-12)))
        if ratio.size:
            worst = max(worst, float(ratio.max()))
    tightness = worst / spread
    if violations:
        logging.error(f"Composed bounds violated on {violations} of {samples} random difference(s).")

    return ComposedBounds(
        alpha=alpha,
        alpha_bar=alpha_bar,
        alpha_tilde=alpha_tilde,
        sigma=sigma,
        multiplicity=multiplicity,
        local_size=local_size,
        spread=spread,
        c_low=c_low,
        c_up=c_up,
        contraction_rate=1.0 - alpha_tilde / alpha_bar,
        tightness=tightness,
        violations=violations,
    )


# --------------------------------- Decay check --------------------------------
@dataclass(frozen=True)
class DecayCheck:
    pairs: int
    horizon: int
    steps_checked: int
    violations: int
    max_excess: float
    values: np.ndarray  # (K+1, P) total V along the paired rollouts


def check_decay(
    cand: LyapunovCandidate,
    graph: InterconnectionGraph,
    oracle: SystemOracle,
    x0: np.ndarray,
    xh0: np.ndarray,
    horizon: int,
    alpha_tilde: float = 0.0,
    tol: float = 1e-9,
) -> DecayCheck:
    """
    Rolls out pairs under zero inputs and checks
    V(x⁺, x̂⁺) − V(x, x̂) ≤ −α̃·ν(x − x̂) + tol at every step.
    """
    x0 = np.asarray(x0, dtype=float)
    xh0 = np.asarray(xh0, dtype=float)
    pairs = x0.shape[0]
    traj = simulate(oracle, np.concatenate([x0, xh0], axis=0), horizon=horizon)
    states = traj.states
    a, b = states[:, :pairs], states[:, pairs:]
    values = cand.evaluate(graph, a.reshape((-1,) + a.shape[2:]), b.reshape((-1,) + b.shape[2:]))
    totals = values.sum(axis=-1).reshape(states.shape[0], pairs)
    if traj.horizon == 0:
        return DecayCheck(pairs, horizon, 0, 0, -math.inf, totals)
    nu = norm_term(a - b, cand.degree)[:-1]
    excess = totals[1:] - totals[:-1] + alpha_tilde * nu
    violations = int(np.sum(excess > tol))
    if violations:
        logging.warning(f"Lyapunov decay violated on {violations} step(s); max excess {excess.max():.3e}.")
    return DecayCheck(pairs, horizon, traj.horizon, violations, float(excess.max()), totals)

# src/training.py
"""
Learning local incremental Lyapunov candidates from sampled state pairs.

Hinge arguments per sample s and node i (λᵢ < 0 is the generalization margin):
  a1 = −Vᵢ(x̃, x̂̃) + αᵢ|x̃ − x̂̃|^κ − λᵢ
  a2 =  Vᵢ(x̃, x̂̃) − ᾱᵢ|x̃ − x̂̃|^κ − λᵢ
  a3 =  Vᵢ(x̃⁺, x̂̃⁺) − Vᵢ(x̃, x̂̃) + α̃ᵢ|x̃ − x̂̃|^κ − σᵢ|w̃ − ŵ̃|^κ − λᵢ
and the loss is c₁Σ relu(a1) + c₂Σ relu(a2) + c₃Σ relu(a3), summed sample-major.
"""
from __future__ import annotations

import logging
import math
import time
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.candidate import CertificateHyper, ClassConstants, GnnCandidate, LyapunovCandidate
from src.exceptions import DegenerateDomainWarning, TrainingDivergedError, TransferError, TransferMismatchWarning
from src.gnn import GnnParams, spectral_cap
from src.system import ClosureMode, SystemOracle, step, step_nodes
from src.topology import InterconnectionGraph, closure, induced_subgraph, local_norm_powers, neighborhoods_match
from src.verifier import (
    SQRT2,
    certificate_partition,
    class_geometry,
    local_domains,
    partition_depth,
)

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")


# --------------------------------- Dataset -----------------------------------
@dataclass
class TrainingDataset:
    x: np.ndarray  # (M, N, n)
    xh: np.ndarray
    w: np.ndarray  # (M, N, m)
    wh: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return int(self.x.shape[0])

    def subset(self, idx: np.ndarray) -> "TrainingDataset":
        return TrainingDataset(self.x[idx], self.xh[idx], self.w[idx], self.wh[idx], self.seed)


def sample_dataset(oracle: SystemOracle, m_points: int, seed: int) -> TrainingDataset:
    """
    M i.i.d. uniform samples from X × X × W × W. Pairs with x = x̂ are redrawn
    unless the state box has zero volume.
    """
    if m_points < 1:
        raise ValueError(f"m_points must be >= 1, got {m_points}.")
    rng = np.random.default_rng(seed)
    shape = (m_points, oracle.n_nodes)
    logging.info(f"Sampling {m_points} training pairs for {oracle.name} (seed {seed}).")
    x = oracle.state_box.sample(rng, shape)
    xh = oracle.state_box.sample(rng, shape)
    w = oracle.input_box.sample(rng, shape)
    wh = oracle.input_box.sample(rng, shape)

    if oracle.state_box.is_degenerate:
        if m_points > 1:
            message = f"State box of {oracle.name} has zero volume; all {m_points} samples coincide."
            logging.warning(message)
            warnings.warn(message, DegenerateDomainWarning)
    else:
        equal = np.all(x == xh, axis=(1, 2))
        while np.any(equal):
            xh[equal] = oracle.state_box.sample(rng, (int(equal.sum()), oracle.n_nodes))
            equal = np.all(x == xh, axis=(1, 2))
    return TrainingDataset(x, xh, w, wh, seed)


def next_states(oracle: SystemOracle, dataset: TrainingDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Exact successor pairs (M, N, n) of the full system."""
    return step(oracle, dataset.x, dataset.w), step(oracle, dataset.xh, dataset.wh)


def embedded_next_states(
    oracle: SystemOracle, dataset: TrainingDataset, receptive: Sequence[int]
) -> Tuple[np.ndarray, np.ndarray]:
    """Next states of a receptive closure, every node outside it pinned to the reference."""
    targets = list(receptive)

    def one(x: np.ndarray, w: np.ndarray) -> np.ndarray:
        inputs = w[:, targets, :] if oracle.input_dim else None
        return step_nodes(oracle, targets, x[:, targets, :], targets, inputs)

    return one(dataset.x, dataset.w), one(dataset.xh, dataset.wh)


# ------------------------------ Loss evaluation -------------------------------
@dataclass
class NodeConstants:
    """Per-node arrays of the class constants."""

    alpha: np.ndarray
    alpha_bar: np.ndarray
    alpha_tilde: np.ndarray
    sigma: np.ndarray
    margin: np.ndarray

    @classmethod
    def from_classes(cls, hyper: CertificateHyper, class_of: Sequence[int]) -> "NodeConstants":
        consts = [hyper.for_class(c) for c in class_of]
        return cls(
            alpha=np.array([k.alpha for k in consts]),
            alpha_bar=np.array([k.alpha_bar for k in consts]),
            alpha_tilde=np.array([k.alpha_tilde for k in consts]),
            sigma=np.array([k.sigma for k in consts]),
            margin=np.array([k.margin for k in consts]),
        )


@dataclass
class LossEvaluation:
    loss: float
    terms: Tuple[float, float, float]
    args: np.ndarray  # (3, B, N) hinge arguments
    raw: np.ndarray  # condition left-hand sides, args + λ
    grad: Optional[GnnParams] = None


class LossContext:
    """
    Binds a candidate, graph, oracle and closure mode to a dataset; caches the
    quantities that do not depend on the parameters (norm powers, next states).
    """

    def __init__(
        self,
        cand: LyapunovCandidate,
        graph: InterconnectionGraph,
        oracle: SystemOracle,
        dataset: TrainingDataset,
        closure_mode: ClosureMode | str = ClosureMode.TWO_HOP,
    ):
        self.graph = graph
        self.oracle = oracle
        self.dataset = dataset
        self.mode = ClosureMode(closure_mode)
        self.partition = certificate_partition(graph, cand, self.mode)
        cand.hyper.check_classes(self.partition.n_classes)
        self.nodes = NodeConstants.from_classes(cand.hyper, self.partition.class_of)
        self.weights = cand.hyper.loss_weights
        k = cand.degree
        self.state_pow = local_norm_powers(graph, dataset.x - dataset.xh, k)
        self.input_pow = local_norm_powers(graph, dataset.w - dataset.wh, k)
        if self.mode is ClosureMode.TWO_HOP:
            self.next_full = next_states(oracle, dataset)
            self.next_local = None
        else:
            logging.warning("Training with embed_reference closure: decay targets are approximate.")
            self.next_full = None
            self.next_local = []
            for i in range(graph.n_nodes):
                receptive = closure(graph, i, cand.receptive_depth)
                sub = induced_subgraph(graph, receptive)
                xn, xhn = embedded_next_states(oracle, dataset, receptive)
                self.next_local.append((sub, len(closure(graph, i, 1)), xn, xhn))

    def subset(self, idx: np.ndarray) -> "LossContext":
        view = object.__new__(LossContext)
        view.__dict__.update(self.__dict__)
        view.dataset = self.dataset.subset(idx)
        view.state_pow = self.state_pow[idx]
        view.input_pow = self.input_pow[idx]
        if self.next_full is not None:
            view.next_full = (self.next_full[0][idx], self.next_full[1][idx])
        else:
            view.next_local = [(s, n, a[idx], b[idx]) for s, n, a, b in self.next_local]
        return view

    def evaluate(self, cand: LyapunovCandidate, with_grad: bool = False) -> LossEvaluation:
        ds, c = self.dataset, self.nodes
        gnn = isinstance(cand, GnnCandidate)
        want_grad = with_grad and gnn
        if want_grad:
            v_now, cache_now = cand.pair_forward(self.graph, ds.x, ds.xh)
        else:
            v_now = cand.evaluate(self.graph, ds.x, ds.xh)

        next_caches = []
        if self.next_full is not None:
            if want_grad:
                v_next, cache = cand.pair_forward(self.graph, *self.next_full)
                next_caches.append(("full", cache))
            else:
                v_next = cand.evaluate(self.graph, *self.next_full)
        else:
            v_next = np.zeros_like(v_now)
            for i, (sub, n_local, xn, xhn) in enumerate(self.next_local):
                if want_grad:
                    vals, cache = cand.pair_forward(sub, xn, xhn)
                    next_caches.append((i, cache))
                    v_next[:, i] = vals[:, 0]
                else:
                    v_next[:, i] = cand.local_values(sub, xn, xhn, n_local)

        raw1 = -v_now + c.alpha * self.state_pow
        raw2 = v_now - c.alpha_bar * self.state_pow
        raw3 = v_next - v_now + c.alpha_tilde * self.state_pow - c.sigma * self.input_pow
        raw = np.stack([raw1, raw2, raw3])
        args = raw - c.margin
        hinge = np.maximum(args, 0.0)
        terms = tuple(float(hinge[j].sum()) for j in range(3))
        loss = float(sum(w * t for w, t in zip(self.weights, terms)))
        result = LossEvaluation(loss, terms, args, raw)

        if want_grad:
            active = (args > 0.0).astype(float)
            c1, c2, c3 = self.weights
            d_now = -c1 * active[0] + c2 * active[1] - c3 * active[2]
            d_next = c3 * active[2]
            grad = cand.pair_backward(cache_now, d_now)
            for key, cache in next_caches:
                if key == "full":
                    grad = grad.add(cand.pair_backward(cache, d_next))
                else:
                    upstream = np.zeros((d_next.shape[0], cache.diff.shape[1]))
                    upstream[:, 0] = d_next[:, key]
                    grad = grad.add(cand.pair_backward(cache, upstream))
            result.grad = grad
        return result


def loss_terms(
    cand: LyapunovCandidate,
    graph: InterconnectionGraph,
    oracle: SystemOracle,
    sample: TrainingDataset,
    closure_mode: ClosureMode | str = ClosureMode.TWO_HOP,
) -> Tuple[float, float, float]:
    """(l1, l2, l3) of a (single- or multi-sample) dataset, summed over nodes."""
    return LossContext(cand, graph, oracle, sample, closure_mode).evaluate(cand).terms


def total_loss(
    cand: LyapunovCandidate,
    graph: InterconnectionGraph,
    oracle: SystemOracle,
    dataset: TrainingDataset,
    closure_mode: ClosureMode | str = ClosureMode.TWO_HOP,
) -> float:
    return LossContext(cand, graph, oracle, dataset, closure_mode).evaluate(cand).loss


# -------------------------------- Optimizers ----------------------------------
class OptimizerStrategy(ABC):
    @abstractmethod
    def step(self, params: GnnParams, grad: GnnParams) -> GnnParams:
        """Returns the updated parameters."""
        raise NotImplementedError


def _decayed(params: GnnParams, grad: GnnParams, weight_decay: float) -> GnnParams:
    """Adds the L2 penalty gradient on weight matrices (biases are not decayed)."""
    if not weight_decay:
        return grad
    filters = [(g0 + weight_decay * h0, g1 + weight_decay * h1)
               for (g0, g1), (h0, h1) in zip(grad.filter_coeffs, params.filter_coeffs)]
    mlp = [(gw + weight_decay * w, gb) for (gw, gb), (w, _) in zip(grad.mlp_weights, params.mlp_weights)]
    return GnnParams(filters, mlp)


class AdamStrategy(OptimizerStrategy):
    """First-order descent with bias-corrected moment estimates."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self._m: Optional[List[np.ndarray]] = None
        self._v: Optional[List[np.ndarray]] = None
        self._t = 0

    def step(self, params: GnnParams, grad: GnnParams) -> GnnParams:
        grads = _decayed(params, grad, self.weight_decay).arrays()
        if self._m is None:
            self._m = [np.zeros_like(g) for g in grads]
            self._v = [np.zeros_like(g) for g in grads]
        self._t += 1
        out = []
        for p, g, m, v in zip(params.arrays(), grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** self._t)
            v_hat = v / (1.0 - self.beta2 ** self._t)
            out.append(p - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps))
        return params.with_arrays(out)


class GradientDescentStrategy(OptimizerStrategy):
    def __init__(self, learning_rate: float = 1e-3, weight_decay: float = 0.0):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay

    def step(self, params: GnnParams, grad: GnnParams) -> GnnParams:
        return params.add(_decayed(params, grad, self.weight_decay), scale=-self.learning_rate)


class OptimizerFactory:
    @staticmethod
    def get_optimizer(name: str, learning_rate: float, weight_decay: float = 0.0) -> OptimizerStrategy:
        if name == "adam":
            return AdamStrategy(learning_rate=learning_rate, weight_decay=weight_decay)
        if name == "gd":
            return GradientDescentStrategy(learning_rate=learning_rate, weight_decay=weight_decay)
        raise ValueError(f"Unsupported optimizer '{name}'. Use 'adam' or 'gd'.")


# --------------------------------- Training ----------------------------------
@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 5000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    batch_size: Optional[int] = None
    spectral_cap: Optional[float] = 1.5
    weight_decay: float = 0.0
    loss_threshold: float = 0.0
    closure: str = "two_hop"
    margin_epsilon: float = 0.05
    check_every: int = 1
    log_every: int = 100

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}.")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}.")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}.")
        if self.margin_epsilon <= 0:
            raise ValueError(f"margin_epsilon must be positive, got {self.margin_epsilon}.")
        if self.check_every < 1 or self.log_every < 1:
            raise ValueError("check_every and log_every must be >= 1.")
        ClosureMode(self.closure)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    l1: float
    l2: float
    l3: float
    worst_margin: float


@dataclass(frozen=True)
class MarginCheck:
    class_id: int
    worst_lhs: float
    margin: float
    lipschitz: float
    slack: float  # λ + √2·L·ε

    @property
    def passed(self) -> bool:
        return self.worst_lhs <= self.margin and self.slack <= 0.0


@dataclass
class TrainReport:
    history: List[EpochRecord]
    violations: Tuple[int, int, int]
    margin_checks: List[MarginCheck]
    stop_reason: str
    wall_time: float
    n_samples: int
    n_nodes: int
    optimizer: str
    closure: str

    @property
    def margin_success(self) -> bool:
        return bool(self.margin_checks) and all(m.passed for m in self.margin_checks)

    @property
    def initial_loss(self) -> float:
        return self.history[0].loss

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss

    def loss_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(r.epoch, r.loss, r.l1, r.l2, r.l3, r.worst_margin) for r in self.history],
            columns=["epoch", "loss", "l1", "l2", "l3", "worst_margin"],
        )


def margin_checks(
    cand: LyapunovCandidate,
    graph: InterconnectionGraph,
    oracle: SystemOracle,
    context: LossContext,
    evaluation: LossEvaluation,
    epsilon: float,
) -> List[MarginCheck]:
    """Per class: worst sampled left-hand side ≤ λ and λ + √2·L·ε ≤ 0."""
    checks = []
    raw = evaluation.raw
    for class_id, rep in enumerate(context.partition.representatives):
        members = list(context.partition.members(class_id))
        consts: ClassConstants = cand.hyper.for_class(class_id)
        domains = local_domains(graph, rep, cand.receptive_depth, context.mode)
        lip = cand.condition_lipschitz(graph, consts, class_geometry(cand, oracle, domains)).max
        worst = float(raw[:, :, members].max())
        checks.append(MarginCheck(class_id, worst, consts.margin, lip, consts.margin + SQRT2 * lip * epsilon))
    return checks


def train(
    cand: GnnCandidate,
    graph: InterconnectionGraph,
    oracle: SystemOracle,
    dataset: TrainingDataset,
    optimizer_config: TrainingConfig,
    seed: int = 0,
) -> Tuple[GnnCandidate, TrainReport]:
    """
    Minimizes the total hinge loss. Stops at the first of: loss at or below
    the threshold, margin success, or the epoch cap. Each history record holds
    the full-dataset loss before that epoch's update.
    """
    cfg = optimizer_config
    start = time.perf_counter()
    context = LossContext(cand, graph, oracle, dataset, cfg.closure)
    optimizer = OptimizerFactory.get_optimizer(cfg.optimizer, cfg.learning_rate, cfg.weight_decay)
    shuffle_rng = np.random.default_rng(seed)
    params = cand.params
    if cfg.spectral_cap:
        params = spectral_cap(params, cfg.spectral_cap)
    current = cand.with_params(params)
    logging.info(
        f"Training on {dataset.size} samples x {graph.n_nodes} nodes with {cfg.optimizer} "
        f"(lr={cfg.learning_rate}, closure={cfg.closure}, batch={cfg.batch_size or 'full'})."
    )

    history: List[EpochRecord] = []
    checks: List[MarginCheck] = []
    last_finite = current.params.copy()
    stop_reason = "epoch_cap"
    full_batch = cfg.batch_size is None or cfg.batch_size >= dataset.size
    evaluation = None
    for epoch in range(cfg.epochs + 1):
        evaluation = context.evaluate(current, with_grad=full_batch)
        if not math.isfinite(evaluation.loss):
            logging.error(f"Loss became non-finite at epoch {epoch}.")
            raise TrainingDivergedError(f"Training diverged at epoch {epoch}.", last_params=last_finite, epoch=epoch)
        last_finite = current.params
        worst = float(evaluation.raw.max())
        history.append(EpochRecord(epoch, evaluation.loss, *evaluation.terms, worst))
        if epoch % cfg.log_every == 0:
            logging.info(
                f"epoch {epoch}: loss={evaluation.loss:.6g} terms={[round(t, 6) for t in evaluation.terms]} "
                f"worst={worst:.6g}"
            )

        if evaluation.loss <= cfg.loss_threshold:
            stop_reason = "loss_threshold"
            break
        if epoch % cfg.check_every == 0 or epoch == cfg.epochs:
            checks = margin_checks(current, graph, oracle, context, evaluation, cfg.margin_epsilon)
            if all(m.passed for m in checks):
                stop_reason = "margin"
                break
        if epoch == cfg.epochs:
            break

        if full_batch:
            params = optimizer.step(current.params, evaluation.grad)
            if cfg.spectral_cap:
                params = spectral_cap(params, cfg.spectral_cap)
            current = current.with_params(params)
        else:
            order = shuffle_rng.permutation(dataset.size)
            for b0 in range(0, dataset.size, cfg.batch_size):
                batch_eval = context.subset(order[b0:b0 + cfg.batch_size]).evaluate(current, with_grad=True)
                params = optimizer.step(current.params, batch_eval.grad)
                if cfg.spectral_cap:
                    params = spectral_cap(params, cfg.spectral_cap)
                current = current.with_params(params)

    checks = margin_checks(current, graph, oracle, context, evaluation, cfg.margin_epsilon)
    violations = tuple(int(np.sum(evaluation.args[j] > 0.0)) for j in range(3))
    report = TrainReport(
        history=history,
        violations=violations,
        margin_checks=checks,
        stop_reason=stop_reason,
        wall_time=time.perf_counter() - start,
        n_samples=dataset.size,
        n_nodes=graph.n_nodes,
        optimizer=cfg.optimizer,
        closure=cfg.closure,
    )
    logging.info(
        f"Training stopped ({stop_reason}) after {len(history)} evaluation(s): loss {report.final_loss:.6g}, "
        f"violations {violations}, margin success {report.margin_success}."
    )
    return current, report


# --------------------------------- Transfer ----------------------------------
@dataclass
class TransferResult:
    candidate: LyapunovCandidate
    graph: InterconnectionGraph
    compatible: bool
    unmatched_classes: List[int]
    class_map: List[int]


def transfer(
    cand: LyapunovCandidate,
    new_graph: InterconnectionGraph,
    state_dim: int,
    old_graph: Optional[InterconnectionGraph] = None,
    closure_mode: ClosureMode | str = ClosureMode.TWO_HOP,
) -> TransferResult:
    """
    Binds the shared parameters to `new_graph`. Each new node class is matched
    to an old class with an isomorphic rooted neighborhood; per-class
    hyperparameters follow the match. Unmatched classes are flagged and take
    the constants of class 0.
    """
    if state_dim != cand.state_dim:
        logging.error(f"Transfer refused: candidate state_dim {cand.state_dim}, target system {state_dim}.")
        raise TransferError(f"Subsystem dimension differs: candidate {cand.state_dim}, target {state_dim}.")
    depth = partition_depth(cand, closure_mode)
    new_part = certificate_partition(new_graph, cand, closure_mode)
    class_map: List[int] = []
    unmatched: List[int] = []
    if old_graph is None:
        class_map = [0] * new_part.n_classes
    else:
        old_part = certificate_partition(old_graph, cand, closure_mode)
        cand.hyper.check_classes(old_part.n_classes)
        for class_id, rep in enumerate(new_part.representatives):
            match = next(
                (c for c, old_rep in enumerate(old_part.representatives)
                 if neighborhoods_match(new_graph, rep, old_graph, old_rep, depth)),
                None,
            )
            if match is None:
                unmatched.append(class_id)
            class_map.append(0 if match is None else match)
    if unmatched:
        message = (
            f"Transfer to {new_graph}: node classes {unmatched} have no structurally matching class "
            f"in the training graph."
        )
        logging.warning(message)
        warnings.warn(message, TransferMismatchWarning)
    hyper = cand.hyper.remap(class_map) if cand.hyper.n_classes else cand.hyper
    bound = cand.with_hyper(hyper) if isinstance(cand, GnnCandidate) else cand
    logging.info(f"Transferred candidate to {new_graph} ({new_part.n_classes} class(es)).")
    return TransferResult(bound, new_graph, not unmatched, unmatched, class_map)


def transfer_schedule(
    cand: LyapunovCandidate,
    graphs: Sequence[InterconnectionGraph],
    state_dim: int,
    old_graph: Optional[InterconnectionGraph] = None,
    closure_mode: ClosureMode | str = ClosureMode.TWO_HOP,
) -> List[TransferResult]:
    """Chains transfers over growing graphs, each step starting from the previous one."""
    results = []
    current, previous = cand, old_graph
    for graph in graphs:
        result = transfer(current, graph, state_dim, previous, closure_mode)
        results.append(result)
        current, previous = result.candidate, graph
    return results

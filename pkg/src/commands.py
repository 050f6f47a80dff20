# src/commands.py
"""
Operator commands behind the CLI. Each returns a process exit code:

  0   success (train: margin success, verify: PASS)
  1   train stopped without margin success, or training failed
  2   verify FAIL
  3   grid budget exceeded or verification aborted on a domain escape
  64  configuration error
  65  checkpoint/config mismatch, incompatible transfer, checkpoint integrity
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from src.candidate import GnnCandidate, LyapunovCandidate
from src.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.config import (
    RunConfig,
    build_candidate,
    build_gnn_config,
    build_graph,
    build_oracle,
    load_config,
    stream_rng,
    stream_seed,
)
from src.exceptions import (
    CertificateError,
    CheckpointError,
    ClosureError,
    CompositionRefusedError,
    ConfigError,
    DomainError,
    GridBudgetError,
    InvalidPermutationError,
    InvalidTopologyError,
    NumericError,
    ShapeError,
    TrainingDivergedError,
    TransferError,
    UsageError,
    VerificationAbortedError,
)
from src.reporting import (
    LYAPUNOV_COLUMNS,
    TRAJECTORY_COLUMNS,
    load_summary,
    show_summary,
    train_summary,
    verification_summary,
    write_frame,
    write_summary,
)
from src.system import SystemOracle, simulate, trajectory_to_frame
from src.training import sample_dataset, train, transfer
from src.verifier import verify

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

EXIT_OK = 0
EXIT_TRAIN_INCOMPLETE = 1
EXIT_VERIFY_FAIL = 2
EXIT_BUDGET = 3
EXIT_CONFIG = 64
EXIT_MISMATCH = 65

CHECKPOINT_NAME = "checkpoint.json"


@dataclass(frozen=True)
class RunOverrides:
    """Global CLI flags that take precedence over the config file."""

    output_dir: Optional[str] = None
    seed: Optional[int] = None
    threads: Optional[int] = None


def load_run_config(config_path: str, overrides: Optional[RunOverrides] = None) -> RunConfig:
    o = overrides or RunOverrides()
    return load_config(config_path).with_overrides(o.output_dir, o.seed, o.threads)


def exit_codes(command: Callable[..., int]) -> Callable[..., int]:
    """Maps the documented error families onto exit codes."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs) -> int:
        try:
            return command(*args, **kwargs)
        except (ConfigError, InvalidTopologyError, InvalidPermutationError, ShapeError, UsageError) as exc:
            logging.error(str(exc))
            return EXIT_CONFIG
        except (CheckpointError, TransferError) as exc:
            logging.error(str(exc))
            return EXIT_MISMATCH
        except (GridBudgetError, VerificationAbortedError) as exc:
            logging.error(str(exc))
            return EXIT_BUDGET
        except TrainingDivergedError as exc:
            logging.error(str(exc))
            return EXIT_TRAIN_INCOMPLETE
        except (DomainError, NumericError, ClosureError, CompositionRefusedError) as exc:
            logging.error(str(exc))
            return EXIT_BUDGET
        except CertificateError as exc:
            logging.error(f"{type(exc).__name__}: {exc}")
            return EXIT_BUDGET

    return wrapper


def _topology_record(cfg: RunConfig, n_nodes: int) -> dict:
    return {"kind": cfg.topology.kind, "n_nodes": int(n_nodes), "edges": cfg.topology.edges}


def _check_compatible(cand: LyapunovCandidate, cfg: RunConfig, oracle: SystemOracle) -> None:
    if cand.state_dim != oracle.state_dim:
        raise CheckpointError(
            f"Checkpoint state_dim {cand.state_dim} does not match the configured system ({oracle.state_dim})."
        )
    if isinstance(cand, GnnCandidate) and cfg.candidate.kind == "gnn":
        expected = build_gnn_config(cfg, oracle.state_dim)
        if expected != cand.config:
            raise CheckpointError(f"Checkpoint architecture {cand.config} does not match the configuration {expected}.")


def _candidate_for(cfg: RunConfig, checkpoint_path: Optional[str], graph, oracle) -> Optional[LyapunovCandidate]:
    """Checkpointed candidate, or the analytic one straight from the config."""
    if checkpoint_path:
        cand = load_checkpoint(checkpoint_path).candidate
        _check_compatible(cand, cfg, oracle)
        return cand
    if cfg.candidate.kind == "analytic":
        return build_candidate(cfg, graph, oracle)
    return None


# ----------------------------------- train ------------------------------------
@exit_codes
def cmd_train(config_path: str, overrides: Optional[RunOverrides] = None, init_checkpoint: Optional[str] = None) -> int:
    cfg = load_run_config(config_path, overrides)
    graph = build_graph(cfg)
    oracle = build_oracle(cfg, graph)
    if cfg.candidate.kind != "gnn":
        raise ConfigError(f"Only gnn candidates are trainable, got '{cfg.candidate.kind}'.")
    if init_checkpoint:
        cand = load_checkpoint(init_checkpoint).candidate
        _check_compatible(cand, cfg, oracle)
    else:
        cand = build_candidate(cfg, graph, oracle)
    out = Path(cfg.output_dir)
    dataset = sample_dataset(oracle, cfg.samples, stream_seed(cfg.seed, "dataset"))
    try:
        trained, report = train(cand, graph, oracle, dataset, cfg.training, seed=stream_seed(cfg.seed, "shuffle"))
    except TrainingDivergedError as exc:
        if exc.last_params is not None:
            save_checkpoint(out / "checkpoint_last_finite.json", cand.with_params(exc.last_params),
                            _topology_record(cfg, graph.n_nodes), oracle.name)
        raise
    save_checkpoint(out / CHECKPOINT_NAME, trained, _topology_record(cfg, graph.n_nodes), oracle.name)
    write_frame(report.loss_frame(), out / "loss.csv")
    write_summary(train_summary(report), out, "train_report")
    return EXIT_OK if report.margin_success else EXIT_TRAIN_INCOMPLETE


# ----------------------------------- verify -----------------------------------
@exit_codes
def cmd_verify(
    config_path: str, checkpoint_path: Optional[str] = None, overrides: Optional[RunOverrides] = None, **cover_overrides
) -> int:
    cfg = load_run_config(config_path, overrides)
    graph = build_graph(cfg)
    oracle = build_oracle(cfg, graph)
    cand = _candidate_for(cfg, checkpoint_path, graph, oracle)
    if cand is None:
        raise ConfigError("verify needs --checkpoint unless candidate.kind is 'analytic'.")
    options = {k: v for k, v in cover_overrides.items() if v is not None}
    try:
        cover = replace(cfg.verification, **options)
    except ValueError as exc:
        raise ConfigError(f"Invalid verification option: {exc}", [str(exc)]) from exc
    report = verify(cand, graph, oracle, cover)
    write_summary(verification_summary(report), cfg.output_dir, "verify_report")
    return EXIT_OK if report.passed else EXIT_VERIFY_FAIL


# ---------------------------------- simulate ----------------------------------
def lyapunov_frame(cand: LyapunovCandidate, graph, states: np.ndarray, pairs: int) -> pd.DataFrame:
    """Total V per step and pair from batched states (K+1, 2P, N, n), x rows first."""
    if pairs == 0:
        return pd.DataFrame(columns=LYAPUNOV_COLUMNS)
    a, b = states[:, :pairs], states[:, pairs:]
    values = cand.evaluate(graph, a.reshape((-1,) + a.shape[2:]), b.reshape((-1,) + b.shape[2:]))
    totals = values.sum(axis=-1).reshape(states.shape[0], pairs)
    k, pair = np.indices(totals.shape)
    return pd.DataFrame({"k": k.ravel(), "pair_id": pair.ravel(), "V": totals.ravel()})


@exit_codes
def cmd_simulate(
    config_path: str,
    checkpoint_path: Optional[str] = None,
    pairs: Optional[int] = None,
    horizon: Optional[int] = None,
    overrides: Optional[RunOverrides] = None,
) -> int:
    """
    Paired rollouts from random initial states. Trajectory ids 0..P-1 hold the
    x runs and P..2P-1 their x̂ partners, so pair p is (p, P + p).
    """
    cfg = load_run_config(config_path, overrides)
    pairs = cfg.simulation.pairs if pairs is None else int(pairs)
    horizon = cfg.simulation.horizon if horizon is None else int(horizon)
    if pairs < 0 or horizon < 0:
        raise ConfigError(f"pairs and horizon must be >= 0, got {pairs} and {horizon}.")
    graph = build_graph(cfg)
    oracle = build_oracle(cfg, graph)
    cand = _candidate_for(cfg, checkpoint_path, graph, oracle)
    out = Path(cfg.output_dir)

    if pairs == 0:
        write_frame(pd.DataFrame(columns=TRAJECTORY_COLUMNS), out / "trajectories.csv")
        if cand is not None:
            write_frame(pd.DataFrame(columns=LYAPUNOV_COLUMNS), out / "lyapunov.csv")
        return EXIT_OK

    rng = stream_rng(cfg.seed, "simulation")
    x0 = oracle.state_box.sample(rng, (pairs, oracle.n_nodes))
    xh0 = oracle.state_box.sample(rng, (pairs, oracle.n_nodes))
    trajectory = simulate(oracle, np.concatenate([x0, xh0], axis=0), horizon=horizon)
    if trajectory.truncated:
        logging.warning(f"Rollout truncated at step {trajectory.escape_step}; files hold the in-domain prefix.")
    write_frame(trajectory_to_frame(trajectory), out / "trajectories.csv")
    if cand is not None:
        frame = lyapunov_frame(cand, graph, trajectory.states, pairs)
        increases = frame.pivot(index="k", columns="pair_id", values="V").diff().max().max()
        if horizon and increases > 1e-9:
            logging.warning(f"Total V increased by up to {increases:.3e} along a rollout.")
        write_frame(frame, out / "lyapunov.csv")
    return EXIT_OK


# ---------------------------------- transfer ----------------------------------
@exit_codes
def cmd_transfer(
    config_path: str,
    checkpoint_path: str,
    new_n: int,
    fine_tune: bool = False,
    overrides: Optional[RunOverrides] = None,
) -> int:
    """
    Re-binds a checkpoint to an `new_n`-node graph of the configured topology
    kind, optionally followed by fine-tuning on the larger system.
    """
    cfg = load_run_config(config_path, overrides)
    checkpoint: Checkpoint = load_checkpoint(checkpoint_path)
    old_graph = None
    if checkpoint.topology is not None:
        old = checkpoint.topology
        old_cfg = replace(cfg, topology=replace(cfg.topology, kind=old["kind"], edges=old.get("edges")))
        old_graph = build_graph(old_cfg, n_nodes=old["n_nodes"])
    new_graph = build_graph(cfg, n_nodes=new_n)
    oracle = build_oracle(cfg, new_graph)
    result = transfer(checkpoint.candidate, new_graph, oracle.state_dim, old_graph, cfg.training.closure)
    out = Path(cfg.output_dir)
    record = _topology_record(cfg, new_graph.n_nodes)
    save_checkpoint(out / CHECKPOINT_NAME, result.candidate, record, oracle.name)
    if not fine_tune:
        return EXIT_OK
    if not isinstance(result.candidate, GnnCandidate):
        raise ConfigError("Fine-tuning needs a gnn candidate.")
    dataset = sample_dataset(oracle, cfg.samples, stream_seed(cfg.seed, "dataset"))
    tuned, report = train(result.candidate, new_graph, oracle, dataset, cfg.training, seed=stream_seed(cfg.seed, "shuffle"))
    save_checkpoint(out / CHECKPOINT_NAME, tuned, record, oracle.name)
    write_frame(report.loss_frame(), out / "loss.csv")
    write_summary(train_summary(report), out, "train_report")
    return EXIT_OK if report.margin_success else EXIT_TRAIN_INCOMPLETE


# ----------------------------------- report -----------------------------------
@exit_codes
def cmd_report(report_path: str) -> int:
    try:
        summary = load_summary(report_path)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"Report {report_path} is unreadable: {exc}") from exc
    show_summary(summary)
    return EXIT_OK



# steps/lyapunov_training_step.py
import logging
from pathlib import Path
from typing import Annotated, Optional

import mlflow
from zenml import ArtifactConfig, Model, step
from zenml.client import Client

from src.checkpoint import load_checkpoint, save_checkpoint
from src.config import build_candidate, build_graph, build_oracle, load_config, stream_seed
from src.training import TrainingDataset, train

# Try to pick up an experiment tracker if one exists
try:
    _exp_tracker = Client().active_stack.experiment_tracker
    _exp_name = _exp_tracker.name if _exp_tracker else None
except Exception:
    _exp_name = None

model_meta = Model(
    name="local_lyapunov_certificate",
    version=None,
    license="Apache-2.0",
    description="GNN local incremental Lyapunov candidate for an interconnected system.",
)


@step(enable_cache=False, experiment_tracker=_exp_name, model=model_meta)
def lyapunov_training_step(
    config_path: str,
    dataset: TrainingDataset,
    init_checkpoint: Optional[str] = None,
    n_nodes: Optional[int] = None,
    seed: Optional[int] = None,
) -> Annotated[str, ArtifactConfig(name="candidate_checkpoint", is_model_artifact=True)]:
    """
    Train the candidate on the sampled pairs and write its checkpoint.

    init_checkpoint continues from stored parameters (fine-tuning after a
    transfer); otherwise parameters are drawn from the `init` seed stream.
    """
    cfg = load_config(config_path).with_overrides(seed=seed).with_n_nodes(n_nodes)
    graph = build_graph(cfg)
    oracle = build_oracle(cfg, graph)
    cand = load_checkpoint(init_checkpoint).candidate if init_checkpoint else build_candidate(cfg, graph, oracle)

    # Start an MLflow run if possible; no-op if no tracker is set
    started = False
    if not mlflow.active_run():
        mlflow.start_run()
        started = True

    try:
        training = cfg.training
        mlflow.log_params(
            {
                "system": oracle.name,
                "n_nodes": graph.n_nodes,
                "samples": dataset.size,
                "optimizer": training.optimizer,
                "learning_rate": training.learning_rate,
                "epochs": training.epochs,
                "spectral_cap": training.spectral_cap,
                "weight_decay": training.weight_decay,
                "closure": training.closure,
                "degree": cand.degree,
            }
        )
        logging.info(f"Training candidate for {oracle.name} on {graph.n_nodes} nodes.")
        trained, report = train(cand, graph, oracle, dataset, training, seed=stream_seed(cfg.seed, "shuffle"))
        for record in report.history[:: training.log_every]:
            mlflow.log_metrics(
                {"loss": record.loss, "l1": record.l1, "l2": record.l2, "l3": record.l3,
                 "worst_margin": record.worst_margin},
                step=record.epoch,
            )
        mlflow.log_metric("margin_success", float(report.margin_success))
        for check in report.margin_checks:
            mlflow.log_metric(f"class_{check.class_id}_slack", check.slack)
    finally:
        # End run if one was started here
        if started and mlflow.active_run():
            mlflow.end_run()

    out = Path(cfg.output_dir) / f"n{graph.n_nodes}"
    record = {"kind": cfg.topology.kind, "n_nodes": graph.n_nodes, "edges": cfg.topology.edges}
    return str(save_checkpoint(out / "checkpoint.json", trained, record, oracle.name))

# steps/transfer_step.py
import logging
from dataclasses import replace
from pathlib import Path
from typing import Annotated

from zenml import step

from src.checkpoint import load_checkpoint, save_checkpoint
from src.config import build_graph, build_oracle, load_config
from src.training import transfer


@step(enable_cache=False)
def transfer_step(
    config_path: str,
    checkpoint_path: str,
    new_n: int,
) -> Annotated[str, "transferred_checkpoint"]:
    """
    Bind the shared parameters of a checkpoint to the `new_n`-node graph of the
    configured topology kind. Structural mismatches are logged and flagged.
    """
    cfg = load_config(config_path)
    checkpoint = load_checkpoint(checkpoint_path)
    old_graph = None
    if checkpoint.topology is not None:
        old = checkpoint.topology
        old_cfg = replace(cfg, topology=replace(cfg.topology, kind=old["kind"], edges=old.get("edges")))
        old_graph = build_graph(old_cfg, n_nodes=old["n_nodes"])
    new_graph = build_graph(cfg, n_nodes=new_n)
    oracle = build_oracle(cfg, new_graph)
    result = transfer(checkpoint.candidate, new_graph, oracle.state_dim, old_graph, cfg.training.closure)
    if not result.compatible:
        logging.warning(f"Transfer to {new_n} nodes left classes {result.unmatched_classes} unmatched.")
    record = {"kind": cfg.topology.kind, "n_nodes": new_graph.n_nodes, "edges": cfg.topology.edges}
    out = Path(cfg.output_dir) / f"n{new_graph.n_nodes}" / "transferred.json"
    return str(save_checkpoint(out, result.candidate, record, oracle.name))

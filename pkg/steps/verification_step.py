# steps/verification_step.py
import logging
from pathlib import Path
from typing import Annotated, Optional

from zenml import step

from src.checkpoint import load_checkpoint
from src.config import build_graph, build_oracle, load_config
from src.reporting import verification_summary, write_summary
from src.verifier import verify


@step(enable_cache=False)
def verification_step(
    config_path: str,
    checkpoint_path: str,
    n_nodes: Optional[int] = None,
) -> Annotated[dict, "verification_summary"]:
    """
    Run the grid verifier on a checkpoint and return the JSON summary
    (verdict, per-class residuals and margins, composed bounds on PASS).
    """
    cfg = load_config(config_path).with_n_nodes(n_nodes)
    graph = build_graph(cfg)
    oracle = build_oracle(cfg, graph)
    report = verify(load_checkpoint(checkpoint_path).candidate, graph, oracle, cfg.verification)
    summary = verification_summary(report)
    write_summary(summary, Path(cfg.output_dir) / f"n{graph.n_nodes}", "verify_report")
    logging.info(f"Verification of {checkpoint_path}: {summary['verdict']}.")
    return summary

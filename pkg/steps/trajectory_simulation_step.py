# steps/trajectory_simulation_step.py

from pathlib import Path
from typing import Annotated, Optional, Tuple

import numpy as np
import pandas as pd
from zenml import step

from src.checkpoint import load_checkpoint
from src.commands import lyapunov_frame
from src.config import build_graph, build_oracle, load_config, stream_rng
from src.reporting import write_frame
from src.system import simulate, trajectory_to_frame


@step
def trajectory_simulation_step(
    config_path: str,
    checkpoint_path: str,
    n_nodes: Optional[int] = None,
) -> Tuple[Annotated[pd.DataFrame, "trajectories"], Annotated[pd.DataFrame, "lyapunov_values"]]:
    """
    Paired rollouts from random initial states plus the total V along them,
    the data behind the convergence and decay plots.
    """
    cfg = load_config(config_path).with_n_nodes(n_nodes)
    graph = build_graph(cfg)
    oracle = build_oracle(cfg, graph)
    pairs, horizon = cfg.simulation.pairs, cfg.simulation.horizon
    rng = stream_rng(cfg.seed, "simulation")
    x0 = oracle.state_box.sample(rng, (pairs, oracle.n_nodes))
    xh0 = oracle.state_box.sample(rng, (pairs, oracle.n_nodes))
    trajectory = simulate(oracle, np.concatenate([x0, xh0], axis=0), horizon=horizon)

    trajectories = trajectory_to_frame(trajectory)
    values = lyapunov_frame(load_checkpoint(checkpoint_path).candidate, graph, trajectory.states, pairs)
    out = Path(cfg.output_dir) / f"n{graph.n_nodes}"
    write_frame(trajectories, out / "trajectories.csv")
    write_frame(values, out / "lyapunov.csv")
    return trajectories, values

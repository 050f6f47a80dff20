# steps/dataset_sampling_step.py

from typing import Annotated, Optional

from zenml import step

from src.config import build_graph, build_oracle, load_config, stream_seed
from src.training import TrainingDataset, sample_dataset


@step
def dataset_sampling_step(
    config_path: str,
    n_nodes: Optional[int] = None,
    seed: Optional[int] = None,
) -> Annotated[TrainingDataset, "training_dataset"]:
    """
    Draw the training pairs (x, x̂, w, ŵ) uniformly from the configured boxes.
    n_nodes overrides the topology size (used by the fine-tuning schedule).
    """
    cfg = load_config(config_path).with_overrides(seed=seed).with_n_nodes(n_nodes)
    oracle = build_oracle(cfg, build_graph(cfg))
    return sample_dataset(oracle, cfg.samples, stream_seed(cfg.seed, "dataset"))

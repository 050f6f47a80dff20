# pipelines/certification_pipeline.py

from typing import Optional
from zenml import pipeline
from steps.dataset_sampling_step import dataset_sampling_step
from steps.lyapunov_training_step import lyapunov_training_step     # mlflow tracked
from steps.verification_step import verification_step
from steps.trajectory_simulation_step import trajectory_simulation_step


@pipeline
def certification_pipeline(config_path: str, seed: Optional[int] = None):
    # 1) Sample (x, x̂, w, ŵ) pairs uniformly from the configured boxes
    dataset = dataset_sampling_step(config_path=config_path, seed=seed)

    # 2) Train the GNN candidate with the margin-injected hinge loss
    checkpoint = lyapunov_training_step(config_path=config_path, dataset=dataset, seed=seed)

    # 3) Grid verification of the three local conditions per node class
    summary = verification_step(config_path=config_path, checkpoint_path=checkpoint)

    # 4) Paired rollouts and V along them (convergence / decay plots)
    trajectory_simulation_step(config_path=config_path, checkpoint_path=checkpoint)

    return summary

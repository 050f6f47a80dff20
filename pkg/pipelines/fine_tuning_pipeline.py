# pipelines/fine_tuning_pipeline.py

from typing import List
from zenml import pipeline
from steps.transfer_step import transfer_step
from steps.dataset_sampling_step import dataset_sampling_step
from steps.lyapunov_training_step import lyapunov_training_step
from steps.verification_step import verification_step


@pipeline(enable_cache=False)
def fine_tuning_pipeline(
    config_path: str,
    checkpoint_path: str,
    schedule: List[int],
    fine_tune: bool = True,
    reverify: bool = False,
):
    checkpoint = checkpoint_path
    for n in schedule:
        # 1) Re-bind the shared weights to the larger graph
        checkpoint = transfer_step(
            config_path=config_path, checkpoint_path=checkpoint, new_n=n, id=f"transfer_{n}"
        )

        # 2) Optionally continue training on samples of the larger system
        if fine_tune:
            dataset = dataset_sampling_step(config_path=config_path, n_nodes=n, id=f"sampling_{n}")
            checkpoint = lyapunov_training_step(
                config_path=config_path,
                dataset=dataset,
                init_checkpoint=checkpoint,
                n_nodes=n,
                id=f"fine_tuning_{n}",
            )

        # 3) Optionally re-verify (one representative per node class)
        if reverify:
            verification_step(config_path=config_path, checkpoint_path=checkpoint, n_nodes=n, id=f"verification_{n}")

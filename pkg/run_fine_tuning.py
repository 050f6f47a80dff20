# run_fine_tuning.py

import click
from rich import print

from pipelines.fine_tuning_pipeline import fine_tuning_pipeline


@click.command()
@click.option("--config", "config_path", default="configs/temperature_ring.yaml", show_default=True)
@click.option("--checkpoint", "checkpoint_path", required=True, help="Checkpoint trained on the small graph.")
@click.option("--schedule", default="50,100,500,1000", show_default=True, help="Comma-separated node counts.")
@click.option("--fine-tune/--no-fine-tune", default=True, show_default=True)
@click.option("--reverify/--no-reverify", default=False, show_default=True)
def main(config_path: str, checkpoint_path: str, schedule: str, fine_tune: bool, reverify: bool):
    sizes = [int(s) for s in schedule.split(",") if s.strip()]
    fine_tuning_pipeline(
        config_path=config_path,
        checkpoint_path=checkpoint_path,
        schedule=sizes,
        fine_tune=fine_tune,
        reverify=reverify,
    )
    print(f"Transferred through {sizes}; checkpoints are under the configured output_dir/n<N>/.")


if __name__ == "__main__":
    main()

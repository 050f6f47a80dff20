import click

from pipelines.certification_pipeline import certification_pipeline


@click.command()
@click.option("--config", "config_path", default="configs/temperature_desk.yaml", show_default=True)
@click.option("--seed", type=int, default=None)
def main(config_path: str, seed):
    # sample -> train -> verify -> simulate, tracked by the active ZenML stack
    certification_pipeline(config_path=config_path, seed=seed)


if __name__ == "__main__":
    main()

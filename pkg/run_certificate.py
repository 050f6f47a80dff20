# run_certificate.py

import os
import sys

import click

from src.commands import (
    RunOverrides,
    cmd_report,
    cmd_simulate,
    cmd_train,
    cmd_transfer,
    cmd_verify,
)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML run configuration.")
@click.option("--out", "output_dir", default=None, help="Output directory (overrides output_dir).")
@click.option("--seed", type=int, default=None, help="Root seed (overrides seed).")
@click.option("--threads", type=int, default=os.cpu_count() or 1, show_default=True,
              help="Worker threads for verification.")
@click.pass_context
def cli(ctx: click.Context, config_path, output_dir, seed, threads):
    """Train, verify, simulate and transfer local incremental Lyapunov certificates."""
    ctx.obj = {"config": config_path, "overrides": RunOverrides(output_dir, seed, threads)}


def _config(ctx: click.Context) -> str:
    path = ctx.obj["config"]
    if not path:
        click.echo("--config is required for this command.", err=True)
        sys.exit(64)
    return path


@cli.command()
@click.option("--init", "init_checkpoint", default=None, help="Start from this checkpoint instead of a fresh draw.")
@click.pass_context
def train(ctx: click.Context, init_checkpoint):
    """Fit the candidate; exit 0 on margin success, 1 otherwise."""
    sys.exit(cmd_train(_config(ctx), ctx.obj["overrides"], init_checkpoint))


@cli.command()
@click.option("--checkpoint", default=None, help="Candidate checkpoint (optional for analytic candidates).")
@click.option("--epsilon-x", type=float, default=None)
@click.option("--epsilon-u", type=float, default=None)
@click.option("--mode", type=click.Choice(["strict", "paper"]), default=None)
@click.option("--closure", type=click.Choice(["two_hop", "embed_reference"]), default=None)
@click.option("--budget", type=int, default=None)
@click.option("--diagonal-exclusion", type=float, default=None)
@click.pass_context
def verify(ctx: click.Context, checkpoint, epsilon_x, epsilon_u, mode, closure, budget, diagonal_exclusion):
    """Grid verification; exit 0 on PASS, 2 on FAIL, 3 on budget or abort."""
    sys.exit(
        cmd_verify(
            _config(ctx),
            checkpoint,
            ctx.obj["overrides"],
            epsilon_x=epsilon_x,
            epsilon_u=epsilon_u,
            mode=mode,
            closure=closure,
            budget=budget,
            diagonal_exclusion=diagonal_exclusion,
        )
    )


@cli.command()
@click.option("--checkpoint", default=None, help="Candidate for the V column; trajectories only without it.")
@click.option("--pairs", type=int, default=None)
@click.option("--horizon", type=int, default=None)
@click.pass_context
def simulate(ctx: click.Context, checkpoint, pairs, horizon):
    """Emit trajectories.csv and lyapunov.csv for paired rollouts."""
    sys.exit(cmd_simulate(_config(ctx), checkpoint, pairs, horizon, ctx.obj["overrides"]))


@cli.command()
@click.option("--checkpoint", required=True)
@click.option("--new-n", type=int, required=True, help="Node count of the target graph.")
@click.option("--fine-tune/--no-fine-tune", default=False, show_default=True)
@click.pass_context
def transfer(ctx: click.Context, checkpoint, new_n, fine_tune):
    """Bind a trained checkpoint to a larger graph of the same kind."""
    sys.exit(cmd_transfer(_config(ctx), checkpoint, new_n, fine_tune, ctx.obj["overrides"]))


@cli.command()
@click.argument("report_path", type=click.Path(dir_okay=False))
def report(report_path):
    """Pretty-print a stored JSON report."""
    sys.exit(cmd_report(report_path))


if __name__ == "__main__":
    cli()

import os
from dotenv import load_dotenv

load_dotenv()

import click

from commands.analyze import analyze_cmd
from commands.benchmark import benchmark_cmd
from commands.convert import convert_cmd, validate_cmd
from commands.predict import predict_cmd, evaluate_cmd
from commands.train import train_cmd, grid_cmd
from helpers import debug


@click.group()
@click.version_option('1.0.0', prog_name='spanrel')
def cli():
    """spanrel: one span/relation model for ten NLP tasks (BRAT in, BRAT out)."""
    debug(f"SPANREL_THREADS={os.getenv('SPANREL_THREADS', '')} SPANREL_SEED={os.getenv('SPANREL_SEED', '')}")


# Register commands
cli.add_command(convert_cmd)
cli.add_command(validate_cmd)
cli.add_command(train_cmd)
cli.add_command(grid_cmd)
cli.add_command(predict_cmd)
cli.add_command(evaluate_cmd)
cli.add_command(analyze_cmd)
cli.add_command(benchmark_cmd)


if __name__ == '__main__':
    cli()

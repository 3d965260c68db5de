import click

from commands.common import run_command, config_option, seed_option, task_option, out_option
from config import load_run_config
from trainer import train_from_config, pairwise_grid
from utils.reports import emit_report


def _run_config(config_path, seed, out, task=None):
    if config_path is None:
        raise click.UsageError('--config is required')
    return load_run_config(config_path, seed=seed, out=out, task=task)


@click.command('train')
@config_option
@seed_option
@task_option
@out_option
@run_command
def train_cmd(config_path, seed, task, out):
    """Train STL / MTL / MTL_FT per the run config; writes model.sprl and train_log.jsonl under --out."""
    run = _run_config(config_path, seed, out, task)
    report = train_from_config(run)
    emit_report(report, run.out, 'train_report.json')


@click.command('grid')
@config_option
@seed_option
@out_option
@click.option('--source', 'sources', multiple=True, help='Source task (repeatable); default all configured tasks.')
@click.option('--target', 'targets', multiple=True, help='Target task (repeatable); default all configured tasks.')
@run_command
def grid_cmd(config_path, seed, out, sources, targets):
    """Pairwise MTL+fine-tuning grid (target x source) next to the STL baselines."""
    run = _run_config(config_path, seed, out)
    grid = pairwise_grid(run, list(sources) or None, list(targets) or None)
    grid['seed'] = run.seed
    emit_report(grid, run.out, 'grid.json')

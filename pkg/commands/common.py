import functools
from pathlib import Path

import click

from config import load_run_config
from errors import SpanRelError
from helpers import log
from schema import builtin_schema, task_name

EXIT_ERROR = 2


def run_command(fn):
    """Turn any SpanRelError into '[ERROR] <message>' and exit status 2."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except SpanRelError as e:
            log('ERROR', str(e))
            raise SystemExit(EXIT_ERROR)
    return wrapper


config_option = click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False, path_type=Path),
                             help='Run-config JSON file.')
seed_option = click.option('--seed', type=int, default=None, help='Overrides the run-config / SPANREL_SEED seed.')
task_option = click.option('--task', default=None, help='Task name (NER, RE, Coref, OpenIE, SRL, Dep, Consti, POS, ABSA, ORL).')
out_option = click.option('--out', type=click.Path(file_okay=False, path_type=Path), default=None,
                          help='Output directory.')


def schema_for(task, config_path=None):
    """Built-in schema for `task`, with the run config's overrides for it when a config is given."""
    if config_path is not None:
        run = load_run_config(config_path, task=task)
        return builtin_schema(task).with_overrides(run.task(task).overrides)
    return builtin_schema(task_name(task))


def require_task(task):
    if not task:
        raise click.UsageError('--task is required')
    return task_name(task)

from dataclasses import replace
from pathlib import Path

import click

from commands.common import run_command, config_option, seed_option, out_option
from config import RunConfig, TaskSpec, TrainerConfig, load_run_config
from errors import ConfigError
from helpers import default_seed, ensure_dir, log
from schema import task_name
from trainer import train_from_config
from utils.reports import emit_report, write_benchmark_workbook
from utils.synthetic import SCHEMA_OVERRIDES, SYNTHETIC_ENCODER, write_synthetic_corpus


def _task_dirs(root):
    """<root>/<Task>/{train,dev,test} layout; a task needs at least train/."""
    found = []
    for path in sorted(Path(root).iterdir()):
        if path.is_dir() and (path / 'train').is_dir():
            found.append(path)
    if not found:
        raise ConfigError(f"no <task>/train directories under {root}")
    return found


@click.command('benchmark')
@click.argument('root', required=False, type=click.Path(exists=True, file_okay=False, path_type=Path))
@config_option
@seed_option
@out_option
@click.option('--synthetic', is_flag=True, help='Generate the synthetic corpora under --out and benchmark them.')
@click.option('--train-size', type=int, default=500, show_default=True, help='Synthetic training sentences per task.')
@click.option('--dev-size', type=int, default=100, show_default=True, help='Synthetic dev/test sentences per task.')
@run_command
def benchmark_cmd(root, config_path, seed, out, synthetic, train_size, dev_size):
    """Train and score one STL model per task directory; one JSON report plus an .xlsx workbook."""
    # 1. trainer / encoder settings
    if config_path is not None:
        base = load_run_config(config_path, seed=seed, out=out)
        trainer, encoder, overrides = base.trainer, base.encoder, {s.name.lower(): s.overrides for s in base.tasks}
        seed, out = base.seed, base.out
    else:
        seed = seed if seed is not None else default_seed()
        trainer, encoder, overrides = TrainerConfig(seed=seed), {}, {}
        out = out or Path('runs/benchmark')
    trainer = replace(trainer, mode='STL', fine_tune_task=None)
    out = ensure_dir(out)

    # 2. data
    if synthetic:
        root = write_synthetic_corpus(out / 'data', train_size, dev_size, dev_size, seed)
        if not encoder:
            encoder = dict(SYNTHETIC_ENCODER)
        for name, extra in SCHEMA_OVERRIDES.items():
            overrides.setdefault(name.lower(), extra)
    elif root is None:
        raise click.UsageError('give a ROOT directory or --synthetic')

    # 3. one STL run per task
    report = {'command': 'benchmark', 'seed': seed, 'root': str(root), 'tasks': {}}
    for task_dir in _task_dirs(root):
        name = task_name(task_dir.name)
        spec = TaskSpec(
            name=name,
            train=task_dir / 'train',
            dev=task_dir / 'dev' if (task_dir / 'dev').is_dir() else None,
            test=task_dir / 'test' if (task_dir / 'test').is_dir() else None,
            overrides=dict(overrides.get(task_dir.name.lower(), overrides.get(name.lower(), {}))),
        )
        run = RunConfig(seed=seed, out=out / name, trainer=trainer, encoder=dict(encoder), tasks=[spec])
        result = train_from_config(run)
        split = 'test' if result['test'] else 'dev'
        report['tasks'][name] = {
            'split': split,
            'metrics': result[split].get(name, {}),
            'checkpoint': result['checkpoint'],
            'epochs': result['epochs'],
            'data': result['data'][name],
        }
        log('OK', f"{name}: {report['tasks'][name]['metrics'].get('value', float('nan')):.4f} on {split}")

    emit_report(report, out, 'benchmark.json')
    write_benchmark_workbook(report, out / 'benchmark.xlsx')

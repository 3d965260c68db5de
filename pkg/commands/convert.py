from pathlib import Path

import click

from brat_io import validate_dataset
from commands.common import run_command, schema_for, require_task, config_option, task_option, out_option
from converters import FORMATS, import_corpus
from utils.reports import emit_report


@click.command('convert')
@click.argument('fmt', metavar='FORMAT', type=click.Choice(FORMATS))
@click.argument('inputs', nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option('--out', type=click.Path(file_okay=False, path_type=Path), required=True,
              help='BRAT output directory.')
@task_option
@run_command
def convert_cmd(fmt, inputs, out, task):
    """Convert corpus files (CoNLL-2003, CoNLL-U, PTB, props, BRAT) into BRAT pairs."""
    summary = import_corpus(fmt, inputs, out, task)
    emit_report({'command': 'convert', 'format': fmt, 'out': str(out), 'summary': summary.to_dict()})


@click.command('validate')
@click.argument('directory', type=click.Path(exists=True, file_okay=False, path_type=Path))
@task_option
@config_option
@out_option
@run_command
def validate_cmd(directory, task, config_path, out):
    """Check a BRAT directory against a task schema; exit 1 when violations are found."""
    schema = schema_for(require_task(task), config_path)
    violations = validate_dataset(directory, schema)
    emit_report({
        'command': 'validate',
        'task': schema.name,
        'directory': str(directory),
        'violations': [v.to_dict() for v in violations],
    }, out, 'validate.json')
    if violations:
        raise SystemExit(1)

from pathlib import Path

import click

from brat_io import read_dataset
from checkpoints import load_bundle
from commands.common import run_command, schema_for, require_task, config_option, seed_option, task_option, out_option
from helpers import ensure_dir, log
from schema import fit_labels, task_name
from trainer import predict_document_items, write_predictions
from utils.decoders import dependency_to_conllu
from utils.metrics import evaluate_documents, paired_bootstrap
from utils.reports import emit_report


def _bundle_task(bundle, task):
    if task:
        return task_name(task)
    if len(bundle.tasks) != 1:
        raise click.UsageError(f"the model has several tasks ({', '.join(bundle.tasks)}); pick one with --task")
    return bundle.tasks[0]


@click.command('predict')
@click.argument('model', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument('data', type=click.Path(exists=True, file_okay=False, path_type=Path))
@task_option
@click.option('--out', type=click.Path(file_okay=False, path_type=Path), required=True,
              help='Directory for the predicted BRAT pairs.')
@click.option('--conllu', is_flag=True, help='Dependency models: also write predictions.conllu.')
@run_command
def predict_cmd(model, data, task, out, conllu):
    """Run a checkpoint over a BRAT directory and write predicted .ann files."""
    bundle = load_bundle(model)
    task = _bundle_task(bundle, task)
    docs = read_dataset(data)
    items = predict_document_items(bundle, task, docs)
    predicted = write_predictions(bundle, task, docs, out, items)
    report = {
        'command': 'predict',
        'task': task,
        'out': str(out),
        'documents': len(predicted),
        'spans': sum(len(d.spans) for d in predicted),
        'relations': sum(len(d.relations) for d in predicted),
    }
    if conllu and bundle.schemas[task].decoder.value == 'Dependency':
        path = ensure_dir(out) / 'predictions.conllu'
        path.write_text(''.join(dependency_to_conllu(doc, doc_items) for doc, doc_items in zip(docs, items)),
                        encoding='utf-8')
        report['conllu'] = str(path)
        log('OK', f"Wrote {path.name}")
    emit_report(report)


@click.command('evaluate')
@click.argument('gold', type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.argument('pred', type=click.Path(exists=True, file_okay=False, path_type=Path))
@task_option
@config_option
@seed_option
@out_option
@click.option('--compare', type=click.Path(exists=True, file_okay=False, path_type=Path), default=None,
              help='Second prediction directory for a paired bootstrap test (PRED is the baseline).')
@click.option('--samples', type=int, default=1000, show_default=True, help='Bootstrap resamples.')
@run_command
def evaluate_cmd(gold, pred, task, config_path, seed, out, compare, samples):
    """Score predicted BRAT documents against gold with the task's metric."""
    schema = schema_for(require_task(task), config_path)
    gold_docs = read_dataset(gold)
    schema = fit_labels(schema, gold_docs)
    pred_docs = read_dataset(pred)
    report = evaluate_documents(gold_docs, pred_docs, schema).to_dict()
    report['command'] = 'evaluate'
    if compare is not None:
        other = read_dataset(compare)
        p_value = paired_bootstrap(gold_docs, pred_docs, other, schema, samples, seed if seed is not None else 13)
        report['bootstrap'] = {
            'compare': str(compare),
            'compare_value': evaluate_documents(gold_docs, other, schema).value,
            'samples': samples,
            'p_value': p_value,
        }
    log('OK', f"{schema.name} {report['metric']}: {report['value']:.4f}")
    emit_report(report, out, 'evaluate.json')

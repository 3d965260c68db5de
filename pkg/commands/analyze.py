from pathlib import Path

import click

from brat_io import read_dataset
from checkpoints import load_bundle
from commands.common import run_command, out_option
from utils.analysis import extract_attention, similarity_heatmap
from utils.reports import emit_report


@click.command('analyze')
@click.argument('model_a', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument('model_b', type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument('data', type=click.Path(exists=True, file_okay=False, path_type=Path))
@out_option
@click.option('--limit', type=int, default=None, help='Use at most this many sentences.')
@run_command
def analyze_cmd(model_a, model_b, data, out, limit):
    """Per-head attention similarity of two models over the sentences of DATA (CSV + PNG heatmap with --out)."""
    sentences = [s for doc in read_dataset(data) for s in doc.sentence_tokens if s]
    if limit is not None:
        sentences = sentences[:limit]
    bundle_a, bundle_b = load_bundle(model_a), load_bundle(model_b)
    profile_a = extract_attention(bundle_a, sentences, ','.join(bundle_a.tasks))
    profile_b = extract_attention(bundle_b, sentences, ','.join(bundle_b.tasks))
    grid = similarity_heatmap(profile_a, profile_b, out)
    emit_report({
        'command': 'analyze',
        'models': [str(model_a), str(model_b)],
        'sentences': len(sentences),
        'layers': profile_a.layers,
        'heads': profile_a.heads,
        'grid': grid.tolist(),
        'mean_similarity': float(grid.mean()),
    }, out, 'analyze.json')

"""Deterministic rule-generated corpora for smoke tests and `benchmark --synthetic`.

Every sentence follows one template:

    [filler] First Last VERB [filler] Place [filler] .

NER labels the capitalized bigram PER and the place LOC. The OpenIE view
labels the verb `predicate`, both participants `argument`, and links the
predicate to them with ARG0 (the person) and ARG1 (the place).
"""
from __future__ import annotations

import numpy as np

from brat_io import write_document
from converters import DocumentBuilder
from errors import UnknownTask
from helpers import ensure_dir, log

FIRST = ('Anna', 'Boris', 'Carla', 'Dmitri', 'Elena', 'Felix', 'Greta', 'Hugo', 'Ines', 'Jonas')
LAST = ('Berg', 'Costa', 'Dahl', 'Ferro', 'Hart', 'Klein', 'Lund', 'Moreau', 'Novak', 'Orsini')
PLACES = ('Paris', 'Oslo', 'Lima', 'Kyoto', 'Quito', 'Rabat', 'Turin', 'Vienna')
VERBS = ('visited', 'left', 'reached', 'praised', 'toured')
FILLERS = ('the', 'old', 'quiet', 'yesterday', 'again', 'with', 'friends', 'and', 'finally', 'slowly')

SYNTHETIC_TASKS = ('NER', 'OpenIE')
SCHEMA_OVERRIDES = {
    'NER': {'max_span_length': 3},
    'OpenIE': {'max_span_length': 3, 'pruning_ratio': 0.5},
}
# desk-scale encoder for the synthetic grammar
SYNTHETIC_ENCODER = {
    'embed_dim': 32, 'bilstm_layers': 1, 'bilstm_hidden': 32, 'mlp_hidden': 64, 'mlp_layers': 2, 'dropout': 0.1,
}


def _fillers(rng, most=2):
    return [str(w) for w in rng.choice(FILLERS, size=int(rng.integers(0, most + 1)))]


def _sentence(rng):
    """Tokens plus the token positions of the person bigram, verb and place."""
    tokens = _fillers(rng)
    person = len(tokens)
    tokens += [str(rng.choice(FIRST)), str(rng.choice(LAST))]
    verb = len(tokens)
    tokens.append(str(rng.choice(VERBS)))
    tokens += _fillers(rng)
    place = len(tokens)
    tokens.append(str(rng.choice(PLACES)))
    tokens += _fillers(rng, 1) + ['.']
    return tokens, person, verb, place


def synthetic_documents(task, sentences, seed=13, per_document=5, prefix='syn'):
    """`sentences` rule-generated sentences grouped into documents, annotated for `task`."""
    if task not in SYNTHETIC_TASKS:
        raise UnknownTask(task)
    rng = np.random.default_rng(seed)
    docs = []
    builder = None
    for i in range(sentences):
        if i % per_document == 0:
            if builder is not None:
                docs.append(builder.build())
            builder = DocumentBuilder(f"{prefix}{len(docs):04d}")
        tokens, person, verb, place = _sentence(rng)
        start = builder.add_sentence(tokens)
        if task == 'NER':
            builder.add_span(start + person, start + person + 1, 'PER')
            builder.add_span(start + place, start + place, 'LOC')
        else:
            predicate = builder.add_span(start + verb, start + verb, 'predicate')
            agent = builder.add_span(start + person, start + person + 1, 'argument')
            target = builder.add_span(start + place, start + place, 'argument')
            builder.add_relation(predicate, agent, 'ARG0')
            builder.add_relation(predicate, target, 'ARG1')
    if builder is not None and not builder.empty:
        docs.append(builder.build())
    return docs


def synthetic_splits(task, train=500, dev=100, test=0, seed=13):
    """Disjoint train/dev/test document lists drawn from differently seeded generators."""
    return {
        'train': synthetic_documents(task, train, seed, prefix='train'),
        'dev': synthetic_documents(task, dev, seed + 1, prefix='dev'),
        'test': synthetic_documents(task, test, seed + 2, prefix='test') if test else [],
    }


def write_synthetic_corpus(out_dir, train=500, dev=100, test=100, seed=13):
    """<out>/<task>/{train,dev,test} BRAT directories for every synthetic task."""
    out_dir = ensure_dir(out_dir)
    for task in SYNTHETIC_TASKS:
        for split, docs in synthetic_splits(task, train, dev, test, seed).items():
            target = ensure_dir(out_dir / task / split)
            for doc in docs:
                write_document(doc, target)
    log('DATA', f"Wrote synthetic {', '.join(SYNTHETIC_TASKS)} corpora to {out_dir}")
    return out_dir

"""Scoring: span/relation F1, macro F1, accuracy, LAS, Evalb-style bracket F1 and MUC/B3/CEAF-e."""
from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from errors import DocumentMismatch
from helpers import worker_count
from models import MetricReport, ROOT


def prf(correct, predicted, gold):
    p = correct / predicted if predicted else 0.0
    r = correct / gold if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def _labelled_f1(gold, pred, task, metric, label_of):
    """Multiset-matched P/R/F1 overall and per label."""
    gold_counts, pred_counts = Counter(gold), Counter(pred)
    correct = gold_counts & pred_counts
    p, r, f = prf(sum(correct.values()), sum(pred_counts.values()), sum(gold_counts.values()))
    report = MetricReport(task, metric, p, r, f)
    labels = sorted({label_of(x) for x in gold_counts} | {label_of(x) for x in pred_counts})
    for label in labels:
        c = sum(n for x, n in correct.items() if label_of(x) == label)
        pn = sum(n for x, n in pred_counts.items() if label_of(x) == label)
        gn = sum(n for x, n in gold_counts.items() if label_of(x) == label)
        lp, lr, lf = prf(c, pn, gn)
        report.per_label[label] = {'precision': lp, 'recall': lr, 'f1': lf}
        report.support[label] = gn
    return report


def span_f1(gold, pred, task='NER'):
    """`gold` / `pred`: iterables of (doc_id, b, e, label)."""
    return _labelled_f1(list(gold), list(pred), task, 'span_f1', lambda x: x[-1])


def relation_f1(gold, pred, task='SRL'):
    """`gold` / `pred`: iterables of (doc_id, (hb, he), (tb, te), label); both boundaries and label must match."""
    return _labelled_f1(list(gold), list(pred), task, 'relation_f1', lambda x: x[-1])


def macro_f1(gold, pred, task='RE', exclude=('Other',)):
    """Mean per-label F1 over relation labels present in gold or prediction, minus `exclude`."""
    report = relation_f1(gold, pred, task)
    report.metric = 'macro_f1'
    scores = [v['f1'] for label, v in report.per_label.items() if label not in exclude]
    report.extra['macro_f1'] = float(np.mean(scores)) if scores else 0.0
    report.extra['excluded'] = list(exclude)
    return report


def accuracy(gold, pred, task='POS'):
    """Gold-span labelling accuracy: a gold (doc, b, e) counts when the prediction at that span has its label."""
    predicted = {}
    for doc_id, b, e, label in pred:
        predicted.setdefault((doc_id, b, e), label)
    gold = list(gold)
    correct = sum(1 for doc_id, b, e, label in gold if predicted.get((doc_id, b, e)) == label)
    report = span_f1(gold, pred, task)
    report.metric = 'accuracy'
    report.extra['accuracy'] = correct / len(gold) if gold else 0.0
    report.extra['correct'] = correct
    report.extra['total'] = len(gold)
    return report


def las(gold_heads, pred_heads, task='Dep'):
    """Labelled attachment score over per-sentence lists of (head, label); ROOT is -1."""
    gold_heads, pred_heads = list(gold_heads), list(pred_heads)
    if not gold_heads or not pred_heads:
        raise DocumentMismatch('LAS needs at least one sentence on both sides')
    if len(gold_heads) != len(pred_heads):
        raise DocumentMismatch(f"{len(gold_heads)} gold sentences vs {len(pred_heads)} predicted")
    total = labelled = unlabelled = 0
    for i, (gold, pred) in enumerate(zip(gold_heads, pred_heads)):
        if len(gold) != len(pred):
            raise DocumentMismatch(f"sentence {i}: {len(gold)} gold words vs {len(pred)} predicted")
        for (gh, gl), (ph, pl) in zip(gold, pred):
            total += 1
            if gh == ph:
                unlabelled += 1
                if gl == pl:
                    labelled += 1
    value = labelled / total if total else 0.0
    report = MetricReport(task, 'las', value, value, value)
    report.extra = {'las': value, 'uas': unlabelled / total if total else 0.0, 'words': total}
    return report


def expand_brackets(brackets):
    """Split unary-chain labels 'S+VP' into one bracket per label."""
    out = []
    for doc_id, b, e, label in brackets:
        for part in label.split('+'):
            out.append((doc_id, b, e, part))
    return out


def bracket_f1(gold, pred, task='Consti'):
    """Labelled phrasal bracket F1 (preterminals are never brackets)."""
    report = span_f1(expand_brackets(gold), expand_brackets(pred), task)
    report.metric = 'bracket_f1'
    return report


# --- coreference -------------------------------------------------------------

def _mention_map(clusters):
    mapping = {}
    for i, cluster in enumerate(clusters):
        for m in cluster:
            mapping[m] = i
    return mapping


def muc(key, response):
    """Vilain et al. link-based recall and precision; returns (p, r, f)."""
    def partition_score(clusters, other):
        mapping = _mention_map(other)
        num = den = 0
        for cluster in clusters:
            parts = {mapping.get(m, ('single', m)) for m in cluster}
            num += len(cluster) - len(parts)
            den += len(cluster) - 1
        return num, den

    rn, rd = partition_score(key, response)
    pn, pd = partition_score(response, key)
    r = rn / rd if rd else 0.0
    p = pn / pd if pd else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def b_cubed(key, response):
    """Mention-based B3; twinless mentions contribute nothing to the numerators."""
    def score(clusters, other):
        mapping = _mention_map(other)
        num = den = 0.0
        for cluster in clusters:
            overlap = Counter(mapping[m] for m in cluster if m in mapping)
            num += sum(count * count for count in overlap.values()) / len(cluster)
            den += len(cluster)
        return num / den if den else 0.0

    r = score(key, response)
    p = score(response, key)
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def phi4(a, b):
    return 2 * len(set(a) & set(b)) / (len(a) + len(b))


def ceaf_e(key, response):
    """Entity-based CEAF with phi4 similarity and an optimal cluster alignment."""
    if not key or not response:
        return 0.0, 0.0, 0.0
    scores = np.zeros((len(key), len(response)))
    for i, k in enumerate(key):
        for j, rsp in enumerate(response):
            scores[i, j] = phi4(k, rsp)
    rows, cols = linear_sum_assignment(-scores)
    similarity = float(scores[rows, cols].sum())
    r = similarity / len(key)
    p = similarity / len(response)
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def coref_scores(key, response, task='Coref'):
    """MUC, B3 and CEAF-e over clusters of hashable mentions; headline value is their mean F1."""
    key = [list(c) for c in key if c]
    response = [list(c) for c in response if c]
    parts = {'muc': muc(key, response), 'b3': b_cubed(key, response), 'ceafe': ceaf_e(key, response)}
    avg = float(np.mean([f for _, _, f in parts.values()]))
    report = MetricReport(task, 'avg_f1',
                          float(np.mean([p for p, _, _ in parts.values()])),
                          float(np.mean([r for _, r, _ in parts.values()])),
                          avg)
    report.extra = {name: {'precision': p, 'recall': r, 'f1': f} for name, (p, r, f) in parts.items()}
    report.extra['avg_f1'] = avg
    return report


# --- document-level evaluation ------------------------------------------------

def document_spans(doc):
    return [(doc.doc_id, s.token_begin, s.token_end, s.label) for s in doc.spans]


def document_relations(doc):
    by_id = doc.span_index()
    out = []
    for rel in doc.relations:
        h, t = by_id[rel.head_span_id], by_id[rel.tail_span_id]
        out.append((doc.doc_id, (h.token_begin, h.token_end), (t.token_begin, t.token_end), rel.label))
    return out


def document_clusters(doc):
    """Connected components of the coreference links; unlinked mentions are dropped."""
    by_id = doc.span_index()
    parent = {}

    def find(x):
        parent.setdefault(x, x)
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for rel in doc.relations:
        h, t = by_id[rel.head_span_id], by_id[rel.tail_span_id]
        a = (doc.doc_id, h.token_begin, h.token_end)
        b = (doc.doc_id, t.token_begin, t.token_end)
        parent[find(a)] = find(b)
    groups = {}
    for m in list(parent):
        groups.setdefault(find(m), set()).add(m)
    return [sorted(c) for c in groups.values() if len(c) > 1]


def document_heads(doc, strict=False):
    """Per-sentence (head, label) lists with sentence-local word indices; no incoming relation means ROOT.

    With `strict`, a sentence with more than one headless word raises DocumentMismatch.
    """
    by_id = doc.span_index()
    incoming = {}
    for rel in doc.relations:
        h, t = by_id[rel.head_span_id], by_id[rel.tail_span_id]
        incoming.setdefault(t.token_begin, (h.token_begin, rel.label))
    sentences = []
    for start, sentence in zip(doc.sentence_starts, doc.sentences):
        heads = []
        for i in range(start, start + len(sentence)):
            if i in incoming:
                head, label = incoming[i]
                heads.append((head - start, label))
            else:
                heads.append((ROOT, 'root'))
        if strict and sum(1 for head, _ in heads if head == ROOT) > 1:
            raise DocumentMismatch(f"{doc.doc_id}: sentence {len(sentences) + 1} has several words without a head")
        sentences.append(heads)
    return sentences


def _strict_heads(doc):
    return document_heads(doc, strict=True)


def align_documents(gold_docs, pred_docs):
    gold = {d.doc_id: d for d in gold_docs}
    pred = {d.doc_id: d for d in pred_docs}
    if set(gold) != set(pred):
        missing = sorted(set(gold) ^ set(pred))
        raise DocumentMismatch(f"document sets differ: {missing[:5]}")
    pairs = []
    for doc_id in sorted(gold):
        if gold[doc_id].text != pred[doc_id].text:
            raise DocumentMismatch(f"{doc_id}: texts differ")
        pairs.append((gold[doc_id], pred[doc_id]))
    return pairs


def _collect(docs, extract):
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        parts = list(pool.map(extract, docs))
    return [x for part in parts for x in part]


def evaluate_documents(gold_docs, pred_docs, schema):
    """Score predicted documents against gold with the schema's metric."""
    pairs = align_documents(gold_docs, pred_docs)
    golds = [g for g, _ in pairs]
    preds = [p for _, p in pairs]
    metric = schema.metric.value
    if metric == 'span_f1':
        report = span_f1(_collect(golds, document_spans), _collect(preds, document_spans), schema.name)
    elif metric == 'relation_f1':
        report = relation_f1(_collect(golds, document_relations), _collect(preds, document_relations), schema.name)
    elif metric == 'macro_f1':
        exclude = (schema.other_label,) if schema.other_label else ()
        report = macro_f1(_collect(golds, document_relations), _collect(preds, document_relations),
                          schema.name, exclude)
    elif metric == 'accuracy':
        report = accuracy(_collect(golds, document_spans), _collect(preds, document_spans), schema.name)
    elif metric == 'las':
        report = las(_collect(golds, _strict_heads), _collect(preds, _strict_heads), schema.name)
    elif metric == 'bracket_f1':
        report = bracket_f1(_collect(golds, document_spans), _collect(preds, document_spans), schema.name)
    else:
        report = coref_scores(_collect(golds, document_clusters), _collect(preds, document_clusters), schema.name)
    report.extra.setdefault('documents', len(pairs))
    if schema.has_relations and metric != 'las':
        # span quality is reported next to every relation metric
        spans = span_f1(_collect(golds, document_spans), _collect(preds, document_spans), schema.name)
        report.extra.setdefault('span_f1', spans.f1)
    return report


def paired_bootstrap(gold_docs, pred_a, pred_b, schema, samples=1000, seed=13):
    """Share of document resamples in which system B does not beat system A (a one-sided p-value)."""
    a_pairs = align_documents(gold_docs, pred_a)
    b_pairs = align_documents(gold_docs, pred_b)
    rng = np.random.default_rng(seed)
    n = len(a_pairs)
    not_better = 0
    for _ in range(samples):
        picks = rng.integers(0, n, size=n)
        golds, preds_a, preds_b = [], [], []
        for k, i in enumerate(picks):
            # resampled copies need distinct ids to stay distinct documents
            golds.append(_renamed(a_pairs[i][0], k))
            preds_a.append(_renamed(a_pairs[i][1], k))
            preds_b.append(_renamed(b_pairs[i][1], k))
        score_a = evaluate_documents(golds, preds_a, schema).value
        score_b = evaluate_documents(golds, preds_b, schema).value
        if score_b <= score_a:
            not_better += 1
    return not_better / samples if samples else 1.0


def _renamed(doc, k):
    return replace(doc, doc_id=f"{doc.doc_id}#{k}")

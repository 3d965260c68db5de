"""Inference: turn span and pair scores into task-valid predictions, and write them back as BRAT."""
from __future__ import annotations

import numpy as np

from models import Prediction, TreeNode, Document, SpanAnnotation, RelationAnnotation, ROOT
from utils.spanrel import softmax_rows, log_softmax_rows

NO_LABEL_SCORE = -1e9


def _label(vocab, index):
    return vocab[int(index)]


def decode_span_only(candidates, schema):
    """Spans whose argmax is not NEG_SPAN; accuracy tasks always take the best real label."""
    forced = schema.metric.value == 'accuracy'
    spans = []
    for c in candidates:
        if forced:
            spans.append((c.b, c.e, _label(schema.span_vocab, 1 + int(np.argmax(c.label_probs[1:])))))
        elif c.best_label != 0:
            spans.append((c.b, c.e, _label(schema.span_vocab, c.best_label)))
    return Prediction(spans=spans)


def decode_generic(candidates, kept, pairs, schema):
    """Non-NEG spans, plus non-NEG_REL pairs whose two endpoints were both extracted."""
    prediction = decode_span_only(candidates, schema)
    extracted = {(b, e) for b, e, _ in prediction.spans}
    for pair in pairs:
        label = int(np.argmax(pair.o))
        if label == 0:
            continue
        head, tail = kept[pair.head_index], kept[pair.tail_index]
        if (head.b, head.e) in extracted and (tail.b, tail.e) in extracted:
            prediction.relations.append(((head.b, head.e), (tail.b, tail.e), _label(schema.relation_vocab, label)))
    return prediction


def decode_coref(spans, scores):
    """Link each span to its best preceding span or the dummy (score 0, wins ties); clusters of size >= 2.

    `spans` are kept (b, e) in document order; `scores[j][k]` scores k as antecedent of j (k < j).
    """
    parent = list(range(len(spans)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    links = []
    for j in range(1, len(spans)):
        row = np.asarray(scores[j][:j], dtype=float)
        k = int(np.argmax(row))
        if row[k] > 0.0:
            links.append((j, k))
            parent[find(j)] = find(k)

    groups = {}
    for i in range(len(spans)):
        groups.setdefault(find(i), []).append(i)
    clusters = [sorted(spans[i] for i in members) for members in groups.values() if len(members) > 1]
    clusters.sort()
    mentions = sorted({span for cluster in clusters for span in cluster})
    return Prediction(
        spans=[(b, e, 'mention') for b, e in mentions],
        relations=[(spans[j], spans[k], 'coref') for j, k in links],
        clusters=clusters,
    )


def decode_constituency(n, span_scores, schema, words=None):
    """Greedy top-down decoding over per-span label log-probabilities.

    `span_scores[(b, e)]` is a vector over [NEG_SPAN] + L; missing spans count
    as certainly unlabeled. NEG_SPAN nodes are collapsed into their parent.
    """
    vocab = schema.span_vocab

    def best(b, e):
        vec = span_scores.get((b, e))
        if vec is None:
            return NO_LABEL_SCORE, None, 0.0
        k = 1 + int(np.argmax(vec[1:]))
        return float(vec[k]), vocab[k], float(vec[0])

    def value(b, e):
        score, _, nolabel = best(b, e)
        return max(score, nolabel)

    def leaf(i):
        return TreeNode('', i, i, is_preterminal=True, word=words[i] if words else None)

    def build(b, e, root=False):
        score, label, nolabel = best(b, e)
        if not root and not score > nolabel:
            label = None
        if b == e:
            children = [leaf(b)]
        else:
            split = max(range(b, e), key=lambda m: (value(b, m) + value(m + 1, e), -m))
            children = []
            for child in (build(b, split), build(split + 1, e)):
                if child.label:
                    children.append(child)
                else:
                    children.extend(child.children)
        return TreeNode(label or '', b, e, children)

    if n < 1:
        return Prediction(spans=[], tree=None)
    tree = build(0, n - 1, root=True)
    if not tree.label:
        # no real label scored at the root span
        tree.label = vocab[1]
    spans = [(b, e, label) for label, b, e in tree.brackets()]
    return Prediction(spans=spans, tree=tree)


def decode_dependency(n, probs, schema):
    """Per-word argmax head over non-NEG_REL labels (ties to the lowest head); one word may attach to ROOT.

    `probs[j, k]` is the softmax over [NEG_REL] + R for head j and dependent k.
    The root is the word with the largest margin of NEG_REL over its best
    incoming label, if that margin is positive; a one-word sentence is rooted.
    """
    vocab = schema.relation_vocab
    if n == 1:
        return Prediction(spans=[(0, 0, 'word')], heads=[(ROOT, 'root')])
    heads = []
    margins = []
    for k in range(n):
        best_head, best_label, best_score = None, None, -1.0
        for j in range(n):
            if j == k:
                continue
            r = 1 + int(np.argmax(probs[j, k, 1:]))
            if probs[j, k, r] > best_score:
                best_head, best_label, best_score = j, r, float(probs[j, k, r])
        heads.append((best_head, vocab[best_label]))
        margins.append(float(probs[best_head, k, 0]) - best_score)
    root = int(np.argmax(margins))
    if margins[root] > 0:
        heads[root] = (ROOT, 'root')
    relations = [((h, h), (k, k), label) for k, (h, label) in enumerate(heads) if h != ROOT]
    return Prediction(spans=[(i, i, 'word') for i in range(n)], relations=relations, heads=heads)


def decode(result):
    """Dispatch a ForwardResult to the schema's decoder."""
    schema = result.schema
    kind = schema.decoder.value
    if kind == 'Generic':
        return decode_generic(result.candidates, result.kept, result.pairs, schema)
    if kind == 'Coref':
        size = len(result.kept)
        spans = [(c.b, c.e) for c in result.kept]
        scores = np.zeros((size, size))
        for pair in result.pairs:
            scores[pair.head_index, pair.tail_index] = pair.o[1]
        return decode_coref(spans, scores)
    if kind == 'Constituency':
        table = {(c.b, c.e): log_softmax_rows(c.label_logits[None, :])[0] for c in result.candidates}
        return decode_constituency(result.instance.n, table, schema, list(result.instance.tokens))
    if kind == 'Dependency':
        n = result.instance.n
        probs = np.zeros((n, n, len(schema.relation_vocab)))
        probs[:, :, 0] = 1.0
        words = {i: (c.b if c.b == c.e else None) for i, c in enumerate(result.kept)}
        for pair in result.pairs:
            j, k = words.get(pair.head_index), words.get(pair.tail_index)
            if j is not None and k is not None:
                probs[j, k] = softmax_rows(pair.o[None, :])[0]
        return decode_dependency(n, probs, schema)
    return decode_span_only(result.candidates, schema)


# --- writing predictions back ------------------------------------------------

def prediction_to_document(doc, items, schema):
    """BRAT document carrying the predictions; `items` are (instance, Prediction) pairs of this document."""
    offsets = doc.token_offsets
    spans, relations = [], []
    ids = {}

    def span_id(b, e, label):
        key = (b, e, label)
        if key not in ids:
            ids[key] = f"T{len(ids) + 1}"
            cb, ce = offsets[b][0], offsets[e][1]
            spans.append(SpanAnnotation(ids[key], label, cb, ce, b, e, doc.text[cb:ce]))
        return ids[key]

    for instance, prediction in items:
        base = instance.token_offset
        labels = {}
        for b, e, label in prediction.spans:
            span_id(base + b, base + e, label)
            labels.setdefault((b, e), label)
        for (hb, he), (tb, te), label in prediction.relations:
            head = span_id(base + hb, base + he, labels.get((hb, he), schema.span_labels[0]))
            tail = span_id(base + tb, base + te, labels.get((tb, te), schema.span_labels[0]))
            relations.append(RelationAnnotation(f"R{len(relations) + 1}", label, head, tail))
    return Document(doc.doc_id, doc.text, doc.sentences, tuple(spans), tuple(relations))


def dependency_to_conllu(doc, items):
    """CoNLL-U text for dependency predictions ((instance, Prediction) pairs, one per sentence)."""
    lines = []
    tokens = doc.tokens
    for instance, prediction in items:
        lines.append(f"# sent_id = {doc.doc_id}-{instance.sentence_index + 1}")
        words = tokens[instance.token_offset:instance.token_offset + instance.n]
        lines.append(f"# text = {' '.join(words)}")
        for k, word in enumerate(words):
            head, label = prediction.heads[k] if prediction.heads else (ROOT, 'root')
            head_id = 0 if head == ROOT else head + 1
            lines.append('\t'.join([str(k + 1), word, '_', '_', '_', '_', str(head_id), label, '_', '_']))
        lines.append('')
    return '\n'.join(lines) + ('\n' if lines else '')

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

NEG_SPAN = 'NEG_SPAN'
NEG_REL = 'NEG_REL'
ROOT = -1


@dataclass(frozen=True)
class SpanAnnotation:
    span_id: str
    label: str
    char_begin: int
    char_end: int
    # Document-level token indices, inclusive on both ends.
    token_begin: int
    token_end: int
    surface: str

    @property
    def key(self):
        return (self.char_begin, self.char_end, self.label)


@dataclass(frozen=True)
class RelationAnnotation:
    rel_id: str
    label: str
    head_span_id: str
    tail_span_id: str


@dataclass(frozen=True)
class Document:
    """One .txt/.ann pair. Sentences hold half-open (begin, end) character ranges of tokens."""
    doc_id: str
    text: str
    sentences: tuple
    spans: tuple = ()
    relations: tuple = ()

    @property
    def token_offsets(self):
        return [tok for sentence in self.sentences for tok in sentence]

    @property
    def tokens(self):
        return [self.text[b:e] for b, e in self.token_offsets]

    @property
    def sentence_starts(self):
        starts, total = [], 0
        for sentence in self.sentences:
            starts.append(total)
            total += len(sentence)
        return starts

    @property
    def sentence_tokens(self):
        return [tuple(self.text[b:e] for b, e in sentence) for sentence in self.sentences]

    def sentence_of_token(self, index):
        for i, start in reversed(list(enumerate(self.sentence_starts))):
            if index >= start:
                return i
        return 0

    def span(self, span_id):
        for s in self.spans:
            if s.span_id == span_id:
                return s
        return None

    def span_index(self):
        return {s.span_id: s for s in self.spans}

    def canonical(self):
        """Id-free content: equal for two documents that differ only by annotation ids."""
        by_id = self.span_index()
        spans = sorted(s.key for s in self.spans)
        relations = sorted(
            (by_id[r.head_span_id].key, by_id[r.tail_span_id].key, r.label)
            for r in self.relations
        )
        return (self.doc_id, self.text, tuple(tuple(s) for s in self.sentences), tuple(spans), tuple(relations))


@dataclass(frozen=True)
class Violation:
    kind: str
    doc_id: str
    ann_id: str = ''
    message: str = ''

    def to_dict(self):
        return {'kind': self.kind, 'doc_id': self.doc_id, 'ann_id': self.ann_id, 'message': self.message}


@dataclass(frozen=True)
class SentenceInstance:
    tokens: tuple
    # (b, e, label index into [NEG_SPAN] + L), instance-local token indices.
    gold_spans: tuple
    # (head gold-span index, tail gold-span index, label index into [NEG_REL] + R)
    gold_relations: tuple
    task: str
    doc_id: str = ''
    sentence_index: int = 0
    token_offset: int = 0
    candidates: Optional[tuple] = None

    @property
    def n(self):
        return len(self.tokens)


@dataclass
class DatasetSummary:
    documents: int = 0
    sentences: int = 0
    spans: int = 0
    relations: int = 0
    too_long: int = 0
    truncated: int = 0
    dropped_spans: int = 0
    dropped_relations: int = 0
    files: list = field(default_factory=list)

    def to_dict(self):
        return {
            'documents': self.documents,
            'sentences': self.sentences,
            'spans': self.spans,
            'relations': self.relations,
            'too_long': self.too_long,
            'truncated': self.truncated,
            'dropped_spans': self.dropped_spans,
            'dropped_relations': self.dropped_relations,
            'files': [str(f) for f in self.files],
        }


@dataclass
class SpanCandidate:
    b: int
    e: int
    index: int
    z: np.ndarray
    label_logits: np.ndarray
    label_probs: np.ndarray

    @property
    def neg_prob(self):
        return float(self.label_probs[0])

    @property
    def best_label(self):
        return int(np.argmax(self.label_probs))


@dataclass
class ScoredPair:
    head_index: int
    tail_index: int
    o: np.ndarray


@dataclass
class TreeNode:
    label: str
    begin: int
    end: int
    children: list = field(default_factory=list)
    is_preterminal: bool = False
    word: Optional[str] = None

    def brackets(self, include_preterminals=False):
        """Labeled (label, begin, end) brackets in pre-order."""
        out = []
        if self.label and (include_preterminals or not self.is_preterminal):
            out.append((self.label, self.begin, self.end))
        for child in self.children:
            out.extend(child.brackets(include_preterminals))
        return out

    def to_string(self, words=None):
        """Bracketed form; 'S+VP' unary chains are written as nested nodes."""
        if self.is_preterminal:
            word = self.word if self.word is not None else (words[self.begin] if words else 'x')
            return f"({self.label} {word})" if self.label else word
        inner = ' '.join(c.to_string(words) for c in self.children)
        if not self.children:
            inner = words[self.begin] if words else 'x'
        if not self.label:
            return inner
        for label in reversed(self.label.split('+')):
            inner = f"({label} {inner})"
        return inner


@dataclass
class Prediction:
    spans: list = field(default_factory=list)
    relations: list = field(default_factory=list)
    clusters: Optional[list] = None
    tree: Optional[TreeNode] = None
    # Dependency output: per word (head, label); head ROOT (-1) for the root attachment.
    heads: Optional[list] = None


@dataclass
class MetricReport:
    task: str
    metric: str
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    per_label: dict = field(default_factory=dict)
    support: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def value(self):
        """Headline number used for early stopping and reports."""
        if 'accuracy' in self.extra:
            return self.extra['accuracy']
        if 'macro_f1' in self.extra:
            return self.extra['macro_f1']
        if 'avg_f1' in self.extra:
            return self.extra['avg_f1']
        return self.f1

    def to_dict(self):
        return {
            'task': self.task,
            'metric': self.metric,
            'value': self.value,
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'per_label': self.per_label,
            'support': self.support,
            'extra': self.extra,
        }

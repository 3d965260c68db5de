"""Task schemas for the ten analysis tasks and conversion of BRAT documents into model instances."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace, asdict
from enum import Enum
from typing import Optional

from errors import UnknownTask, UnknownLabel, SpanCrossesSentence, ConfigError, SchemaError
from helpers import log
from models import NEG_SPAN, NEG_REL, SentenceInstance


class Task(str, Enum):
    NER = 'NER'
    RE = 'RE'
    COREF = 'Coref'
    OPENIE = 'OpenIE'
    SRL = 'SRL'
    DEP = 'Dep'
    CONSTI = 'Consti'
    POS = 'POS'
    ABSA = 'ABSA'
    ORL = 'ORL'


class LossMode(str, Enum):
    PAIRWISE = 'Pairwise'
    HEAD = 'Head'


class DecoderKind(str, Enum):
    GENERIC = 'Generic'
    COREF = 'Coref'
    CONSTITUENCY = 'Constituency'
    DEPENDENCY = 'Dependency'
    SPAN_ONLY = 'SpanOnly'


class MetricKind(str, Enum):
    SPAN_F1 = 'span_f1'
    RELATION_F1 = 'relation_f1'
    MACRO_F1 = 'macro_f1'
    AVG_F1 = 'avg_f1'
    LAS = 'las'
    BRACKET_F1 = 'bracket_f1'
    ACCURACY = 'accuracy'


class Scope(str, Enum):
    SENTENCE = 'Sentence'
    DOCUMENT = 'Document'


# --- label inventories -----------------------------------------------------

NER_LABELS = ('PER', 'LOC', 'ORG', 'MISC', 'person', 'location', 'organization', 'misc')

SEMEVAL10_RELATIONS = (
    'Cause-Effect', 'Component-Whole', 'Content-Container', 'Entity-Destination',
    'Entity-Origin', 'Instrument-Agency', 'Member-Collection', 'Message-Topic',
    'Product-Producer', 'Other',
)

_CORE_ROLES = ('ARG0', 'ARG1', 'ARG2', 'ARG3', 'ARG4', 'ARG5', 'ARGA')
_MODIFIER_ROLES = tuple(
    f"ARGM-{m}" for m in (
        'ADJ', 'ADV', 'CAU', 'COM', 'DIR', 'DIS', 'DSP', 'EXT', 'GOL', 'LOC', 'LVB',
        'MNR', 'MOD', 'NEG', 'PNC', 'PRD', 'PRP', 'PRR', 'PRX', 'REC', 'TMP',
    )
)
SRL_ROLES = _CORE_ROLES + _MODIFIER_ROLES + tuple(
    f"{prefix}-{role}" for prefix in ('R', 'C') for role in _CORE_ROLES + _MODIFIER_ROLES
)

OPENIE_ROLES = ('ARG0', 'ARG1', 'ARG2', 'ARG3')

DEP_RELATIONS = (
    # Universal Dependencies v2
    'acl', 'advcl', 'advmod', 'amod', 'appos', 'aux', 'case', 'cc', 'ccomp', 'clf',
    'compound', 'conj', 'cop', 'csubj', 'dep', 'det', 'discourse', 'dislocated', 'expl',
    'fixed', 'flat', 'goeswith', 'iobj', 'list', 'mark', 'nmod', 'nsubj', 'nummod', 'obj',
    'obl', 'orphan', 'parataxis', 'punct', 'reparandum', 'root', 'vocative', 'xcomp',
    # Stanford basic dependencies (PTB conversion)
    'acomp', 'auxpass', 'csubjpass', 'dobj', 'mwe', 'neg', 'nn', 'npadvmod', 'nsubjpass',
    'num', 'number', 'partmod', 'pcomp', 'pobj', 'poss', 'possessive', 'preconj', 'predet',
    'prep', 'prt', 'quantmod', 'rcmod', 'tmod', 'infmod', 'abbrev', 'attr', 'complm', 'purpcl', 'rel',
)

PTB_POS_TAGS = (
    'CC', 'CD', 'DT', 'EX', 'FW', 'IN', 'JJ', 'JJR', 'JJS', 'LS', 'MD', 'NN', 'NNS', 'NNP',
    'NNPS', 'PDT', 'POS', 'PRP', 'PRP$', 'RB', 'RBR', 'RBS', 'RP', 'SYM', 'TO', 'UH', 'VB',
    'VBD', 'VBG', 'VBN', 'VBP', 'VBZ', 'WDT', 'WP', 'WP$', 'WRB', '#', '$', "''", '``',
    ',', '.', ':', '-LRB-', '-RRB-', 'NFP', 'ADD', 'AFX', 'HYPH', 'XX', 'GW',
)
UPOS_TAGS = (
    'ADJ', 'ADP', 'ADV', 'AUX', 'CCONJ', 'DET', 'INTJ', 'NOUN', 'NUM', 'PART', 'PRON',
    'PROPN', 'PUNCT', 'SCONJ', 'SYM', 'VERB', 'X',
)

PHRASAL_LABELS = (
    'S', 'SBAR', 'SBARQ', 'SINV', 'SQ', 'ADJP', 'ADVP', 'CONJP', 'FRAG', 'INTJ', 'LST',
    'NAC', 'NP', 'NX', 'PP', 'PRN', 'PRT', 'QP', 'RRC', 'UCP', 'VP', 'WHADJP', 'WHADVP',
    'WHNP', 'WHPP', 'X', 'NML', 'META', 'EMBED', 'TOP',
)

ABSA_POLARITIES = ('positive', 'negative', 'neutral', 'conflict')


@dataclass(frozen=True)
class TaskSchema:
    name: str
    span_labels: tuple
    relation_labels: tuple
    max_span_length: Optional[int]
    pruning_ratio: Optional[float]
    pruning_count: Optional[int]
    loss_mode: LossMode
    decoder: DecoderKind
    metric: MetricKind
    instance_scope: Scope = Scope.SENTENCE
    gold_span_mode: bool = False
    allow_overlap: bool = True
    single_parent: bool = False
    nested_brackets: bool = False
    composite_labels: bool = False
    subtyped_relations: bool = False
    other_label: Optional[str] = None
    max_doc_tokens: Optional[int] = None

    def __post_init__(self):
        if (self.loss_mode == LossMode.HEAD) != (self.name == Task.COREF.value):
            raise SchemaError(f"{self.name}: Head loss is reserved for coreference")
        if self.name in (Task.POS.value, Task.DEP.value) and self.max_span_length != 1:
            raise SchemaError(f"{self.name}: spans are single words (max_span_length must be 1)")
        if self.name in SPAN_ORIENTED and self.relation_labels:
            raise SchemaError(f"{self.name} is span-oriented and takes no relation labels")
        if self.pruning_ratio is not None and not 0 < self.pruning_ratio <= 1:
            raise SchemaError(f"{self.name}: pruning ratio must lie in (0, 1]")

    # label vocabularies: index 0 is always the NEG class
    @property
    def span_vocab(self):
        return (NEG_SPAN,) + tuple(self.span_labels)

    @property
    def relation_vocab(self):
        return (NEG_REL,) + tuple(self.relation_labels)

    @property
    def has_relations(self):
        return bool(self.relation_labels)

    def span_label_index(self, label):
        try:
            return self.span_vocab.index(label)
        except ValueError:
            raise UnknownLabel(label, self.name) from None

    def relation_label_index(self, label):
        try:
            return self.relation_vocab.index(label)
        except ValueError:
            raise UnknownLabel(label, self.name) from None

    def accepts_span_label(self, label):
        if label in self.span_labels:
            return True
        if self.composite_labels and '+' in label:
            return all(part in self.span_labels for part in label.split('+'))
        return False

    def accepts_relation_label(self, label):
        if label in self.relation_labels:
            return True
        if self.subtyped_relations and ':' in label:
            return label.split(':', 1)[0] in self.relation_labels
        return False

    def length_limit(self, n):
        if self.max_span_length is None:
            return n
        return min(self.max_span_length, n)

    def keep_count(self, n, candidates):
        """K for pruning: the fixed count or max(1, ceil(tau * n)), capped at the candidate count."""
        if self.pruning_count is not None:
            k = self.pruning_count
        elif self.pruning_ratio is not None:
            k = max(1, math.ceil(self.pruning_ratio * n - 1e-9))
        else:
            k = candidates
        return min(k, candidates)

    def extend_labels(self, span_labels=(), relation_labels=()):
        extra_spans = tuple(l for l in span_labels if l not in self.span_labels)
        extra_rels = tuple(l for l in relation_labels if l not in self.relation_labels)
        if not extra_spans and not extra_rels:
            return self
        return replace(
            self,
            span_labels=tuple(self.span_labels) + extra_spans,
            relation_labels=tuple(self.relation_labels) + extra_rels,
        )

    def with_overrides(self, overrides):
        allowed = {
            'max_span_length', 'pruning_ratio', 'pruning_count', 'gold_span_mode',
            'max_doc_tokens', 'span_labels', 'relation_labels',
        }
        unknown = set(overrides) - allowed
        if unknown:
            raise ConfigError(f"unknown schema override(s) for {self.name}: {sorted(unknown)}")
        changes = dict(overrides)
        for key in ('span_labels', 'relation_labels'):
            if key in changes:
                changes[key] = tuple(changes[key])
        return replace(self, **changes)

    def to_dict(self):
        data = asdict(self)
        for key in ('loss_mode', 'decoder', 'metric', 'instance_scope'):
            data[key] = getattr(self, key).value
        data['span_labels'] = list(self.span_labels)
        data['relation_labels'] = list(self.relation_labels)
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data['loss_mode'] = LossMode(data['loss_mode'])
        data['decoder'] = DecoderKind(data['decoder'])
        data['metric'] = MetricKind(data['metric'])
        data['instance_scope'] = Scope(data['instance_scope'])
        data['span_labels'] = tuple(data['span_labels'])
        data['relation_labels'] = tuple(data['relation_labels'])
        return cls(**data)


SPAN_ORIENTED = {Task.NER.value, Task.CONSTI.value, Task.POS.value, Task.ABSA.value}

_ALIASES = {
    'ner': Task.NER, 're': Task.RE, 'coref': Task.COREF, 'coreference': Task.COREF,
    'openie': Task.OPENIE, 'oie': Task.OPENIE, 'srl': Task.SRL, 'dep': Task.DEP,
    'dependency': Task.DEP, 'consti': Task.CONSTI, 'constituency': Task.CONSTI,
    'pos': Task.POS, 'absa': Task.ABSA, 'orl': Task.ORL,
}


def task_name(name):
    key = str(name.value if isinstance(name, Task) else name).strip().lower()
    if key not in _ALIASES:
        raise UnknownTask(name)
    return _ALIASES[key].value


def builtin_schema(name):
    """Schema with the published per-task defaults for max span length and pruning."""
    task = task_name(name)
    P, G, S = LossMode.PAIRWISE, DecoderKind.GENERIC, DecoderKind.SPAN_ONLY
    table = {
        'NER': dict(span_labels=NER_LABELS, relation_labels=(), max_span_length=10,
                    pruning_ratio=None, pruning_count=None, loss_mode=P, decoder=S,
                    metric=MetricKind.SPAN_F1, allow_overlap=False),
        'RE': dict(span_labels=('entity',), relation_labels=SEMEVAL10_RELATIONS, max_span_length=5,
                   pruning_ratio=None, pruning_count=5, loss_mode=P, decoder=G,
                   metric=MetricKind.MACRO_F1, gold_span_mode=True, other_label='Other'),
        'Coref': dict(span_labels=('mention',), relation_labels=('coref',), max_span_length=10,
                      pruning_ratio=0.4, pruning_count=None, loss_mode=LossMode.HEAD,
                      decoder=DecoderKind.COREF, metric=MetricKind.AVG_F1,
                      instance_scope=Scope.DOCUMENT),
        'OpenIE': dict(span_labels=('predicate', 'argument'), relation_labels=OPENIE_ROLES,
                       max_span_length=30, pruning_ratio=0.8, pruning_count=None, loss_mode=P,
                       decoder=G, metric=MetricKind.RELATION_F1),
        'SRL': dict(span_labels=('predicate', 'argument'), relation_labels=SRL_ROLES,
                    max_span_length=30, pruning_ratio=1.0, pruning_count=None, loss_mode=P,
                    decoder=G, metric=MetricKind.RELATION_F1),
        'Dep': dict(span_labels=('word',), relation_labels=DEP_RELATIONS, max_span_length=1,
                    pruning_ratio=1.0, pruning_count=None, loss_mode=P,
                    decoder=DecoderKind.DEPENDENCY, metric=MetricKind.LAS,
                    allow_overlap=False, single_parent=True, subtyped_relations=True),
        'Consti': dict(span_labels=PHRASAL_LABELS, relation_labels=(), max_span_length=None,
                       pruning_ratio=None, pruning_count=None, loss_mode=P,
                       decoder=DecoderKind.CONSTITUENCY, metric=MetricKind.BRACKET_F1,
                       nested_brackets=True, composite_labels=True),
        'POS': dict(span_labels=PTB_POS_TAGS + UPOS_TAGS, relation_labels=(), max_span_length=1,
                    pruning_ratio=None, pruning_count=None, loss_mode=P, decoder=S,
                    metric=MetricKind.ACCURACY, allow_overlap=False),
        'ABSA': dict(span_labels=ABSA_POLARITIES, relation_labels=(), max_span_length=10,
                     pruning_ratio=None, pruning_count=None, loss_mode=P, decoder=S,
                     metric=MetricKind.ACCURACY, gold_span_mode=True, allow_overlap=False),
        'ORL': dict(span_labels=('expression', 'holder', 'target'), relation_labels=('holder', 'target'),
                    max_span_length=30, pruning_ratio=0.3, pruning_count=None, loss_mode=P,
                    decoder=G, metric=MetricKind.RELATION_F1, gold_span_mode=True),
    }
    return TaskSchema(name=task, **table[task])


ALL_TASKS = tuple(t.value for t in Task)


def fit_labels(schema, documents):
    """Extend the schema with derived labels seen in data: unary chains (S+VP) and relation subtypes (nsubj:pass)."""
    if not schema.composite_labels and not schema.subtyped_relations:
        return schema
    spans, relations = [], []
    for doc in documents:
        for span in doc.spans:
            if span.label not in schema.span_labels and schema.accepts_span_label(span.label) \
                    and span.label not in spans:
                spans.append(span.label)
        for rel in doc.relations:
            if rel.label not in schema.relation_labels and schema.accepts_relation_label(rel.label) \
                    and rel.label not in relations:
                relations.append(rel.label)
    return schema.extend_labels(span_labels=sorted(spans), relation_labels=sorted(relations))


def to_instances(doc, schema, summary=None):
    """Split a document into model instances: one per sentence, or one per document for coreference."""
    for span in doc.spans:
        if not schema.accepts_span_label(span.label):
            raise UnknownLabel(span.label, schema.name, f" ({doc.doc_id}:{span.span_id})")
    for rel in doc.relations:
        if not schema.accepts_relation_label(rel.label):
            raise UnknownLabel(rel.label, schema.name, f" ({doc.doc_id}:{rel.rel_id})")

    tokens = doc.tokens
    truncated = False
    if schema.instance_scope == Scope.DOCUMENT:
        limit = len(tokens)
        if schema.max_doc_tokens is not None and len(tokens) > schema.max_doc_tokens:
            limit = schema.max_doc_tokens
            truncated = True
        windows = [(0, limit, 0)] if limit else []
    else:
        windows = []
        for i, (start, sentence) in enumerate(zip(doc.sentence_starts, doc.sentences)):
            windows.append((start, start + len(sentence), i))

    instances = []
    for start, stop, sentence_index in windows:
        local = {}
        gold_spans = []
        for span in doc.spans:
            inside_begin = start <= span.token_begin < stop
            inside_end = start <= span.token_end < stop
            if inside_begin and inside_end:
                local[span.span_id] = len(gold_spans)
                gold_spans.append((
                    span.token_begin - start,
                    span.token_end - start,
                    schema.span_label_index(span.label),
                ))
            elif inside_begin != inside_end and schema.instance_scope == Scope.SENTENCE:
                raise SpanCrossesSentence(doc.doc_id, span.span_id)
        gold_relations = []
        for rel in doc.relations:
            head, tail = rel.head_span_id in local, rel.tail_span_id in local
            if head and tail:
                gold_relations.append((
                    local[rel.head_span_id],
                    local[rel.tail_span_id],
                    schema.relation_label_index(rel.label),
                ))
            elif head != tail and schema.instance_scope == Scope.SENTENCE:
                raise SpanCrossesSentence(doc.doc_id, rel.rel_id)
        candidates = None
        if schema.gold_span_mode:
            candidates = tuple(sorted({(b, e) for b, e, _ in gold_spans}))
        instances.append(SentenceInstance(
            tokens=tuple(tokens[start:stop]),
            gold_spans=tuple(gold_spans),
            gold_relations=tuple(gold_relations),
            task=schema.name,
            doc_id=doc.doc_id,
            sentence_index=sentence_index,
            token_offset=start,
            candidates=candidates,
        ))
    if truncated:
        kept = instances[0] if instances else None
        dropped_spans = len(doc.spans) - (len(kept.gold_spans) if kept else 0)
        dropped_relations = len(doc.relations) - (len(kept.gold_relations) if kept else 0)
        log('WARN', f"{doc.doc_id}: truncated from {len(tokens)} to {limit} tokens, dropping "
                    f"{dropped_spans} span(s) and {dropped_relations} relation(s)")
        if summary is not None:
            summary.truncated += 1
            summary.dropped_spans += dropped_spans
            summary.dropped_relations += dropped_relations
    return instances

"""Corpus importers: CoNLL-2003, CoNLL-U, PTB brackets and CoNLL-2005 props into BRAT."""
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from brat_io import read_document, write_document
from errors import FormatError, InconsistentTree, BratError, ConfigError
from helpers import log, debug, worker_count, ensure_dir
from models import Document, SpanAnnotation, RelationAnnotation, DatasetSummary
from schema import builtin_schema

FORMATS = ('conll2003_ner', 'conllu_dep', 'ptb_bracketed', 'props_srl', 'brat')
DEFAULT_TASK = {
    'conll2003_ner': 'NER',
    'conllu_dep': 'Dep',
    'ptb_bracketed': 'Consti',
    'props_srl': 'SRL',
    'brat': None,
}

SEXPR_TOKEN = re.compile(r'\(|\)|[^\s()]+')
WRAPPER_LABELS = (None, '', 'TOP', 'ROOT')


class DocumentBuilder:
    """Accumulates pre-tokenized sentences and token-indexed annotations into a Document."""

    def __init__(self, doc_id):
        self.doc_id = doc_id
        self.text_parts = []
        self.sentences = []
        self.offset = 0
        self.token_count = 0
        self.spans = []
        self.relations = []
        self._span_keys = {}

    @property
    def empty(self):
        return not self.sentences

    def add_sentence(self, tokens):
        """Append one sentence line; returns the document-level index of its first token."""
        start = self.token_count
        offsets = []
        pos = self.offset
        for tok in tokens:
            offsets.append((pos, pos + len(tok)))
            pos += len(tok) + 1
        line = ' '.join(tokens)
        self.text_parts.append(line)
        self.sentences.append(tuple(offsets))
        self.offset += len(line) + 1
        self.token_count += len(tokens)
        return start

    def _offsets(self):
        return [t for sentence in self.sentences for t in sentence]

    def add_span(self, begin, end, label):
        key = (begin, end, label)
        if key in self._span_keys:
            return self._span_keys[key]
        span_id = f"T{len(self.spans) + 1}"
        self._span_keys[key] = span_id
        self.spans.append(key)
        return span_id

    def add_relation(self, head_id, tail_id, label):
        self.relations.append((head_id, tail_id, label))

    def build(self):
        text = '\n'.join(self.text_parts) + '\n' if self.text_parts else ''
        offsets = self._offsets()
        spans = []
        for i, (b, e, label) in enumerate(self.spans, start=1):
            cb, ce = offsets[b][0], offsets[e][1]
            spans.append(SpanAnnotation(f"T{i}", label, cb, ce, b, e, text[cb:ce]))
        relations = tuple(
            RelationAnnotation(f"R{i}", label, head, tail)
            for i, (head, tail, label) in enumerate(self.relations, start=1)
        )
        return Document(self.doc_id, text, tuple(self.sentences), tuple(spans), relations)


def _clean_token(tok, path, line_no):
    if not tok:
        raise FormatError(path, line_no, 'empty token')
    return re.sub(r'\s', '_', tok)


def _doc_id(stem, index, many):
    return f"{stem}_{index:04d}" if many else stem


class CorpusConverter:
    """Reads one input format and emits Documents for a target task schema."""

    def __init__(self, fmt, task=None):
        if fmt not in FORMATS:
            raise ConfigError(f"unknown input format {fmt!r} (expected one of {', '.join(FORMATS)})")
        self.fmt = fmt
        task = task or DEFAULT_TASK[fmt]
        self.schema = builtin_schema(task) if task else None

    def _check_span_label(self, label, path, line_no):
        if self.schema is not None and not self.schema.accepts_span_label(label):
            raise FormatError(path, line_no, f"unknown {self.schema.name} label {label!r}")

    def _check_relation_label(self, label, path, line_no):
        if self.schema is not None and not self.schema.accepts_relation_label(label):
            raise FormatError(path, line_no, f"unknown {self.schema.name} relation {label!r}")

    def convert_file(self, path):
        path = Path(path)
        if self.fmt == 'conll2003_ner':
            return self._from_conll2003(path)
        elif self.fmt == 'conllu_dep':
            return self._from_conllu(path)
        elif self.fmt == 'ptb_bracketed':
            return self._from_ptb(path)
        elif self.fmt == 'props_srl':
            return self._from_props(path)
        return self._from_brat(path)

    def _read_lines(self, path):
        try:
            return path.read_text(encoding='utf-8').splitlines()
        except UnicodeDecodeError:
            raise FormatError(path, 0, 'file is not valid UTF-8') from None
        except OSError as e:
            raise FormatError(path, 0, f"cannot read file: {e}") from None

    # --- CoNLL-2003 --------------------------------------------------------

    def _from_conll2003(self, path):
        groups = [[]]
        sentence = []
        for line_no, line in enumerate(self._read_lines(path), start=1):
            if line.startswith('-DOCSTART-'):
                if sentence:
                    groups[-1].append(sentence)
                    sentence = []
                if groups[-1]:
                    groups.append([])
                continue
            if not line.strip():
                if sentence:
                    groups[-1].append(sentence)
                    sentence = []
                continue
            cols = line.split()
            if len(cols) < 2:
                raise FormatError(path, line_no, 'expected at least a word and an NER tag')
            tag = cols[-1]
            if tag != 'O' and not re.match(r'^[BI]-\S+$', tag):
                raise FormatError(path, line_no, f"malformed tag {tag!r}")
            if tag != 'O':
                self._check_span_label(tag[2:], path, line_no)
            sentence.append((_clean_token(cols[0], path, line_no), tag, line_no))
        if sentence:
            groups[-1].append(sentence)
        groups = [g for g in groups if g]

        docs = []
        for k, group in enumerate(groups):
            builder = DocumentBuilder(_doc_id(path.stem, k, len(groups) > 1))
            for sentence in group:
                start = builder.add_sentence([w for w, _, _ in sentence])
                for b, e, label in bio_spans([t for _, t, _ in sentence]):
                    builder.add_span(start + b, start + e, label)
            docs.append(builder.build())
        return docs

    # --- CoNLL-U -----------------------------------------------------------

    def _from_conllu(self, path):
        groups = [[]]
        rows = []
        for line_no, line in enumerate(self._read_lines(path), start=1):
            if line.startswith('#'):
                if line.startswith('# newdoc') and (rows or groups[-1]):
                    if rows:
                        groups[-1].append(rows)
                        rows = []
                    groups.append([])
                continue
            if not line.strip():
                if rows:
                    groups[-1].append(rows)
                    rows = []
                continue
            cols = line.split('\t')
            if len(cols) != 10:
                raise FormatError(path, line_no, f"expected 10 tab-separated columns, got {len(cols)}")
            if '-' in cols[0] or '.' in cols[0]:
                continue  # multiword ranges and empty nodes
            if not cols[0].isdigit() or int(cols[0]) != len(rows) + 1:
                raise FormatError(path, line_no, f"bad word index {cols[0]!r}")
            if not cols[6].isdigit():
                raise FormatError(path, line_no, f"bad HEAD {cols[6]!r}")
            rows.append((cols, line_no))
        if rows:
            groups[-1].append(rows)
        groups = [g for g in groups if g]

        pos_task = self.schema is not None and self.schema.name == 'POS'
        docs = []
        for k, group in enumerate(groups):
            builder = DocumentBuilder(_doc_id(path.stem, k, len(groups) > 1))
            for rows in group:
                start = builder.add_sentence([_clean_token(c[1], path, n) for c, n in rows])
                if pos_task:
                    for i, (cols, line_no) in enumerate(rows):
                        tag = cols[3] if cols[3] != '_' else cols[4]
                        self._check_span_label(tag, path, line_no)
                        builder.add_span(start + i, start + i, tag)
                    continue
                ids = [builder.add_span(start + i, start + i, 'word') for i in range(len(rows))]
                for i, (cols, line_no) in enumerate(rows):
                    head = int(cols[6])
                    if head > len(rows):
                        raise FormatError(path, line_no, f"HEAD {head} beyond sentence length {len(rows)}")
                    if head == 0:
                        continue
                    self._check_relation_label(cols[7], path, line_no)
                    builder.add_relation(ids[head - 1], ids[i], cols[7])
            docs.append(builder.build())
        return docs

    # --- PTB brackets ------------------------------------------------------

    def _from_ptb(self, path):
        trees = parse_bracketed(self._read_lines(path), path)
        pos_task = self.schema is not None and self.schema.name == 'POS'
        builder = DocumentBuilder(path.stem)
        for tree, line_no in trees:
            words, tags, phrases = tree_spans(tree, path, line_no)
            if not words:
                continue
            start = builder.add_sentence([_clean_token(w, path, line_no) for w in words])
            if pos_task:
                for i, tag in enumerate(tags):
                    self._check_span_label(tag, path, line_no)
                    builder.add_span(start + i, start + i, tag)
                continue
            for b, e, label in phrases:
                self._check_span_label(label, path, line_no)
                builder.add_span(start + b, start + e, label)
        return [] if builder.empty else [builder.build()]

    # --- CoNLL-2005 props --------------------------------------------------

    def _from_props(self, path):
        builder = DocumentBuilder(path.stem)
        block = []
        lines = self._read_lines(path) + ['']
        for line_no, line in enumerate(lines, start=1):
            if line.strip():
                block.append((line.split(), line_no))
                continue
            if block:
                self._add_props_sentence(builder, block, path)
                block = []
        return [] if builder.empty else [builder.build()]

    def _add_props_sentence(self, builder, block, path):
        width = len(block[0][0])
        for cols, line_no in block:
            if len(cols) != width or width < 2:
                raise FormatError(path, line_no, 'inconsistent column count')
        predicates = [i for i, (cols, _) in enumerate(block) if cols[1] != '-']
        if width - 2 != len(predicates):
            raise FormatError(path, block[0][1], f"{len(predicates)} predicates but {width - 2} argument columns")
        start = builder.add_sentence([_clean_token(cols[0], path, n) for cols, n in block])
        for k in range(len(predicates)):
            column = [(cols[2 + k], line_no) for cols, line_no in block]
            args = props_spans(column, path)
            verbs = [(b, e) for b, e, role in args if role == 'V']
            if not verbs:
                raise FormatError(path, block[predicates[k]][1], 'predicate column without a V span')
            vb, ve = verbs[0]
            pred_id = builder.add_span(start + vb, start + ve, 'predicate')
            for b, e, role in args:
                if role == 'V':
                    continue
                label = normalize_role(role)
                self._check_relation_label(label, path, block[b][1])
                arg_id = builder.add_span(start + b, start + e, 'argument')
                builder.add_relation(pred_id, arg_id, label)

    # --- BRAT --------------------------------------------------------------

    def _from_brat(self, path):
        try:
            doc = read_document(path)
        except BratError as e:
            raise FormatError(path, getattr(e, 'line_no', 0), e.message) from None
        for span in doc.spans:
            self._check_span_label(span.label, path, 0)
        for rel in doc.relations:
            self._check_relation_label(rel.label, path, 0)
        return [doc]


def bio_spans(tags):
    """(b, e, label) spans from BIO or IOB1 tags; an I- that does not continue a span opens one."""
    spans = []
    current = None
    for i, tag in enumerate(tags):
        if tag == 'O':
            if current:
                spans.append(tuple(current))
            current = None
            continue
        prefix, label = tag[0], tag[2:]
        if prefix == 'B' or current is None or current[2] != label:
            if current:
                spans.append(tuple(current))
            current = [i, i, label]
        else:
            current[1] = i
    if current:
        spans.append(tuple(current))
    return spans


def normalize_role(role):
    """A0 -> ARG0, AM-TMP -> ARGM-TMP, R-A1 -> R-ARG1, C-AM-LOC -> C-ARGM-LOC."""
    prefix = ''
    if role[:2] in ('R-', 'C-'):
        prefix, role = role[:2], role[2:]
    if role.startswith('AM-'):
        role = 'ARGM-' + role[3:]
    elif re.match(r'^A[0-9A]$', role):
        role = 'ARG' + role[1:]
    return prefix + role


def props_spans(column, path):
    """Parse one bracket column ("(A0*", "*", "*)", "(V*)") into (b, e, role) spans."""
    spans = []
    open_role = None
    open_at = 0
    for i, (cell, line_no) in enumerate(column):
        m = re.match(r'^(?:\(([^*()]+))?\*(\))?$', cell)
        if not m:
            raise FormatError(path, line_no, f"malformed argument cell {cell!r}")
        role, closes = m.group(1), m.group(2)
        if role:
            if open_role is not None:
                raise FormatError(path, line_no, f"{role} opens inside open {open_role}")
            open_role, open_at = role, i
        if closes:
            if open_role is None:
                raise FormatError(path, line_no, 'closing bracket without an open argument')
            spans.append((open_at, i, open_role))
            open_role = None
    if open_role is not None:
        raise FormatError(path, column[-1][1], f"argument {open_role} never closed")
    return spans


def parse_bracketed(lines, path='<string>'):
    """Split PTB text into (tree, line_no) pairs; a tree is (label, children) with str leaves."""
    trees = []
    stack = []
    for line_no, line in enumerate(lines, start=1):
        for tok in SEXPR_TOKEN.findall(line):
            if tok == '(':
                stack.append([None, [], line_no])
            elif tok == ')':
                if not stack:
                    raise InconsistentTree(path, line_no, "unbalanced ')'")
                label, children, start = stack.pop()
                node = (label, children)
                if stack:
                    stack[-1][1].append(node)
                else:
                    trees.append((node, start))
            else:
                if not stack:
                    raise InconsistentTree(path, line_no, f"text {tok!r} outside brackets")
                top = stack[-1]
                if top[0] is None and not top[1]:
                    top[0] = tok
                else:
                    top[1].append(tok)
    if stack:
        raise InconsistentTree(path, stack[-1][2], "unclosed '('")
    return trees


def clean_label(label):
    if label is None or label.startswith('-'):
        return label
    return re.split(r'[-=]', label)[0] or label


def tree_spans(tree, path='<string>', line_no=0):
    """Words, preterminal tags and phrasal (b, e, label) spans; unary chains become 'S+VP'."""
    label, children = tree
    while label in WRAPPER_LABELS and len(children) == 1 and not isinstance(children[0], str):
        label, children = children[0]
    if label in (None, ''):
        raise InconsistentTree(path, line_no, 'unlabeled node with several children')

    words, tags, phrases = [], [], []

    def walk(node):
        node_label, node_children = node
        if not node_children:
            raise InconsistentTree(path, line_no, f"empty node {node_label!r}")
        if all(isinstance(c, str) for c in node_children):
            if len(node_children) != 1:
                raise InconsistentTree(path, line_no, f"preterminal {node_label!r} has {len(node_children)} words")
            if node_label == '-NONE-':
                return None
            words.append(node_children[0])
            tags.append(node_label)
            return len(words) - 1, len(words) - 1
        if any(isinstance(c, str) for c in node_children):
            raise InconsistentTree(path, line_no, f"node {node_label!r} mixes words and subtrees")
        ranges = [r for r in (walk(c) for c in node_children) if r is not None]
        if not ranges:
            return None
        b, e = ranges[0][0], ranges[-1][1]
        phrases.append((b, e, clean_label(node_label)))
        return b, e

    walk((label, children))

    # children are appended before parents; merge same-range chains outermost first
    merged = {}
    for b, e, node_label in reversed(phrases):
        merged.setdefault((b, e), []).append(node_label)
    spans = [(b, e, '+'.join(labels)) for (b, e), labels in merged.items()]
    spans.sort(key=lambda s: (s[0], -s[1]))
    return words, tags, spans


def import_corpus(fmt, files, out_dir, task=None):
    """Convert input files to BRAT pairs under out_dir and return a DatasetSummary."""
    converter = CorpusConverter(fmt, task)
    out_dir = ensure_dir(out_dir)
    files = [Path(f) for f in files]

    # 1. convert files in parallel, keeping input order
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(converter.convert_file, files))

    # 2. write documents and count
    summary = DatasetSummary()
    schema = converter.schema
    for path, docs in zip(files, results):
        summary.files.append(path)
        for doc in docs:
            write_document(doc, out_dir)
            summary.documents += 1
            summary.sentences += len(doc.sentences)
            summary.spans += len(doc.spans)
            summary.relations += len(doc.relations)
            if schema is not None and schema.max_span_length is not None:
                long_spans = [s for s in doc.spans if s.token_end - s.token_begin + 1 > schema.max_span_length]
                summary.too_long += len(long_spans)
        debug(f"{path.name}: {len(docs)} document(s)")

    if summary.too_long:
        log('WARN', f"{summary.too_long} span(s) exceed the {schema.name} length bound of {schema.max_span_length}")
    log('OK', f"Converted {summary.documents} document(s), {summary.spans} spans, "
              f"{summary.relations} relations into {out_dir}")
    return summary

